"""Open-set evaluation: overall accuracy plus class-normalized accuracies.

ALL is the raw fraction correct. OS averages per-class accuracy over the
C known classes and the unknown class; OS* averages over the known
classes only, so OS == (C * OS* + unknown accuracy) / (C + 1) whenever
every class occurs in the truth.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass
class MetricReport:
    all_acc: float
    os_acc: float
    os_star: float
    per_class: np.ndarray  # length C+1, nan for classes absent from the truth
    acc_unknown: float
    excluded: tuple[int, ...]
    confusion: np.ndarray  # (C+1, C+1); rows true, columns predicted


def confusion_matrix(true_labels, predicted_labels, num_classes: int) -> np.ndarray:
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted_labels = np.asarray(predicted_labels, dtype=np.int64)
    k = num_classes + 1
    if true_labels.shape != predicted_labels.shape:
        raise ValueError("label arrays must have identical shape")
    for name, arr in (("true", true_labels), ("predicted", predicted_labels)):
        if arr.size and (arr.min() < 1 or arr.max() > k):
            raise ValueError(f"{name} labels must lie in 1..{k}")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (true_labels - 1, predicted_labels - 1), 1)
    return counts


def score(true_labels, predicted_labels, num_classes: int) -> MetricReport:
    """Compute ALL, OS, OS* and per-class accuracy over classes 1..C+1.

    Classes absent from the truth are excluded from the normalized means
    with a warning; they would otherwise divide by zero.
    """
    counts = confusion_matrix(true_labels, predicted_labels, num_classes)
    totals = counts.sum(axis=1)
    n = counts.sum()
    with np.errstate(invalid="ignore"):
        per_class = np.where(totals > 0, np.diag(counts) / np.maximum(totals, 1), np.nan)
    excluded = tuple(int(i + 1) for i in np.flatnonzero(totals == 0))
    if excluded:
        warnings.warn(
            f"classes absent from the truth excluded from OS/OS*: {excluded}",
            stacklevel=2,
        )
    known = per_class[:num_classes]
    all_acc = float(np.diag(counts).sum() / n) if n else float("nan")
    os_acc = float(np.nanmean(per_class)) if np.isfinite(per_class).any() else float("nan")
    os_star = float(np.nanmean(known)) if np.isfinite(known).any() else float("nan")
    return MetricReport(
        all_acc=all_acc,
        os_acc=os_acc,
        os_star=os_star,
        per_class=per_class,
        acc_unknown=float(per_class[num_classes]),
        excluded=excluded,
        confusion=counts,
    )


def identity_check(report: MetricReport, tol: float = 1e-12) -> bool:
    """Verify OS == (C * OS* + unknown accuracy) / (C + 1).

    Requires every class present in the truth (no exclusions).
    """
    if report.excluded:
        raise ValueError("identity requires every class present in the truth")
    c = len(report.per_class) - 1
    expected = (c * report.os_star + report.acc_unknown) / (c + 1)
    return abs(report.os_acc - expected) <= tol
