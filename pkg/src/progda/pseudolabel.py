"""Progressive pseudo-labeling by global confidence ranking.

At step m the not-yet-labeled target samples are ranked by their maximum
class probability, ascending. The bottom of the ranking is committed as
unknown (class C+1) and the top as known (the classifier argmax), with
cumulative quotas round(beta*alpha*m*n) and round((1-beta)*alpha*m*n).
Assignments are immutable: each step only extends the store, and after
step M = 1/alpha the whole target set is labeled with an unknown
fraction of exactly beta.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .utils import round_half_up


@dataclass(frozen=True)
class ProgressiveConfig:
    alpha: float
    beta: float
    n_target: int

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if self.n_target < 1:
            raise ValueError("n_target must be positive")
        if abs(self.alpha * self.total_steps - 1.0) > 1e-9:
            raise ValueError(
                f"alpha {self.alpha} does not divide the schedule: "
                f"{self.total_steps} steps cover {self.alpha * self.total_steps:.6f}"
            )

    @property
    def total_steps(self) -> int:
        return round_half_up(1.0 / self.alpha)

    def cumulative_unknown(self, step: int) -> int:
        return round_half_up(self.beta * self.alpha * step * self.n_target)

    def cumulative_known(self, step: int) -> int:
        return round_half_up((1.0 - self.beta) * self.alpha * step * self.n_target)

    def labeled_fraction(self, step: int) -> float:
        """Diagnostic: fraction of the target pool pseudo-labeled after `step`."""
        return min(self.alpha * step, 1.0)


@dataclass
class PseudoLabelStore:
    """Cumulative known/unknown assignments with per-step provenance."""

    known: dict[int, tuple[int, int]] = field(default_factory=dict)  # id -> (label, step)
    unknown: dict[int, int] = field(default_factory=dict)  # id -> step
    confidence: dict[int, float] = field(default_factory=dict)
    step: int = 0

    def is_labeled(self, sample_id: int) -> bool:
        return sample_id in self.known or sample_id in self.unknown

    def labeled_ids(self) -> set[int]:
        return set(self.known) | set(self.unknown)

    def known_ids_for_class(self, label: int) -> list[int]:
        return sorted(i for i, (lab, _) in self.known.items() if lab == label)

    def label_of(self, sample_id: int, unknown_label: int) -> int:
        if sample_id in self.unknown:
            return unknown_label
        return self.known[sample_id][0]

    def counts(self) -> tuple[int, int]:
        return len(self.known), len(self.unknown)

    def snapshot(self) -> dict:
        return {
            "step": self.step,
            "known": {str(k): [int(v[0]), int(v[1])] for k, v in self.known.items()},
            "unknown": {str(k): int(v) for k, v in self.unknown.items()},
            "confidence": {str(k): float(v) for k, v in self.confidence.items()},
        }

    @classmethod
    def from_snapshot(cls, data: dict) -> "PseudoLabelStore":
        store = cls()
        store.step = int(data["step"])
        store.known = {int(k): (int(v[0]), int(v[1])) for k, v in data["known"].items()}
        store.unknown = {int(k): int(v) for k, v in data["unknown"].items()}
        store.confidence = {int(k): float(v) for k, v in data.get("confidence", {}).items()}
        return store

    def to_csv_rows(self) -> list[list]:
        rows = []
        for i, (label, step) in self.known.items():
            rows.append([i, step, "known", label, self.confidence.get(i)])
        for i, step in self.unknown.items():
            rows.append([i, step, "unknown", None, self.confidence.get(i)])
        rows.sort(key=lambda r: (r[1], r[0]))
        return rows


def ranking_order(confidences: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Positions sorted ascending by confidence, ties broken by sample id."""
    return np.lexsort((ids, confidences))


def select_step_assignments(confidences, ids, store: PseudoLabelStore,
                            config: ProgressiveConfig):
    """Pick this step's new unknown ids and (id, label) known pairs.

    `confidences`/`ids` cover exactly the not-yet-labeled pool. Quotas
    are differences of cumulative targets, so rounding never drifts. If
    the pool is smaller than the combined quota (possible only at the
    last step with fractional beta*n), the unknown quota is honored
    first and the known quota takes whatever remains.
    """
    confidences = np.asarray(confidences, dtype=np.float64)
    ids = np.asarray(ids, dtype=np.int64)
    m_next = store.step + 1
    new_unknown = config.cumulative_unknown(m_next) - len(store.unknown)
    new_known = config.cumulative_known(m_next) - len(store.known)
    new_unknown = max(new_unknown, 0)
    new_known = max(new_known, 0)
    pool = len(ids)
    if new_unknown + new_known > pool:
        new_unknown = min(new_unknown, pool)
        new_known = pool - new_unknown
    order = ranking_order(confidences, ids)
    unknown_pos = order[:new_unknown]
    known_pos = order[len(order) - new_known:] if new_known else order[:0]
    return unknown_pos, known_pos


def pseudo_label_step(score_fn, features, ids, store: PseudoLabelStore,
                      config: ProgressiveConfig) -> PseudoLabelStore:
    """Advance the store by one step using a frozen model's confidences.

    `score_fn(features) -> (confidence, argmax_label)` is evaluated on the
    unlabeled subset only; committed assignments are never revisited.
    """
    ids = np.asarray(ids, dtype=np.int64)
    labeled = store.labeled_ids()
    mask = np.array([int(i) not in labeled for i in ids])
    pool_ids = ids[mask]
    m_next = store.step + 1
    if len(pool_ids) == 0:
        store.step = m_next
        return store
    conf, yhat = score_fn(np.asarray(features)[mask])
    conf = np.asarray(conf, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.int64)
    unknown_pos, known_pos = select_step_assignments(conf, pool_ids, store, config)
    for p in unknown_pos:
        sid = int(pool_ids[p])
        store.unknown[sid] = m_next
        store.confidence[sid] = float(conf[p])
    for p in known_pos:
        sid = int(pool_ids[p])
        store.known[sid] = (int(yhat[p]), m_next)
        store.confidence[sid] = float(conf[p])
    store.step = m_next
    return store


def predict_openset(score_fn, features, ids, store: PseudoLabelStore,
                    config: ProgressiveConfig, num_classes: int) -> np.ndarray:
    """Labels in 1..C+1 for arbitrary samples.

    Stored samples keep their committed pseudo-label. The rest are ranked
    among themselves and the current step's unknown quota (scaled to the
    pool size) is rejected as C+1; everything else takes the classifier
    argmax, which is also the decision for the top-confidence band.
    """
    ids = np.asarray(ids, dtype=np.int64)
    out = np.empty(len(ids), dtype=np.int64)
    unknown_label = num_classes + 1
    stored = np.array([store.is_labeled(int(i)) for i in ids])
    for k in np.flatnonzero(stored):
        out[k] = store.label_of(int(ids[k]), unknown_label)
    rest = np.flatnonzero(~stored)
    if len(rest) == 0:
        return out
    conf, yhat = score_fn(np.asarray(features)[rest])
    conf = np.asarray(conf, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.int64)
    quota = round_half_up(config.beta * config.labeled_fraction(store.step) * len(rest))
    order = ranking_order(conf, ids[rest])
    out[rest] = yhat
    out[rest[order[:quota]]] = unknown_label
    return out
