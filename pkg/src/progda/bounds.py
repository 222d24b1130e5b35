"""Exact verification of the adaptation bounds on finite instances.

Distributions are explicit probability masses over a finite point set,
hypotheses are lookup tables, and the loss is 0-1, so every risk,
supremum and minimum is computable by brute force. The open-set bound
is checked for every hypothesis; the shared-error term is the exact
minimum over the class, and the discrepancy is the exact supremum over
hypothesis pairs.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DISC_GUARD = 200
SLACK_TOL = 1e-12


@dataclass
class FiniteInstance:
    source: np.ndarray  # (n, C) probability mass over points x known labels
    target: np.ndarray  # (n, C+1) probability mass, last column is the unknown class
    hypotheses: np.ndarray  # (|H|, n) values in 1..C+1
    h1: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))
    h2: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))
    seed: int | None = None

    def __post_init__(self):
        self.source = np.asarray(self.source, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        self.hypotheses = np.asarray(self.hypotheses, dtype=np.int64)
        n, c = self.source.shape
        if self.target.shape != (n, c + 1):
            raise ValueError("target mass must be (n, C+1) to match source (n, C)")
        for name, dist in (("source", self.source), ("target", self.target)):
            if dist.min() < 0:
                raise ValueError(f"{name} mass has negative entries")
            if abs(dist.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} mass must sum to 1")
        if self.hypotheses.ndim != 2 or self.hypotheses.shape[1] != n:
            raise ValueError("hypotheses must be a (|H|, n) table")
        if self.hypotheses.min() < 1 or self.hypotheses.max() > c + 1:
            raise ValueError(f"hypothesis outputs must lie in 1..{c + 1}")
        if not (self.hypotheses == c + 1).all(axis=1).any():
            raise ValueError("hypothesis class must contain the constant unknown function")
        self.h1 = np.asarray(self.h1, dtype=np.int64)
        self.h2 = np.asarray(self.h2, dtype=np.int64)
        support = self.source.sum(axis=1) > 0
        for idx in self.h1:
            if (self.hypotheses[idx][support] == c + 1).any():
                raise ValueError(
                    "h1 may only contain hypotheses that never output the unknown "
                    "class on source-support points"
                )

    @property
    def num_points(self) -> int:
        return self.source.shape[0]

    @property
    def num_classes(self) -> int:
        return self.source.shape[1]

    @property
    def unknown_prior(self) -> float:
        return float(self.target[:, -1].sum())


def risk(h, dist, restrict=None, warn_empty: bool = True) -> float:
    """Exact expected 0-1 loss of hypothesis table `h` under `dist`.

    With `restrict`, only the mass of the listed classes contributes
    (the prior-weighted partial risks); a restricted class with zero
    mass contributes 0 with a warning.
    """
    h = np.asarray(h, dtype=np.int64)
    dist = np.asarray(dist, dtype=np.float64)
    wrong = h[:, None] != np.arange(1, dist.shape[1] + 1)[None, :]
    if restrict is None:
        return float((dist * wrong).sum())
    total = 0.0
    for cls in restrict:
        mass = dist[:, cls - 1]
        if mass.sum() == 0:
            if warn_empty:
                warnings.warn(f"class {cls} has zero mass; its term contributes 0",
                              stacklevel=2)
            continue
        total += float((mass * wrong[:, cls - 1]).sum())
    return total


def conditional_risk(h, dist, cls: int) -> float:
    """Expected 0-1 loss under the class-conditional distribution of `cls`."""
    h = np.asarray(h, dtype=np.int64)
    dist = np.asarray(dist, dtype=np.float64)
    mass = dist[:, cls - 1]
    prior = mass.sum()
    if prior == 0:
        warnings.warn(f"class {cls} has zero mass; conditional risk set to 0",
                      stacklevel=2)
        return 0.0
    return float((mass * (h != cls)).sum() / prior)


def class_priors(dist) -> np.ndarray:
    return np.asarray(dist, dtype=np.float64).sum(axis=0)


def pairwise_disagreement(hypotheses, weights) -> np.ndarray:
    """E_x[1{h(x) != h'(x)}] for every hypothesis pair, mass-weighted."""
    hyp = np.asarray(hypotheses, dtype=np.int64)
    differ = hyp[:, None, :] != hyp[None, :, :]
    return differ @ np.asarray(weights, dtype=np.float64)


def discrepancy(p_x, q_x, hypotheses) -> float:
    """sup over hypothesis pairs of |E_P disagreement - E_Q disagreement|."""
    hyp = np.asarray(hypotheses)
    if hyp.shape[0] > DISC_GUARD:
        raise ValueError(
            f"hypothesis class of size {hyp.shape[0]} exceeds the enumeration "
            f"guard {DISC_GUARD}"
        )
    gap = pairwise_disagreement(hyp, p_x) - pairwise_disagreement(hyp, q_x)
    return float(np.abs(gap).max())


def known_target_marginal(instance: FiniteInstance) -> np.ndarray:
    """Marginal over points of the target restricted to known classes."""
    mass = instance.target[:, : instance.num_classes].sum(axis=1)
    total = mass.sum()
    if total == 0:
        raise ValueError("target has no known-class mass")
    return mass / total


def shared_error(instance: FiniteInstance) -> tuple[float, int]:
    """min over H of known-restricted target risk /(1-pi_unk) + source risk."""
    pi_unk = instance.unknown_prior
    known = range(1, instance.num_classes + 1)
    values = [
        risk(h, instance.target, restrict=known, warn_empty=False) / (1.0 - pi_unk)
        + risk(h, instance.source)
        for h in instance.hypotheses
    ]
    best = int(np.argmin(values))
    return float(values[best]), best


@dataclass
class OudaBoundReport:
    lhs: np.ndarray  # per hypothesis
    rs: np.ndarray
    openset_term: np.ndarray
    slack: np.ndarray
    disc: float
    lam: float
    min_slack: float
    argmin: int
    violations: list[int]

    def row(self, seed=None) -> dict:
        """CSV-shaped summary at the tightest hypothesis."""
        i = self.argmin
        return {
            "instance_seed": seed,
            "lhs": float(self.lhs[i]),
            "rs": float(self.rs[i]),
            "disc": self.disc,
            "lambda": self.lam,
            "openset_term": float(self.openset_term[i]),
            "slack": self.min_slack,
        }


def check_ouda_bound(instance: FiniteInstance,
                     artifact_dir=None) -> OudaBoundReport:
    """Evaluate the open-set bound for every hypothesis; report the slacks.

    Negative slack below tolerance is recorded as a violation and, when
    `artifact_dir` is given, persisted as a counterexample file.
    """
    pi_unk = instance.unknown_prior
    if pi_unk >= 1.0:
        raise ValueError("target must retain known-class mass")
    c = instance.num_classes
    p_x = instance.source.sum(axis=1)
    q_known = known_target_marginal(instance)
    disc = discrepancy(p_x, q_known, instance.hypotheses)
    lam, _ = shared_error(instance)

    lhs, rs, openset = [], [], []
    for h in instance.hypotheses:
        lhs.append(risk(h, instance.target) / (1.0 - pi_unk))
        rs.append(risk(h, instance.source))
        if pi_unk == 0.0:
            openset.append(0.0)
        else:
            openset.append(pi_unk / (1.0 - pi_unk)
                           * conditional_risk(h, instance.target, c + 1))
    lhs = np.array(lhs)
    rs = np.array(rs)
    openset = np.array(openset)
    slack = rs + disc + lam + openset - lhs
    argmin = int(np.argmin(slack))
    violations = [int(i) for i in np.flatnonzero(slack < -SLACK_TOL)]
    report = OudaBoundReport(
        lhs=lhs, rs=rs, openset_term=openset, slack=slack, disc=disc, lam=lam,
        min_slack=float(slack[argmin]), argmin=argmin, violations=violations,
    )
    if violations and artifact_dir is not None:
        path = Path(artifact_dir)
        path.mkdir(parents=True, exist_ok=True)
        payload = {
            "seed": instance.seed,
            "source": instance.source.tolist(),
            "target": instance.target.tolist(),
            "hypotheses": instance.hypotheses.tolist(),
            "violating_hypotheses": violations,
            "slack": [float(slack[i]) for i in violations],
        }
        name = f"bound_violation_seed{instance.seed}.json"
        (path / name).write_text(json.dumps(payload, indent=2))
    return report


@dataclass
class TightnessReport:
    sup_rs_h1: float
    sup_rs_full: float
    sup_open_h2: float
    sup_open_full: float

    @property
    def holds(self) -> bool:
        return (self.sup_rs_h1 <= self.sup_rs_full
                and self.sup_open_h2 <= self.sup_open_full)


def check_subset_tightness(instance: FiniteInstance) -> TightnessReport:
    """Exact comparison of restricted and unrestricted worst-case risks."""
    c = instance.num_classes
    pi_unk = instance.unknown_prior
    rs_all = np.array([risk(h, instance.source) for h in instance.hypotheses])
    if pi_unk == 0.0:
        open_all = np.zeros(len(instance.hypotheses))
    else:
        open_all = np.array([
            pi_unk / (1.0 - pi_unk) * conditional_risk(h, instance.target, c + 1)
            for h in instance.hypotheses
        ])
    h1 = instance.h1 if len(instance.h1) else np.arange(len(instance.hypotheses))
    h2 = instance.h2 if len(instance.h2) else np.arange(len(instance.hypotheses))
    return TightnessReport(
        sup_rs_h1=float(rs_all[h1].max()),
        sup_rs_full=float(rs_all.max()),
        sup_open_h2=float(open_all[h2].max()),
        sup_open_full=float(open_all.max()),
    )


def pouda_slack_report(instance: FiniteInstance, pi_alpha: float) -> dict:
    """Descriptive gap of the progressive bound, whose additive constant
    is unspecified: reports min/max of (bound terms without the constant)
    minus the combined-predictor target error, never asserted."""
    if not 0.0 <= pi_alpha <= 1.0:
        raise ValueError("pi_alpha must lie in [0, 1]")
    pi_unk = instance.unknown_prior
    if pi_unk >= 1.0:
        raise ValueError("target must retain known-class mass")
    c = instance.num_classes
    h1 = instance.h1 if len(instance.h1) else np.arange(len(instance.hypotheses))
    h2 = instance.h2 if len(instance.h2) else np.arange(len(instance.hypotheses))
    p_x = instance.source.sum(axis=1)
    q_known = known_target_marginal(instance)
    disc = discrepancy(p_x, q_known, instance.hypotheses)
    known = range(1, c + 1)
    lam = min(
        risk(instance.hypotheses[i], instance.target, restrict=known,
             warn_empty=False) / (1.0 - pi_unk)
        + (1.0 - pi_alpha) * risk(instance.hypotheses[i], instance.source)
        for i in h1
    )
    gaps = []
    for i in h1:
        h_known = instance.hypotheses[i]
        for j in h2:
            h_rej = instance.hypotheses[j]
            combined = np.where(h_rej == c + 1, c + 1, h_known)
            lhs = risk(combined, instance.target) / (1.0 - pi_unk)
            if pi_unk == 0.0:
                open_term = 0.0
            else:
                open_term = (pi_alpha * pi_unk / (1.0 - pi_unk)
                             * conditional_risk(h_rej, instance.target, c + 1))
            rhs = (1.0 - pi_alpha) * (risk(h_known, instance.source) + disc) + lam + open_term
            gaps.append(rhs - lhs)
    gaps = np.array(gaps)
    return {
        "pi_alpha": pi_alpha,
        "disc": disc,
        "lambda": lam,
        "min_gap_without_const": float(gaps.min()),
        "max_gap_without_const": float(gaps.max()),
        "pairs": int(gaps.size),
    }


def random_instance(seed: int, max_points: int = 6, max_classes: int = 3,
                    max_hypotheses: int = 50, closed_set: bool = False) -> FiniteInstance:
    """Seeded random instance within the enumeration-friendly size caps."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, max_points + 1))
    c = int(rng.integers(1, max_classes + 1))

    def mass(cells, sparsity=0.3):
        w = rng.dirichlet(np.ones(cells))
        drop = rng.random(cells) < sparsity
        if drop.all():
            drop[rng.integers(cells)] = False
        w = np.where(drop, 0.0, w)
        return w / w.sum()

    source = mass(n * c).reshape(n, c)
    target = mass(n * (c + 1)).reshape(n, c + 1)
    if closed_set:
        target[:, -1] = 0.0
    if target[:, :c].sum() == 0:
        target[:, :c] = source  # the bounds require known-class target mass
    target = target / target.sum()

    count = int(rng.integers(2, max_hypotheses + 1))
    hypotheses = rng.integers(1, c + 2, size=(count, n))
    hypotheses[0] = c + 1  # the constant unknown function
    hypotheses[1] = rng.integers(1, c + 1, size=n)  # one known-only map
    support = source.sum(axis=1) > 0
    h1 = np.array([
        i for i, h in enumerate(hypotheses) if not (h[support] == c + 1).any()
    ], dtype=np.int64)
    h2_size = int(rng.integers(1, count + 1))
    h2 = np.sort(rng.choice(count, size=h2_size, replace=False)).astype(np.int64)
    return FiniteInstance(source=source, target=target, hypotheses=hypotheses,
                          h1=h1, h2=h2, seed=seed)
