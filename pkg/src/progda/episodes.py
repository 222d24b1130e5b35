"""Episode construction: one labeled slot per known class plus C unlabeled targets.

After each pseudo-labeling step, class slots are independently replaced
by a same-class pseudo-labeled target sample with probability m * alpha
(the mix-up update). Replacement decisions and candidate picks consume a
random stream separate from data sampling, so enabling mix-up never
shifts the source/target draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .synthgen import DomainPair
from .utils import stream

STEP_LIMIT_MSG = "replacement probability m*alpha exceeds 1"


@dataclass
class Episode:
    slot_features: np.ndarray  # (C, d) labeled nodes, one per class
    slot_labels: np.ndarray  # (C,) values 1..C, a permutation
    slot_is_pseudo: np.ndarray  # (C,) bool, True where a pseudo-labeled target sits
    slot_ids: np.ndarray  # source row index, or target id where pseudo
    target_features: np.ndarray  # (C, d) unlabeled target nodes
    target_ids: np.ndarray  # (C,) target ids


@dataclass
class EpisodeBatch:
    episodes: list[Episode]
    step: int
    replacement_prob: float
    shortfall: int  # replacements skipped because no same-class pseudo sample existed


def build_initial_batch(pair: DomainPair, batch_size: int, seed: int) -> EpisodeBatch:
    """Episodes for the first training step: source slots only."""
    return build_mixup_batch(pair, None, 0, 0.0, batch_size, seed)


def build_mixup_batch(pair: DomainPair, store, step: int, alpha: float,
                      batch_size: int, seed: int) -> EpisodeBatch:
    """Episodes with per-slot Bernoulli(m * alpha) pseudo-label replacement.

    A slot of class c is only ever replaced by a sample pseudo-labeled c;
    missing candidates keep the source sample and count as shortfall.
    Pseudo-unknown samples never enter class slots.
    """
    c = pair.num_classes
    p_replace = step * alpha
    if p_replace > 1.0 + 1e-12:
        raise ValueError(f"{STEP_LIMIT_MSG}: {step} * {alpha} = {p_replace}")
    n_targets = len(pair.target_ids)
    if n_targets < c:
        raise ValueError(f"need at least {c} target samples, have {n_targets}")
    class_pools = []
    for cls in range(1, c + 1):
        idx = pair.source_indices_for_class(cls)
        if len(idx) == 0:
            raise ValueError(f"source class {cls} has no samples")
        class_pools.append(idx)

    data_rng = stream(seed, "episode-data")
    replace_rng = stream(seed, "episode-replace")
    target_positions = {int(t): k for k, t in enumerate(pair.target_ids)}

    episodes = []
    shortfall = 0
    for _ in range(batch_size):
        src_rows = np.array([data_rng.choice(pool) for pool in class_pools])
        tgt_rows = data_rng.choice(n_targets, size=c, replace=False)
        tgt_ids = pair.target_ids[tgt_rows]

        slot_features = pair.source_features[src_rows].copy()
        slot_labels = np.arange(1, c + 1, dtype=np.int64)
        slot_is_pseudo = np.zeros(c, dtype=bool)
        slot_ids = src_rows.astype(np.int64).copy()

        if p_replace > 0.0 and store is not None:
            draws = replace_rng.random(c)
            excluded = set(int(t) for t in tgt_ids)
            for k in range(c):
                if draws[k] >= p_replace:
                    continue
                candidates = [
                    i for i in store.known_ids_for_class(k + 1) if i not in excluded
                ]
                if not candidates:
                    shortfall += 1
                    continue
                chosen = int(replace_rng.choice(np.asarray(candidates)))
                slot_features[k] = pair.target_features[target_positions[chosen]]
                slot_is_pseudo[k] = True
                slot_ids[k] = chosen
                excluded.add(chosen)

        episodes.append(Episode(
            slot_features=slot_features,
            slot_labels=slot_labels,
            slot_is_pseudo=slot_is_pseudo,
            slot_ids=slot_ids,
            target_features=pair.target_features[tgt_rows].copy(),
            target_ids=tgt_ids.copy(),
        ))
    return EpisodeBatch(episodes=episodes, step=step,
                        replacement_prob=p_replace, shortfall=shortfall)
