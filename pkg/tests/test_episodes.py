"""Episode construction: composition, determinism, mix-up replacement."""

import numpy as np
import pytest

from progda.episodes import build_initial_batch, build_mixup_batch
from progda.pseudolabel import PseudoLabelStore
from progda.synthgen import GenSpec, generate


def make_pair(C=4, n_source=200, n_target=200, seed=0):
    return generate(GenSpec(known_classes=C, unknown_clusters=C, feature_dim=6,
                            n_source=n_source, n_target=n_target,
                            openness=0.5, seed=seed))


def stored_everything(pair, per_class=20):
    """A store holding plenty of pseudo-known ids for every class."""
    store = PseudoLabelStore()
    store.step = 1
    c = pair.num_classes
    ids = list(pair.target_ids)
    k = 0
    for cls in range(1, c + 1):
        for _ in range(per_class):
            store.known[int(ids[k])] = (cls, 1)
            k += 1
    return store


class TestInitialBatch:
    def test_office_home_shape(self):
        pair = make_pair(C=25, n_source=500, n_target=500)
        batch = build_initial_batch(pair, batch_size=2, seed=1)
        assert len(batch.episodes) == 2
        for ep in batch.episodes:
            assert ep.slot_features.shape == (25, 6)
            assert ep.target_features.shape == (25, 6)

    def test_slot_labels_are_a_permutation(self):
        pair = make_pair()
        batch = build_initial_batch(pair, batch_size=3, seed=2)
        for ep in batch.episodes:
            np.testing.assert_array_equal(np.sort(ep.slot_labels), [1, 2, 3, 4])

    def test_equal_seeds_identical(self):
        pair = make_pair()
        a = build_initial_batch(pair, batch_size=2, seed=3)
        b = build_initial_batch(pair, batch_size=2, seed=3)
        for ea, eb in zip(a.episodes, b.episodes):
            np.testing.assert_array_equal(ea.slot_ids, eb.slot_ids)
            np.testing.assert_array_equal(ea.target_ids, eb.target_ids)

    def test_slots_hold_correct_class_samples(self):
        pair = make_pair()
        batch = build_initial_batch(pair, batch_size=2, seed=4)
        for ep in batch.episodes:
            for k, label in enumerate(ep.slot_labels):
                assert pair.source_labels[ep.slot_ids[k]] == label

    def test_empty_class_rejected_by_name(self):
        pair = make_pair()
        keep = pair.source_labels != 3
        pair.source_features = pair.source_features[keep]
        pair.source_labels = pair.source_labels[keep]
        with pytest.raises(ValueError, match="class 3"):
            build_initial_batch(pair, batch_size=1, seed=0)

    def test_no_duplicate_targets_within_episode(self):
        pair = make_pair()
        batch = build_initial_batch(pair, batch_size=5, seed=5)
        for ep in batch.episodes:
            assert len(set(ep.target_ids)) == len(ep.target_ids)


class TestMixupBatch:
    def test_replacement_probability_formula(self):
        pair = make_pair()
        batch = build_mixup_batch(pair, stored_everything(pair), step=4,
                                  alpha=0.05, batch_size=1, seed=6)
        assert batch.replacement_prob == pytest.approx(0.2)

    def test_step_zero_identical_to_initial(self):
        pair = make_pair()
        a = build_initial_batch(pair, batch_size=3, seed=7)
        b = build_mixup_batch(pair, stored_everything(pair), step=0, alpha=0.05,
                              batch_size=3, seed=7)
        for ea, eb in zip(a.episodes, b.episodes):
            np.testing.assert_array_equal(ea.slot_ids, eb.slot_ids)
            np.testing.assert_array_equal(ea.target_ids, eb.target_ids)
            assert not eb.slot_is_pseudo.any()

    def test_replacement_rate_matches_binomial_mean(self):
        # C=10, m=4, alpha=0.05: expected pseudo slots per episode is 2
        pair = make_pair(C=10, n_source=400, n_target=2000)
        store = stored_everything(pair, per_class=40)
        total = 0
        episodes = 0
        for seed in range(100):
            batch = build_mixup_batch(pair, store, step=4, alpha=0.05,
                                      batch_size=100, seed=seed)
            for ep in batch.episodes:
                total += int(ep.slot_is_pseudo.sum())
                episodes += 1
        assert episodes == 10000
        assert total / episodes == pytest.approx(2.0, abs=0.05)

    def test_replaced_slots_carry_same_class_pseudo_samples(self):
        pair = make_pair()
        store = stored_everything(pair)
        batch = build_mixup_batch(pair, store, step=3, alpha=0.25, batch_size=10,
                                  seed=8)
        for ep in batch.episodes:
            for k in np.flatnonzero(ep.slot_is_pseudo):
                sid = int(ep.slot_ids[k])
                assert store.known[sid][0] == ep.slot_labels[k]

    def test_labels_stay_permutation_under_replacement(self):
        pair = make_pair()
        batch = build_mixup_batch(pair, stored_everything(pair), step=4,
                                  alpha=0.25, batch_size=10, seed=9)
        for ep in batch.episodes:
            np.testing.assert_array_equal(np.sort(ep.slot_labels), [1, 2, 3, 4])

    def test_toggling_mixup_leaves_data_draws_in_place(self):
        pair = make_pair()
        plain = build_initial_batch(pair, batch_size=4, seed=10)
        mixed = build_mixup_batch(pair, stored_everything(pair), step=2,
                                  alpha=0.25, batch_size=4, seed=10)
        for ea, eb in zip(plain.episodes, mixed.episodes):
            np.testing.assert_array_equal(ea.target_ids, eb.target_ids)
            kept = ~eb.slot_is_pseudo
            np.testing.assert_array_equal(ea.slot_ids[kept], eb.slot_ids[kept])

    def test_shortfall_counted_when_class_missing(self):
        pair = make_pair()
        store = stored_everything(pair)
        store.known = {i: v for i, v in store.known.items() if v[0] != 2}
        batch = build_mixup_batch(pair, store, step=4, alpha=0.25, batch_size=50,
                                  seed=11)
        assert batch.shortfall > 0
        for ep in batch.episodes:
            assert not ep.slot_is_pseudo[1]  # class 2 slot never replaced

    def test_pseudo_slot_never_duplicates_target_slot(self):
        pair = make_pair(n_target=60)
        batch = build_mixup_batch(pair, stored_everything(pair, per_class=15),
                                  step=4, alpha=0.25, batch_size=50, seed=12)
        for ep in batch.episodes:
            pseudo_ids = set(int(i) for i in ep.slot_ids[ep.slot_is_pseudo])
            assert not pseudo_ids & set(int(t) for t in ep.target_ids)

    def test_overlong_schedule_rejected(self):
        pair = make_pair()
        with pytest.raises(ValueError, match="exceeds 1"):
            build_mixup_batch(pair, stored_everything(pair), step=5, alpha=0.25,
                              batch_size=1, seed=13)
