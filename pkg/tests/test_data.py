import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from saicl.data import (NO_LABEL, FeatureSchema, Interaction, SequenceBatch, StudentSequence, TaskKind, build_batch,
                        crop_window)
from saicl.errors import SaiclError


def seq(n, user="u", label=None, start_item=0, correct=True):
    xs = tuple(Interaction(user, (start_item + t) % 300, 1000 * t, (t % 2) if correct else None) for t in range(n))
    return StudentSequence(user, xs, sequence_label=label)


KT = TaskKind("KT")
DP = TaskKind("DP")


class TestTypes:
    def test_interaction_invariants(self):
        with pytest.raises(SaiclError):
            Interaction("u", -1, 0)
        with pytest.raises(SaiclError):
            Interaction("u", 1, 0, correct=2)
        with pytest.raises(SaiclError):
            Interaction("u", 1, 0, continuous_features={"lag": float("nan")})

    def test_sequence_invariants(self):
        with pytest.raises(SaiclError):
            StudentSequence("u", ())
        with pytest.raises(SaiclError):
            StudentSequence("u", (Interaction("u", 0, 5), Interaction("u", 0, 4)))
        assert len(StudentSequence("u", [Interaction("u", 0, 5)])) == 1

    def test_task_windows(self):
        with pytest.raises(SaiclError):
            TaskKind("DP", history_days=0)
        with pytest.raises(SaiclError):
            TaskKind("XX")
        assert TaskKind("CondDP").is_next_step and DP.is_sequence_level

    def test_schema_infer_and_round_trip(self):
        s = StudentSequence("u", (Interaction("u", 3, 0, 1, {"action": 2}, {"lag": 0.5}),))
        schema = FeatureSchema.infer([s], KT)
        assert schema.categorical == {"item": 4, "action": 3, "correct": 2}
        assert schema.pad_index("item") == 4 and schema.mask_index("item") == 5
        assert FeatureSchema.from_dict(schema.to_dict()) == schema
        assert "correct" not in FeatureSchema.infer([s], DP).categorical


class TestBuildBatch:
    def test_end_padding(self):
        b = build_batch([seq(3)], 5, KT)
        assert b.valid_mask.tolist() == [[True, True, True, False, False]]
        assert b.cat["item"][0, 3:].tolist() == [b.cat["item"][0, 3]] * 2 == [3, 3]
        assert b.anchor_label[0].tolist() == [0, 1, 0, NO_LABEL, NO_LABEL]

    def test_exact_length_is_identity(self):
        s = seq(100)
        b = build_batch([s], 100, KT, rng_seed=3)
        assert b.valid_mask.all()
        assert b.anchor_item[0].tolist() == [x.item_id for x in s.interactions]

    def test_random_crop_is_a_contiguous_window(self):
        s = seq(250)
        items = [x.item_id for x in s.interactions]
        windows = [items[k:k + 100] for k in range(251 - 100)]
        for seed in range(5):
            a = build_batch([s], 100, KT, rng_seed=seed)
            b = build_batch([s], 100, KT, rng_seed=seed)
            got = a.anchor_item[0].tolist()
            assert got == b.anchor_item[0].tolist()
            assert got in windows
            assert got == windows[int(a.offsets[0])]

    def test_empty(self):
        with pytest.raises(SaiclError) as e:
            build_batch([], 5, KT)
        assert e.value.code == "empty_batch"

    def test_dp_labels_broadcast(self):
        b = build_batch([seq(2, label=1), seq(4, "v", label=0)], 3, DP)
        assert b.sequence_label.tolist() == [1, 0]
        assert b.anchor_label.tolist() == [[1, 1, NO_LABEL], [0, 0, 0]]
        assert "correct" not in b.cat

    def test_masked_interaction_reads_mask_index(self):
        s = seq(3)
        xs = list(s.interactions)
        xs[1] = Interaction("u", 1, 1000, 1, masked=True)
        schema = FeatureSchema({"item": 10, "correct": 2})
        b = build_batch([StudentSequence("u", tuple(xs))], 3, KT, schema=schema)
        assert b.cat["item"][0].tolist() == [0, 11, 2]
        assert b.cat["correct"][0].tolist() == [0, 3, 0]
        # the label is still the target of the prediction at that position
        assert b.anchor_label[0].tolist() == [0, 1, 0]

    def test_arrays_are_read_only(self):
        b = build_batch([seq(3)], 4, KT)
        with pytest.raises(ValueError):
            b.valid_mask[0, 0] = False

    def test_crop_modes(self):
        rng = np.random.default_rng(0)
        assert crop_window(5, 10, rng) == 0
        assert crop_window(30, 10, None, "last") == 20
        assert crop_window(30, 10, None, "first") == 0

    @settings(max_examples=50, deadline=None)
    @given(lengths=st.lists(st.integers(1, 40), min_size=1, max_size=5), L=st.integers(1, 20),
           seed=st.integers(0, 1000))
    def test_labels_only_on_valid_positions(self, lengths, L, seed):
        seqs = [seq(n, f"u{i}", start_item=7 * i) for i, n in enumerate(lengths)]
        b = build_batch(seqs, L, KT, rng_seed=seed)
        assert isinstance(b, SequenceBatch)
        assert not ((b.anchor_label != NO_LABEL) & ~b.valid_mask).any()
        assert b.valid_mask.sum(axis=1).tolist() == [min(n, L) for n in lengths]
        for i, s in enumerate(seqs):
            off = int(b.offsets[i])
            want = [x.item_id for x in s.interactions[off:off + L]]
            assert b.anchor_item[i, :len(want)].tolist() == want
