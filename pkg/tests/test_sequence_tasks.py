from itertools import product

import numpy as np
import pytest
from scipy.stats import chisquare

from core.config_models import TaskKind, TaskSpec
from core.errors import StructuralError
from tasks.sequence_tasks import INVALID, batch_to_frame, digit_targets, sample_batch, sample_stream, target_at


def brute_force(kind, digits, index, n):
    if index < n - 1:
        return None
    window = digits[index - n + 1 : index + 1]
    if kind == TaskKind.PARITY:
        acc = 0
        for d in window:
            acc ^= d
        return acc
    return 1 if window[-1] == window[0] else 0


@pytest.mark.parametrize("kind", list(TaskKind))
@pytest.mark.parametrize("n", range(2, 7))
def test_targets_match_exhaustive_enumeration(kind, n):
    for length in range(1, 11):
        sequences = np.array(list(product((0, 1), repeat=length)), dtype=np.int64)
        vectorized = digit_targets(kind, sequences, n)
        for row, digits in enumerate(sequences):
            for index in range(length):
                expected = brute_force(kind, list(digits), index, n)
                assert target_at(kind, digits, index, n) == expected
                assert vectorized[row, index] == (INVALID if expected is None else expected)


class TestTargetAt:
    def test_examples(self):
        assert target_at(TaskKind.PARITY, [1, 0, 1, 1], 3, 3) == 0
        assert target_at(TaskKind.PARITY, [1, 1, 1], 2, 2) == 0
        assert target_at(TaskKind.DMS, [1, 0, 1], 2, 3) == 1
        assert target_at(TaskKind.DMS, [0, 0, 1], 2, 3) == 0

    def test_undefined_before_n_digits(self):
        assert target_at(TaskKind.PARITY, [1, 1, 0], 0, 2) is None

    def test_index_out_of_range(self):
        with pytest.raises(StructuralError):
            target_at(TaskKind.PARITY, [1, 0], 2, 2)


class TestSampleBatch:
    def test_hold_factor_and_masks(self, rng):
        spec = TaskSpec(kind=TaskKind.PARITY, n=3, k=3, len_range=(4, 7))
        batch = sample_batch(spec, 16, rng)
        assert batch.inputs.shape == (16, batch.lengths.max() * 3)
        for b in range(16):
            length = int(batch.lengths[b])
            assert 4 <= length <= 7
            for t in range(batch.steps):
                digit = t // 3
                if digit < length:
                    assert batch.inputs[b, t] == batch.digits[b, digit]
                    expected = target_at(TaskKind.PARITY, batch.digits[b, :length], digit, 3)
                else:
                    assert batch.inputs[b, t] == 0.0
                    expected = None
                assert batch.valid_mask[b, t] == (expected is not None)
                assert batch.targets[b, t] == (INVALID if expected is None else expected)

    def test_targets_for_other_n(self, rng):
        spec = TaskSpec(kind=TaskKind.DMS, n=4, len_range=(6, 8))
        batch = sample_batch(spec, 5, rng)
        targets, mask = batch.targets_for(2)
        assert mask.sum() > batch.valid_mask.sum()
        b, t = np.argwhere(mask)[0]
        assert targets[b, t] == target_at(TaskKind.DMS, batch.digits[b], t, 2)

    def test_default_lengths(self):
        assert TaskSpec(kind=TaskKind.PARITY, n=5).lengths == (7, 20)

    def test_bad_batch_size(self, rng):
        with pytest.raises(StructuralError):
            sample_batch(TaskSpec(kind=TaskKind.PARITY, n=2), 0, rng)

    def test_reproducible(self):
        spec = TaskSpec(kind=TaskKind.PARITY, n=3)
        a = sample_batch(spec, 4, np.random.default_rng(5))
        b = sample_batch(spec, 4, np.random.default_rng(5))
        assert np.array_equal(a.inputs, b.inputs)


class TestStream:
    def test_exact_length_without_padding(self, rng):
        spec = TaskSpec(kind=TaskKind.PARITY, n=2, k=4)
        stream = sample_stream(spec, 1001, rng)
        assert stream.inputs.shape == (1, 1001)
        assert stream.valid_mask[0, 4:].all()
        assert not stream.valid_mask[0, :4].any()

    def test_digits_are_balanced(self, rng):
        stream = sample_stream(TaskSpec(kind=TaskKind.PARITY, n=2), 20_000, rng)
        assert abs(stream.inputs.mean() - 0.5) < 0.02


def test_batch_to_frame(rng):
    batch = sample_batch(TaskSpec(kind=TaskKind.PARITY, n=2, len_range=(3, 3)), 2, rng)
    frame = batch_to_frame(batch)
    assert list(frame.columns) == ["sequence_id", "step", "input", "target", "valid"]
    assert len(frame) == 6
    assert frame["target"].isna().sum() == 2


class TestTargetInvariance:
    @pytest.mark.parametrize("kind", list(TaskKind))
    def test_digits_outside_window_do_not_matter(self, kind, rng):
        n, index = 4, 8
        for _ in range(50):
            digits = rng.integers(0, 2, size=12)
            flipped = digits.copy()
            outside = [i for i in range(12) if not index - n + 1 <= i <= index]
            flipped[outside] ^= 1
            assert target_at(kind, flipped, index, n) == target_at(kind, digits, index, n)

    def test_dms_ignores_digits_between_compared_positions(self, rng):
        n, index = 5, 6
        for _ in range(50):
            digits = rng.integers(0, 2, size=8)
            flipped = digits.copy()
            flipped[index - n + 2 : index] ^= 1
            assert target_at(TaskKind.DMS, flipped, index, n) == target_at(TaskKind.DMS, digits, index, n)

    @pytest.mark.parametrize("kind", list(TaskKind))
    def test_targets_are_balanced(self, kind):
        digits = np.random.default_rng(2024).integers(0, 2, size=(100_000, 5))
        targets = digit_targets(kind, digits, 5)[:, -1]
        counts = np.bincount(targets, minlength=2)
        assert chisquare(counts).pvalue > 0.01
