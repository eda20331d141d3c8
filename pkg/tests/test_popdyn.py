import numpy as np
import pytest

from analysis.popdyn import ActivityMatrix, collect_activity, covariance_spectrum, dimensionality, weight_balance
from core.config_models import TaskKind, TaskSpec
from core.errors import StructuralError


def test_spectrum_is_sorted_and_sums_to_variance(rng):
    activity = ActivityMatrix(rng.normal(size=(2000, 5)) * np.array([5.0, 1.0, 1.0, 0.5, 0.1]))
    eigs = covariance_spectrum(activity)
    assert np.all(np.diff(eigs) <= 0)
    assert eigs.sum() == pytest.approx(activity.values.var(axis=0).sum())


def test_dimensionality_of_planted_subspace(rng):
    latent = rng.normal(size=(5000, 3))
    mixing = rng.normal(size=(3, 20))
    activity = ActivityMatrix(latent @ mixing)
    assert dimensionality(activity) <= 3
    assert dimensionality(activity, variance_fraction=1.0) == 3


def test_constant_activity_has_zero_dimensionality():
    assert dimensionality(ActivityMatrix(np.ones((100, 4)))) == 0


def test_dominant_direction():
    t = np.linspace(0, 20, 4000)
    values = np.column_stack([np.sin(t), 2 * np.sin(t), 1e-3 * np.cos(3 * t)])
    assert dimensionality(ActivityMatrix(values)) == 1


def test_invalid_inputs():
    with pytest.raises(StructuralError):
        ActivityMatrix(np.ones(10))
    with pytest.raises(StructuralError):
        ActivityMatrix(np.array([[np.nan, 1.0]]))
    with pytest.raises(StructuralError):
        dimensionality(ActivityMatrix(np.ones((10, 2))), variance_fraction=0.0)


def test_collect_activity_shape(small_params, small_cfg, rng):
    activity = collect_activity(small_params, small_cfg, TaskSpec(kind=TaskKind.PARITY, n=2), rng, steps=500)
    assert activity.values.shape == (500, small_params.n)


def test_weight_balance(small_params):
    balance = weight_balance(small_params)
    assert balance.per_neuron == pytest.approx(small_params.w_rec.mean(axis=1))
    assert balance.mean == pytest.approx(small_params.w_rec.mean())
    assert balance.as_row() == {"mean_incoming_weight": balance.mean, "std_incoming_weight": balance.std}


def test_isotropic_noise_needs_nine_of_ten_components(rng):
    assert dimensionality(ActivityMatrix(rng.normal(size=(100_000, 10)))) == 9


def test_rank_five_with_tiny_noise(rng):
    basis, _ = np.linalg.qr(rng.normal(size=(20, 5)))
    values = rng.normal(size=(20_000, 5)) @ basis.T + 1e-7 * rng.normal(size=(20_000, 20))
    assert dimensionality(ActivityMatrix(values)) == 5
    assert dimensionality(ActivityMatrix(values), variance_fraction=1.0) == 5


def test_dimensionality_is_rotation_invariant(rng):
    values = rng.normal(size=(5000, 8)) * np.array([4.0, 3.0, 2.0, 1.0, 0.5, 0.3, 0.2, 0.1])
    rotation, _ = np.linalg.qr(rng.normal(size=(8, 8)))
    for fraction in (0.5, 0.9, 0.99):
        assert dimensionality(ActivityMatrix(values), fraction) == dimensionality(ActivityMatrix(values @ rotation), fraction)


class TestWeightBalance:
    def test_linear_in_weights(self, small_params):
        scaled = weight_balance(small_params.replace(w_rec=small_params.w_rec * -2.5))
        base = weight_balance(small_params)
        assert scaled.mean == pytest.approx(-2.5 * base.mean)
        assert scaled.per_neuron == pytest.approx(-2.5 * base.per_neuron)

    def test_antisymmetric_weights_balance_to_zero(self, small_params, rng):
        a = rng.normal(size=(8, 8))
        assert weight_balance(small_params.replace(w_rec=a - a.T)).mean == pytest.approx(0.0, abs=1e-12)

    def test_constant_weights(self, small_params):
        w_rec = np.full((8, 8), 0.3)
        np.fill_diagonal(w_rec, 0.0)
        balance = weight_balance(small_params.replace(w_rec=w_rec))
        assert balance.mean == pytest.approx(0.3 * 7 / 8)
        assert balance.std == pytest.approx(0.0, abs=1e-15)
