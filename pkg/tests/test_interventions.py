import numpy as np
import pytest

from analysis.interventions import (
    InterventionKind,
    PerturbTarget,
    ablate,
    ablation_result,
    default_ablation_count,
    perturb,
    perturbation_sweep,
    relative_accuracy,
    relative_accuracy_value,
    retrain_to_higher_n,
    select_by_tau,
)
from core.config_models import NetConfig, TaskConfig, TaskKind, TaskSpec, TrainConfig
from core.errors import IllConditionedMetricError, StructuralError
from network.leaky_rnn import ReadoutHead, init_params
from training.evaluation import stream_accuracy

CFG = NetConfig(n=4)
SPEC = TaskSpec(kind=TaskKind.PARITY, n=2)


def test_hand_wired_network_is_perfect(xor_net, rng):
    assert stream_accuracy(xor_net, CFG, SPEC, 0, rng) == 1.0


class TestMetric:
    def test_unaffected_is_one_and_chance_is_zero(self):
        assert relative_accuracy_value(0.93, 0.93) == 1.0
        assert relative_accuracy_value(0.5, 0.93) == 0.0

    def test_base_near_chance_is_refused(self):
        with pytest.raises(IllConditionedMetricError):
            relative_accuracy_value(0.6, 0.55)

    def test_untrained_network_is_refused(self, rng):
        params = init_params(CFG, rng, (2,))
        params = params.with_heads([ReadoutHead(w_out=np.zeros((2, 4)), b_out=np.zeros(2), target_n=2)])
        with pytest.raises(IllConditionedMetricError):
            relative_accuracy(params, params, CFG, SPEC, rng, n_trials=2)


class TestAblation:
    def test_ablate_zeroes_connections_but_keeps_biases(self, xor_net):
        ablated = ablate(xor_net, [0])
        assert not ablated.w_rec[0].any() and not ablated.w_rec[:, 0].any()
        assert ablated.w_in[0] == 0.0
        assert not ablated.heads[0].w_out[:, 0].any()
        assert np.array_equal(ablated.b_rec, xor_net.b_rec)
        assert np.array_equal(ablated.w_rec[2:], xor_net.w_rec[2:] * np.array([0.0, 1.0, 1.0, 1.0]))

    def test_ablate_is_idempotent(self, small_params):
        once = ablate(small_params, [1, 5])
        twice = ablate(once, [1, 5])
        for name in ("w_rec", "w_in", "b_rec", "b_in", "tau"):
            assert np.array_equal(getattr(twice, name), getattr(once, name))
        for a, b in zip(twice.heads, once.heads):
            assert np.array_equal(a.w_out, b.w_out)

    def test_out_of_range(self, xor_net):
        with pytest.raises(StructuralError):
            ablate(xor_net, [4])

    def test_unused_neuron_costs_nothing(self, xor_net, rng):
        result = relative_accuracy(xor_net, ablate(xor_net, [3]), CFG, SPEC, rng, n_trials=3)
        assert result.acc_rel == 1.0
        assert result.acc_base == 1.0

    def test_losing_the_and_unit_breaks_one_case_in_four(self, xor_net, rng):
        result = relative_accuracy(xor_net, ablate(xor_net, [2]), CFG, SPEC, rng, n_trials=5)
        assert result.acc == pytest.approx(0.75, abs=0.05)
        assert result.acc_rel == pytest.approx(0.5, abs=0.1)
        assert len(result.to_frame("run")) == 5

    def test_select_by_tau(self, xor_net):
        assert select_by_tau(xor_net, 1, "longest") == [3]
        assert select_by_tau(xor_net, 2, "shortest") == [0, 1]
        assert select_by_tau(xor_net, 0) == []
        with pytest.raises(StructuralError):
            select_by_tau(xor_net, 1, "middle")

    def test_default_count_rounds_up(self):
        assert default_ablation_count(500) == 20
        assert default_ablation_count(64) == 3
        assert default_ablation_count(4) == 1

    def test_ablation_result_labels(self, xor_net, rng):
        result = ablation_result(xor_net, CFG, SPEC, rng, which="longest", count=1, n_trials=2)
        assert result.kind == InterventionKind.ABLATE
        assert result.parameter == "longest:1"
        frame = result.to_frame("xor")
        assert list(frame.columns) == ["run_id", "kind", "param", "trial", "acc_base", "acc", "acc_rel"]


class TestPerturbation:
    def test_weight_perturbation_has_requested_norm(self, small_params, rng):
        perturbed = perturb(small_params, PerturbTarget.WEIGHTS, 0.1, rng)
        shift = perturbed.w_rec - small_params.w_rec
        assert np.linalg.norm(shift) == pytest.approx(0.1 * np.linalg.norm(small_params.w_rec))
        assert np.all(np.diagonal(perturbed.w_rec) == 0.0)

    def test_tau_perturbation_only_increases(self, small_params, rng):
        perturbed = perturb(small_params, PerturbTarget.TAU, 0.2, rng)
        shift = perturbed.tau - small_params.tau
        assert np.all(shift >= 0.0)
        assert np.linalg.norm(shift) == pytest.approx(0.2 * np.linalg.norm(small_params.tau))

    def test_zero_epsilon_is_identity(self, small_params, rng):
        assert perturb(small_params, PerturbTarget.WEIGHTS, 0.0, rng) is small_params
        with pytest.raises(StructuralError):
            perturb(small_params, PerturbTarget.TAU, -0.1, rng)

    def test_sweep(self, xor_net):
        results = perturbation_sweep(
            xor_net, CFG, SPEC, PerturbTarget.WEIGHTS, np.random.default_rng(0), epsilons=[0.0, 0.5], n_trials=3
        )
        assert [r.parameter for r in results] == ["0.0", "0.5"]
        assert results[0].acc_rel == 1.0
        assert results[1].kind == InterventionKind.PERTURB_W
        assert results[1].metadata["xi"]

    def test_sweep_is_reproducible(self, xor_net):
        runs = [
            perturbation_sweep(xor_net, CFG, SPEC, PerturbTarget.TAU, np.random.default_rng(5), [0.3], 2)[0]
            for _ in range(2)
        ]
        assert runs[0].trials == runs[1].trials


class TestRetrain:
    TRAIN = TrainConfig(batch_size=4, batches_per_epoch=2, eval_sequences=10)

    def test_keeps_one_head_for_new_n(self, xor_net, rng):
        result, retrained = retrain_to_higher_n(
            xor_net, CFG, self.TRAIN, TaskConfig(), 3, rng, np.random.default_rng(1), epochs=1, n_trials=2
        )
        assert retrained.head_targets == [3]
        assert xor_net.head_targets == [2]
        assert result.kind == InterventionKind.RETRAIN
        assert len(result.trials) == 2
        assert result.acc_base == 1.0

    def test_lower_n_rejected(self, xor_net, rng):
        with pytest.raises(StructuralError):
            retrain_to_higher_n(xor_net, CFG, self.TRAIN, TaskConfig(), 1, rng, rng)
