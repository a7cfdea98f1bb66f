import numpy as np
import pytest

from cfgctrl.flow_systems import (
    FlowSystem,
    GaussComponent,
    data_responsibilities,
    default_bandwidth,
    error_signal,
    marginal_velocity,
    mc_velocity_oracle,
    responsibilities,
)
from cfgctrl.numerics import Rng

from conftest import draw_probe


def single_gaussian(mean, cov=None):
    mean = np.asarray(mean, dtype=float)
    cov = np.eye(len(mean)) if cov is None else cov
    return FlowSystem([GaussComponent(1.0, mean, cov)], {"only": [0]})


class TestMarginalVelocity:
    def test_velocity_at_path_mean_is_component_mean(self):
        mu = np.array([2.0, -1.0])
        sys1 = single_gaussian(mu)
        for tau in (0.1, 0.3, 0.7, 0.95):
            assert np.allclose(marginal_velocity(sys1, tau * mu, tau, None), mu, atol=1e-12)

    def test_standard_normal_at_half_time_is_zero(self):
        sys1 = single_gaussian([0.0, 0.0])
        x = np.array([1.7, 0.4])
        assert np.allclose(marginal_velocity(sys1, x, 0.5, None), 0.0, atol=1e-14)

    def test_affine_in_x_at_fixed_tau(self):
        cov = np.array([[1.5, 0.4], [0.4, 0.8]])
        sys1 = single_gaussian([1.0, 2.0], cov)
        a = np.array([0.3, -0.6])
        b = np.array([1.1, 0.9])
        mid = 0.5 * (a + b)
        tau = 0.4
        v_mid = marginal_velocity(sys1, mid, tau, None)
        v_avg = 0.5 * (marginal_velocity(sys1, a, tau, None) + marginal_velocity(sys1, b, tau, None))
        assert np.allclose(v_mid, v_avg, atol=1e-12)

    def test_batch_matches_single(self, reference_system):
        rng = Rng(11)
        xs = rng.standard_normal((7, 2))
        batch = marginal_velocity(reference_system, xs, 0.37, "right")
        for i in range(7):
            single = marginal_velocity(reference_system, xs[i], 0.37, "right")
            assert np.array_equal(batch[i], single)

    def test_tau_out_of_range(self, reference_system):
        with pytest.raises(ValueError):
            marginal_velocity(reference_system, np.zeros(2), 1.0, None)
        with pytest.raises(ValueError):
            marginal_velocity(reference_system, np.zeros(2), -0.1, None)

    def test_unknown_condition(self, reference_system):
        with pytest.raises(ValueError):
            marginal_velocity(reference_system, np.zeros(2), 0.5, "nope")

    def test_non_finite_probe(self, reference_system):
        with pytest.raises(ValueError):
            marginal_velocity(reference_system, np.array([np.inf, 0.0]), 0.5, None)


class TestResponsibilities:
    def test_convex_combination(self, reference_system):
        rng = Rng(12)
        for _ in range(30):
            x, tau = draw_probe(rng, reference_system, None)
            r = responsibilities(reference_system, x, tau, None)
            assert (r >= 0.0).all()
            assert r.sum() == pytest.approx(1.0, abs=1e-10)

    def test_data_responsibilities_sum_to_one(self, reference_system):
        rng = Rng(13)
        x = rng.standard_normal((20, 2)) * 3.0
        r = data_responsibilities(reference_system, x)
        assert np.allclose(r.sum(axis=1), 1.0, atol=1e-12)


class TestErrorSignal:
    def test_full_support_condition_is_exactly_zero(self):
        comps = [
            GaussComponent(0.5, np.array([3.0, 0.0]), np.eye(2)),
            GaussComponent(0.5, np.array([-3.0, 0.0]), np.eye(2)),
        ]
        sys2 = FlowSystem(comps, {"all": [0, 1]})
        rng = Rng(14)
        for _ in range(10):
            x, tau = draw_probe(rng, sys2, None)
            e = error_signal(sys2, x, tau, "all")
            assert np.array_equal(e, np.zeros(2))

    def test_single_component_system_zero(self):
        sys1 = single_gaussian([1.0, 1.0])
        e = error_signal(sys1, np.array([0.5, 0.2]), 0.3, "only")
        assert np.array_equal(e, np.zeros(2))

    def test_guided_endpoint_error_smaller_than_start(self, reference_config):
        # Along a guided trajectory the conditional and unconditional
        # predictions converge, so the recorded gap shrinks end to end.
        from cfgctrl.sampler import run_batch

        result = run_batch(reference_config)
        e = np.stack([t.e_norm for t in result.traces])
        assert (e[:, -1] < e[:, 0]).mean() >= 0.9
        assert e[:, -1].mean() < 0.05 * e[:, 0].mean()


class TestMcOracle:
    def test_known_answer_single_gaussian(self):
        mu = np.array([2.0, -1.0])
        sys1 = single_gaussian(mu)
        tau = 0.45
        est, se = mc_velocity_oracle(sys1, tau * mu, tau, None, 50_000, default_bandwidth(tau), Rng(15))
        assert (np.abs(est - mu) <= 3.0 * se).all()

    def test_agreement_on_50_probes(self, reference_system):
        probe_rng = Rng(2024, 1)
        for i in range(50):
            cond = "right" if i % 2 == 0 else None
            x, tau = draw_probe(probe_rng, reference_system, cond)
            v = marginal_velocity(reference_system, x, tau, cond)
            est, se = mc_velocity_oracle(
                reference_system, x, tau, cond, 100_000, default_bandwidth(tau), Rng(9100, i)
            )
            assert (np.abs(est - v) <= 3.0 * se).all(), f"probe {i} at tau={tau}"

    def test_tiny_bandwidth_fails_ess(self, reference_system):
        with pytest.raises(ValueError, match="effective sample size"):
            mc_velocity_oracle(reference_system, np.zeros(2), 0.5, None, 10_000, 1e-6, Rng(16))

    def test_too_few_pairs_rejected(self, reference_system):
        with pytest.raises(ValueError, match="n_pairs"):
            mc_velocity_oracle(reference_system, np.zeros(2), 0.5, None, 100, 0.1, Rng(17))


class TestConstruction:
    def test_weights_must_sum_to_one(self):
        comps = [
            GaussComponent(0.6, np.zeros(2), np.eye(2)),
            GaussComponent(0.5, np.ones(2), np.eye(2)),
        ]
        with pytest.raises(ValueError, match="sum"):
            FlowSystem(comps)

    def test_empty_condition_rejected(self):
        with pytest.raises(ValueError, match="selects no components"):
            FlowSystem([GaussComponent(1.0, np.zeros(2), np.eye(2))], {"bad": []})

    def test_non_spd_cov_rejected(self):
        with pytest.raises(np.linalg.LinAlgError):
            FlowSystem([GaussComponent(1.0, np.zeros(2), -np.eye(2))])

    def test_mixture_moments_single_component(self, reference_system):
        mean, cov = reference_system.mixture_moments("right")
        assert np.allclose(mean, [3.0, 0.0])
        assert np.allclose(cov, np.eye(2))

    def test_mixture_moments_full(self, reference_system):
        mean, cov = reference_system.mixture_moments(None)
        assert np.allclose(mean, [0.0, 0.0])
        # two symmetric modes at +-3 inflate the x variance by 9
        assert np.allclose(cov, np.diag([10.0, 1.0]))
