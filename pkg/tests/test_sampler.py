from dataclasses import replace

import numpy as np
import pytest

from cfgctrl.config import (
    ComponentSpec,
    ControllerSpec,
    ExperimentConfig,
    SamplerSpec,
    SystemSpec,
)
from cfgctrl.flow_systems import FlowSystem, GaussComponent, data_responsibilities
from cfgctrl.guidance import ControlLaw
from cfgctrl.metrics import fit_gaussian, w2_gaussian
from cfgctrl.numerics import Rng
from cfgctrl.sampler import (
    DivergenceError,
    IntegratorSpec,
    run_batch,
    sample_trajectory,
    traces_to_csv,
    traces_to_json,
)


def two_comp_config(controller, steps=64, trajectories=50, seed=501, scheme="euler", target="right"):
    system = SystemSpec(
        dimension=2,
        components=(
            ComponentSpec(0.5, (3.0, 0.0), "diag", (1.0, 1.0)),
            ComponentSpec(0.5, (-3.0, 0.0), "diag", (1.0, 1.0)),
        ),
        conditions={"right": (0,), "left": (1,), "all": (0, 1)},
        target=target,
    )
    return ExperimentConfig(
        system=system,
        controller=controller,
        sampler=SamplerSpec(scheme, steps, trajectories, seed, False, 1e-4),
    )


def single_gauss_system():
    return FlowSystem([GaussComponent(1.0, np.array([1.5, -0.5]), np.eye(2))], {"only": [0]})


class TestIntegratorSpec:
    def test_uniform_grid(self):
        integ = IntegratorSpec("euler", 10, 1e-3)
        grid = integ.tau_grid()
        assert len(grid) == 10
        assert grid[0] == pytest.approx(1e-3)
        assert integ.dtau == pytest.approx((1.0 - 2e-3) / 10)
        assert np.allclose(np.diff(grid), integ.dtau)
        assert grid[-1] + integ.dtau == pytest.approx(1.0 - 1e-3)

    def test_validation(self):
        with pytest.raises(ValueError):
            IntegratorSpec("rk4", 10)
        with pytest.raises(ValueError):
            IntegratorSpec("euler", 1)
        with pytest.raises(ValueError):
            IntegratorSpec("euler", 10, 0.7)


class TestSampleTrajectory:
    def test_deterministic_bit_identical(self):
        system = single_gauss_system()
        integ = IntegratorSpec("euler", 32)
        t1 = sample_trajectory(system, ControlLaw("cfg", w=1.0), integ, "only", Rng(5, 0))
        t2 = sample_trajectory(system, ControlLaw("cfg", w=1.0), integ, "only", Rng(5, 0))
        assert np.array_equal(t1.x_final, t2.x_final)
        assert np.array_equal(t1.e_norm, t2.e_norm)
        assert np.array_equal(t1.vhat_norm, t2.vhat_norm)

    def test_trace_shape_and_finiteness(self):
        system = single_gauss_system()
        integ = IntegratorSpec("heun", 16)
        trace = sample_trajectory(system, ControlLaw("smc", w=3.0), integ, "only", Rng(6, 0), record_x=True)
        assert trace.steps == 16
        assert trace.x_path.shape == (16, 2)
        assert trace.s_norm.shape == (16,)
        for arr in (trace.tau, trace.e_norm, trace.vhat_norm, trace.s_norm, trace.x_final):
            assert np.isfinite(arr).all()

    def test_monotone_tau(self):
        system = single_gauss_system()
        trace = sample_trajectory(system, ControlLaw("cfg"), IntegratorSpec("euler", 8), "only", Rng(7, 0))
        assert (np.diff(trace.tau) > 0).all()


class TestRunBatch:
    def test_n_one_reduces_to_sample_trajectory(self):
        cfg = two_comp_config(ControllerSpec("cfg", {"w": 2.0}), trajectories=1, steps=24)
        result = run_batch(cfg)
        system = FlowSystem(
            [GaussComponent(0.5, np.array([3.0, 0.0]), np.eye(2)), GaussComponent(0.5, np.array([-3.0, 0.0]), np.eye(2))],
            {"right": [0]},
        )
        direct = sample_trajectory(
            system, ControlLaw("cfg", w=2.0), IntegratorSpec("euler", 24), "right", Rng(cfg.sampler.seed, 0)
        )
        assert np.array_equal(result.traces[0].x_final, direct.x_final)
        assert np.array_equal(result.traces[0].e_norm, direct.e_norm)

    def test_parallel_equals_serial(self):
        cfg = two_comp_config(ControllerSpec("smc", {"w": 5.0, "lambda": 6.0, "k": 0.1}), trajectories=12, steps=24)
        serial = run_batch(cfg, workers=1)
        parallel = run_batch(cfg, workers=4)
        assert serial.divergences == parallel.divergences
        for a, b in zip(serial.traces, parallel.traces):
            assert a.run_id == b.run_id
            assert np.array_equal(a.x_final, b.x_final)
            assert np.array_equal(a.e_norm, b.e_norm)
            assert np.array_equal(a.s_norm, b.s_norm)

    def test_thread_env_var_caps_workers(self, monkeypatch):
        from cfgctrl.sampler import resolve_workers

        monkeypatch.setenv("CFGCTRL_THREADS", "3")
        assert resolve_workers() == 3
        assert resolve_workers(workers=2) == 2
        monkeypatch.setenv("CFGCTRL_THREADS", "junk")
        assert resolve_workers() == 1
        cfg = two_comp_config(ControllerSpec("cfg", {"w": 2.0}), trajectories=7, steps=16)
        monkeypatch.setenv("CFGCTRL_THREADS", "4")
        threaded = run_batch(cfg)
        monkeypatch.delenv("CFGCTRL_THREADS")
        plain = run_batch(cfg)
        for a, b in zip(threaded.traces, plain.traces):
            assert np.array_equal(a.x_final, b.x_final)

    def test_smc_k_zero_matches_cfg_bit_for_bit(self):
        cfg_plain = two_comp_config(ControllerSpec("cfg", {"w": 5.0}), trajectories=8, steps=32)
        cfg_smc = two_comp_config(ControllerSpec("smc", {"w": 5.0, "lambda": 6.0, "k": 0.0}), trajectories=8, steps=32)
        r1 = run_batch(cfg_plain)
        r2 = run_batch(cfg_smc)
        for a, b in zip(r1.traces, r2.traces):
            assert np.array_equal(a.x_final, b.x_final)
            assert np.array_equal(a.e_norm, b.e_norm)
            assert np.array_equal(a.vhat_norm, b.vhat_norm)

    def test_zero_gap_condition_matches_unconditional_mixture(self):
        # target = full support makes every controller coincide with the raw flow
        cfg = two_comp_config(
            ControllerSpec("smc", {"w": 7.0, "lambda": 6.0, "k": 0.3}),
            trajectories=400,
            steps=48,
            target="all",
        )
        result = run_batch(cfg)
        assert result.n_divergent == 0
        e = np.stack([t.e_norm for t in result.traces])
        assert np.abs(e).max() <= 1e-12
        finals = result.finals
        system = FlowSystem(
            [GaussComponent(0.5, np.array([3.0, 0.0]), np.eye(2)), GaussComponent(0.5, np.array([-3.0, 0.0]), np.eye(2))],
            {},
        )
        resp = data_responsibilities(system, finals)
        right_fraction = resp[:, 0].mean()
        se = 0.5 / np.sqrt(len(finals))
        assert abs(right_fraction - 0.5) <= 4.0 * se

    def test_single_gaussian_w1_euler_w2_distance(self):
        system = SystemSpec(
            dimension=2,
            components=(ComponentSpec(1.0, (1.5, -0.5), "diag", (1.0, 1.0)),),
            conditions={"only": (0,)},
            target="only",
        )
        cfg = ExperimentConfig(
            system=system,
            controller=ControllerSpec("cfg", {"w": 1.0}),
            sampler=SamplerSpec("euler", 200, 2000, 11, False, 1e-4),
        )
        result = run_batch(cfg)
        fit = fit_gaussian(result.finals)
        w2 = w2_gaussian(fit.mean, fit.cov, np.array([1.5, -0.5]), np.eye(2))
        assert w2 <= 0.1

    def test_heun_no_worse_than_double_step_euler(self):
        # endpoint error against the closed-form affine flow map of one Gaussian
        mu = np.array([2.0, -1.0])
        system = FlowSystem([GaussComponent(1.0, mu, np.eye(2))], {"only": [0]})

        def q(t):
            return t * t + (1.0 - t) ** 2

        def integrate(scheme, steps, x0):
            from cfgctrl.flow_systems import marginal_velocity

            integ = IntegratorSpec(scheme, steps, 1e-4)
            taus, dt = integ.tau_grid(), integ.dtau
            x = x0.copy()
            for t in taus:
                v = marginal_velocity(system, x, float(t), "only")
                if scheme == "euler":
                    x = x + dt * v
                else:
                    v2 = marginal_velocity(system, x + dt * v, float(t + dt), "only")
                    x = x + 0.5 * dt * (v + v2)
            return x, float(taus[0]), float(taus[-1] + dt)

        x0 = np.array([0.8, -0.3])
        for steps in (50, 100):
            x_euler, t0, t1 = integrate("euler", 2 * steps, x0)
            x_heun, _, _ = integrate("heun", steps, x0)
            exact = t1 * mu + np.sqrt(q(t1) / q(t0)) * (x0 - t0 * mu)
            assert np.linalg.norm(x_heun - exact) <= 2.0 * np.linalg.norm(x_euler - exact)

    def test_divergent_config_flagged_not_fatal(self):
        cfg = two_comp_config(
            ControllerSpec("smc", {"w": 1e5, "lambda": 6.0, "k": 1e3}), trajectories=6, steps=16
        )
        result = run_batch(cfg)
        assert result.n_divergent == 6
        assert result.traces == []
        assert all(isinstance(step, int) for step in result.divergences.values())

    def test_single_divergent_trajectory_raises_with_step(self):
        system = FlowSystem(
            [GaussComponent(0.5, np.array([3.0, 0.0]), np.eye(2)), GaussComponent(0.5, np.array([-3.0, 0.0]), np.eye(2))],
            {"right": [0]},
        )
        law = ControlLaw("smc", w=1e5, lam=6.0, k=1e3)
        with pytest.raises(DivergenceError) as err:
            sample_trajectory(system, law, IntegratorSpec("euler", 16), "right", Rng(1, 0))
        assert err.value.step >= 0

    def test_no_nan_in_any_trace(self):
        cfg = two_comp_config(ControllerSpec("cfg", {"w": 10.0}), trajectories=30, steps=48)
        result = run_batch(cfg)
        for trace in result.traces:
            assert np.isfinite(trace.e_norm).all()
            assert np.isfinite(trace.vhat_norm).all()
            assert np.isfinite(trace.x_final).all()

    @pytest.mark.parametrize(
        "controller",
        [
            ControllerSpec("cfg", {"w": 3.0}),
            ControllerSpec("weight_schedule", {"w_max": 5.0, "shape": "linear"}),
            ControllerSpec("apg", {"w": 3.0, "eta": 0.5}),
            ControllerSpec("cfg_zero_star", {"w": 3.0}),
            ControllerSpec("rectified_cfgpp", {"w": 3.0}),
            ControllerSpec("smc", {"w": 3.0, "lambda": 6.0, "k": 0.1}),
        ],
        ids=lambda c: c.type,
    )
    def test_every_controller_runs_under_both_schemes(self, controller):
        for scheme in ("euler", "heun"):
            cfg = two_comp_config(controller, trajectories=3, steps=12, scheme=scheme)
            result = run_batch(cfg)
            assert result.n_divergent == 0
            for trace in result.traces:
                assert np.isfinite(trace.x_final).all()
                # guided samples should land in the right half-plane
                assert trace.x_final[0] > 0

    def test_gap_norm_shrinks_for_guided_runs(self):
        cfg = two_comp_config(ControllerSpec("cfg", {"w": 1.0}), trajectories=100, steps=64, seed=88)
        result = run_batch(cfg)
        e = np.stack([t.e_norm for t in result.traces])
        assert (e[:, -1] < e[:, 0]).mean() >= 0.9


class TestExports:
    def test_csv_column_order_and_blanks(self):
        cfg = two_comp_config(ControllerSpec("cfg", {"w": 2.0}), trajectories=2, steps=4)
        result = run_batch(cfg)
        text = traces_to_csv(result.traces)
        lines = text.strip().split("\n")
        assert lines[0] == "run_id,step,tau,e_norm,s_norm,lyapunov,vhat_norm"
        assert len(lines) == 1 + 2 * 4
        first = lines[1].split(",")
        assert first[0] == "0" and first[1] == "0"
        assert first[4] == "" and first[5] == ""  # no surface for plain cfg

    def test_csv_smc_has_surface_columns(self):
        cfg = two_comp_config(ControllerSpec("smc", {"w": 2.0, "lambda": 5.0, "k": 0.1}), trajectories=1, steps=4)
        result = run_batch(cfg)
        row = traces_to_csv(result.traces).strip().split("\n")[1].split(",")
        s_norm = float(row[4])
        lyap = float(row[5])
        assert lyap == pytest.approx(0.5 * s_norm**2)

    def test_json_round_trip(self):
        import json

        cfg = two_comp_config(ControllerSpec("cfg", {"w": 2.0}), trajectories=2, steps=4)
        result = run_batch(cfg)
        payload = json.loads(traces_to_json(result.traces))
        assert len(payload) == 2
        assert payload[0]["steps"][0]["s_norm"] is None
        assert len(payload[0]["x_final"]) == 2

    def test_repeat_runs_byte_identical(self):
        cfg = two_comp_config(ControllerSpec("smc", {"w": 5.0, "lambda": 6.0, "k": 0.1}), trajectories=5, steps=16)
        a = traces_to_csv(run_batch(cfg).traces)
        b = traces_to_csv(run_batch(cfg).traces)
        assert a == b
