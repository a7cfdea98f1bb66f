"""Synthetic testbed for the sliding-variable dynamics.

This module simulates the reduced system

    ds/dt = drift(t) + gain(t) @ (-k * sign(s)),      gain(t) = w*I + dG(t),

with the drift norm-bounded by delta and the gain deviation dG spectral-norm
bounded by rho. It exists to check, independently of any flow system, that
the switching law converges in finite time whenever the gain condition
k * (w - rho*sqrt(D)) > delta holds, and to map the corridor of usable
switching gains empirically.

Discrete-time semantics: under Euler stepping the state cannot settle below
one switching quantum dt*w*k, so "converged" means |s| <= 1.5 * dt * w * k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .numerics import Rng, spectral_norm

_BOUND_SLACK = 1e-9  # float tolerance when asserting realized disturbance bounds

DRIFT_KINDS = ("constant", "sinusoidal", "noise")
GAIN_KINDS = ("zero", "rotation", "seeded")


@dataclass(frozen=True)
class PerturbedDynamics:
    """Parameters of one synthetic run.

    drift kinds: "constant" (fixed vector of norm delta), "sinusoidal"
    (norm oscillating within delta), "noise" (fresh bounded draw per step).
    gain deviation kinds: "zero", "rotation" (fixed rotation scaled to rho),
    "seeded" (random matrix scaled to spectral norm rho; redrawn per step
    only when redraw_gain is set).
    """

    dim: int
    w: float
    delta: float
    rho: float
    k: float
    dt: float
    s0: np.ndarray
    drift: str = "constant"
    gain_deviation: str = "zero"
    seed: int = 0
    drift_freq: float = 0.5
    redraw_gain: bool = False

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be at least 1")
        if self.w <= 0.0 or self.dt <= 0.0:
            raise ValueError("w and dt must be positive")
        if self.k < 0.0 or self.delta < 0.0 or self.rho < 0.0:
            raise ValueError("k, delta, rho must be nonnegative")
        if self.drift not in DRIFT_KINDS:
            raise ValueError(f"unknown drift kind {self.drift!r}")
        if self.gain_deviation not in GAIN_KINDS:
            raise ValueError(f"unknown gain deviation kind {self.gain_deviation!r}")
        s0 = np.asarray(self.s0, dtype=float)
        if s0.shape != (self.dim,):
            raise ValueError(f"s0 shape {s0.shape} != ({self.dim},)")
        object.__setattr__(self, "s0", s0)


@dataclass(eq=False)
class ConvergenceReport:
    """Outcome of one synthetic run against the finite-time bound.

    ``eta`` is the decrease margin k*(w - rho*sqrt(D)) - delta from the
    switching analysis; ``eta_spectral`` the looser k*(w - rho) - delta form.
    Both are reported; the reaching bound uses ``eta``.
    """

    reached: bool
    reach_step: int | None
    bound_steps: int | None
    bound_time: float | None
    gain_condition_met: bool
    eta: float
    eta_spectral: float
    phi: float
    epsilon: float | None
    band: float
    s_norms: np.ndarray          # length steps + 1, includes the initial state
    lyapunov: np.ndarray         # 0.5 * s_norms^2
    s_history: np.ndarray        # (steps + 1, D)
    max_v_increase_after_reach: float | None


def _unit_direction(dim: int) -> np.ndarray:
    u = np.ones(dim)
    return u / np.linalg.norm(u)


def _make_drift(dyn: PerturbedDynamics, rng: Rng):
    direction = _unit_direction(dyn.dim)
    if dyn.drift == "constant":
        vec = dyn.delta * direction

        def drift(step: int) -> np.ndarray:
            return vec

    elif dyn.drift == "sinusoidal":

        def drift(step: int) -> np.ndarray:
            phase = 2.0 * math.pi * dyn.drift_freq * step * dyn.dt
            return dyn.delta * math.sin(phase) * direction

    else:  # bounded noise

        def drift(step: int) -> np.ndarray:
            z = rng.standard_normal(dyn.dim)
            nz = np.linalg.norm(z)
            if nz == 0.0:
                return np.zeros(dyn.dim)
            return dyn.delta * float(rng.uniform()) * z / nz

    return drift


def _draw_gain_deviation(dyn: PerturbedDynamics, rng: Rng) -> np.ndarray:
    if dyn.gain_deviation == "zero" or dyn.rho == 0.0:
        return np.zeros((dyn.dim, dyn.dim))
    if dyn.gain_deviation == "rotation":
        if dyn.dim == 1:
            return np.array([[-dyn.rho]])
        m = np.eye(dyn.dim)
        c, s = math.cos(math.pi / 4), math.sin(math.pi / 4)
        m[0, 0], m[0, 1], m[1, 0], m[1, 1] = c, -s, s, c
        return dyn.rho * m
    g = rng.standard_normal((dyn.dim, dyn.dim))
    top = spectral_norm(g)
    if top == 0.0:
        return np.zeros((dyn.dim, dyn.dim))
    return dyn.rho * g / top


def simulate_sliding(dyn: PerturbedDynamics, steps: int) -> ConvergenceReport:
    """Euler-integrate the perturbed switching dynamics and audit convergence.

    Realized disturbance bounds are asserted at every step. A violated gain
    condition is reported, not raised.
    """
    if steps < 1:
        raise ValueError("need at least one step")
    rng = Rng(dyn.seed)
    gain_dev = _draw_gain_deviation(dyn, rng)
    drift = _make_drift(dyn, rng)
    eye = np.eye(dyn.dim)

    phi = dyn.w - dyn.rho * math.sqrt(dyn.dim)
    eta = dyn.k * phi - dyn.delta
    eta_spectral = dyn.k * (dyn.w - dyn.rho) - dyn.delta
    gain_met = phi > 0.0 and eta > 0.0
    epsilon = dyn.k - dyn.delta / phi if phi > 0.0 else None
    band = 1.5 * dyn.dt * dyn.w * dyn.k

    s = dyn.s0.astype(float).copy()
    history = np.zeros((steps + 1, dyn.dim))
    history[0] = s
    for step in range(steps):
        if dyn.redraw_gain and dyn.gain_deviation == "seeded":
            gain_dev = _draw_gain_deviation(dyn, rng)
        phi_t = drift(step)
        if np.linalg.norm(phi_t) > dyn.delta + _BOUND_SLACK:
            raise RuntimeError("realized drift exceeded its bound")
        if spectral_norm(gain_dev) > dyn.rho + max(_BOUND_SLACK, 1e-8 * dyn.rho):
            raise RuntimeError("realized gain deviation exceeded its bound")
        gain = dyn.w * eye + gain_dev
        s = s + dyn.dt * (phi_t - gain @ (dyn.k * np.sign(s)))
        history[step + 1] = s

    s_norms = np.linalg.norm(history, axis=1)
    inside = np.nonzero(s_norms <= band)[0]
    reached = inside.size > 0
    reach_step = int(inside[0]) if reached else None

    bound_time = None
    bound_steps = None
    if gain_met:
        bound_time = float(np.linalg.norm(dyn.s0)) / eta
        bound_steps = math.ceil(bound_time / dyn.dt)

    max_inc = None
    if reached:
        v = 0.5 * s_norms**2
        tail = v[reach_step:]
        max_inc = float(np.max(np.diff(tail), initial=0.0)) if tail.size > 1 else 0.0

    return ConvergenceReport(
        reached=reached,
        reach_step=reach_step,
        bound_steps=bound_steps,
        bound_time=bound_time,
        gain_condition_met=gain_met,
        eta=eta,
        eta_spectral=eta_spectral,
        phi=phi,
        epsilon=epsilon,
        band=band,
        s_norms=s_norms,
        lyapunov=0.5 * s_norms**2,
        s_history=history,
        max_v_increase_after_reach=max_inc,
    )


def stability_corridor(delta_est: float, w: float, s_norm: float, dt: float) -> tuple[float, float]:
    """Usable switching-gain interval (delta_est / w, 2 * |s| / (w * dt)).

    Below the lower edge the drift wins; above the upper edge discrete
    switching overshoots and oscillates.
    """
    if delta_est < 0.0:
        raise ValueError("drift estimate must be nonnegative")
    if w <= 0.0 or s_norm <= 0.0 or dt <= 0.0:
        raise ValueError("w, s_norm, dt must be positive")
    return delta_est / w, 2.0 * s_norm / (w * dt)


@dataclass(frozen=True)
class CorridorRow:
    """Outcome of one gain value in a corridor sweep."""

    k: float
    reached: bool
    reach_step: int | None
    residual_band: float | None   # max |s| after first reaching the band
    osc_amplitude: float | None   # mean per-step |s_{n+1} - s_n| after reaching


def corridor_sweep(template: PerturbedDynamics, k_values: list[float], steps: int) -> list[CorridorRow]:
    """Simulate the template at each switching gain and summarize the tail."""
    rows = []
    for k in k_values:
        report = simulate_sliding(replace(template, k=float(k)), steps)
        if report.reached:
            tail = report.s_history[report.reach_step :]
            residual = float(report.s_norms[report.reach_step :].max())
            if tail.shape[0] > 1:
                osc = float(np.linalg.norm(np.diff(tail, axis=0), axis=1).mean())
            else:
                osc = 0.0
        else:
            residual = None
            osc = None
        rows.append(CorridorRow(float(k), report.reached, report.reach_step, residual, osc))
    return rows


def estimate_drift(s_path: np.ndarray, w: float, k: float, dtau: float) -> float:
    """Plug-in drift bound from a recorded surface path (heuristic).

    Inverts one Euler step of the nominal dynamics: the residual
    (s_{n+1} - s_n)/dtau + w*k*sign(s_n) collects everything the nominal
    switching model does not explain; its max norm estimates delta.
    """
    s_path = np.asarray(s_path, dtype=float)
    if s_path.ndim != 2 or s_path.shape[0] < 2:
        raise ValueError("need a (steps, dim) surface path with at least 2 steps")
    diffs = np.diff(s_path, axis=0) / dtau
    residual = diffs + w * k * np.sign(s_path[:-1])
    return float(np.linalg.norm(residual, axis=1).max())


def corridor_rows_to_csv(rows: list[CorridorRow]) -> str:
    lines = ["k,reached,reach_step,residual_band,osc_amplitude"]
    for row in rows:
        reach = "" if row.reach_step is None else str(row.reach_step)
        resid = "" if row.residual_band is None else repr(row.residual_band)
        osc = "" if row.osc_amplitude is None else repr(row.osc_amplitude)
        lines.append(f"{row.k!r},{str(row.reached).lower()},{reach},{resid},{osc}")
    return "\n".join(lines) + "\n"
