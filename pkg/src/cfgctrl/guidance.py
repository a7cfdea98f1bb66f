"""Guidance control laws for flow sampling.

Every law here maps the pair of conditional/unconditional velocity
predictions to a guided velocity. All of them are gain-times-shaped-error
controllers acting on the prediction gap e = v_cond - v_uncond:

* ``cfg``             fixed proportional gain w
* ``weight_schedule`` gain ramped over the step schedule
* ``apg``             gain split across components parallel/orthogonal to v_cond
* ``cfg_zero_star``   unconditional direction rescaled by a least-squares factor
* ``rectified_cfgpp`` predictor half-step, gap re-measured at the midpoint
* ``smc``             sliding-mode switching correction of the gap

Vector arguments may carry leading batch axes; everything broadcasts row-wise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

VelocityEvaluator = Callable[[np.ndarray, float], tuple[np.ndarray, np.ndarray]]
"""Callable returning (v_cond, v_uncond) at a point and time."""

VARIANTS = ("cfg", "weight_schedule", "apg", "cfg_zero_star", "rectified_cfgpp", "smc")


@dataclass(frozen=True)
class StepContext:
    """Discrete step bookkeeping handed to a control law."""

    index: int
    total_steps: int
    tau: float
    dtau: float
    w: float

    def __post_init__(self):
        if not 0 <= self.index < self.total_steps:
            raise ValueError(f"step index {self.index} outside [0, {self.total_steps})")
        if self.dtau <= 0.0:
            raise ValueError("step size must be positive")
        if self.w < 0.0:
            raise ValueError("guidance scale must be nonnegative")


@dataclass
class SlidingState:
    """Per-trajectory state of the sliding-mode law.

    ``e_prev`` is absent only before the first step. It always stores the raw
    measured gap, never the corrected one, so the surface reflects the true
    system dynamics.
    """

    lam: float
    k: float
    boundary_layer: float = 0.0
    e_prev: np.ndarray | None = None
    s: np.ndarray | None = None

    def __post_init__(self):
        if self.lam <= 0.0:
            raise ValueError("surface slope lambda must be positive")
        if self.k < 0.0:
            raise ValueError("switching gain k must be nonnegative")
        if self.boundary_layer < 0.0:
            raise ValueError("boundary layer width must be nonnegative")


@dataclass
class ControlLaw:
    """A guidance variant plus its parameters and (for smc) mutable state.

    One instance serves exactly one trajectory at a time; call :meth:`reset`
    before reuse. Stateless variants can be shared read-only.
    """

    variant: str
    w: float = 1.0
    # weight_schedule
    shape: str = "cosine"
    w_max: float | None = None
    # apg
    eta: float = 0.5
    # rectified_cfgpp; lam_max of None resolves to w - 1
    lam_max: float | None = None
    gamma: float = 1.0
    # smc
    lam: float = 6.0
    k: float = 0.1
    boundary_layer: float = 0.0
    sliding: SlidingState | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown controller variant {self.variant!r}")
        self.reset()

    def reset(self) -> None:
        """Clear per-trajectory state."""
        if self.variant == "smc":
            self.sliding = SlidingState(self.lam, self.k, self.boundary_layer)
        else:
            self.sliding = None

    def fresh(self) -> "ControlLaw":
        """Copy with cleared state, for handing to a new trajectory."""
        law = replace(self, sliding=None)
        law.reset()
        return law


def cfg_combine(v_c: np.ndarray, v_u: np.ndarray, w: float) -> np.ndarray:
    """Proportional guidance: v_u + w * (v_c - v_u)."""
    v_c = np.asarray(v_c, dtype=float)
    v_u = np.asarray(v_u, dtype=float)
    if v_c.shape != v_u.shape:
        raise ValueError(f"velocity shapes differ: {v_c.shape} vs {v_u.shape}")
    return v_u + w * (v_c - v_u)


def weight_schedule(ctx: StepContext, shape: str, w_max: float) -> float:
    """Gain ramp from 1 at the first step to w_max at the last.

    ``shape`` is "linear" or "cosine"; both are monotonically non-decreasing
    in the step index.
    """
    if w_max < 1.0:
        raise ValueError(f"w_max = {w_max} must be at least 1")
    frac = ctx.index / (ctx.total_steps - 1) if ctx.total_steps > 1 else 1.0
    if shape == "linear":
        ramp = frac
    elif shape == "cosine":
        ramp = 0.5 * (1.0 - np.cos(np.pi * frac))
    else:
        raise ValueError(f"unknown schedule shape {shape!r}")
    return 1.0 + (w_max - 1.0) * float(ramp)


def apg_combine(v_c: np.ndarray, v_u: np.ndarray, w: float, eta: float) -> np.ndarray:
    """Projected guidance: down-weight the gap component parallel to v_c.

    The gap dv = v_c - v_u splits into dv_par (projection onto v_c) and
    dv_perp; the guided velocity is v_u + w * (dv_perp + eta * dv_par).
    """
    v_c = np.asarray(v_c, dtype=float)
    v_u = np.asarray(v_u, dtype=float)
    if v_c.shape != v_u.shape:
        raise ValueError(f"velocity shapes differ: {v_c.shape} vs {v_u.shape}")
    if eta > 1.0:
        raise ValueError(f"eta = {eta} must be <= 1")
    norm_sq = (v_c * v_c).sum(axis=-1, keepdims=True)
    if np.any(norm_sq == 0.0):
        raise ValueError("conditional velocity is zero; projection undefined")
    dv = v_c - v_u
    dv_par = ((dv * v_c).sum(axis=-1, keepdims=True) / norm_sq) * v_c
    dv_perp = dv - dv_par
    return v_u + w * (dv_perp + eta * dv_par)


def cfg_zero_star_combine(v_c: np.ndarray, v_u: np.ndarray, w: float) -> np.ndarray:
    """Guidance with the unconditional direction rescaled by its least-squares fit.

    s_star = <v_c, v_u> / |v_u|^2 minimizes |v_c - s * v_u|; the guided
    velocity is s_star * v_u + w * (v_c - s_star * v_u).
    """
    v_c = np.asarray(v_c, dtype=float)
    v_u = np.asarray(v_u, dtype=float)
    if v_c.shape != v_u.shape:
        raise ValueError(f"velocity shapes differ: {v_c.shape} vs {v_u.shape}")
    norm_sq = (v_u * v_u).sum(axis=-1, keepdims=True)
    if np.any(norm_sq == 0.0):
        raise ValueError("unconditional velocity is zero; rescaling undefined")
    s_star = (v_c * v_u).sum(axis=-1, keepdims=True) / norm_sq
    base = s_star * v_u
    return base + w * (v_c - base)


def rectified_cfgpp_combine(
    evaluator: VelocityEvaluator,
    x: np.ndarray,
    ctx: StepContext,
    lam_max: float,
    gamma: float,
    v_c: np.ndarray | None = None,
) -> np.ndarray:
    """Predictor-corrector guidance using the gap at a conditional half-step.

    Takes half an Euler step along v_c, re-measures the conditional minus
    unconditional gap there, and adds it with gain
    alpha = lam_max * (1 - remaining_noise_time)^gamma, where the remaining
    noise time is 1 - tau. The lookahead never leaves the valid time domain:
    when less than half a step of room remains (a multi-stage integrator
    evaluating at a step endpoint), the midpoint is capped halfway to 1.
    """
    if v_c is None:
        v_c, _ = evaluator(x, ctx.tau)
    x_mid = x + 0.5 * ctx.dtau * v_c
    tau_mid = min(ctx.tau + 0.5 * ctx.dtau, 0.5 * (ctx.tau + 1.0))
    v_c_mid, v_u_mid = evaluator(x_mid, tau_mid)
    alpha = lam_max * ctx.tau**gamma
    return v_c + alpha * (v_c_mid - v_u_mid)


def smc_step(
    v_c: np.ndarray,
    v_u: np.ndarray,
    ctx: StepContext,
    state: SlidingState,
) -> tuple[np.ndarray, SlidingState, dict[str, np.ndarray]]:
    """One sliding-mode guidance update.

    Measures the gap e = v_c - v_u, forms the sliding surface
    s = (e - e_prev) + lam * e_prev (on the first step e_prev defaults to e),
    applies the switching correction delta_e = -k * sign(s) (or its saturated
    version when a boundary layer is enabled), and combines
    v_hat = v_u + w * (e + delta_e). Returns the guided velocity, the next
    state (storing the uncorrected e), and {"s": s, "delta_e": delta_e}.
    """
    v_c = np.asarray(v_c, dtype=float)
    v_u = np.asarray(v_u, dtype=float)
    if v_c.shape != v_u.shape:
        raise ValueError(f"velocity shapes differ: {v_c.shape} vs {v_u.shape}")
    e = v_c - v_u
    e_prev = e if state.e_prev is None else state.e_prev
    s = (e - e_prev) + state.lam * e_prev
    if state.boundary_layer > 0.0:
        switch = np.clip(s / state.boundary_layer, -1.0, 1.0)
    else:
        switch = np.sign(s)
    delta_e = -state.k * switch
    e_corrected = e + delta_e
    v_hat = v_u + ctx.w * e_corrected
    new_state = replace(state, e_prev=e, s=s)
    return v_hat, new_state, {"s": s, "delta_e": delta_e}


def apply_controller(
    law: ControlLaw,
    v_c: np.ndarray,
    v_u: np.ndarray,
    x: np.ndarray,
    ctx: StepContext,
    evaluator: VelocityEvaluator | None = None,
    update_state: bool = True,
) -> np.ndarray:
    """Dispatch to the law's variant; only the smc variant mutates state.

    ``update_state=False`` evaluates without recording (used for the second
    stage of multi-stage integrators).
    """
    if law.variant == "cfg":
        return cfg_combine(v_c, v_u, law.w)
    if law.variant == "weight_schedule":
        w_max = law.w if law.w_max is None else law.w_max
        return cfg_combine(v_c, v_u, weight_schedule(ctx, law.shape, w_max))
    if law.variant == "apg":
        return apg_combine(v_c, v_u, law.w, law.eta)
    if law.variant == "cfg_zero_star":
        return cfg_zero_star_combine(v_c, v_u, law.w)
    if law.variant == "rectified_cfgpp":
        if evaluator is None:
            raise ValueError("rectified_cfgpp needs a velocity evaluator")
        lam_max = (law.w - 1.0) if law.lam_max is None else law.lam_max
        return rectified_cfgpp_combine(evaluator, x, ctx, lam_max, law.gamma, v_c=v_c)
    if law.variant == "smc":
        if law.sliding is None:
            law.reset()
        v_hat, new_state, _ = smc_step(v_c, v_u, ctx, law.sliding)
        if update_state:
            law.sliding = new_state
        return v_hat
    raise ValueError(f"unknown controller variant {law.variant!r}")
