"""Analytic velocity fields for Gaussian-mixture rectified flows.

A :class:`FlowSystem` is a Gaussian mixture over R^d plus named conditions,
each selecting a subset of mixture components (the empty condition means
"all components"). Sampling paths interpolate linearly between a standard
normal draw at time 0 and a mixture draw at time 1:

    x_tau = tau * x1 + (1 - tau) * x0,    x0 ~ N(0, I),  x1 ~ mixture.

Under this path the probability-flow velocity E[x1 - x0 | x_tau = x] is
available in closed form. For component k the path marginal at time tau is
N(tau * mu_k, tau^2 * Sigma_k + (1 - tau)^2 * I); conditioning a jointly
Gaussian pair gives an affine per-component velocity, and components are
combined with their posterior responsibilities at (x, tau).

The same conditional expectation can be estimated model-free by kernel
regression over sampled pairs; :func:`mc_velocity_oracle` implements that
independent estimator and is used by the tests to cross-check the closed
form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Rng

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True, eq=False)
class GaussComponent:
    """One mixture component: weight in (0, 1], mean and SPD covariance."""

    weight: float
    mean: np.ndarray
    cov: np.ndarray


class FlowSystem:
    """Gaussian mixture with named component-subset conditions.

    Immutable after construction; all evaluation methods are pure, so one
    instance can be shared freely across workers.
    """

    def __init__(self, components: list[GaussComponent], conditions: dict[str, list[int]] | None = None):
        if not components:
            raise ValueError("FlowSystem needs at least one component")
        dim = np.asarray(components[0].mean, dtype=float).shape[0]
        weights, means, covs = [], [], []
        for i, comp in enumerate(components):
            w = float(comp.weight)
            mean = np.asarray(comp.mean, dtype=float)
            cov = np.asarray(comp.cov, dtype=float)
            if not 0.0 < w <= 1.0:
                raise ValueError(f"component {i}: weight {w} outside (0, 1]")
            if mean.ndim != 1 or mean.shape[0] != dim:
                raise ValueError(f"component {i}: mean dimension {mean.shape} != {dim}")
            if cov.shape != (dim, dim):
                raise ValueError(f"component {i}: covariance shape {cov.shape} != ({dim}, {dim})")
            np.linalg.cholesky(cov)  # SPD gate; raises LinAlgError otherwise
            weights.append(w)
            means.append(mean)
            covs.append(cov)
        total = sum(weights)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"component weights sum to {total!r}, expected 1")

        self.dim = int(dim)
        self._weights = np.asarray(weights)
        self._means = np.stack(means)
        self._covs = np.stack(covs)
        self._chols = np.stack([np.linalg.cholesky(c) for c in covs])
        eigvals, eigvecs = [], []
        for c in covs:
            lam, q = np.linalg.eigh(c)
            eigvals.append(lam)
            eigvecs.append(q)
        self._eigvals = np.stack(eigvals)  # (K, d)
        self._eigvecs = np.stack(eigvecs)  # (K, d, d), columns are eigenvectors

        self.conditions: dict[str, tuple[int, ...]] = {}
        for name, subset in (conditions or {}).items():
            idx = tuple(int(i) for i in subset)
            if not idx:
                raise ValueError(f"condition {name!r} selects no components")
            if any(i < 0 or i >= len(components) for i in idx):
                raise ValueError(f"condition {name!r} references unknown component index")
            if len(set(idx)) != len(idx):
                raise ValueError(f"condition {name!r} repeats a component index")
            self.conditions[name] = idx

    @property
    def n_components(self) -> int:
        return len(self._weights)

    def component(self, i: int) -> GaussComponent:
        return GaussComponent(float(self._weights[i]), self._means[i].copy(), self._covs[i].copy())

    def component_indices(self, cond: str | None) -> np.ndarray:
        """Component subset for a condition id; None selects everything."""
        if cond is None:
            return np.arange(self.n_components)
        if cond not in self.conditions:
            raise ValueError(f"unknown condition {cond!r}")
        return np.asarray(self.conditions[cond], dtype=int)

    def mixture_moments(self, cond: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of the (conditional) mixture at data time."""
        idx = self.component_indices(cond)
        w = self._weights[idx]
        w = w / w.sum()
        means = self._means[idx]
        mean = w @ means
        cov = np.zeros((self.dim, self.dim))
        for wi, mu, sig in zip(w, means, self._covs[idx]):
            dm = mu - mean
            cov += wi * (sig + np.outer(dm, dm))
        return mean, cov

    def sample_data(self, rng: Rng, n: int, cond: str | None = None) -> np.ndarray:
        """Draw n points from the (conditional) mixture at data time."""
        idx = self.component_indices(cond)
        w = self._weights[idx]
        probs = w / w.sum()
        u = rng.uniform(n)
        choice = np.searchsorted(np.cumsum(probs), u, side="right")
        choice = np.minimum(choice, len(idx) - 1)
        z = rng.standard_normal((n, self.dim))
        out = np.empty((n, self.dim))
        for j, k in enumerate(idx):
            mask = choice == j
            if mask.any():
                out[mask] = self._means[k] + z[mask] @ self._chols[k].T
        return out


def _check_probe(sys: FlowSystem, x: np.ndarray, tau: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != sys.dim:
        raise ValueError(f"probe dimension {x.shape[-1]} != system dimension {sys.dim}")
    if not np.isfinite(x).all():
        raise ValueError("probe point has non-finite entries")
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"time {tau!r} outside [0, 1); the path marginal degenerates at 1")
    return x


def _log_posteriors(sys: FlowSystem, x: np.ndarray, tau: float, idx: np.ndarray) -> np.ndarray:
    """Unnormalized log responsibilities of the path marginals at (x, tau)."""
    w = sys._weights[idx]
    logs = np.empty(x.shape[:-1] + (len(idx),))
    one_m = (1.0 - tau) ** 2
    for j, k in enumerate(idx):
        spectrum = tau * tau * sys._eigvals[k] + one_m  # path covariance eigenvalues
        z = (x - tau * sys._means[k]) @ sys._eigvecs[k]
        logs[..., j] = (
            -0.5 * ((z * z) / spectrum).sum(axis=-1)
            - 0.5 * float(np.log(spectrum).sum())
            - 0.5 * sys.dim * _LOG_2PI
            + float(np.log(w[j] / w.sum()))
        )
    return logs


def responsibilities(sys: FlowSystem, x: np.ndarray, tau: float, cond: str | None = None) -> np.ndarray:
    """Posterior component responsibilities at (x, tau); rows sum to 1."""
    x = _check_probe(sys, x, tau)
    idx = sys.component_indices(cond)
    logs = _log_posteriors(sys, x, tau, idx)
    logs -= logs.max(axis=-1, keepdims=True)
    p = np.exp(logs)
    return p / p.sum(axis=-1, keepdims=True)


def data_responsibilities(sys: FlowSystem, x: np.ndarray, cond: str | None = None) -> np.ndarray:
    """Responsibilities of the mixture itself (data time, tau = 1)."""
    x = np.asarray(x, dtype=float)
    idx = sys.component_indices(cond)
    w = sys._weights[idx]
    logs = np.empty(x.shape[:-1] + (len(idx),))
    for j, k in enumerate(idx):
        spectrum = sys._eigvals[k]
        z = (x - sys._means[k]) @ sys._eigvecs[k]
        logs[..., j] = (
            -0.5 * ((z * z) / spectrum).sum(axis=-1)
            - 0.5 * float(np.log(spectrum).sum())
            + float(np.log(w[j] / w.sum()))
        )
    logs -= logs.max(axis=-1, keepdims=True)
    p = np.exp(logs)
    return p / p.sum(axis=-1, keepdims=True)


def marginal_velocity(sys: FlowSystem, x: np.ndarray, tau: float, cond: str | None = None) -> np.ndarray:
    """Exact probability-flow velocity E[x1 - x0 | x_tau = x] of the mixture.

    ``x`` may carry leading batch axes; the result matches its shape.
    """
    x = _check_probe(sys, x, tau)
    idx = sys.component_indices(cond)
    logs = _log_posteriors(sys, x, tau, idx)
    logs -= logs.max(axis=-1, keepdims=True)
    resp = np.exp(logs)
    resp /= resp.sum(axis=-1, keepdims=True)

    one_m = (1.0 - tau) ** 2
    out = np.zeros_like(x)
    for j, k in enumerate(idx):
        spectrum = tau * tau * sys._eigvals[k] + one_m
        q = sys._eigvecs[k]
        z = (x - tau * sys._means[k]) @ q
        # E[x1 | x] - E[x0 | x] from joint-Gaussian conditioning, in eigenbasis.
        gain = (tau * sys._eigvals[k] - (1.0 - tau)) / spectrum
        v_k = sys._means[k] + (gain * z) @ q.T
        out += resp[..., j, None] * v_k
    return out


def error_signal(sys: FlowSystem, x: np.ndarray, tau: float, cond: str | None) -> np.ndarray:
    """Conditional minus unconditional velocity, the feedback signal of guidance."""
    return marginal_velocity(sys, x, tau, cond) - marginal_velocity(sys, x, tau, None)


def default_bandwidth(tau: float) -> float:
    """Kernel bandwidth that tracks the path scale, bounded away from 0 at both ends."""
    return 0.1 * float(np.sqrt(tau * tau + (1.0 - tau) ** 2))


def mc_velocity_oracle(
    sys: FlowSystem,
    x: np.ndarray,
    tau: float,
    cond: str | None,
    n_pairs: int,
    bandwidth: float,
    rng: Rng,
) -> tuple[np.ndarray, np.ndarray]:
    """Kernel Monte-Carlo estimate of the velocity field, with standard errors.

    Samples (x0, x1) pairs, forms x_tau, and weights each pair by a Gaussian
    kernel centered at the probe point. Returns the weighted mean of
    (x1 - x0) and its per-coordinate standard error (based on the effective
    sample size of the weights). Deliberately independent of
    :func:`marginal_velocity` so the two can check each other.
    """
    x = _check_probe(sys, x, tau)
    if x.ndim != 1:
        raise ValueError("oracle probes one point at a time")
    if n_pairs < 10_000:
        raise ValueError(f"n_pairs = {n_pairs} too small; need at least 10000")
    if bandwidth <= 0.0:
        raise ValueError("bandwidth must be positive")

    x1 = sys.sample_data(rng, n_pairs, cond)
    x0 = rng.standard_normal((n_pairs, sys.dim))
    x_tau = tau * x1 + (1.0 - tau) * x0
    y = x1 - x0

    log_w = -0.5 * ((x_tau - x) ** 2).sum(axis=1) / bandwidth**2
    log_w -= log_w.max()
    w = np.exp(log_w)
    w_sum = w.sum()
    ess = w_sum * w_sum / (w * w).sum()
    if ess < 100.0:
        raise ValueError(
            f"effective sample size {ess:.1f} < 100; increase bandwidth or n_pairs"
        )
    est = (w[:, None] * y).sum(axis=0) / w_sum
    var = (w[:, None] * (y - est) ** 2).sum(axis=0) / w_sum
    stderr = np.sqrt(var / ess)
    return est, stderr
