"""Exact forward-process sampling and closed-form scores for Gaussian targets.

The forward SDE is linear, so conditionally on the initial state every
marginal is Gaussian with per-coordinate 2x2 covariance blocks.  For data
drawn from a diagonal-covariance Gaussian (or mixture of such), the
time-t marginal and its score are available in closed form; these serve as
ground truth for testing the backward sampler without any trained network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpecError, InvalidTimeError
from .kinetics import Block2, KineticParams, hybrid_cov, stationary_cov, transition_cov, transition_matrix

__all__ = [
    "PhaseEnsemble",
    "GaussianMixtureSpec",
    "forward_sample",
    "forward_sample_full",
    "gaussian_marginal",
    "analytic_score",
    "analytic_modified_score",
    "analytic_log_density",
]

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class PhaseEnsemble:
    """A batch of n phase-space states: positions ``x`` and velocities ``v``, each (n, d)."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        if self.x.shape != self.v.shape:
            raise ValueError(f"position/velocity shape mismatch: {self.x.shape} vs {self.v.shape}")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def as_matrix(self) -> np.ndarray:
        """Stacked (n, 2d) layout: positions first, velocities last."""
        return np.concatenate([self.x, self.v], axis=1)

    @staticmethod
    def from_matrix(m: np.ndarray) -> "PhaseEnsemble":
        d = m.shape[1] // 2
        return PhaseEnsemble(m[:, :d], m[:, d:])

    def copy(self) -> "PhaseEnsemble":
        return PhaseEnsemble(self.x.copy(), self.v.copy())

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.v)))


@dataclass(frozen=True)
class GaussianMixtureSpec:
    """Mixture of diagonal-covariance Gaussians on R^d.

    ``weights`` sum to one; ``means`` is (K, d); ``diag_covs`` is (K, d) of
    per-coordinate variances.
    """

    weights: np.ndarray
    means: np.ndarray
    diag_covs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "means", np.atleast_2d(np.asarray(self.means, dtype=float)))
        object.__setattr__(self, "diag_covs", np.atleast_2d(np.asarray(self.diag_covs, dtype=float)))
        if self.weights.ndim != 1 or len(self.weights) == 0:
            raise InvalidSpecError("weights must be a nonempty 1-d sequence")
        if np.any(self.weights <= 0):
            raise InvalidSpecError("weights must be positive")
        if abs(float(self.weights.sum()) - 1.0) > 1e-8:
            raise InvalidSpecError(f"weights must sum to 1, got {self.weights.sum()}")
        if self.means.shape != self.diag_covs.shape or self.means.shape[0] != len(self.weights):
            raise InvalidSpecError("means/diag_covs must both be (K, d) with K = len(weights)")
        if np.any(self.diag_covs <= 0):
            raise InvalidSpecError("covariance entries must be positive")

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @staticmethod
    def single(mean, var, d: int | None = None) -> "GaussianMixtureSpec":
        """One isotropic component; scalars broadcast to dimension ``d``."""
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        var = np.atleast_1d(np.asarray(var, dtype=float))
        if d is not None:
            if mean.size == 1:
                mean = np.full(d, mean[0])
            if var.size == 1:
                var = np.full(d, var[0])
        return GaussianMixtureSpec(np.array([1.0]), mean[None, :], var[None, :])


def forward_sample(p: KineticParams, t, x0: np.ndarray, rng: np.random.Generator) -> PhaseEnsemble:
    """Draw the forward state at time t exactly, given initial positions only.

    The initial velocity is marginalized analytically: the conditional law
    of each row is N(e^{tA} (x0, 0)^T, hybrid_cov(t)).  ``t`` may be a scalar
    or an (n,) array of per-row times.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise InvalidTimeError(f"negative time {t}")
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    flow = transition_matrix(p, t if t.ndim else float(t))
    mean_x, mean_v = flow.apply(x0, np.zeros_like(x0))
    root = hybrid_cov(p, t if t.ndim else float(t)).sqrt()
    gx = rng.standard_normal(x0.shape)
    gv = rng.standard_normal(x0.shape)
    nx, nv = root.apply(gx, gv)
    return PhaseEnsemble(mean_x + nx, mean_v + nv)


def forward_sample_full(p: KineticParams, t, u0: PhaseEnsemble, rng: np.random.Generator) -> PhaseEnsemble:
    """Draw the forward state at time t given the full initial state (x0, v0)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise InvalidTimeError(f"negative time {t}")
    flow = transition_matrix(p, t if t.ndim else float(t))
    mean_x, mean_v = flow.apply(u0.x, u0.v)
    root = transition_cov(p, t if t.ndim else float(t)).sqrt()
    gx = rng.standard_normal(u0.x.shape)
    gv = rng.standard_normal(u0.x.shape)
    nx, nv = root.apply(gx, gv)
    return PhaseEnsemble(mean_x + nx, mean_v + nv)


def gaussian_marginal(p: KineticParams, t: float, data_mean: np.ndarray, data_diag_cov: np.ndarray):
    """Exact time-t marginal for Gaussian data with diagonal covariance.

    Returns ``(means, covs)`` where ``means[i] = e^{tA} (m_i, 0)`` is the
    (2,)-mean of coordinate pair i and ``covs[i]`` its 2x2 covariance.
    """
    data_mean = np.atleast_1d(np.asarray(data_mean, dtype=float))
    data_diag_cov = np.atleast_1d(np.asarray(data_diag_cov, dtype=float))
    flow = transition_matrix(p, t)
    base = transition_cov(p, t)
    mean_x, mean_v = flow.apply(data_mean[None, :], np.zeros_like(data_mean)[None, :])
    means = np.stack([mean_x[0], mean_v[0]], axis=1)
    d = len(data_mean)
    covs = np.empty((d, 2, 2))
    for i in range(d):
        init = Block2.diag(data_diag_cov[i], p.v**2)
        c = base + flow @ init @ flow.transpose()
        covs[i] = c.as_array()
    return means, covs


def _component_blocks(spec: GaussianMixtureSpec, p: KineticParams, t: float):
    """Per-component, per-coordinate marginal means and covariance entries at time t."""
    flow = transition_matrix(p, t)
    base = transition_cov(p, t)
    mx, mv = flow.apply(spec.means, np.zeros_like(spec.means))
    s = spec.diag_covs  # (K, d)
    v2 = p.v**2
    e00, e01, e10, e11 = flow.m00, flow.m01, flow.m10, flow.m11
    c00 = base.m00 + e00 * e00 * s + e01 * e01 * v2
    c01 = base.m01 + e00 * e10 * s + e01 * e11 * v2
    c11 = base.m11 + e10 * e10 * s + e11 * e11 * v2
    return mx, mv, c00, c01, c11


def _log_densities(spec, p, t, u: PhaseEnsemble):
    """Per-component joint log densities log(w_k) + log N(u; mu_k, C_k), shape (n, K)."""
    mx, mv, c00, c01, c11 = _component_blocks(spec, p, t)
    det = c00 * c11 - c01 * c01
    n = u.n
    out = np.empty((n, spec.n_components))
    for k in range(spec.n_components):
        dx = u.x - mx[k]
        dv = u.v - mv[k]
        # quadratic form with the 2x2 inverse, per coordinate
        q = (c11[k] * dx * dx - 2.0 * c01[k] * dx * dv + c00[k] * dv * dv) / det[k]
        logphi = -0.5 * (q + np.log(det[k]) + 2.0 * LOG_2PI)
        out[:, k] = np.log(spec.weights[k]) + logphi.sum(axis=1)
    return out, (mx, mv, c00, c01, c11, det)


def analytic_log_density(spec: GaussianMixtureSpec, p: KineticParams, t: float, u: PhaseEnsemble) -> np.ndarray:
    """log p_t(u) for a Gaussian-mixture data distribution, shape (n,)."""
    logs, _ = _log_densities(spec, p, t, u)
    m = logs.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(logs - m).sum(axis=1, keepdims=True)))[:, 0]


def analytic_score(spec: GaussianMixtureSpec, p: KineticParams, t: float, u: PhaseEnsemble):
    """Score of the time-t marginal for Gaussian-mixture data.

    Responsibilities are computed in log space; returns ``(sx, sv)`` arrays
    of shape (n, d).
    """
    logs, (mx, mv, c00, c01, c11, det) = _log_densities(spec, p, t, u)
    m = logs.max(axis=1, keepdims=True)
    resp = np.exp(logs - m)
    resp /= resp.sum(axis=1, keepdims=True)
    sx = np.zeros_like(u.x)
    sv = np.zeros_like(u.v)
    for k in range(spec.n_components):
        dx = u.x - mx[k]
        dv = u.v - mv[k]
        gx = -(c11[k] * dx - c01[k] * dv) / det[k]
        gv = -(-c01[k] * dx + c00[k] * dv) / det[k]
        r = resp[:, k][:, None]
        sx += r * gx
        sv += r * gv
    return sx, sv


def analytic_modified_score(spec: GaussianMixtureSpec, p: KineticParams, t: float, u: PhaseEnsemble):
    """Score of p_t relative to the stationary density: score + S_inf^{-1} u."""
    sx, sv = analytic_score(spec, p, t, u)
    cx, cv = stationary_cov(p).inv().apply(u.x, u.v)
    return sx + cx, sv + cv
