"""Computable regularity constants and error-bound terms of the dynamics.

All quantities are exact closed forms built from 2x2 spectral data: the
log-concavity constant of the forward marginal, its log-smoothness constant,
the admissible Euler step size, the forward-contraction factor, and the
three-term generation-error budget.  Everything here is a pure function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinetics import Block2, KineticParams, drift_matrix, stationary_cov, transition_cov, transition_matrix

__all__ = [
    "RegularityParams",
    "alpha_t",
    "lipschitz_Lt",
    "admissible_h",
    "contraction_KT",
    "ErrorBudget",
    "wasserstein_bound_terms",
    "SigmaBoundCheck",
    "verify_sigma_bounds",
    "gaussian_pair_hessian",
    "gaussian_w2_pair",
]


@dataclass(frozen=True)
class RegularityParams:
    """Data regularity (strong log-concavity alpha0 <= log-smoothness L0) plus dynamics."""

    alpha0: float
    L0: float
    kp: KineticParams

    def __post_init__(self):
        if not (0 < self.alpha0 <= self.L0):
            raise ValueError("need 0 < alpha0 <= L0")


def alpha_t(rp: RegularityParams, t: float) -> float:
    """Strong log-concavity constant of the time-t forward marginal."""
    base = min(rp.alpha0, 1.0 / rp.kp.v**2)
    # smallest singular value of e^{-tA} is the reciprocal of ||e^{tA}||
    flow_norm = float(transition_matrix(rp.kp, t).op_norm())
    sv_min_sq = 1.0 / flow_norm**2
    lam_max = float(transition_cov(rp.kp, t).sym_eigvals()[1])
    return 1.0 / (1.0 / (base * sv_min_sq) + lam_max)


def lipschitz_Lt(rp: RegularityParams, t: float) -> float:
    """Log-smoothness constant of the time-t forward marginal (min of two branches)."""
    a, sig, eps = rp.kp.a, rp.kp.sigma, rp.kp.epsilon
    h1 = (1.0 + (a + 1.0) ** 2 * t) ** 2 * np.exp(2.0 * a * t) * max(rp.L0, 1.0 / rp.kp.v**2)
    den = sig**2 * min(a, 1.0 / a) - (sig**2 * max(a, 1.0 / a) + 5.0 * eps**2 / a) * np.exp(-2.0 * a * t)
    h2 = 4.0 / den if den > 0 else np.inf
    return float(min(h1, h2))


def admissible_h(rp: RegularityParams, horizon: float, n_grid: int) -> float:
    """Right-hand side of the admissible step-size condition over the grid kT/N.

    A nonpositive value means the sufficient condition admits no step size
    (always the case when the position noise is zero).
    """
    kp = rp.kp
    ts = np.linspace(0.0, horizon, n_grid + 1)
    alphas = np.array([alpha_t(rp, t) for t in ts])
    lips = np.array([lipschitz_Lt(rp, t) for t in ts])
    a_norm = float(drift_matrix(kp).op_norm())
    sig2, eps2 = kp.sigma**2, kp.epsilon**2
    lmax = float(lips.max())
    num = 2.0 * float(alphas.min()) * min(sig2, eps2) \
        - (kp.sigma - kp.epsilon) ** 2 * lmax - (kp.a + 1.0) ** 2
    den = a_norm**2 + (eps2**2 + sig2**2) * lmax**2 + 2.0 * max(sig2, eps2) * a_norm * lmax
    return num / den


def contraction_KT(p: KineticParams, horizon: float) -> float:
    """Forward-process contraction factor K_T e^{-aT}."""
    k_t = 1.0 + max(p.a + 1.0, p.a * (p.a + 1.0)) * horizon
    return k_t * float(np.exp(-p.a * horizon))


@dataclass(frozen=True)
class ErrorBudget:
    """The three terms of the generation-error decomposition."""

    mixing: float          # multiplies W2(data (x) velocity-init, stationary)
    approx: float          # sigma^2 M
    discretization: float  # sqrt(h) C_a(eps)


def _envelope_max(a: float, c: float, horizon: float) -> float:
    """max over s in [0, T] of (1 + c s)^2 e^{-2 a s}."""
    candidates = [0.0, horizon]
    s_star = (c - a) / (a * c)
    if 0.0 < s_star < horizon:
        candidates.append(s_star)
    vals = [(1.0 + c * s) ** 2 * np.exp(-2.0 * a * s) for s in candidates]
    return float(max(vals))


def wasserstein_bound_terms(rp: RegularityParams, horizon: float, h: float, M: float,
                            d: int, data_second_moment: float) -> ErrorBudget:
    """Evaluate the mixing / approximation / discretization terms literally.

    ``data_second_moment`` is E||X_0||^2 of the data distribution; the
    initial velocity contributes d v^2 on top.
    """
    kp = rp.kp
    a, sig, eps = kp.a, kp.sigma, kp.epsilon
    c = (a + 1.0) ** 2
    m2 = data_second_moment + d * kp.v**2

    b_eps = _envelope_max(a, c, horizon) * m2 \
        + 0.5 * d * (sig**2 * max(a, 1.0 / a) + 5.0 * eps**2 / a)

    if eps > 0:
        branch1 = 2.0 * a * (1.0 + c * horizon) ** 2 / min(eps**2, sig**2)
        den = sig**2 * min(a, 1.0 / a) \
            - (sig**2 * max(a, 1.0 / a) + 5.0 * a / eps**2) * np.exp(-2.0 * a * horizon)
        branch2 = 4.0 / den if den > 0 else np.inf
        lam_star = min(branch1, branch2)
    else:
        den = sig**2 * min(a, 1.0 / a) - sig**2 * max(a, 1.0 / a) * np.exp(-2.0 * a * horizon)
        lam_star = 4.0 / den if den > 0 else np.inf

    a_norm = float(drift_matrix(kp).op_norm())
    ts = np.linspace(0.0, horizon, 257)
    sup_l = max(lipschitz_Lt(rp, t) for t in ts)
    c_a = (2.0 * a_norm**4 * b_eps + 4.0 * d * (a**2 * sig**2 + eps) ** 2 * lam_star) * h \
        + 4.0 * d * (a_norm**2 + sig**4 * sup_l**2)
    return ErrorBudget(
        mixing=contraction_KT(kp, horizon),
        approx=sig**2 * M,
        discretization=float(np.sqrt(h) * c_a),
    )


@dataclass(frozen=True)
class SigmaBoundCheck:
    t: float
    lam_min: float
    lam_max: float
    lower_bound: float
    upper_bound: float
    ok: bool


def verify_sigma_bounds(p: KineticParams, t_grid) -> list[SigmaBoundCheck]:
    """Check the eigenvalue envelope of the transition covariance on a grid.

    Upper bound: the stationary trace split lam_max <= sig^2/4 max{a,1/a}
    + eps^2 (5 a^2 + 1)/(4 a^3).  Lower bound: the larger of the Weyl
    branch lam_min(S_inf) - ||e^{tA}||^2 lam_max(S_inf), with the squared
    flow norm bounded by K_t^2 e^{-2at} (the drift is not normal, so the
    transient factor K_t is required), and the ellipticity branch
    min{eps^2, sig^2} (1 - e^{-2at}) / (2a (1 + (a+1)^2 t)^2).
    """
    a, sig, eps = p.a, p.sigma, p.epsilon
    upper = sig**2 / 4.0 * max(a, 1.0 / a) + eps**2 * (5.0 * a * a + 1.0) / (4.0 * a**3)
    rows = []
    for t in np.asarray(t_grid, dtype=float):
        cov = transition_cov(p, float(t))
        lo, hi = (float(x) for x in cov.sym_eigvals())
        k_t = 1.0 + max(a + 1.0, a * (a + 1.0)) * t
        decay = k_t * k_t * np.exp(-2.0 * a * t)
        branch1 = sig**2 / 4.0 * min(a, 1.0 / a) - upper * decay
        branch2 = min(eps**2, sig**2) * (1.0 - np.exp(-2.0 * a * t)) \
            / (2.0 * a * (1.0 + (a + 1.0) ** 2 * t) ** 2)
        lower = max(branch1, branch2)
        tol = 1e-10 * max(upper, 1.0)
        ok = (lo >= lower - tol) and (hi <= upper + tol)
        rows.append(SigmaBoundCheck(float(t), lo, hi, float(lower), float(upper), bool(ok)))
    return rows


def gaussian_pair_hessian(p: KineticParams, t: float, data_var: float) -> Block2:
    """Exact per-coordinate Hessian of log p_t for isotropic Gaussian data."""
    flow = transition_matrix(p, t)
    cov = transition_cov(p, t) + flow @ Block2.diag(data_var, p.v**2) @ flow.transpose()
    return -cov.inv()


def gaussian_w2_pair(mean_a: np.ndarray, cov_a: Block2, mean_b: np.ndarray, cov_b: Block2) -> float:
    """Exact 2-Wasserstein distance between two 2-d Gaussians.

    Uses tr((B^{1/2} A B^{1/2})^{1/2}) = sqrt(tr(AB) + 2 sqrt(det A det B))
    for 2x2 SPD matrices, so no matrix square roots are needed.
    """
    dm = np.asarray(mean_a, dtype=float) - np.asarray(mean_b, dtype=float)
    cross = np.sqrt(float((cov_a @ cov_b).trace()) + 2.0 * np.sqrt(float(cov_a.det()) * float(cov_b.det())))
    w2sq = float(dm @ dm) + float(cov_a.trace()) + float(cov_b.trace()) - 2.0 * cross
    return float(np.sqrt(max(w2sq, 0.0)))
