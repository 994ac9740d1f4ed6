"""Backward-process generation.

Two integrators over a uniform time grid t_k = k T / N:

* Euler-Maruyama on the backward SDE, written in the stationary-relative
  ("modified") parameterization by default; the plain parameterization is
  algebraically identical and available for cross-checking.
* A Strang splitting scheme: exact Gaussian half-flow of the linear part,
  full score kick at the midpoint, second exact half-flow.

Score sources supply the *plain* score (sx, sv) at a backward evaluation
time; the integrators add the known linear term when the modified form is
used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad_vec
from scipy.linalg import expm

from .errors import CheckpointMismatchError, ConfigError, NonFiniteStateError
from .forward import GaussianMixtureSpec, PhaseEnsemble, analytic_score
from .kinetics import Block2, KineticParams, diffusion_matrix, drift_matrix, stationary_cov
from .network import NetArch, NetParams, net_forward
from .seeding import substream
from .training import score_from_output

__all__ = [
    "SamplerConfig",
    "modified_drift",
    "em_step",
    "splitting_step",
    "sample",
    "analytic_score_source",
    "network_score_source",
]


@dataclass(frozen=True)
class SamplerConfig:
    n_steps: int = 1000
    horizon: float = 8.0
    integrator: str = "euler"       # euler | splitting
    score_form: str = "modified"    # modified | plain
    seed: int = 0
    chains: int = 0                 # trajectories per vectorized block; 0 = all at once

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.integrator not in ("euler", "splitting"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.score_form not in ("modified", "plain"):
            raise ValueError(f"unknown score_form {self.score_form!r}")


def modified_drift(p: KineticParams) -> Block2:
    """Drift block of the stationary-relative backward SDE: -A - S_eps^2 S_inf^{-1}."""
    noise_sq = diffusion_matrix(p) @ diffusion_matrix(p)
    return -drift_matrix(p) - (noise_sq @ stationary_cov(p).inv())


def _check_state(ens: PhaseEnsemble, context: str):
    if not ens.all_finite():
        raise NonFiniteStateError(f"non-finite state {context}")


def em_step(p: KineticParams, state: PhaseEnsemble, t_eval: float, h: float,
            score, rng: np.random.Generator, form: str = "modified",
            beta: float = 1.0, z: np.ndarray | None = None) -> PhaseEnsemble:
    """One Euler-Maruyama step of the backward process.

    ``score(t_eval, state)`` must return the plain score (sx, sv); for the
    modified form the stationary-relative correction S_inf^{-1} u is added
    here, paired with the modified drift.  ``beta`` rescales drift and
    noise when a noise schedule is active.  ``z`` overrides the Gaussian
    increment (shape (n, 2d) stacked), mainly for testing.
    """
    sx, sv = score(t_eval, state)
    eps2, sig2 = p.epsilon**2, p.sigma**2
    hb = h * beta
    with np.errstate(over="ignore", invalid="ignore"):
        if form == "modified":
            cx, cv = stationary_cov(p).inv().apply(state.x, state.v)
            sx, sv = sx + cx, sv + cv
            dx, dv = modified_drift(p).apply(state.x, state.v)
        elif form == "plain":
            dx, dv = (-drift_matrix(p)).apply(state.x, state.v)
        else:
            raise ValueError(f"unknown form {form!r}")
        new_x = state.x + hb * (dx + eps2 * sx)
        new_v = state.v + hb * (dv + sig2 * sv)
    if z is None:
        zx = rng.standard_normal(state.x.shape)
        zv = rng.standard_normal(state.v.shape)
    else:
        d = state.d
        zx, zv = z[:, :d], z[:, d:]
    root = np.sqrt(hb)
    if p.epsilon > 0:
        new_x = new_x + (root * p.epsilon) * zx
    new_v = new_v + (root * p.sigma) * zv
    out = PhaseEnsemble(new_x, new_v)
    _check_state(out, f"after EM step at t_eval={t_eval}")
    return out


def _half_flow_blocks(p: KineticParams, half: float) -> tuple[Block2, Block2]:
    """Exact transition of dU = A~ U dt + S_eps dB over ``half``: flow map and noise sqrt."""
    atil = modified_drift(p).as_array()
    noise_sq = (diffusion_matrix(p) @ diffusion_matrix(p)).as_array()
    flow = expm(half * atil)

    def integrand(r):
        e = expm(r * atil)
        return e @ noise_sq @ e.T

    cov, _ = quad_vec(integrand, 0.0, half, epsabs=1e-14, epsrel=1e-12)
    cov = 0.5 * (cov + cov.T)
    block = Block2.from_array(cov)
    if float(block.det()) < 0.0:
        # quadrature roundoff on a degenerate (epsilon = 0) covariance
        ridge = 1e-14 * float(block.trace())
        block = block + Block2.diag(ridge, ridge)
    return Block2.from_array(flow), block.sqrt()


def splitting_step(p: KineticParams, state: PhaseEnsemble, t_eval: float, h: float,
                   score, rng: np.random.Generator,
                   flow_root: tuple[Block2, Block2] | None = None,
                   z: tuple[np.ndarray, np.ndarray] | None = None) -> PhaseEnsemble:
    """One Strang-splitting step: exact linear half-flow, score kick, half-flow.

    The kick applies h * S_eps^2 times the stationary-relative score at the
    midpoint.  ``flow_root`` lets callers precompute the half-flow matrices
    once per run; ``z`` overrides the two Gaussian increments (each stacked
    (n, 2d)), mainly for testing.
    """
    if flow_root is None:
        flow_root = _half_flow_blocks(p, 0.5 * h)
    flow, root = flow_root
    halves = iter(z) if z is not None else None

    def half(ens: PhaseEnsemble) -> PhaseEnsemble:
        mx, mv = flow.apply(ens.x, ens.v)
        if halves is None:
            gx = rng.standard_normal(ens.x.shape)
            gv = rng.standard_normal(ens.v.shape)
        else:
            stacked = next(halves)
            gx, gv = stacked[:, :ens.d], stacked[:, ens.d:]
        nx, nv = root.apply(gx, gv)
        return PhaseEnsemble(mx + nx, mv + nv)

    mid = half(state)
    sx, sv = score(t_eval, mid)
    cx, cv = stationary_cov(p).inv().apply(mid.x, mid.v)
    kicked = PhaseEnsemble(mid.x + h * p.epsilon**2 * (sx + cx),
                           mid.v + h * p.sigma**2 * (sv + cv))
    out = half(kicked)
    _check_state(out, f"after splitting step at t_eval={t_eval}")
    return out


def analytic_score_source(spec: GaussianMixtureSpec, p: KineticParams):
    """Plain score of the exact Gaussian-mixture marginal, as a score callable."""

    def score(t_alg: float, ens: PhaseEnsemble):
        t_phys = float(p.schedule.integrate(t_alg))
        return analytic_score(spec, p, t_phys, ens)

    return score


def network_score_source(arch: NetArch, params: NetParams, p: KineticParams, horizon: float):
    """Plain score from a trained network, undoing the training parameterization."""

    def score(t_alg: float, ens: PhaseEnsemble):
        t_phys = float(p.schedule.integrate(t_alg))
        alpha = np.asarray(net_forward(arch, params, t_alg / horizon, ens.as_matrix()), dtype=float)
        return score_from_output(p, t_phys, alpha, velocity_only=arch.out_dim == arch.d)

    return score


def sample(p: KineticParams, cfg: SamplerConfig, score, n_samples: int, d: int,
           rng: np.random.Generator | None = None) -> np.ndarray:
    """Generate positions by running the backward process from the stationary law.

    ``score`` is a plain-score callable; chains start at N(0, S_inf (x) I_d)
    via the per-coordinate Cholesky factor, run N uniform steps of the chosen
    integrator, and only the position block is returned.
    """
    if rng is None:
        rng = substream(cfg.seed, 7)
    block = cfg.chains if cfg.chains > 0 else n_samples
    parts = []
    n_blocks = (n_samples + block - 1) // block
    for b in range(n_blocks):
        m = min(block, n_samples - b * block)
        parts.append(_sample_block(p, cfg, score, m, d, rng))
    return np.concatenate(parts, axis=0)


def _sample_block(p, cfg, score, n, d, rng) -> np.ndarray:
    chol = stationary_cov(p).chol()
    gx = rng.standard_normal((n, d))
    gv = rng.standard_normal((n, d))
    x0, v0 = chol.apply(gx, gv)
    state = PhaseEnsemble(x0, v0)
    h = cfg.horizon / cfg.n_steps
    flow_root = None
    if cfg.integrator == "splitting":
        if p.schedule.kind != "identity":
            raise ConfigError("splitting integrator supports the identity schedule only")
        flow_root = _half_flow_blocks(p, 0.5 * h)
    for k in range(cfg.n_steps):
        t_k = k * h
        try:
            if cfg.integrator == "euler":
                beta = float(p.schedule.beta(cfg.horizon - t_k))
                state = em_step(p, state, cfg.horizon - t_k, h, score, rng,
                                form=cfg.score_form, beta=beta)
            else:
                state = splitting_step(p, state, cfg.horizon - t_k - 0.5 * h, h,
                                       score, rng, flow_root=flow_root)
        except NonFiniteStateError as err:
            raise NonFiniteStateError(f"step {k}: {err}") from err
    return state.x.copy()


def check_checkpoint(arch: NetArch, d: int, epsilon: float):
    """Validate that a checkpoint architecture matches the sampling request."""
    if arch.d != d:
        raise CheckpointMismatchError(f"checkpoint d={arch.d} but data d={d}")
    velocity_only = arch.out_dim == arch.d
    if velocity_only and epsilon > 0:
        raise CheckpointMismatchError("velocity-only checkpoint cannot drive a position-noise run")
    if not velocity_only and arch.out_dim != 2 * arch.d:
        raise CheckpointMismatchError(f"unexpected out_dim {arch.out_dim}")
