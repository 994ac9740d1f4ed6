"""Hybrid score-matching training loop.

Each step draws per-example times, forms the exact forward state conditioned
on the data position only, and regresses the network onto the whitened noise
that produced it.  The loss for a network output ``alpha`` uses the score
parameterization s = -C~^{-1} alpha (C~ the position-conditional covariance),
so the raw network learns a rescaled version of the injected noise.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteLossError
from .forward import PhaseEnsemble
from .kinetics import Block2, KineticParams, hybrid_cov, transition_cov, transition_matrix
from .network import AdamState, NetArch, NetParams, _backward_from_cache, _forward_cached, adam_step, init_params
from .seeding import substream

__all__ = ["TrainConfig", "hsm_loss", "train", "score_from_output"]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 512
    lr: float = 1e-4
    horizon: float = 8.0
    t_cutoff: float | None = None   # minimum sampled time; defaults to 1e-5 * horizon
    lambda_mode: str = "auto"       # det_sq | uniform | auto (det_sq iff epsilon > 0)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        cutoff = self.t_cutoff
        if cutoff is None:
            cutoff = 1e-5 * self.horizon
            object.__setattr__(self, "t_cutoff", cutoff)
        if not (0 <= cutoff < self.horizon):
            raise ValueError("t_cutoff must lie in [0, horizon)")
        if self.lambda_mode not in ("det_sq", "uniform", "auto"):
            raise ValueError(f"unknown lambda_mode {self.lambda_mode!r}")

    def resolve_lambda(self, p: KineticParams) -> str:
        if self.lambda_mode != "auto":
            return self.lambda_mode
        return "det_sq" if p.epsilon > 0 else "uniform"


def _loss_weights(p: KineticParams, t_phys: np.ndarray, mode: str) -> np.ndarray:
    if mode == "uniform":
        return np.ones_like(t_phys)
    return np.asarray(transition_cov(p, t_phys).det()) ** 2


def score_from_output(p: KineticParams, t_phys, alpha: np.ndarray, velocity_only: bool):
    """Map the raw network output to a score estimate.

    Full mode: s = -C~^{-1} alpha with alpha = (alpha_x, alpha_v) stacked.
    Velocity-only mode: s_v = -[C~^{-1}]_vv alpha, position score zero.
    Returns (sx, sv) arrays.
    """
    inv = hybrid_cov(p, t_phys).inv()
    if velocity_only:
        gamma = np.asarray(inv.m11)
        if gamma.ndim == 1:
            gamma = gamma[:, None]
        sv = -gamma * alpha
        return np.zeros_like(alpha), sv
    d = alpha.shape[1] // 2
    sx, sv = inv.apply(alpha[:, :d], alpha[:, d:])
    return -sx, -sv


def hsm_loss(p: KineticParams, arch: NetArch, params: NetParams, batch_x0: np.ndarray,
             rng: np.random.Generator, cfg: TrainConfig, score_fn=None):
    """One-batch hybrid score-matching loss and parameter gradients.

    With ``score_fn`` given (a callable ``(t_alg, ensemble) -> (sx, sv)``),
    the loss of that score function is evaluated instead of the network's
    and no gradients are returned -- useful for loss-floor diagnostics.
    """
    batch_x0 = np.atleast_2d(np.asarray(batch_x0, dtype=float))
    n = batch_x0.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    t_alg = rng.uniform(cfg.t_cutoff, cfg.horizon, size=n)
    t_phys = np.asarray(p.schedule.integrate(t_alg), dtype=float)

    flow = transition_matrix(p, t_phys)
    mean_x, mean_v = flow.apply(batch_x0, np.zeros_like(batch_x0))
    cov = hybrid_cov(p, t_phys)
    root = cov.sqrt()
    gx = rng.standard_normal(batch_x0.shape)
    gv = rng.standard_normal(batch_x0.shape)
    nx, nv = root.apply(gx, gv)
    ens = PhaseEnsemble(mean_x + nx, mean_v + nv)

    # regression target is the conditional score -C~^{-1/2} G, so the
    # residual of a score estimate s is s + C~^{-1/2} G
    wx, wv = cov.inv_sqrt().apply(gx, gv)
    lam = _loss_weights(p, t_phys, cfg.resolve_lambda(p))

    velocity_only = arch.out_dim == arch.d
    if score_fn is not None:
        sx, sv = score_fn(t_alg, ens)
        rx = None if velocity_only else sx + wx
        rv = sv + wv
        per = rv * rv if velocity_only else rx * rx + rv * rv
        loss = float(np.mean(lam * per.sum(axis=1)))
        if not np.isfinite(loss):
            raise NonFiniteLossError(f"loss is {loss}")
        return loss, None

    out, cache = _forward_cached(arch, params, t_alg / cfg.horizon, ens.as_matrix())
    alpha = np.asarray(out, dtype=float)
    sx, sv = score_from_output(p, t_phys, alpha, velocity_only)

    inv = cov.inv()
    lam_col = lam[:, None]
    if velocity_only:
        rv = sv + wv
        loss = float(np.mean(lam * (rv * rv).sum(axis=1)))
        gamma = np.asarray(inv.m11)[:, None]
        upstream = (2.0 / n) * lam_col * (-gamma) * rv
    else:
        rx = sx + wx
        rv = sv + wv
        loss = float(np.mean(lam * (rx * rx + rv * rv).sum(axis=1)))
        ux, uv = inv.apply(rx, rv)  # C~^{-1} is symmetric
        upstream = (2.0 / n) * lam_col * np.concatenate([-ux, -uv], axis=1)
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"loss is {loss}")
    grads = _backward_from_cache(arch, params, cache, upstream)
    return loss, grads


def train(p: KineticParams, arch: NetArch, dataset: np.ndarray, cfg: TrainConfig,
          adam_kw: dict | None = None, progress=None):
    """Run the full training loop; deterministic given ``cfg.seed``.

    Returns ``(params, adam_state, trace)`` where ``trace`` is a list of
    (epoch, mean_loss, wall_seconds) rows.  Minibatches are drawn from a
    seeded per-epoch permutation; a trailing partial batch is dropped.
    """
    dataset = np.atleast_2d(np.asarray(dataset, dtype=float))
    n = dataset.shape[0]
    if n < cfg.batch_size:
        raise ValueError(f"dataset has {n} rows < batch_size {cfg.batch_size}")
    init_rng = substream(cfg.seed, 0)
    shuffle_rng = substream(cfg.seed, 1)
    noise_rng = substream(cfg.seed, 2)

    params = init_params(arch, init_rng)
    adam = AdamState.fresh(params, lr=cfg.lr, **(adam_kw or {}))
    steps_per_epoch = n // cfg.batch_size
    trace = []
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(n)
        losses = np.empty(steps_per_epoch)
        for s in range(steps_per_epoch):
            idx = perm[s * cfg.batch_size:(s + 1) * cfg.batch_size]
            try:
                loss, grads = hsm_loss(p, arch, params, dataset[idx], noise_rng, cfg)
            except NonFiniteLossError as err:
                raise NonFiniteLossError(f"epoch {epoch} step {s}: {err}") from err
            params, adam = adam_step(adam, params, grads)
            losses[s] = loss
        trace.append((epoch, float(losses.mean()), time.perf_counter() - start))
        if progress is not None:
            progress(epoch, float(losses.mean()))
    return params, adam, trace
