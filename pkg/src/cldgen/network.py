"""Score network: a fixed-architecture MLP with sinusoidal time embedding.

Forward and reverse passes are written by hand on numpy arrays; the single
mutation point is :func:`adam_step`.  Checkpoints use a small binary format
(magic ``CLDN``) storing float32 tensors, so a float32 network round-trips
bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    BadMagicError,
    CorruptLengthError,
    ShapeMismatchError,
    VersionMismatchError,
)

__all__ = [
    "NetArch",
    "NetParams",
    "AdamState",
    "time_embed",
    "init_params",
    "net_forward",
    "net_backward",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"CLDN"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetArch:
    """Architecture metadata: input is the stacked 2d phase state plus time.

    ``out_dim`` is d for velocity-only score nets (position noise off) and
    2d for full phase-space score nets.
    """

    d: int
    mid: int = 512
    depth: int = 3
    out_dim: int | None = None
    embed_dim: int | None = None

    def __post_init__(self):
        if self.out_dim is None:
            object.__setattr__(self, "out_dim", 2 * self.d)
        if self.embed_dim is None:
            object.__setattr__(self, "embed_dim", self.mid)
        if self.d < 1 or self.mid < 1 or self.depth < 1:
            raise ValueError("d, mid and depth must all be >= 1")
        if self.out_dim not in (self.d, 2 * self.d):
            raise ValueError(f"out_dim must be d or 2d, got {self.out_dim}")
        if self.embed_dim % 2 != 0:
            raise ValueError("embed_dim must be even")

    @property
    def in_dim(self) -> int:
        return 2 * self.d


@dataclass
class NetParams:
    """All trainable tensors, in checkpoint declaration order (see ``tensors``)."""

    w_in: np.ndarray
    b_in: np.ndarray
    t_proj: list[np.ndarray]      # depth + 1 projections of the time embedding
    w_hidden: list[np.ndarray]
    b_hidden: list[np.ndarray]
    w_out: np.ndarray
    b_out: np.ndarray

    def tensors(self) -> list[np.ndarray]:
        out = [self.w_in, self.b_in]
        out.extend(self.t_proj)
        for w, b in zip(self.w_hidden, self.b_hidden):
            out.extend([w, b])
        out.extend([self.w_out, self.b_out])
        return out

    def copy(self) -> "NetParams":
        return NetParams(
            self.w_in.copy(), self.b_in.copy(),
            [t.copy() for t in self.t_proj],
            [w.copy() for w in self.w_hidden],
            [b.copy() for b in self.b_hidden],
            self.w_out.copy(), self.b_out.copy(),
        )

    @staticmethod
    def from_tensors(arch: NetArch, tensors: list[np.ndarray]) -> "NetParams":
        it = iter(tensors)
        w_in, b_in = next(it), next(it)
        t_proj = [next(it) for _ in range(arch.depth + 1)]
        w_hidden, b_hidden = [], []
        for _ in range(arch.depth):
            w_hidden.append(next(it))
            b_hidden.append(next(it))
        w_out, b_out = next(it), next(it)
        return NetParams(w_in, b_in, t_proj, w_hidden, b_hidden, w_out, b_out)


@dataclass
class AdamState:
    """First/second moment accumulators, shaped like the parameter tensors."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stab: float = 1e-8

    @staticmethod
    def fresh(params: NetParams, lr: float = 1e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps_stab: float = 1e-8) -> "AdamState":
        return AdamState(
            m=[np.zeros_like(t) for t in params.tensors()],
            v=[np.zeros_like(t) for t in params.tensors()],
            step=0, lr=lr, beta1=beta1, beta2=beta2, eps_stab=eps_stab,
        )


def time_embed(t, embed_dim: int) -> np.ndarray:
    """Sinusoidal embedding of normalized time t in [0, 1].

    Concatenates sin(w_k t) and cos(w_k t) over embed_dim/2 log-spaced
    frequencies w_k in [1, 1e4]; the squared norm is embed_dim/2 for every t.
    """
    if embed_dim % 2 != 0:
        raise ValueError("embed_dim must be even")
    half = embed_dim // 2
    freqs = np.logspace(0.0, 4.0, half) if half > 1 else np.array([1.0])
    t = np.asarray(t, dtype=float)
    phase = t[..., None] * freqs
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=-1)


def init_params(arch: NetArch, rng: np.random.Generator, dtype=np.float32) -> NetParams:
    """Fan-in scaled uniform init; the output layer starts at zero so the
    network initially predicts the zero score."""

    def uniform(shape, fan_in):
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    w_in = uniform((arch.mid, arch.in_dim), arch.in_dim)
    b_in = uniform((arch.mid,), arch.in_dim)
    t_proj = [uniform((arch.mid, arch.embed_dim), arch.embed_dim) for _ in range(arch.depth + 1)]
    w_hidden = [uniform((arch.mid, arch.mid), arch.mid) for _ in range(arch.depth)]
    b_hidden = [uniform((arch.mid,), arch.mid) for _ in range(arch.depth)]
    w_out = np.zeros((arch.out_dim, arch.mid), dtype=dtype)
    b_out = np.zeros((arch.out_dim,), dtype=dtype)
    return NetParams(w_in, b_in, t_proj, w_hidden, b_hidden, w_out, b_out)


def _silu(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s, s


def _check_shapes(arch: NetArch, params: NetParams, u: np.ndarray):
    if u.ndim != 2 or u.shape[1] != arch.in_dim:
        raise ShapeMismatchError(f"input must be (n, {arch.in_dim}), got {u.shape}")
    if params.w_in.shape != (arch.mid, arch.in_dim) or params.w_out.shape != (arch.out_dim, arch.mid):
        raise ShapeMismatchError("parameter shapes do not match the architecture")
    if len(params.w_hidden) != arch.depth or len(params.t_proj) != arch.depth + 1:
        raise ShapeMismatchError("parameter layer count does not match the architecture")


def _forward_cached(arch: NetArch, params: NetParams, t, u: np.ndarray):
    """Forward pass keeping the intermediates needed by the reverse pass."""
    _check_shapes(arch, params, u)
    dtype = params.w_in.dtype
    u = np.ascontiguousarray(u, dtype=dtype)
    t = np.broadcast_to(np.asarray(t, dtype=float), (u.shape[0],))
    emb = time_embed(t, arch.embed_dim).astype(dtype)
    h = u @ params.w_in.T + params.b_in + emb @ params.t_proj[0].T
    hs = [h]
    zs = []
    for k in range(arch.depth):
        z = h @ params.w_hidden[k].T + params.b_hidden[k]
        act, sig = _silu(z)
        h = act + emb @ params.t_proj[k + 1].T
        zs.append((z, sig))
        hs.append(h)
    out = h @ params.w_out.T + params.b_out
    return out, (u, emb, hs, zs)


def net_forward(arch: NetArch, params: NetParams, t, u: np.ndarray) -> np.ndarray:
    """Evaluate the network on a batch; ``t`` is scalar or per-row, in [0, 1].

    ``u`` is the stacked (n, 2d) phase state.  Deterministic and row-wise.
    """
    out, _ = _forward_cached(arch, params, t, u)
    return out


def _backward_from_cache(arch: NetArch, params: NetParams, cache, upstream: np.ndarray) -> NetParams:
    u, emb, hs, zs = cache
    g = np.ascontiguousarray(upstream, dtype=params.w_in.dtype)
    if g.shape != (u.shape[0], arch.out_dim):
        raise ShapeMismatchError(f"upstream must be (n, {arch.out_dim}), got {g.shape}")
    gw_out = g.T @ hs[-1]
    gb_out = g.sum(axis=0)
    gh = g @ params.w_out
    gt_proj = [None] * (arch.depth + 1)
    gw_hidden = [None] * arch.depth
    gb_hidden = [None] * arch.depth
    for k in range(arch.depth - 1, -1, -1):
        z, sig = zs[k]
        gt_proj[k + 1] = gh.T @ emb
        gz = gh * (sig * (1.0 + z * (1.0 - sig)))
        gw_hidden[k] = gz.T @ hs[k]
        gb_hidden[k] = gz.sum(axis=0)
        gh = gz @ params.w_hidden[k]
    gt_proj[0] = gh.T @ emb
    gw_in = gh.T @ u
    gb_in = gh.sum(axis=0)
    return NetParams(gw_in, gb_in, gt_proj, gw_hidden, gb_hidden, gw_out, gb_out)


def net_backward(arch: NetArch, params: NetParams, t, u: np.ndarray, upstream: np.ndarray) -> NetParams:
    """Gradients of sum(upstream * net_forward(t, u)) w.r.t. every parameter."""
    _, cache = _forward_cached(arch, params, t, u)
    return _backward_from_cache(arch, params, cache, upstream)


def adam_step(state: AdamState, params: NetParams, grads: NetParams) -> tuple[NetParams, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    step = state.step + 1
    c1 = 1.0 - state.beta1**step
    c2 = 1.0 - state.beta2**step
    new_tensors = []
    new_m = []
    new_v = []
    for theta, g, m, v in zip(params.tensors(), grads.tensors(), state.m, state.v):
        g = g.astype(theta.dtype, copy=False)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps_stab)
        new_tensors.append((theta - update).astype(theta.dtype, copy=False))
        new_m.append(m)
        new_v.append(v)
    new_params = _rebuild_like(params, new_tensors)
    return new_params, replace(state, m=new_m, v=new_v, step=step)


def _rebuild_like(params: NetParams, tensors: list[np.ndarray]) -> NetParams:
    it = iter(tensors)
    w_in, b_in = next(it), next(it)
    t_proj = [next(it) for _ in range(len(params.t_proj))]
    w_hidden, b_hidden = [], []
    for _ in range(len(params.w_hidden)):
        w_hidden.append(next(it))
        b_hidden.append(next(it))
    w_out, b_out = next(it), next(it)
    return NetParams(w_in, b_in, t_proj, w_hidden, b_hidden, w_out, b_out)


# -- checkpoint i/o ---------------------------------------------------------


def _write_tensor(fh, t: np.ndarray):
    data = np.ascontiguousarray(t, dtype="<f4")
    fh.write(struct.pack("<Q", data.size))
    fh.write(data.tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CorruptLengthError(f"expected {n} bytes, file ended after {len(buf)}")
    return buf


def _read_tensor(fh, shape) -> np.ndarray:
    (count,) = struct.unpack("<Q", _read_exact(fh, 8))
    expected = int(np.prod(shape))
    if count != expected:
        raise CorruptLengthError(f"tensor length {count} does not match shape {shape}")
    raw = _read_exact(fh, 4 * count)
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


def save_checkpoint(path, arch: NetArch, params: NetParams, adam: AdamState | None = None):
    """Serialize arch + float32 parameter tensors (and optional Adam state)."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        eps_flag = 1 if arch.out_dim == 2 * arch.d else 0
        fh.write(struct.pack("<6I", CHECKPOINT_VERSION, arch.d, arch.mid,
                             arch.depth, arch.out_dim, arch.embed_dim))
        fh.write(struct.pack("<I", eps_flag))
        for t in params.tensors():
            _write_tensor(fh, t)
        if adam is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            fh.write(struct.pack("<Q", adam.step))
            fh.write(struct.pack("<4d", adam.lr, adam.beta1, adam.beta2, adam.eps_stab))
            for t in adam.m:
                _write_tensor(fh, t)
            for t in adam.v:
                _write_tensor(fh, t)


def load_checkpoint(path) -> tuple[NetArch, NetParams, AdamState | None]:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(f"bad checkpoint magic {magic!r}")
        version, d, mid, depth, out_dim, embed_dim = struct.unpack("<6I", _read_exact(fh, 24))
        if version != CHECKPOINT_VERSION:
            raise VersionMismatchError(f"unsupported checkpoint version {version}")
        struct.unpack("<I", _read_exact(fh, 4))  # epsilon flag, implied by out_dim
        arch = NetArch(d=d, mid=mid, depth=depth, out_dim=out_dim, embed_dim=embed_dim)
        shapes = _tensor_shapes(arch)
        tensors = [_read_tensor(fh, s) for s in shapes]
        params = NetParams.from_tensors(arch, tensors)
        (has_adam,) = struct.unpack("<B", _read_exact(fh, 1))
        adam = None
        if has_adam:
            (step,) = struct.unpack("<Q", _read_exact(fh, 8))
            lr, beta1, beta2, eps_stab = struct.unpack("<4d", _read_exact(fh, 32))
            m = [_read_tensor(fh, s) for s in shapes]
            v = [_read_tensor(fh, s) for s in shapes]
            adam = AdamState(m=m, v=v, step=step, lr=lr, beta1=beta1,
                             beta2=beta2, eps_stab=eps_stab)
        return arch, params, adam


def _tensor_shapes(arch: NetArch) -> list[tuple]:
    shapes = [(arch.mid, arch.in_dim), (arch.mid,)]
    shapes.extend([(arch.mid, arch.embed_dim)] * (arch.depth + 1))
    for _ in range(arch.depth):
        shapes.append((arch.mid, arch.mid))
        shapes.append((arch.mid,))
    shapes.extend([(arch.out_dim, arch.mid), (arch.out_dim,)])
    return shapes
