"""Closed-form linear algebra of the kinetic Ornstein-Uhlenbeck forward process.

Every operator acting on the position-velocity phase space R^{2d} has the
Kronecker structure M (x) I_d with M a real 2x2 matrix.  All operations are
therefore carried out on the 2x2 factor (:class:`Block2`) and applied
per-coordinate, which is O(d) instead of O(d^2).

Entries of a :class:`Block2` may be scalars or numpy arrays of a common
shape; all closed forms below are elementwise, so a single block can hold a
whole batch of operators (one per training example, say).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SingularMatrixError

__all__ = [
    "Block2",
    "Schedule",
    "KineticParams",
    "drift_matrix",
    "diffusion_matrix",
    "transition_matrix",
    "stationary_cov",
    "transition_cov",
    "hybrid_cov",
]


@dataclass(frozen=True)
class Block2:
    """The 2x2 factor of a phase-space operator M (x) I_d.

    Index 0 is the position row/column, index 1 the velocity one.
    Entries may be floats or broadcastable numpy arrays.
    """

    m00: float | np.ndarray
    m01: float | np.ndarray
    m10: float | np.ndarray
    m11: float | np.ndarray

    # -- constructors -------------------------------------------------------

    @staticmethod
    def identity() -> "Block2":
        return Block2(1.0, 0.0, 0.0, 1.0)

    @staticmethod
    def zero() -> "Block2":
        return Block2(0.0, 0.0, 0.0, 0.0)

    @staticmethod
    def diag(a, b) -> "Block2":
        return Block2(a, 0.0 * a, 0.0 * b, b)

    @staticmethod
    def from_array(m: np.ndarray) -> "Block2":
        return Block2(m[0, 0], m[0, 1], m[1, 0], m[1, 1])

    def as_array(self) -> np.ndarray:
        """Dense 2x2 (only meaningful for scalar entries)."""
        return np.array([[self.m00, self.m01], [self.m10, self.m11]], dtype=float)

    # -- algebra ------------------------------------------------------------

    def __add__(self, other: "Block2") -> "Block2":
        return Block2(self.m00 + other.m00, self.m01 + other.m01,
                      self.m10 + other.m10, self.m11 + other.m11)

    def __sub__(self, other: "Block2") -> "Block2":
        return Block2(self.m00 - other.m00, self.m01 - other.m01,
                      self.m10 - other.m10, self.m11 - other.m11)

    def __neg__(self) -> "Block2":
        return Block2(-self.m00, -self.m01, -self.m10, -self.m11)

    def scale(self, c) -> "Block2":
        return Block2(c * self.m00, c * self.m01, c * self.m10, c * self.m11)

    def __matmul__(self, other: "Block2") -> "Block2":
        return Block2(
            self.m00 * other.m00 + self.m01 * other.m10,
            self.m00 * other.m01 + self.m01 * other.m11,
            self.m10 * other.m00 + self.m11 * other.m10,
            self.m10 * other.m01 + self.m11 * other.m11,
        )

    def transpose(self) -> "Block2":
        return Block2(self.m00, self.m10, self.m01, self.m11)

    def det(self):
        return self.m00 * self.m11 - self.m01 * self.m10

    def trace(self):
        return self.m00 + self.m11

    def inv(self) -> "Block2":
        """Inverse via the adjugate. Raises for exactly singular blocks."""
        d = self.det()
        if np.any(np.asarray(d) == 0.0):
            raise SingularMatrixError("block determinant is zero")
        return Block2(self.m11 / d, -self.m01 / d, -self.m10 / d, self.m00 / d)

    def sqrt(self) -> "Block2":
        """Principal square root of a symmetric PSD block.

        Uses M^{1/2} = (M + sqrt(det M) I) / sqrt(tr M + 2 sqrt(det M)),
        valid for any nonzero PSD matrix (det may be 0, e.g. diag(0, v^2)).
        """
        d = np.asarray(self.det(), dtype=float)
        t = np.asarray(self.trace(), dtype=float)
        if np.any(d < 0.0):
            raise SingularMatrixError("negative determinant: block is not PSD")
        if np.any((t <= 0.0) & ~((t == 0.0) & (d == 0.0) & (np.asarray(self.m00) == 0.0))):
            raise SingularMatrixError("nonpositive trace: block is not PSD")
        r = np.sqrt(d)
        s = np.sqrt(t + 2.0 * r)
        # A zero block has sqrt zero; avoid 0/0.
        s = np.where(s == 0.0, 1.0, s)
        return Block2((self.m00 + r) / s, self.m01 / s, self.m10 / s, (self.m11 + r) / s)

    def inv_sqrt(self) -> "Block2":
        """Inverse principal square root of a symmetric positive definite block."""
        d = np.asarray(self.det(), dtype=float)
        if np.any(d <= 0.0):
            raise SingularMatrixError("nonpositive determinant: block is not SPD")
        t = self.trace()
        r = np.sqrt(d)
        s = np.sqrt(t + 2.0 * r)
        c = r * s
        return Block2((self.m11 + r) / c, -self.m01 / c, -self.m10 / c, (self.m00 + r) / c)

    def chol(self) -> "Block2":
        """Lower-triangular Cholesky factor of an SPD block."""
        m00 = np.asarray(self.m00, dtype=float)
        if np.any(m00 <= 0.0):
            raise SingularMatrixError("Cholesky requires a positive (0,0) entry")
        l00 = np.sqrt(m00)
        l10 = self.m10 / l00
        rem = self.m11 - l10 * l10
        if np.any(np.asarray(rem) <= 0.0):
            raise SingularMatrixError("block is not positive definite")
        return Block2(l00, 0.0 * l00, l10, np.sqrt(rem))

    def sym_eigvals(self):
        """(lambda_min, lambda_max) of a symmetric block, in closed form."""
        mean = 0.5 * (self.m00 + self.m11)
        disc = np.sqrt((0.5 * (self.m00 - self.m11)) ** 2 + self.m01 * self.m10)
        return mean - disc, mean + disc

    def op_norm(self):
        """Largest singular value (spectral norm), in closed form."""
        g = self.transpose() @ self
        lo, hi = g.sym_eigvals()
        return np.sqrt(np.maximum(hi, 0.0))

    def min_singular_value(self):
        g = self.transpose() @ self
        lo, hi = g.sym_eigvals()
        return np.sqrt(np.maximum(lo, 0.0))

    # -- action on ensembles -------------------------------------------------

    def apply(self, x: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Apply M (x) I_d to a batch of (position, velocity) arrays.

        ``x`` and ``v`` have shape (n, d); array-valued entries of shape (n,)
        broadcast across the coordinate axis.
        """
        m00, m01, m10, m11 = self.m00, self.m01, self.m10, self.m11
        if isinstance(m00, np.ndarray) and m00.ndim == x.ndim - 1:
            m00, m01 = m00[..., None], m01[..., None]
            m10, m11 = m10[..., None], m11[..., None]
        return m00 * x + m01 * v, m10 * x + m11 * v


@dataclass(frozen=True)
class Schedule:
    """Noise schedule beta(t) on [0, 1]; ``identity`` means beta == 1 on [0, T]."""

    kind: str = "identity"
    beta0: float = 0.1
    beta1: float = 19.9

    def __post_init__(self):
        if self.kind not in ("identity", "affine"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "affine":
            if self.beta0 < 0 or self.beta1 < 0 or self.beta0 + self.beta1 <= 0:
                raise ValueError("affine schedule needs beta0, beta1 >= 0 and beta0 + beta1 > 0")

    def beta(self, t):
        if self.kind == "identity":
            return np.ones_like(np.asarray(t, dtype=float))
        return self.beta1 * np.asarray(t, dtype=float) + self.beta0

    def integrate(self, t):
        """Accumulated noise int_0^t beta(s) ds; the physical diffusion time."""
        t = np.asarray(t, dtype=float)
        if self.kind == "identity":
            return t + 0.0
        return 0.5 * self.beta1 * t * t + self.beta0 * t


@dataclass(frozen=True)
class KineticParams:
    """Scalar parameters of the kinetic forward SDE.

    ``a`` sets the damped-oscillator drift, ``sigma`` the velocity noise,
    ``epsilon`` the position noise (0 recovers the classical degenerate
    dynamics) and ``v`` the standard deviation of the initial velocity.
    """

    a: float = 1.0
    sigma: float = 2.0
    epsilon: float = 0.0
    v: float = 1.0
    schedule: Schedule = field(default_factory=Schedule)

    def __post_init__(self):
        if not (self.a > 0):
            raise ValueError("a must be positive")
        if not (self.sigma > 0):
            raise ValueError("sigma must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if not (self.v > 0):
            raise ValueError("v must be positive")

    @classmethod
    def critically_damped(cls, mass: float = 1.0, **kw) -> "KineticParams":
        """Convenience constructor a = 1/sqrt(mass), sigma = 2/sqrt(a)."""
        a = 1.0 / math.sqrt(mass)
        return cls(a=a, sigma=2.0 / math.sqrt(a), **kw)


def drift_matrix(p: KineticParams) -> Block2:
    """Drift block A = [[0, a^2], [-1, -2a]] of the forward SDE."""
    return Block2(0.0, p.a * p.a, -1.0, -2.0 * p.a)


def diffusion_matrix(p: KineticParams) -> Block2:
    """Diffusion block diag(epsilon, sigma)."""
    return Block2.diag(p.epsilon, p.sigma)


def transition_matrix(p: KineticParams, t) -> Block2:
    """State-transition block e^{tA} = e^{-at} [[1+at, a^2 t], [-t, 1-at]].

    ``t`` may be a scalar or an array of times (one block per entry).
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    if t.ndim == 0:
        t = float(t)
    a = p.a
    decay = np.exp(-a * t)
    return Block2(decay * (1.0 + a * t), decay * a * a * t, -decay * t, decay * (1.0 - a * t))


def stationary_cov(p: KineticParams) -> Block2:
    """Stationary covariance block of the forward process."""
    a, s2, e2 = p.a, p.sigma**2, p.epsilon**2
    return Block2(
        0.25 * (5.0 * e2 / a + a * s2),
        -0.5 * e2 / (a * a),
        -0.5 * e2 / (a * a),
        0.25 * (e2 + a * a * s2) / a**3,
    )


def transition_cov(p: KineticParams, t) -> Block2:
    """Conditional covariance block of the state at time t given the state at 0.

    Evaluated as S_inf - e^{tA} S_inf e^{tA}^T, which is exactly zero at
    t = 0 and converges to the stationary covariance as t grows.
    """
    sinf = stationary_cov(p)
    flow = transition_matrix(p, t)
    return sinf - flow @ sinf @ flow.transpose()


def hybrid_cov(p: KineticParams, t) -> Block2:
    """Covariance of the state at time t given the initial *position* only.

    Adds the propagated initial-velocity variance to the transition
    covariance: strictly positive definite for every t > 0, and
    diag(0, v^2) at t = 0.
    """
    flow = transition_matrix(p, t)
    vel = flow @ Block2.diag(0.0, p.v**2) @ flow.transpose()
    return transition_cov(p, t) + vel
