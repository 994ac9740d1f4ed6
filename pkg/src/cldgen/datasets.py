"""Synthetic benchmark generators and binary persistence.

The funnel is Neal's funnel (x1 ~ N(0, 9), x_i | x1 ~ N(0, e^{x1})); the
25-mode mixture lives on the integer grid {-2..2}^2 in the first two
coordinates; the diamond is a 45-degree rotated 5x5 lattice scaled to
[-2, 2]^2.  Files use magic ``CLDS`` and row-major float32 payloads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BadMagicError, CorruptLengthError, InvalidSpecError, VersionMismatchError
from .forward import GaussianMixtureSpec
from .seeding import substream

__all__ = [
    "DatasetSpec",
    "gen_funnel",
    "gen_mg25",
    "gen_diamond",
    "gen_gaussian",
    "gen_gmm",
    "generate",
    "diamond_modes",
    "save_dataset",
    "load_dataset",
    "save_dataset_csv",
]

DATASET_MAGIC = b"CLDS"
DATASET_VERSION = 1


@dataclass(frozen=True)
class DatasetSpec:
    """Which benchmark to draw, at what size, with kind-specific knobs."""

    kind: str
    d: int
    n: int
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("funnel", "mg25", "diamond", "gaussian", "gmm"):
            raise InvalidSpecError(f"unknown dataset kind {self.kind!r}")
        if self.d < 1 or self.n < 1:
            raise InvalidSpecError("d and n must be >= 1")
        if self.kind == "diamond" and self.d != 2:
            raise InvalidSpecError("diamond is 2-dimensional")
        if self.kind in ("funnel", "mg25") and self.d < 2:
            raise InvalidSpecError(f"{self.kind} needs d >= 2")


def gen_funnel(d: int, n: int, rng: np.random.Generator, x1_var: float = 9.0) -> np.ndarray:
    """Neal's funnel: the first coordinate sets the log-variance of the rest."""
    if d < 2:
        raise InvalidSpecError("funnel needs d >= 2")
    x1 = rng.standard_normal(n) * np.sqrt(x1_var)
    rest = rng.standard_normal((n, d - 1)) * np.exp(0.5 * x1)[:, None]
    return np.concatenate([x1[:, None], rest], axis=1)


def gen_mg25(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform 25-mode Gaussian mixture on the {-2..2}^2 grid."""
    spec = mg25_spec(d)
    return gen_gmm(spec, n, rng)


def mg25_spec(d: int = 100) -> GaussianMixtureSpec:
    if d < 2:
        raise InvalidSpecError("mg25 needs d >= 2")
    grid = [(j, k) for j in range(-2, 3) for k in range(-2, 3)]
    means = np.zeros((25, d))
    for i, (j, k) in enumerate(grid):
        means[i, 0] = j
        means[i, 1] = k
    covs = np.full((25, d), 0.1)
    covs[:, :2] = 0.01
    return GaussianMixtureSpec(np.full(25, 1.0 / 25.0), means, covs)


def diamond_modes(side: int = 5, extent: float = 2.0) -> np.ndarray:
    """Mode centers of the diamond: a rotated side x side lattice in [-extent, extent]^2."""
    half = (side - 1) / 2.0
    base = np.array([(j, k) for j in range(side) for k in range(side)], dtype=float) - half
    rotated = np.stack([base[:, 0] - base[:, 1], base[:, 0] + base[:, 1]], axis=1) / np.sqrt(2.0)
    return rotated * (extent / np.abs(rotated).max())


def diamond_spec(mode_std: float = 0.05, side: int = 5, extent: float = 2.0) -> GaussianMixtureSpec:
    modes = diamond_modes(side, extent)
    k = len(modes)
    return GaussianMixtureSpec(np.full(k, 1.0 / k), modes, np.full((k, 2), mode_std**2))


def gen_diamond(n: int, rng: np.random.Generator, mode_std: float = 0.05) -> np.ndarray:
    return gen_gmm(diamond_spec(mode_std), n, rng)


def gen_gaussian(d: int, n: int, rng: np.random.Generator, mean=0.0, var=1.0) -> np.ndarray:
    spec = GaussianMixtureSpec.single(mean, var, d=d)
    return gen_gmm(spec, n, rng)


def gen_gmm(spec: GaussianMixtureSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw from a diagonal-covariance Gaussian mixture."""
    comp = rng.choice(spec.n_components, size=n, p=spec.weights)
    noise = rng.standard_normal((n, spec.d))
    return spec.means[comp] + noise * np.sqrt(spec.diag_covs[comp])


def generate(spec: DatasetSpec, stream: int = 0) -> np.ndarray:
    """Draw the dataset described by ``spec`` from the (seed, stream) substream."""
    rng = substream(spec.seed, stream)
    kw = spec.params
    if spec.kind == "funnel":
        return gen_funnel(spec.d, spec.n, rng, x1_var=kw.get("x1_var", 9.0))
    if spec.kind == "mg25":
        return gen_mg25(spec.d, spec.n, rng)
    if spec.kind == "diamond":
        return gen_diamond(spec.n, rng, mode_std=kw.get("mode_std", 0.05))
    if spec.kind == "gaussian":
        return gen_gaussian(spec.d, spec.n, rng, mean=kw.get("mean", 0.0), var=kw.get("var", 1.0))
    return gen_gmm(kw["spec"], spec.n, rng)


def save_dataset(path, samples: np.ndarray):
    """Write samples as magic + version/n/d header + row-major float32."""
    samples = np.atleast_2d(np.asarray(samples))
    n, d = samples.shape
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<3I", DATASET_VERSION, n, d))
        fh.write(np.ascontiguousarray(samples, dtype="<f4").tobytes())


def load_dataset(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if len(magic) < 4 or magic != DATASET_MAGIC:
            raise BadMagicError(f"bad dataset magic {magic!r}")
        header = fh.read(12)
        if len(header) != 12:
            raise CorruptLengthError("truncated dataset header")
        version, n, d = struct.unpack("<3I", header)
        if version != DATASET_VERSION:
            raise VersionMismatchError(f"unsupported dataset version {version}")
        raw = fh.read(4 * n * d)
        if len(raw) != 4 * n * d:
            raise CorruptLengthError(f"expected {n * d} float32 values, file is short")
        if fh.read(1):
            raise CorruptLengthError("trailing bytes after dataset payload")
        return np.frombuffer(raw, dtype="<f4").reshape(n, d).copy()


def save_dataset_csv(path, samples: np.ndarray):
    """Plain-text export for small dimensions."""
    samples = np.atleast_2d(np.asarray(samples))
    header = ",".join(f"x{i}" for i in range(samples.shape[1]))
    np.savetxt(path, samples, delimiter=",", header=header, comments="")
