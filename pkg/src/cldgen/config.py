"""Flat ``section.key = value`` run configuration.

The format is deliberately plain text: one assignment per line, ``#``
comments, no nesting.  Unknown keys are errors.  ``parse`` and
``canonical_text`` round-trip exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .datasets import DatasetSpec, diamond_spec, mg25_spec
from .errors import ConfigError
from .forward import GaussianMixtureSpec
from .kinetics import KineticParams, Schedule
from .metrics import SlicedW2Config
from .network import NetArch
from .sampling import SamplerConfig
from .training import TrainConfig

__all__ = ["RunConfig", "parse_config", "parse_config_file", "controlled_params"]


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "false"):
        return low == "true"
    raise ValueError(f"expected true/false, got {s!r}")


def _parse_floats(s: str) -> tuple:
    return tuple(float(tok) for tok in s.replace(",", " ").split())


def _parse_ints(s: str) -> tuple:
    return tuple(int(tok) for tok in s.replace(",", " ").split())


def _parse_matrix(s: str) -> tuple:
    return tuple(_parse_floats(row) for row in s.split("|"))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return " | ".join(" ".join(repr(x) for x in row) for row in value)
        return " ".join(repr(x) for x in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_CHOICES = {
    "dataset.kind": ("funnel", "mg25", "diamond", "gaussian", "gmm"),
    "kinetics.schedule": ("identity", "affine"),
    "train.lambda_mode": ("det_sq", "uniform", "auto"),
    "sample.integrator": ("euler", "splitting"),
    "sample.score_form": ("modified", "plain"),
}

# key -> (parser, default); None default means "must be set to matter"
_SCHEMA = {
    "dataset.kind": (str, "gaussian"),
    "dataset.d": (int, 2),
    "dataset.n_train": (int, 50000),
    "dataset.n_test": (int, 50000),
    "dataset.seed": (int, 0),
    "dataset.funnel_x1_var": (float, 9.0),
    "dataset.diamond_mode_std": (float, 0.05),
    "dataset.gaussian_mean": (float, 0.0),
    "dataset.gaussian_var": (float, 1.0),
    "dataset.gmm_weights": (_parse_floats, None),
    "dataset.gmm_means": (_parse_matrix, None),
    "dataset.gmm_vars": (_parse_matrix, None),
    "kinetics.a": (float, 1.0),
    "kinetics.sigma": (float, 2.0),
    "kinetics.epsilon": (float, 0.0),
    "kinetics.v": (float, 1.0),
    "kinetics.controlled": (_parse_bool, False),
    "kinetics.schedule": (str, "identity"),
    "kinetics.beta0": (float, 0.1),
    "kinetics.beta1": (float, 19.9),
    "net.mid": (int, 512),
    "net.depth": (int, 3),
    "train.epochs": (int, 2000),
    "train.batch_size": (int, 512),
    "train.lr": (float, 1e-4),
    "train.horizon": (float, 8.0),
    "train.t_cutoff": (float, None),
    "train.lambda_mode": (str, "auto"),
    "train.seed": (int, 0),
    "sample.n_steps": (int, 1000),
    "sample.horizon": (float, None),
    "sample.integrator": (str, "euler"),
    "sample.score_form": (str, "modified"),
    "sample.seed": (int, 0),
    "sample.chains": (int, 0),
    "eval.n_projections": (int, 2000),
    "eval.seed": (int, 0),
    "experiment.epsilons": (_parse_floats, (0.0,)),
    "experiment.a_values": (_parse_floats, (1.0,)),
    "experiment.repetitions": (int, 5),
    "experiment.n_generate": (int, 50000),
    "theory.alpha0": (float, 1.0),
    "theory.L0": (float, 1.0),
    "theory.horizon": (float, None),
    "theory.n_grid": (int, 64),
    "theory.score_error": (float, 0.0),
    "theory.data_second_moment": (float, None),
}


def controlled_params(epsilon: float, v: float = 1.0, schedule: Schedule | None = None) -> KineticParams:
    """Derive (a, sigma) that pin the stationary law near N(0, I): a = 1 - eps^2/2, sigma = sqrt(4 + eps^2)."""
    a = 1.0 - epsilon**2 / 2.0
    if a <= 0:
        raise ConfigError(f"controlled setting needs epsilon^2 < 2 (epsilon={epsilon} gives a={a})")
    return KineticParams(a=a, sigma=math.sqrt(4.0 + epsilon**2), epsilon=epsilon, v=v,
                         schedule=schedule or Schedule())


@dataclass
class RunConfig:
    """Parsed configuration; typed accessors build the per-module config objects."""

    values: dict

    def get(self, key: str):
        if key in self.values:
            return self.values[key]
        return _SCHEMA[key][1]

    # -- builders ------------------------------------------------------------

    def dataset_spec(self, n: int | None = None, seed: int | None = None) -> DatasetSpec:
        kind = self.get("dataset.kind")
        params = {}
        if kind == "funnel":
            params["x1_var"] = self.get("dataset.funnel_x1_var")
        elif kind == "diamond":
            params["mode_std"] = self.get("dataset.diamond_mode_std")
        elif kind == "gaussian":
            params["mean"] = self.get("dataset.gaussian_mean")
            params["var"] = self.get("dataset.gaussian_var")
        elif kind == "gmm":
            params["spec"] = self.gmm_spec()
        return DatasetSpec(
            kind=kind,
            d=self.get("dataset.d"),
            n=n if n is not None else self.get("dataset.n_train"),
            seed=seed if seed is not None else self.get("dataset.seed"),
            params=params,
        )

    def gmm_spec(self) -> GaussianMixtureSpec:
        """Mixture spec of the configured dataset, for analytic-score sampling."""
        kind = self.get("dataset.kind")
        d = self.get("dataset.d")
        if kind == "gaussian":
            return GaussianMixtureSpec.single(self.get("dataset.gaussian_mean"),
                                              self.get("dataset.gaussian_var"), d=d)
        if kind == "mg25":
            return mg25_spec(d)
        if kind == "diamond":
            return diamond_spec(self.get("dataset.diamond_mode_std"))
        if kind == "gmm":
            weights = self.get("dataset.gmm_weights")
            means = self.get("dataset.gmm_means")
            covs = self.get("dataset.gmm_vars")
            if weights is None or means is None or covs is None:
                raise ConfigError("gmm dataset needs gmm_weights, gmm_means and gmm_vars")
            return GaussianMixtureSpec(np.array(weights), np.array(means), np.array(covs))
        raise ConfigError(f"dataset kind {kind!r} has no Gaussian-mixture form")

    def schedule(self) -> Schedule:
        kind = self.get("kinetics.schedule")
        if kind == "identity":
            return Schedule()
        return Schedule("affine", self.get("kinetics.beta0"), self.get("kinetics.beta1"))

    def kinetic_params(self, a: float | None = None, epsilon: float | None = None) -> KineticParams:
        eps = epsilon if epsilon is not None else self.get("kinetics.epsilon")
        v = self.get("kinetics.v")
        if self.get("kinetics.controlled"):
            base = controlled_params(eps, v=v, schedule=self.schedule())
            if a is not None:
                raise ConfigError("cannot override a in the controlled setting")
            return base
        return KineticParams(
            a=a if a is not None else self.get("kinetics.a"),
            sigma=self.get("kinetics.sigma"),
            epsilon=eps, v=v, schedule=self.schedule(),
        )

    def net_arch(self, epsilon: float | None = None) -> NetArch:
        d = self.get("dataset.d")
        eps = epsilon if epsilon is not None else self.get("kinetics.epsilon")
        out_dim = d if eps == 0 else 2 * d
        return NetArch(d=d, mid=self.get("net.mid"), depth=self.get("net.depth"), out_dim=out_dim)

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            epochs=self.get("train.epochs"),
            batch_size=self.get("train.batch_size"),
            lr=self.get("train.lr"),
            horizon=self.get("train.horizon"),
            t_cutoff=self.get("train.t_cutoff"),
            lambda_mode=self.get("train.lambda_mode"),
            seed=seed if seed is not None else self.get("train.seed"),
        )

    def sampler_config(self, seed: int | None = None) -> SamplerConfig:
        horizon = self.get("sample.horizon")
        if horizon is None:
            horizon = self.get("train.horizon")
        return SamplerConfig(
            n_steps=self.get("sample.n_steps"),
            horizon=horizon,
            integrator=self.get("sample.integrator"),
            score_form=self.get("sample.score_form"),
            seed=seed if seed is not None else self.get("sample.seed"),
            chains=self.get("sample.chains"),
        )

    def sw2_config(self) -> SlicedW2Config:
        return SlicedW2Config(n_projections=self.get("eval.n_projections"),
                              seed=self.get("eval.seed"))

    def canonical_text(self) -> str:
        lines = [f"{k} = {_fmt(v)}" for k, v in sorted(self.values.items())]
        return "\n".join(lines) + ("\n" if lines else "")


def parse_config(text: str) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parser = _SCHEMA[key][0]
        try:
            parsed = parser(val)
        except ValueError as err:
            raise ConfigError(f"line {lineno}: bad value for {key}: {err}") from err
        if key in _CHOICES and parsed not in _CHOICES[key]:
            raise ConfigError(f"line {lineno}: {key} must be one of {_CHOICES[key]}")
        values[key] = parsed
    return RunConfig(values)


def parse_config_file(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
