"""Command-line orchestration: datasets, training, sampling, evaluation, sweeps.

Exit codes: 0 success, 1 usage/config error, 2 runtime numerical failure,
3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import bounds, datasets, metrics, sampling
from .config import RunConfig, controlled_params, parse_config_file
from .errors import CldgenError, ConfigError, NonFiniteLossError, NonFiniteStateError
from .network import load_checkpoint, save_checkpoint
from .seeding import substream
from .training import train

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_VERIFICATION = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _atomic_write(path, writer):
    """Write via a temp file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_text(path, text: str):
    _atomic_write(path, lambda fh: fh.write(text.encode("utf-8")))


def _save_samples(path, samples):
    if str(path).endswith(".csv"):
        datasets.save_dataset_csv(path, samples)
    else:
        datasets.save_dataset(path, samples)


def _load_samples(path):
    if str(path).endswith(".csv"):
        return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return datasets.load_dataset(path)


def cmd_dataset(args) -> int:
    cfg = parse_config_file(args.config)
    spec = cfg.dataset_spec(seed=args.seed)
    samples = datasets.generate(spec, stream=1 if args.test else 0)
    _save_samples(args.out, samples)
    print(f"wrote {spec.n} x {spec.d} {spec.kind} samples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = parse_config_file(args.config)
    data = _load_samples(args.data)
    p = cfg.kinetic_params()
    arch = cfg.net_arch()
    if data.shape[1] != arch.d:
        raise ConfigError(f"data dimension {data.shape[1]} != configured d {arch.d}")
    tc = cfg.train_config(seed=args.seed)
    params, adam, trace = train(p, arch, data, tc)
    save_checkpoint(args.out, arch, params, adam)
    trace_path = args.trace or (os.path.splitext(args.out)[0] + "_loss.csv")
    lines = ["epoch,mean_loss,wall_seconds"]
    lines += [f"{e},{l!r},{w:.3f}" for e, l, w in trace]
    _atomic_write_text(trace_path, "\n".join(lines) + "\n")
    print(f"trained {tc.epochs} epochs; final mean loss {trace[-1][1]:.6g}; "
          f"checkpoint {args.out}; trace {trace_path}")
    return EXIT_OK


def _score_source(cfg: RunConfig, args, p, horizon):
    if args.oracle:
        return sampling.analytic_score_source(cfg.gmm_spec(), p), cfg.get("dataset.d")
    if not args.checkpoint:
        raise ConfigError("need --checkpoint or --oracle")
    arch, params, _ = load_checkpoint(args.checkpoint)
    sampling.check_checkpoint(arch, cfg.get("dataset.d"), p.epsilon)
    return sampling.network_score_source(arch, params, p, horizon), arch.d


def cmd_sample(args) -> int:
    cfg = parse_config_file(args.config)
    p = cfg.kinetic_params()
    sc = cfg.sampler_config(seed=args.seed)
    score, d = _score_source(cfg, args, p, sc.horizon)
    out = sampling.sample(p, sc, score, args.n, d, rng=substream(sc.seed, 7))
    _save_samples(args.out, out)
    print(f"wrote {args.n} x {d} generated samples to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = parse_config_file(args.config)
    a = _load_samples(args.samples_a)
    b = _load_samples(args.samples_b)
    start = time.perf_counter()
    sw2 = metrics.sliced_w2(a, b, cfg.sw2_config())
    wall = time.perf_counter() - start
    p = cfg.kinetic_params()
    row = (cfg.get("dataset.kind"), p.epsilon, p.a, cfg.get("eval.seed"), len(a), sw2, wall)
    line = "dataset,epsilon,a,seed,n,sw2,wall_seconds\n" + \
        f"{row[0]},{row[1]!r},{row[2]!r},{row[3]},{row[4]},{sw2!r},{wall:.3f}\n"
    if args.out:
        _atomic_write_text(args.out, line)
    print(f"sw2 = {sw2:.6g}  ({wall:.2f}s, {cfg.get('eval.n_projections')} projections)")
    return EXIT_OK


def cmd_controlled(args) -> int:
    p = controlled_params(args.epsilon)
    print(f"kinetics.a = {p.a!r}")
    print(f"kinetics.sigma = {p.sigma!r}")
    print(f"kinetics.epsilon = {p.epsilon!r}")
    return EXIT_OK


def run_cell(config_path: str, epsilon: float, a_value: float | None, rep: int, outdir: str) -> dict:
    """Train, sample and evaluate one sweep cell; returns the result row."""
    cfg = parse_config_file(config_path)
    p = cfg.kinetic_params(a=a_value, epsilon=epsilon)
    arch = cfg.net_arch(epsilon=epsilon)
    train_data = _load_samples(os.path.join(outdir, "train.clds"))
    test_data = _load_samples(os.path.join(outdir, "test.clds"))
    tc = cfg.train_config(seed=cfg.get("train.seed") + rep)
    start = time.perf_counter()
    params, adam, trace = train(p, arch, train_data, tc)
    sc = cfg.sampler_config(seed=cfg.get("sample.seed") + rep)
    score = sampling.network_score_source(arch, params, p, sc.horizon)
    generated = sampling.sample(p, sc, score, cfg.get("experiment.n_generate"), arch.d,
                                rng=substream(sc.seed, 7))
    sw2 = metrics.sliced_w2(generated, test_data, cfg.sw2_config())
    wall = time.perf_counter() - start
    return {
        "dataset": cfg.get("dataset.kind"),
        "epsilon": epsilon,
        "a": p.a,
        "seed": tc.seed,
        "n": int(cfg.get("experiment.n_generate")),
        "sw2": float(sw2),
        "wall_seconds": wall,
        "final_loss": trace[-1][1],
    }


def _pool_init():
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = "1"


def cmd_experiment(args) -> int:
    cfg = parse_config_file(args.config)
    outdir = args.out
    os.makedirs(outdir, exist_ok=True)

    train_path = os.path.join(outdir, "train.clds")
    test_path = os.path.join(outdir, "test.clds")
    if not os.path.exists(train_path):
        datasets.save_dataset(train_path, datasets.generate(cfg.dataset_spec(), stream=0))
    if not os.path.exists(test_path):
        spec = cfg.dataset_spec(n=cfg.get("dataset.n_test"))
        datasets.save_dataset(test_path, datasets.generate(spec, stream=1))

    manifest_path = os.path.join(outdir, "manifest.json")
    manifest = {}
    if os.path.exists(manifest_path):
        with open(manifest_path) as fh:
            manifest = json.load(fh)

    epsilons = cfg.get("experiment.epsilons")
    a_values = cfg.get("experiment.a_values")
    reps = range(cfg.get("experiment.repetitions"))
    controlled = cfg.get("kinetics.controlled")
    cells = []
    for eps in epsilons:
        for a in a_values:
            for r in reps:
                key = f"eps{eps}_a{a}_rep{r}"
                if manifest.get(key, {}).get("status") == "done":
                    continue
                cells.append((key, eps, None if controlled else a, r))

    def record(key, entry):
        manifest[key] = entry
        _atomic_write_text(manifest_path, json.dumps(manifest, indent=1, sort_keys=True))

    if args.threads > 1 and cells:
        import multiprocessing as mp
        ctx = mp.get_context("spawn")
        with ProcessPoolExecutor(max_workers=args.threads, mp_context=ctx,
                                 initializer=_pool_init) as pool:
            futures = {pool.submit(run_cell, args.config, eps, a, r, outdir): key
                       for key, eps, a, r in cells}
            for fut, key in futures.items():
                try:
                    row = fut.result()
                    record(key, {"status": "done", **row})
                    print(f"{key}: sw2 = {row['sw2']:.6g}")
                except CldgenError as err:
                    record(key, {"status": f"failed: {err}"})
                    print(f"{key}: FAILED ({err})", file=sys.stderr)
    else:
        for key, eps, a, r in cells:
            try:
                row = run_cell(args.config, eps, a, r, outdir)
                record(key, {"status": "done", **row})
                print(f"{key}: sw2 = {row['sw2']:.6g}")
            except CldgenError as err:
                record(key, {"status": f"failed: {err}"})
                print(f"{key}: FAILED ({err})", file=sys.stderr)

    _write_sweep_reports(cfg, manifest, outdir, epsilons, a_values)
    print(f"sweep reports in {outdir}")
    return EXIT_OK


def _write_sweep_reports(cfg, manifest, outdir, epsilons, a_values):
    rows = [v for v in manifest.values() if v.get("status") == "done"]
    rows.sort(key=lambda r: (r["epsilon"], r["a"], r["seed"]))
    with open(os.path.join(outdir, "results.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "epsilon", "a", "seed", "n", "sw2", "wall_seconds"])
        for r in rows:
            writer.writerow([r["dataset"], repr(r["epsilon"]), repr(r["a"]),
                             r["seed"], r["n"], repr(r["sw2"]), f"{r['wall_seconds']:.3f}"])

    controlled = cfg.get("kinetics.controlled")
    header = ["epsilon"] + (["a(eps)"] if controlled else [f"a={a!r}" for a in a_values])
    lines = [",".join(header)]
    for eps in epsilons:
        cells = [f"{eps!r}"]
        for a in (a_values if not controlled else [None]):
            vals = [r["sw2"] for r in rows
                    if r["epsilon"] == eps and (a is None or abs(r["a"] - a) < 1e-12)]
            if vals:
                mean, std = float(np.mean(vals)), float(np.std(vals))
                cells.append(f"{mean:.4f} ± {std:.4f}")
            else:
                cells.append("")
        lines.append(",".join(cells))
    _atomic_write_text(os.path.join(outdir, "aggregate.csv"), "\n".join(lines) + "\n")


def cmd_theory(args) -> int:
    cfg = parse_config_file(args.config)
    horizon = cfg.get("theory.horizon")
    if horizon is None:
        horizon = cfg.get("train.horizon")
    n_grid = cfg.get("theory.n_grid")
    d = cfg.get("dataset.d")
    m2 = cfg.get("theory.data_second_moment")
    if m2 is None:
        m2 = float(d)
    alpha0, l0 = cfg.get("theory.alpha0"), cfg.get("theory.L0")
    score_err = cfg.get("theory.score_error")
    t_grid = np.logspace(-3, np.log10(max(horizon, 1e-2)), 40)

    rows = []
    all_ok = True
    for eps in cfg.get("experiment.epsilons"):
        for a in cfg.get("experiment.a_values"):
            p = cfg.kinetic_params(a=None if cfg.get("kinetics.controlled") else a, epsilon=eps)
            rp = bounds.RegularityParams(alpha0=alpha0, L0=l0, kp=p)
            h_bound = bounds.admissible_h(rp, horizon, n_grid)
            budget = bounds.wasserstein_bound_terms(rp, horizon, horizon / n_grid,
                                                    score_err, d, m2)
            checks = bounds.verify_sigma_bounds(p, t_grid)
            ok = all(c.ok for c in checks)
            all_ok = all_ok and ok
            rows.append([p.a, p.sigma, p.epsilon, p.v, alpha0, l0, horizon, n_grid,
                         h_bound, h_bound > 0, budget.mixing, budget.approx,
                         budget.discretization, ok])

    header = ["a", "sigma", "epsilon", "v", "alpha0", "L0", "T", "N", "h_bound",
              "admissible", "mixing_factor", "approx_term", "discretization_term",
              "sigma_bounds_ok"]
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(repr(x) if isinstance(x, float) else str(x) for x in r))
    text = "\n".join(lines) + "\n"
    if args.out:
        _atomic_write_text(args.out, text)
    else:
        print(text, end="")
    if not all_ok:
        print("covariance eigenvalue bounds VIOLATED", file=sys.stderr)
        return EXIT_VERIFICATION
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cldgen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser("dataset", help="generate and persist a dataset")
    d.add_argument("--config", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--seed", type=int, default=None)
    d.add_argument("--test", action="store_true", help="draw from the test substream")
    d.set_defaults(func=cmd_dataset)

    t = sub.add_parser("train", help="train a score network")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--trace", default=None, help="loss-trace CSV path")
    t.add_argument("--seed", type=int, default=None)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="generate samples from a checkpoint or analytic oracle")
    s.add_argument("--config", required=True)
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--oracle", action="store_true")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="sliced-W2 between two sample files")
    e.add_argument("samples_a")
    e.add_argument("samples_b")
    e.add_argument("--config", required=True)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("controlled", help="derive (a, sigma) for a given epsilon")
    c.add_argument("--epsilon", type=float, required=True)
    c.set_defaults(func=cmd_controlled)

    x = sub.add_parser("experiment", help="epsilon x a x repetition sweep")
    x.add_argument("--config", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--threads", type=int, default=1)
    x.set_defaults(func=cmd_experiment)

    th = sub.add_parser("theory", help="evaluate bound constants over a parameter grid")
    th.add_argument("--config", required=True)
    th.add_argument("--out", default=None)
    th.set_defaults(func=cmd_theory)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, FileNotFoundError, IsADirectoryError, PermissionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteLossError, NonFiniteStateError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CldgenError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
