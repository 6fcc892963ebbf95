"""Command-line front end.

Exit codes: 0 success, 2 invalid input (arguments, files, configuration),
3 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    BadInit,
    ConfigError,
    DataError,
    EmptySupport,
    EpibirthError,
    InvalidParam,
    InvalidTime,
    UnboundedLattice,
)
from .hierarchical import HierConfig, hierarchical_gibbs, r0_paths
from .io import (
    RunManifest,
    atomic_write,
    chain_csv,
    fmt,
    ingest_series,
    parse_state,
    read_config,
    read_model,
    table_csv,
)
from .laplace import InversionConfig
from .likelihood import loglik
from .models import transition_probability, transition_table
from .oracles import gillespie_endpoints, uniformization_probs
from .samplers import HMCConfig, PosteriorTarget, hmc_sample, laplace_approximation, rw_metropolis_sample

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
_INPUT_ERRORS = (ConfigError, DataError, InvalidParam, InvalidTime, UnboundedLattice, EmptySupport)

FIT_SCHEMA = {
    "iterations": int,
    "burn_in": int,
    "seed": int,
    "thinning": int,
    "step_size": float,
    "leapfrog_steps": int,
    "mass": str,
    "adapt_step": bool,
    "proposal_scale": "floats",
    "parameters": str,
    "prior_mean": float,
    "prior_sd": float,
    "rel_tol": float,
    "M": float,
}
FIT_DEFAULTS = {
    "iterations": 10000,
    "burn_in": 2000,
    "seed": 1,
    "thinning": 1,
    "step_size": 0.6,
    "leapfrog_steps": 4,
    "mass": "laplace",
    "adapt_step": False,
    "proposal_scale": (1.0,),
    "prior_mean": 0.0,
    "prior_sd": 100.0,
}

HIER_SCHEMA = {
    "t0": float,
    "iterations": int,
    "burn_in": int,
    "seed": int,
    "thinning": int,
    "proposal_scale": "floats",
    "unit_steps": int,
    "mu_prior_sd": float,
    "ig_shape": float,
    "ig_scale": float,
    "rel_tol": float,
    "M": float,
}


def _inversion(cfg: dict) -> InversionConfig:
    kw = {k: cfg[k] for k in ("rel_tol", "M") if k in cfg}
    return InversionConfig(**kw)


def _positive_time(text):
    try:
        t = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"time {text!r} is not a number") from None
    if not (t > 0 and math.isfinite(t)):
        raise argparse.ArgumentTypeError(f"time must be positive, got {text}")
    return t


def _write(path, text, manifest):
    atomic_write(path, text)
    manifest.outputs.append(str(path))


# ------------------------------------------------------------------ commands


def cmd_transprob(args, manifest) -> int:
    model = read_model(args.model)
    u = parse_state(getattr(args, "from"), model.labels)
    names = model.param_names
    header = list(model.labels) + ["probability"]
    if args.grad:
        header += [f"d_log_{n}" for n in names]
    rows = []
    if args.full:
        states, probs, derivs = transition_table(model, u, args.time, gradient=args.grad)
        for j, (y, p) in enumerate(zip(states, probs)):
            rows.append(list(y) + [p] + (list(derivs[j]) if args.grad else []))
    else:
        v = parse_state(args.to, model.labels)
        res = transition_probability(model, u, v, args.time, gradient=args.grad)
        rows.append(list(v) + [res.probability] + ([res.gradient[n] for n in names] if args.grad else []))
    text = table_csv(header, rows)
    if args.out:
        _write(args.out, text, manifest)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_loglik(args, manifest) -> int:
    model = read_model(args.model)
    series = ingest_series(args.data)
    if series.labels != model.labels:
        raise DataError(f"data columns {series.labels} do not match model compartments {model.labels}")
    rep = loglik(model, series, want_gradient=args.grad)
    header = ["loglik"]
    row = [rep.loglik]
    if args.grad:
        header += [f"d_log_{n}" for n in model.param_names]
        row += [rep.gradient[n] if rep.gradient else math.nan for n in model.param_names]
    if rep.impossible_interval is not None:
        header.append("impossible_interval")
        row.append(rep.impossible_interval)
    text = table_csv(header, [row])
    if args.out:
        _write(args.out, text, manifest)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_fit(args, manifest) -> int:
    cfg = dict(FIT_DEFAULTS)
    if args.config:
        cfg = read_config(args.config, FIT_SCHEMA, cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    manifest.seed = cfg["seed"]
    model = read_model(args.model)
    series = ingest_series(args.data)
    if series.labels != model.labels:
        raise DataError(f"data columns {series.labels} do not match model compartments {model.labels}")
    names = tuple(p.strip() for p in cfg["parameters"].split(",")) if "parameters" in cfg else model.param_names
    target = PosteriorTarget(model, series, names, cfg["prior_mean"], cfg["prior_sd"], _inversion(cfg))
    init = target.initial_point()
    mass = cfg["mass"].strip().lower()
    cov = None
    if mass == "laplace":
        init, cov = laplace_approximation(target, init)
    t_start = time.perf_counter()
    if args.sampler == "hmc":
        if mass == "laplace":
            mvec = np.linalg.inv(cov)
        elif mass == "identity":
            mvec = None
        else:
            mvec = np.array(_floats(mass, "mass"))
        hcfg = HMCConfig(
            step_size=cfg["step_size"],
            leapfrog_steps=cfg["leapfrog_steps"],
            mass=mvec,
            iterations=cfg["iterations"],
            burn_in=cfg["burn_in"],
            seed=cfg["seed"],
            thinning=cfg["thinning"],
            adapt_step=cfg["adapt_step"],
        )
        chain = hmc_sample(target, hcfg, init, names)
    else:
        scale = cfg["proposal_scale"]
        if len(scale) == 1:
            scale = scale * len(names)
        if len(scale) != len(names):
            raise ConfigError(f"proposal_scale needs 1 or {len(names)} entries", "proposal_scale")
        chain = rw_metropolis_sample(
            target, scale, cfg["iterations"], cfg["seed"], init,
            burn_in=cfg["burn_in"], thinning=cfg["thinning"], proposal_cov=cov, names=names,
        )
    manifest.timings["sampling_seconds"] = time.perf_counter() - t_start
    out = Path(args.out)
    _write(out / "chain.csv", chain_csv(chain), manifest)
    rows = [
        [r["name"], r["mean"], r["sd"], r["lower"], r["upper"], r["ess"], chain.acceptance, chain.n_divergent]
        for r in chain.summary()
    ]
    summary = table_csv(["parameter", "mean", "sd", "lower95", "upper95", "ess", "acceptance", "divergent"], rows)
    _write(out / "summary.csv", summary, manifest)
    sys.stdout.write(summary)
    return EXIT_OK


def _floats(text, key):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"bad value {text!r} for key {key!r}", key) from None


def cmd_hier(args, manifest) -> int:
    if not args.config:
        raise ConfigError("hier needs --config with at least t0")
    cfg = read_config(args.config, HIER_SCHEMA)
    if "t0" not in cfg:
        raise ConfigError("config must set t0", "t0")
    if args.seed is not None:
        cfg["seed"] = args.seed
    files = sorted(Path(args.data_dir).glob("*.csv"))
    if not files:
        raise DataError(f"no unit CSV files in {args.data_dir}")
    units = []
    for f in files:
        s = ingest_series(f)
        if s.total is None:
            raise DataError(f"{f}: missing population total ('# total: N' header line)")
        if not s.name:
            s.name = f.stem
        units.append(s)
    hkw = {k: cfg[k] for k in HIER_SCHEMA if k in cfg and k not in ("rel_tol", "M")}
    hkw["threads"] = args.threads
    hcfg = HierConfig(**hkw)
    manifest.seed = hcfg.seed
    t_start = time.perf_counter()
    chain = hierarchical_gibbs(units, hcfg, _inversion(cfg))
    manifest.timings["sampling_seconds"] = time.perf_counter() - t_start
    out = Path(args.out)
    _write(out / "chain.csv", chain_csv(chain), manifest)

    rows = []
    for p, u in enumerate(units):
        d = np.exp(chain.draws[:, 3 * p + 1])
        rows.append([u.name, d.mean(), np.quantile(d, 0.025), np.quantile(d, 0.975), float(np.mean(d < 1))])
    _write(out / "delta_summary.csv", table_csv(["unit", "mean", "lower95", "upper95", "prob_below_1"], rows), manifest)

    P = len(units)
    hyper = []
    for j, name in enumerate(chain.names[3 * P:]):
        col = chain.draws[:, 3 * P + j]
        hyper.append([name, col.mean(), np.quantile(col, 0.025), np.quantile(col, 0.975)])
    _write(out / "hyperparameters.csv", table_csv(["parameter", "mean", "lower95", "upper95"], hyper), manifest)

    path_rows = []
    for u, (times, r0) in zip(units, r0_paths(chain)):
        path_rows += [[u.name, t, r] for t, r in zip(times, r0)]
    _write(out / "r0_paths.csv", table_csv(["unit", "time", "r0_posterior_mean"], path_rows), manifest)

    latent_rows = []
    for u, lat in zip(units, chain.extras["latent_mean"]):
        latent_rows += [[u.name, t, r] for t, r in zip(u.times, lat)]
    _write(out / "latent_removals.csv", table_csv(["unit", "time", "removed_posterior_mean"], latent_rows), manifest)
    sys.stdout.write(table_csv(["unit", "mean", "lower95", "upper95", "prob_below_1"], rows))
    return EXIT_OK


def cmd_simulate(args, manifest) -> int:
    model = read_model(args.model)
    u = parse_state(getattr(args, "from"), model.labels)
    manifest.seed = args.seed
    ends = gillespie_endpoints(model, u, args.time, args.paths, seed=args.seed)
    states, counts = np.unique(ends, axis=0, return_counts=True)
    rows = [list(s) + [int(c), c / args.paths] for s, c in zip(states, counts)]
    text = table_csv(list(model.labels) + ["count", "frequency"], rows)
    if args.out:
        _write(args.out, text, manifest)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_oracle_check(args, manifest) -> int:
    model = read_model(args.model)
    u = parse_state(getattr(args, "from"), model.labels)
    states, probs, _ = transition_table(model, u, args.time)
    ref = uniformization_probs(model, u, args.time)
    dp = {tuple(int(c) for c in y): float(p) for y, p in zip(states, probs)}
    keys = set(dp) | set(ref)
    diffs = np.array([abs(dp.get(k, 0.0) - ref.get(k, 0.0)) for k in keys])
    max_abs, l1 = float(diffs.max()), float(diffs.sum())
    ok = max_abs < args.max_abs and l1 < args.l1
    sys.stdout.write(table_csv(["states", "max_abs", "l1", "pass"], [[len(keys), max_abs, l1, str(ok).lower()]]))
    return EXIT_OK if ok else EXIT_NUMERIC


# ------------------------------------------------------------------ parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_INPUT)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="epibirth", description="Exact likelihoods and Bayesian inference for compartmental epidemic models.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=1, help="worker threads for per-unit updates")
    p.add_argument("--manifest", help="where to write the run manifest (default: next to outputs)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("transprob", help="transition probabilities between compartment states")
    s.add_argument("model")
    s.add_argument("--from", required=True, metavar="STATE", help='e.g. "S=100,I=1,R=0"')
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--to", metavar="STATE")
    g.add_argument("--full", action="store_true", help="every reachable state")
    s.add_argument("--time", type=_positive_time, required=True)
    s.add_argument("--grad", action="store_true", help="add log-parameter derivatives")
    s.add_argument("--out")
    s.set_defaults(func=cmd_transprob)

    s = sub.add_parser("loglik", help="log likelihood of a fully observed series")
    s.add_argument("model")
    s.add_argument("data")
    s.add_argument("--grad", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_loglik)

    s = sub.add_parser("fit", help="posterior sampling for one series")
    s.add_argument("sampler", choices=("hmc", "rwm"))
    s.add_argument("model")
    s.add_argument("data")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("hier", help="hierarchical SIR fit across units with latent removals")
    s.add_argument("data_dir")
    s.add_argument("--model-kind", default="sir", choices=("sir",))
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_hier)

    s = sub.add_parser("simulate", help="Gillespie end states")
    s.add_argument("model")
    s.add_argument("--from", required=True, metavar="STATE")
    s.add_argument("--time", type=_positive_time, required=True)
    s.add_argument("--paths", type=int, default=10000)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    s.add_argument("manifest_file")
    s.set_defaults(func=None)

    s = sub.add_parser("oracle-check", help="compare the lattice engine with uniformization")
    s.add_argument("model")
    s.add_argument("--from", required=True, metavar="STATE")
    s.add_argument("--time", type=_positive_time, required=True)
    s.add_argument("--max-abs", type=float, default=1e-8)
    s.add_argument("--l1", type=float, default=1e-6)
    s.set_defaults(func=cmd_oracle_check)
    return p


def _manifest_path(args):
    if args.manifest:
        return Path(args.manifest)
    out = getattr(args, "out", None)
    if out is None:
        return None
    out = Path(out)
    if args.command in ("fit", "hier"):
        return out / "manifest.json"
    return out.with_name(out.name + ".manifest.json")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "replay":
        try:
            recorded = RunManifest.read(args.manifest_file)
        except (OSError, ValueError, TypeError) as exc:
            sys.stderr.write(f"epibirth: error: cannot read manifest: {exc}\n")
            return EXIT_INPUT
        return main(recorded.argv)
    if args.threads < 1:
        sys.stderr.write("epibirth: error: --threads must be at least 1\n")
        return EXIT_INPUT
    manifest = RunManifest(
        command=args.command,
        argv=argv,
        model_file=getattr(args, "model", None),
        data_file=getattr(args, "data", None) or getattr(args, "data_dir", None),
        config_file=getattr(args, "config", None),
        seed=getattr(args, "seed", None),
        output_dir=getattr(args, "out", None),
        tool_version=__version__,
    )
    t0 = time.perf_counter()
    try:
        code = args.func(args, manifest)
    except _INPUT_ERRORS as exc:
        sys.stderr.write(f"epibirth: error: {exc}\n")
        return EXIT_INPUT
    except (EpibirthError, FloatingPointError, BadInit) as exc:
        sys.stderr.write(f"epibirth: numerical failure: {exc}\n")
        return EXIT_NUMERIC
    manifest.timings["total_seconds"] = time.perf_counter() - t0
    path = _manifest_path(args)
    if path is not None:
        manifest.write(path)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
