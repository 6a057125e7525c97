"""Command-line front end.

Four workflows plus a diagnostic: ``simulate`` synthesizes study datasets,
``infer`` fits one dataset, ``select`` ranks the four model variants by DIC,
``benchmark`` reproduces the ASE/CR tables, and ``dynamics`` dumps the
deterministic moment path.  Exit codes: 0 success, 2 invalid input,
3 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .bench import dic, evaluate_ase_cr, run_n0_sweep, select_model, BenchRow
from .dynamics import rk4_solve
from .io import (ValidationError, atomic_write_text, config_hash,
                 read_summary_csv, write_json, write_samples_csv,
                 write_summary_csv)
from .mcmc import ChainConfig, run_chains
from .model import ModelParams, ModelVariant
from .simulate import (STUDY_III_N0, SimConfig, run_simulation_study,
                       synthesize_summary_conditional,
                       synthesize_summary_gillespie)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NOT_CONVERGED = 3


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plasticity",
        description="Infer stem-cell plasticity parameters from temporal "
                    "proportion data.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="master RNG seed")

    sim = sub.add_parser("simulate", help="synthesize datasets")
    common(sim)
    sim.add_argument("--study", choices=["1", "2", "3"],
                     help="simulation study protocol")
    sim.add_argument("--param-sets", type=int, dest="param_sets",
                     help="number of parameter draws")
    sim.add_argument("--n", type=int, help="trajectories per dataset")
    sim.add_argument("--n0", type=float, help="initial total cell count")

    for name, desc in (("infer", "fit one dataset"),
                       ("select", "rank the four model variants by DIC")):
        p = sub.add_parser(name, help=desc)
        common(p)
        p.add_argument("--data", help="summary CSV (time,mean,variance)")
        p.add_argument("--n", type=int, help="trajectories behind the data")
        p.add_argument("--n0", type=float, help="initial total cell count")
        p.add_argument("--iterations", type=int)
        p.add_argument("--chains", type=int)
        if name == "infer":
            p.add_argument("--model",
                           choices=[v.value for v in ModelVariant])

    bench = sub.add_parser("benchmark", help="replicate the study tables")
    common(bench)
    bench.add_argument("--study", choices=["1", "2", "3"])
    bench.add_argument("--param-sets", type=int, dest="param_sets")
    bench.add_argument("--iterations", type=int)
    bench.add_argument("--chains", type=int)
    bench.add_argument("--n", type=int)
    bench.add_argument("--n0", type=float)

    dyn = sub.add_parser("dynamics", help="emit the deterministic moment path")
    common(dyn)
    for pname in ("alpha", "beta", "lambda1", "lambda2", "mu0", "v0", "n0"):
        dyn.add_argument(f"--{pname}", type=float)
    dyn.add_argument("--t-end", type=float, dest="t_end")
    dyn.add_argument("--step", type=float)
    return parser


class Settings:
    """Flag > config-file > default resolution."""

    def __init__(self, args: argparse.Namespace):
        self.args = vars(args)
        self.config = {}
        path = self.args.get("config")
        if path:
            if not os.path.exists(path):
                raise ValidationError(f"config file not found: {path}")
            with open(path) as handle:
                try:
                    self.config = json.load(handle)
                except json.JSONDecodeError as exc:
                    raise ValidationError(f"{path}: invalid JSON: {exc}")

    def get(self, key: str, default=None):
        value = self.args.get(key)
        if value is None:
            value = self.config.get(key, default)
        return value

    def require(self, key: str):
        value = self.get(key)
        if value is None:
            raise ValidationError(f"missing required setting --{key}")
        return value

    def payload(self) -> dict:
        merged = dict(self.config)
        merged.update({k: v for k, v in self.args.items()
                       if v is not None and k not in ("config",)})
        return merged


def _bundle_meta(out_dir: str, command: str, settings: Settings,
                 extra: dict | None = None):
    payload = settings.payload()
    meta = {
        "command": command,
        "version": __version__,
        "seed": settings.get("seed", 0),
        "config_hash": config_hash(payload),
        "settings": payload,
    }
    meta.update(extra or {})
    write_json(os.path.join(out_dir, "meta.json"), meta)


def _chain_config(settings: Settings) -> ChainConfig:
    return ChainConfig(
        iterations=int(settings.get("iterations", 50000)),
        chains=int(settings.get("chains", 4)),
        seed=int(settings.get("seed", 0)),
        rhat_threshold=float(settings.get("rhat_threshold", 1.1)))


def _load_data(settings: Settings):
    path = settings.require("data")
    if not os.path.exists(path):
        raise ValidationError(f"data file not found: {path}")
    n = settings.get("n")
    n0 = settings.get("n0")
    if n is None or n0 is None:
        raise ValidationError("--n and --n0 must be supplied "
                              "(they are not stored in the CSV)")
    return read_summary_csv(path, int(n), float(n0))


def _out_dir(settings: Settings) -> str:
    out = settings.require("out")
    os.makedirs(out, exist_ok=True)
    return out


def cmd_simulate(settings: Settings) -> int:
    out = _out_dir(settings)
    seed = int(settings.get("seed", 0))
    study = settings.get("study")
    if study is not None:
        datasets = run_simulation_study(
            study, int(settings.get("param_sets", 1)), seed,
            n_trajectories=int(settings.get("n", 5)),
            n0=int(settings.get("n0", 1000)))
        index = []
        for i, ds in enumerate(datasets):
            name = f"dataset_{i:03d}.csv"
            write_summary_csv(os.path.join(out, name), ds.data)
            index.append({
                "file": name, "study": ds.study, "index": ds.index,
                "n0": ds.n0, "n": ds.data.n, "m0": ds.m0, "v0": ds.v0,
                "true_params": {
                    "alpha": ds.params.alpha, "beta": ds.params.beta,
                    "lambda1": ds.params.lambda1,
                    "lambda2": ds.params.lambda2},
                "seed": ds.seed})
        _bundle_meta(out, "simulate", settings, {"datasets": index})
        return EXIT_OK

    # single custom dataset, parameters taken from the config file
    params = ModelParams(alpha=float(settings.require("alpha")),
                         beta=float(settings.require("beta")),
                         lambda1=float(settings.require("lambda1")),
                         lambda2=float(settings.require("lambda2")))
    n = int(settings.get("n", 5))
    n0 = float(settings.get("n0", 1000))
    t_end = float(settings.get("t_end", 24.0))
    step = float(settings.get("step", 2.0))
    grid = np.arange(0.0, t_end + 1e-9, step)
    method = settings.get("method", "gillespie")
    if method == "gillespie":
        cfg = SimConfig(n0=int(n0), mu0=float(settings.require("m0")),
                        t_end=t_end, record_grid=grid, replicates=n,
                        seed=seed)
        data = synthesize_summary_gillespie(cfg, params, n)
    elif method == "conditional":
        data = synthesize_summary_conditional(
            params, float(settings.require("m0")),
            float(settings.get("v0", 0.0)), grid, n, n0,
            np.random.default_rng(seed))
    else:
        raise ValidationError(f"unknown simulate method {method!r}")
    write_summary_csv(os.path.join(out, "dataset.csv"), data)
    _bundle_meta(out, "simulate", settings, {
        "true_params": {"alpha": params.alpha, "beta": params.beta,
                        "lambda1": params.lambda1, "lambda2": params.lambda2}})
    return EXIT_OK


def _summary_payload(result) -> dict:
    summary = result.summary
    return {
        "variant": result.variant.value,
        "rhat": result.rhat,
        "converged": bool(result.rhat < 1.1) if np.isfinite(result.rhat)
        else False,
        "samples_kept": summary.samples_kept,
        "acceptance": result.acceptance,
        "parameters": {
            name: {"point": summary.point[name],
                   "lower": summary.lower[name],
                   "upper": summary.upper[name]}
            for name in summary.point},
    }


def cmd_infer(settings: Settings) -> int:
    out = _out_dir(settings)
    data = _load_data(settings)
    cfg = _chain_config(settings)
    variant = ModelVariant.from_label(settings.get("model", "full"))
    result = run_chains(data, variant, cfg)
    write_samples_csv(os.path.join(out, "samples.csv"), result)
    write_json(os.path.join(out, "summary.json"), _summary_payload(result))
    _bundle_meta(out, "infer", settings, {"rhat": result.rhat})
    if not (np.isfinite(result.rhat) and result.rhat < cfg.rhat_threshold):
        print(f"warning: chains not converged (rhat={result.rhat:.4g})",
              file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_select(settings: Settings) -> int:
    out = _out_dir(settings)
    data = _load_data(settings)
    cfg = _chain_config(settings)
    fits = select_model(data, cfg)
    lines = ["variant,alpha,beta,lambda1,lambda2,dic"]
    for fit in fits:
        point = fit.summary.point
        lines.append(",".join([fit.variant.value] +
                              [_fmt(point[name]) for name in
                               ("alpha", "beta", "lambda1", "lambda2")] +
                              [_fmt(fit.dic)]))
    atomic_write_text(os.path.join(out, "selection.csv"),
                      "\n".join(lines) + "\n")
    write_json(os.path.join(out, "selection.json"), {
        "winner": fits[0].variant.value,
        "ranking": [{"variant": f.variant.value, "dic": f.dic,
                     "rhat": f.result.rhat, "converged": f.converged}
                    for f in fits]})
    _bundle_meta(out, "select", settings, {"winner": fits[0].variant.value})
    print(f"best model by DIC: {fits[0].variant.value} "
          f"(DIC={fits[0].dic:.3f})")
    if not all(f.converged for f in fits):
        bad = [f.variant.value for f in fits if not f.converged]
        print(f"warning: non-converged variants: {', '.join(bad)}",
              file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_benchmark(settings: Settings) -> int:
    out = _out_dir(settings)
    seed = int(settings.get("seed", 0))
    study = str(settings.require("study"))
    n_sets = int(settings.get("param_sets", 5))
    cfg = _chain_config(settings)
    if study == "3":
        sweep = run_n0_sweep(replicates=n_sets, cfg=cfg, seed=seed)
        lines = ["n0,param,mode,ase,cr"]
        for cell in sweep.table:
            lines.append(f"{_fmt(cell.n0)},{cell.param},{cell.mode},"
                         f"{_fmt(cell.ase)},{_fmt(cell.cr)}")
        atomic_write_text(os.path.join(out, "sweep.csv"),
                          "\n".join(lines) + "\n")
        _bundle_meta(out, "benchmark", settings, {"study": study})
        return EXIT_OK
    datasets = run_simulation_study(study, n_sets, seed,
                                    n_trajectories=int(settings.get("n", 5)),
                                    n0=int(settings.get("n0", 1000)))
    rows = []
    for ds in datasets:
        result = run_chains(ds.data, ModelVariant.FULL, cfg)
        rows.append(BenchRow.from_summary(ds.params, result.summary))
    scores = evaluate_ase_cr(rows)
    lines = ["param,ase,cr"]
    for name, (ase, cr) in scores.items():
        lines.append(f"{name},{_fmt(ase)},{_fmt(cr)}")
    atomic_write_text(os.path.join(out, "ase_cr.csv"),
                      "\n".join(lines) + "\n")
    _bundle_meta(out, "benchmark", settings, {"study": study})
    return EXIT_OK


def cmd_dynamics(settings: Settings) -> int:
    out = _out_dir(settings)
    params = ModelParams(alpha=float(settings.require("alpha")),
                         beta=float(settings.require("beta")),
                         lambda1=float(settings.require("lambda1")),
                         lambda2=float(settings.require("lambda2")))
    t_end = float(settings.get("t_end", 24.0))
    step = float(settings.get("step", 2.0 / 3.0))
    grid = np.arange(0.0, t_end + 1e-9, step)
    path = rk4_solve(params, float(settings.get("mu0", 0.5)),
                     float(settings.get("v0", 0.0)),
                     float(settings.get("n0", 1000.0)), grid)
    lines = ["time,mu,sigma2,nt"]
    for i in range(len(path)):
        lines.append(f"{_fmt(path.times[i])},{_fmt(path.mu[i])},"
                     f"{_fmt(path.sigma2[i])},{_fmt(path.nt[i])}")
    atomic_write_text(os.path.join(out, "dynamics.csv"),
                      "\n".join(lines) + "\n")
    _bundle_meta(out, "dynamics", settings)
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "infer": cmd_infer,
    "select": cmd_select,
    "benchmark": cmd_benchmark,
    "dynamics": cmd_dynamics,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = Settings(args)
        return _COMMANDS[args.command](settings)
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
