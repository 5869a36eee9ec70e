"""Command-line front end: the full pipeline as subcommands of one executable.

Every subcommand resolves its settings from three layers, later layers
winning key by key: built-in defaults, then a flat JSON config object given
with --config, then explicit flags.  The resolved configuration is
canonicalized (sorted-key compact JSON), hashed, and echoed as `#` header
comments into every file the run writes, so each artifact names the exact
run that produced it and the run can be repeated from the artifact alone.

Model and hyperparameter settings accept a preset name everywhere; the
config file may instead hold an explicit field object (the structural flags
of the model, or the prior moments).  The echoed config always carries the
expanded fields.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure,
4 convergence gate failure (only with --require-converged).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import re
import sys

import numpy as np

from . import __version__, forecast, ingest as ingest_mod, model, sampler, simulate
from .errors import ConvergenceError, DataError, NumericError
from .grid import read_grid_file, read_population, write_grid_file, write_population

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
EXIT_CONVERGENCE = 4


class _UsageError(Exception):
    """Bad invocation or bad config; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # route argparse failures through the exit-code mapping instead of
        # its built-in SystemExit(2)
        raise _UsageError(message)


# ---------------------------------------------------------------------------
# config resolution

@dataclasses.dataclass(frozen=True)
class _Key:
    name: str
    kind: str                 # int | float | str | flag | strlist | month | model | hparams
    default: object = None
    required: bool = False
    help: str = ""


def _load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as e:
        raise _UsageError(f"cannot read config file: {e}") from None
    except json.JSONDecodeError as e:
        raise _UsageError(f"{path}: invalid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise _UsageError(f"{path}: config must be a JSON object")
    return cfg


def _parse_month(v):
    if isinstance(v, (list, tuple)) and len(v) == 2:
        y, m = v
        if isinstance(y, int) and isinstance(m, int) and 1 <= m <= 12:
            return (y, m)
    if isinstance(v, str):
        hit = re.fullmatch(r"(\d{4})-(\d{1,2})", v)
        if hit and 1 <= int(hit.group(2)) <= 12:
            return (int(hit.group(1)), int(hit.group(2)))
    raise _UsageError(f"bad month {v!r}; expected YYYY-MM")


def _coerce(key: _Key, v):
    k = key.kind
    if k == "int":
        if isinstance(v, bool) or not isinstance(v, int):
            raise _UsageError(f"{key.name} must be an integer, got {v!r}")
        return v
    if k == "float":
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise _UsageError(f"{key.name} must be a number, got {v!r}")
        return float(v)
    if k == "flag":
        if not isinstance(v, bool):
            raise _UsageError(f"{key.name} must be true or false, got {v!r}")
        return v
    if k == "str":
        if not isinstance(v, str):
            raise _UsageError(f"{key.name} must be a string, got {v!r}")
        return v
    if k == "strlist":
        if isinstance(v, str):
            v = [p.strip() for p in v.split(",") if p.strip()]
        if not isinstance(v, list) or not all(isinstance(p, str) for p in v):
            raise _UsageError(f"{key.name} must be a list of names, got {v!r}")
        return v
    if k == "month":
        return _parse_month(v)
    if k in ("model", "hparams"):
        if not isinstance(v, (str, dict)):
            raise _UsageError(
                f"{key.name} must be a preset name or a field object, got {v!r}")
        return v
    raise AssertionError(f"unhandled key kind {k!r}")


def _resolve_config(args: argparse.Namespace, keys: list) -> dict:
    cfg = {k.name: k.default for k in keys if k.default is not None}
    known = {k.name for k in keys}
    if getattr(args, "config", None):
        file_cfg = _load_config_file(args.config)
        unknown = sorted(set(file_cfg) - known)
        if unknown:
            raise _UsageError(f"unknown config keys: {', '.join(unknown)} "
                              f"(known: {', '.join(sorted(known))})")
        cfg.update(file_cfg)
    for k in keys:
        v = getattr(args, k.name, None)
        if v is not None:
            cfg[k.name] = v
    missing = [k.name for k in keys if k.required and k.name not in cfg]
    if missing:
        raise _UsageError("missing required settings: " + ", ".join(missing))
    return {k.name: _coerce(k, cfg[k.name]) for k in keys if k.name in cfg}


def _resolve_model(value) -> model.ModelSpec:
    if isinstance(value, str):
        try:
            return model.model_preset(value)
        except ValueError as e:
            raise _UsageError(str(e)) from None
    try:
        return model.ModelSpec(**value)
    except TypeError as e:
        raise _UsageError(f"bad model object: {e}") from None


def _resolve_hyperparams(value) -> model.Hyperparams:
    if isinstance(value, str):
        try:
            return model.hyperparam_preset(value)
        except ValueError as e:
            raise _UsageError(str(e)) from None
    try:
        return model.Hyperparams(**value)
    except (TypeError, ValueError) as e:
        raise _UsageError(f"bad hyperparameter object: {e}") from None


# ---------------------------------------------------------------------------
# provenance headers

def _provenance(cfg: dict, seed) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(blob.encode()).hexdigest()[:12]
    return (f"# epigrid v{__version__} config={digest} seed={seed}\n"
            f"# config: {blob}\n")


def _stamp(path, header: str) -> None:
    """Prepend the provenance comment block to a file just written."""
    with open(path) as fh:
        body = fh.read()
    with open(path, "w") as fh:
        fh.write(header)
        fh.write(body)


# ---------------------------------------------------------------------------
# subcommands

_SCENARIOS = {"scenario1": simulate.scenario1, "scenario2": simulate.scenario2}


def _cmd_simulate(cfg: dict) -> int:
    name = cfg["preset"]
    if name not in _SCENARIOS:
        raise _UsageError(f"unknown scenario preset {name!r}; "
                          f"choose from {sorted(_SCENARIOS)}")
    try:
        sim_cfg = _SCENARIOS[name](T=cfg["T"])
        res = simulate.simulate(sim_cfg, seed=cfg["seed"])
    except ValueError as e:
        raise _UsageError(str(e)) from None
    out = cfg["out_dir"]
    os.makedirs(out, exist_ok=True)
    header = _provenance(cfg, cfg["seed"])
    paths = [os.path.join(out, n) for n in ("grid.txt", "counts.csv", "truth.csv")]
    write_grid_file(sim_cfg.grid, paths[0])
    model.write_counts(res.obs, paths[1])
    simulate.write_truth(res, paths[2])
    for p in paths:
        _stamp(p, header)
    print(f"simulate {name}: seed={cfg['seed']} T={sim_cfg.T} "
          f"S={sim_cfg.grid.n_cells} total-count={int(res.obs.counts.sum())}")
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


_DEFAULT_SAMPLE_PARAMS = ["delta", "zeta", "nu1", "nu2", "sigma2", "phi"]


def _cmd_fit(cfg: dict) -> int:
    spec = _resolve_model(cfg["model"])
    hp = _resolve_hyperparams(cfg["hyperparams"])
    model_label = cfg["model"] if isinstance(cfg["model"], str) else "custom"
    cfg["model"] = dataclasses.asdict(spec)
    cfg["hyperparams"] = dataclasses.asdict(hp)

    g = read_grid_file(cfg["grid"])
    obs = model.read_counts(cfg["counts"], g.n_cells)
    pop = None
    if "population" in cfg:
        pop = read_population(cfg["population"], g.n_cells)
    elif spec.population_adjusted:
        raise _UsageError("model is population-adjusted; --population is required")

    threads = cfg["threads"] if "threads" in cfg else cfg["chains"]
    cfg["threads"] = threads
    try:
        run = sampler.SamplerConfig(
            n_iter=cfg["iters"], n_burnin=cfg["burnin"], n_chains=cfg["chains"],
            thin=cfg["thin"], seed=cfg["seed"], adapt_window=cfg["adapt_window"],
            n_threads=threads)
    except ValueError as e:
        raise _UsageError(str(e)) from None

    try:
        ps = sampler.fit(obs, g, spec, hp, run, population=pop)
    except ValueError as e:
        # inconsistent file contents (cell-count mismatch, T too short, ...)
        raise DataError(str(e)) from None
    rows = ps.summary()

    out = cfg["out_dir"]
    os.makedirs(out, exist_ok=True)
    header = _provenance(cfg, cfg["seed"])
    summary_path = os.path.join(out, "summary.csv")
    samples_path = os.path.join(out, "samples.csv")
    sampler.write_summary(rows, summary_path)
    params = cfg["samples_params"]
    sampler.write_samples(ps, samples_path,
                          params=None if params == ["all"] else params)
    _stamp(summary_path, header)
    _stamp(samples_path, header)

    n_kept = len(ps.kept_iters)
    print(f"fit {model_label}: chains={cfg['chains']} iters={cfg['iters']} "
          f"burnin={cfg['burnin']} kept={n_kept}/chain seed={cfg['seed']} "
          f"max-rhat={ps.max_rhat():.6g}")
    print(f"wrote {summary_path}")
    print(f"wrote {samples_path}")
    if cfg["require_converged"]:
        sampler.check_convergence(ps, threshold=cfg["rhat_threshold"])
    return EXIT_OK


def _cmd_predict(cfg: dict) -> int:
    spec = _resolve_model(cfg["model"])
    cfg["model"] = dataclasses.asdict(spec)
    g = read_grid_file(cfg["grid"])
    rows = sampler.read_summary(cfg["summary"])
    T = max((int(r["index"].split("-")[0])
             for r in rows if r["param"] == "u"), default=0)
    if T == 0:
        raise DataError(f"{cfg['summary']}: no latent-state rows; "
                        "cannot infer the fitted horizon")
    pop = None
    if "population" in cfg:
        pop = read_population(cfg["population"], g.n_cells)
    elif spec.population_adjusted:
        raise _UsageError("model is population-adjusted; --population is required")
    state = forecast.state_from_summary(rows, spec, T, g.n_cells)
    u_next = forecast.forecast_latent(state, g, spec)
    lam = forecast.intensity(u_next, spec, pop)
    forecast.write_prediction(cfg["out"], u_next, lam)
    _stamp(cfg["out"], _provenance(cfg, 0))
    print(f"predict: fitted T={T}, forecast step {T + 1}, S={g.n_cells}, "
          f"total expected count {lam.sum():.6g}")
    print(f"wrote {cfg['out']}")
    return EXIT_OK


def _cmd_evaluate(cfg: dict) -> int:
    g = read_grid_file(cfg["grid"])
    _, lam = forecast.read_prediction(cfg["prediction"])
    if lam.shape[0] != g.n_cells:
        raise DataError(f"{cfg['prediction']}: {lam.shape[0]} cells, "
                        f"grid has {g.n_cells}")
    obs = model.read_counts(cfg["counts"], g.n_cells)
    t = cfg.get("t", obs.T)
    if not 1 <= t <= obs.T:
        raise _UsageError(f"t must be in 1..{obs.T}, got {t}")
    observed = obs.counts[t - 1].astype(float)
    mask = obs.mask[t - 1]
    if "out" in cfg:
        mse = forecast.write_difference(cfg["out"], lam, observed, mask)
        _stamp(cfg["out"], _provenance(cfg, 0))
        print(f"wrote {cfg['out']}")
    else:
        mse = forecast.evaluate(lam, observed, mask)["mse"]
    print(f"evaluate: t={t} cells={int(mask.sum())} MSE {mse:.6g}")
    return EXIT_OK


def _cmd_ingest(cfg: dict) -> int:
    if ("start" in cfg) != ("end" in cfg):
        raise _UsageError("start and end must be given together")
    obs, pop, months, report = ingest_mod.ingest(
        cfg["cases"], cfg["centroids"], cfg["cells"],
        start=cfg.get("start"), end=cfg.get("end"))
    out = cfg["out_dir"]
    os.makedirs(out, exist_ok=True)
    header = _provenance(cfg, 0)
    counts_path = os.path.join(out, "counts.csv")
    pop_path = os.path.join(out, "population.csv")
    model.write_counts(obs, counts_path)
    write_population(pop, pop_path)
    _stamp(counts_path, header)
    _stamp(pop_path, header)
    first, last = months[0], months[-1]
    print(f"ingest: {obs.T} months ({first[0]}-{first[1]:02d} .. "
          f"{last[0]}-{last[1]:02d}), {obs.S} cells")
    print(report.summary())
    print(f"wrote {counts_path}")
    print(f"wrote {pop_path}")
    return EXIT_OK


def _cmd_diagnose(cfg: dict) -> int:
    chains = sampler.read_samples(cfg["samples"])
    if not chains:
        raise DataError(f"{cfg['samples']}: no sample rows")
    lines = ["param,index,rhat,ess"]
    rhats = []
    n_chains = 0
    for (name, label), x in chains.items():
        r = sampler.rhat(x)
        e = sampler.ess(x)
        if not np.isnan(r):
            rhats.append(r)
        n_chains = x.shape[0]
        lines.append(f"{name},{label},{float(r)!r},{float(e)!r}")
    for ln in lines:
        print(ln)
    if "out" in cfg:
        with open(cfg["out"], "w") as fh:
            fh.write("\n".join(lines) + "\n")
        _stamp(cfg["out"], _provenance(cfg, 0))
        print(f"wrote {cfg['out']}")
    worst = max(rhats) if rhats else float("nan")
    print(f"diagnose: {len(chains)} parameters, {n_chains} chains, "
          f"max-rhat={worst:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# wiring

_COMMANDS = {
    "simulate": (_cmd_simulate, "generate a synthetic dataset from a scenario preset", [
        _Key("preset", "str", required=True,
             help="scenario preset: scenario1 | scenario2"),
        _Key("T", "int", default=24, help="number of observed steps"),
        _Key("seed", "int", default=0, help="RNG seed"),
        _Key("out_dir", "str", required=True,
             help="directory for grid.txt, counts.csv, truth.csv"),
    ]),
    "fit": (_cmd_fit, "run the MCMC sampler on a counts file", [
        _Key("counts", "str", required=True, help="counts CSV (t,cell,count)"),
        _Key("grid", "str", required=True, help="grid geometry file"),
        _Key("model", "model", required=True,
             help="model preset (wikle|m1|m2|m3|m4|m5); config files may "
                  "give structural flags instead"),
        _Key("hyperparams", "hparams", default="sim",
             help="prior preset (sim|set1|set2|set3) or field object"),
        _Key("population", "str",
             help="population CSV (needed by population-adjusted models)"),
        _Key("chains", "int", default=3, help="number of chains"),
        _Key("iters", "int", default=4000, help="iterations per chain"),
        _Key("burnin", "int", default=2000, help="burn-in iterations"),
        _Key("thin", "int", default=1, help="keep every thin-th draw"),
        _Key("seed", "int", default=0, help="RNG seed"),
        _Key("threads", "int", help="worker threads (default: one per chain)"),
        _Key("adapt_window", "int", default=50,
             help="proposal adaptation window during burn-in"),
        _Key("samples_params", "strlist", default=_DEFAULT_SAMPLE_PARAMS,
             help="blocks to dump to samples.csv (comma-separated; "
                  "'all' includes the latent field)"),
        _Key("require_converged", "flag", default=False,
             help="exit 4 unless all split-chain R-hat < rhat-threshold"),
        _Key("rhat_threshold", "float", default=1.1,
             help="gate for --require-converged"),
        _Key("out_dir", "str", required=True,
             help="directory for summary.csv and samples.csv"),
    ]),
    "predict": (_cmd_predict, "one-step-ahead forecast from a fit summary", [
        _Key("summary", "str", required=True, help="summary.csv from fit"),
        _Key("grid", "str", required=True, help="grid geometry file"),
        _Key("model", "model", required=True,
             help="model preset the summary was fitted with"),
        _Key("population", "str",
             help="population CSV (needed by population-adjusted models)"),
        _Key("out", "str", required=True,
             help="prediction file (cell,pred_log,pred_count)"),
    ]),
    "evaluate": (_cmd_evaluate, "compare a prediction file against observed counts", [
        _Key("prediction", "str", required=True, help="prediction file from predict"),
        _Key("counts", "str", required=True, help="observed counts CSV"),
        _Key("grid", "str", required=True, help="grid geometry file"),
        _Key("t", "int", help="time row to compare against (default: last)"),
        _Key("out", "str", help="difference file (cell,predicted,observed,diff)"),
    ]),
    "ingest": (_cmd_ingest, "aggregate county case records into gridded counts", [
        _Key("cases", "str", required=True,
             help="cumulative case CSV (date,county,state,fips,cases,deaths)"),
        _Key("centroids", "str", required=True,
             help="centroid CSV (fips,lon,lat,population)"),
        _Key("cells", "str", required=True,
             help="cell rectangle CSV (cell_id,xmin,ymin,xmax,ymax)"),
        _Key("start", "month", help="first month, YYYY-MM (default: from data)"),
        _Key("end", "month", help="last month, YYYY-MM"),
        _Key("out_dir", "str", required=True,
             help="directory for counts.csv and population.csv"),
    ]),
    "diagnose": (_cmd_diagnose, "recompute R-hat and ESS from a samples file", [
        _Key("samples", "str", required=True, help="samples.csv from fit"),
        _Key("out", "str", help="write the table here as well as stdout"),
    ]),
}


def _build_parser() -> _Parser:
    p = _Parser(prog="epigrid",
                description="gridded epidemic count modeling pipeline")
    p.add_argument("--version", action="version",
                   version=f"epigrid {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command")
    for name, (func, help_text, keys) in _COMMANDS.items():
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config",
                        help="JSON config file; flags override its keys")
        for k in keys:
            flag = "--" + k.name.replace("_", "-")
            if k.kind == "flag":
                sp.add_argument(flag, dest=k.name, action="store_const",
                                const=True, default=None, help=k.help)
            elif k.kind == "int":
                sp.add_argument(flag, dest=k.name, type=int, default=None,
                                help=k.help)
            elif k.kind == "float":
                sp.add_argument(flag, dest=k.name, type=float, default=None,
                                help=k.help)
            else:
                sp.add_argument(flag, dest=k.name, default=None, help=k.help)
        sp.set_defaults(_func=func, _keys=keys)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        func = getattr(args, "_func", None)
        if func is None:
            parser.print_usage(sys.stderr)
            print("epigrid: error: a command is required", file=sys.stderr)
            return EXIT_USAGE
        cfg = _resolve_config(args, args._keys)
        return func(cfg)
    except _UsageError as e:
        print(f"epigrid: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as e:
        print(f"epigrid: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"epigrid: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConvergenceError as e:
        print(f"epigrid: convergence gate: {e}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
