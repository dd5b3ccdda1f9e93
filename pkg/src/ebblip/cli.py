"""Command-line entry point: ``ebblip <command> [--config FILE] [--key value ...]``.

Every setting can come from a YAML/JSON config document or from a flag with
the same dotted name (``--bootstrap.max_epochs 10``); flags win. Exit codes:
0 success, 2 degenerate prior, 3 configuration error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
from pathlib import Path

import numpy as np
import yaml
from scipy import stats

from .bandit import EBConfig, RegretBoundParams, regret_bound, regret_constants
from .features import BIAS, FIRST_ORDER, SECOND_ORDER, FeatureSchema
from .harness import (
    COLUMNS,
    MetricsSeries,
    ScenarioSpec,
    export_metrics,
    paired_sign_test,
    run_bandit_ab,
    run_scenarios,
    run_tau_sweep,
)
from .lasso import LassoConfig
from .meta_prior import BootstrapConfig, DegeneratePriorError, bootstrap_until_viable
from .simulate import (
    SYNTHETIC_CARDINALITIES,
    DatasetStream,
    EnvironmentSpec,
    default_synthetic_schema,
    generate_environment,
    generate_supervised_stream,
    ingest_csv,
)

EXIT_OK, EXIT_DEGENERATE, EXIT_CONFIG, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _list(cast):
    def parse(v):
        if isinstance(v, str):
            v = [p for p in re.split(r"[,\s]+", v.strip()) if p]
        elif not isinstance(v, (list, tuple)):
            v = [v]
        return [cast(x) for x in v]
    return parse


def _pairs(v):
    """``"5,5;0.1,0.1"`` or ``[[5, 5], [0.1, 0.1]]`` -> list of float pairs."""
    if isinstance(v, str):
        v = [p.split(",") for p in v.split(";") if p.strip()]
    out = [tuple(float(x) for x in p) for p in v]
    if any(len(p) != 2 for p in out):
        raise ValueError("each override needs two values (tau1_sq, tau2_sq)")
    return out


# dotted key -> parser; the first block is the documented document layout
KEYS = {
    "scenario": str,
    "reset_batch": int,
    "bootstrap.epoch_size": int,
    "bootstrap.max_epochs": int,
    "bootstrap.resample": _bool,
    "bootstrap.seed": int,
    "bootstrap.min_tau_sq": float,
    "lasso.lambda_grid": _list(float),
    "lasso.cv_folds": int,
    "lasso.gamma": float,
    "lasso.ridge_penalty": float,
    "protect": _list(str),
    "prior_override.tau1_sq": float,
    "prior_override.tau2_sq": float,
    "env.tau1_sq": float,
    "env.tau2_sq": float,
    "env.nu1": float,
    "env.nu2": float,
    "env.widgets": int,
    "env.variations": _list(int),
    "bandit.T": int,
    "bandit.random_phase": int,
    "bandit.batch_size": int,
    "output.path": str,
    "output.format": str,
    # data sources and run sizes
    "data.path": str,
    "data.schema": str,
    "data.label_column": str,
    "data.positive_label": str,
    "data.interaction_mode": str,
    "data.test_path": str,
    "data.n_batches": int,
    "stream.cardinalities": _list(int),
    "stream.n_per_batch": int,
    "stream.n_batches": int,
    "stream.n_test": int,
    "sweep.overrides": _pairs,
    "seeds": int,
    "n_jobs": int,
    "bandit.baseline": float,
    "regret.d": int,
    "regret.T": int,
    "regret.S": float,
    "regret.R": float,
    "regret.lam": float,
    "regret.delta": float,
    "regret.k_phi": float,
    "regret.c_phi": float,
    "regret.tau_min": float,
    "regret.tau_max": float,
}

COMMANDS = {
    "estimate-prior": ("Bootstrap-train on the first batches and print the estimated meta-prior.",
                       True, ["reset_batch", "bootstrap.", "env.", "data.", "stream.",
                              "output."]),
    "run-scenario": ("Run blip, blip_bayes, blip_twice (or all) and export per-batch log loss.",
                     True, ["scenario", "reset_batch", "bootstrap.", "lasso.", "protect",
                            "prior_override.", "env.", "data.", "stream.", "output."]),
    "tau-sweep": ("Run blip_bayes under several prior-variance overrides.",
                  True, ["reset_batch", "bootstrap.", "lasso.", "protect", "env.", "data.",
                         "stream.", "sweep.", "output."]),
    "bandit-ab": ("Paired standard vs. empirical-Bayes layout bandit simulations.",
                  True, ["env.", "bandit.", "bootstrap.", "seeds", "n_jobs", "output."]),
    "ingest": ("Convert a categorical CSV into a batched stream plus its feature schema.",
               False, ["data.", "output."]),
    "regret-bound": ("Evaluate the high-probability cumulative regret bound.",
                     False, ["regret."]),
}


def _flatten(doc, prefix=""):
    out = {}
    for k, v in doc.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            if not v:
                out[key] = {}
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_config(path) -> dict:
    """Read a YAML or JSON document into a flat ``{dotted.key: value}`` map."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a mapping at the top level")
    return _flatten(doc)


def _wanted(key, prefixes):
    return any(key == p or (p.endswith(".") and key.startswith(p)) for p in prefixes)


def resolve(command: str, doc: dict, flags: dict) -> dict:
    """Merge document and flag values for ``command``, parsing and checking every key."""
    prefixes = COMMANDS[command][2]
    cfg = {}
    for source in (doc, flags):
        for key, raw in source.items():
            if raw is None:
                continue
            if key not in KEYS:
                if raw == {} and key + "." in prefixes:
                    cfg[key] = {}
                    continue
                raise ConfigError(f"unknown config key {key!r}")
            if not _wanted(key, prefixes):
                raise ConfigError(f"key {key!r} does not apply to {command}")
            try:
                cfg[key] = KEYS[key](raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from None
    return cfg


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ebblip", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (help_, stochastic, prefixes) in COMMANDS.items():
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", help="YAML or JSON config document")
        p.add_argument("--seed", type=int, required=stochastic,
                       help="master seed" + (" (required)" if stochastic else ""))
        for key in KEYS:
            if _wanted(key, prefixes):
                p.add_argument(f"--{key}", dest=key, default=None, metavar="VALUE")
    return parser


# --- helpers shared by the commands ---------------------------------------


def _bootstrap_config(cfg, seed) -> BootstrapConfig:
    kw = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("bootstrap.")}
    kw.setdefault("seed", seed)
    return BootstrapConfig(**kw)


def _lasso_config(cfg, seed) -> LassoConfig | None:
    keys = {k: v for k, v in cfg.items() if k == "lasso" or k.startswith("lasso.")}
    if not keys:
        return None
    kw = {k.split(".", 1)[1]: v for k, v in keys.items() if "." in k}
    if "lambda_grid" in kw:
        kw["lambda_grid"] = tuple(kw["lambda_grid"])
    return LassoConfig(seed=seed, **kw)


def _tau_nu(cfg, default_tau):
    tau = {FIRST_ORDER: cfg.get("env.tau1_sq", default_tau[0]),
           SECOND_ORDER: cfg.get("env.tau2_sq", default_tau[1])}
    nu = {FIRST_ORDER: cfg.get("env.nu1", 0.0), SECOND_ORDER: cfg.get("env.nu2", 0.0)}
    return tau, nu


def _stream(cfg, seed) -> DatasetStream:
    """The dataset: a stream written by ``ingest``, a CSV, or a synthetic stream."""
    path = cfg.get("data.path")
    if path is not None:
        if path.endswith(".jsonl"):
            schema_path = cfg.get("data.schema") or _schema_path(path)
            schema = FeatureSchema.from_json(Path(schema_path).read_text(encoding="utf-8"))
            return DatasetStream.from_jsonl(path, schema)
        if "data.label_column" not in cfg or "data.positive_label" not in cfg:
            raise ConfigError("a CSV data.path needs data.label_column and data.positive_label")
        stream, _ = ingest_csv(path, cfg["data.label_column"], cfg["data.positive_label"],
                               cfg.get("data.interaction_mode", "all_pairs"),
                               n_batches=cfg.get("data.n_batches", 6),
                               test_path=cfg.get("data.test_path"))
        return stream
    schema = default_synthetic_schema(cfg.get("stream.cardinalities", SYNTHETIC_CARDINALITIES))
    tau, nu = _tau_nu(cfg, (0.85, 0.24))
    env = generate_environment(EnvironmentSpec(schema, tau, nu, seed=seed))
    return generate_supervised_stream(env, cfg.get("stream.n_per_batch", 5000),
                                      cfg.get("stream.n_batches", 6), seed,
                                      n_test=cfg.get("stream.n_test", 10_000))


def _schema_path(stream_path) -> str:
    p = Path(stream_path)
    return str(p.with_name(p.stem + ".schema.json"))


def _output(cfg):
    fmt = cfg.get("output.format", "csv")
    if fmt == "json-lines":
        fmt = "jsonl"
    if fmt not in ("csv", "jsonl"):
        raise ConfigError(f"output.format must be csv or jsonl, not {fmt!r}")
    return cfg.get("output.path"), fmt


def _label(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "_", name).strip("_")


def _write_series(series: dict[str, MetricsSeries], cfg) -> list[Path]:
    """One file per series; with several, ``stem_label.ext`` next to ``output.path``."""
    path, fmt = _output(cfg)
    ext = ".csv" if fmt == "csv" else ".jsonl"
    written = []
    if path is None:
        for name, s in series.items():
            print(f"# {name}")
            _print_series(s)
        return written
    path = Path(path)
    for name, s in series.items():
        target = path if len(series) == 1 else path.with_name(
            f"{path.stem}_{_label(name)}{path.suffix or ext}")
        written.append(export_metrics(s, target, fmt))
    return written


def _print_series(s: MetricsSeries):
    print(",".join(COLUMNS))
    for r in s.rows:
        print(",".join("nan" if math.isnan(v) else format(v, ".10g")
                       for v in (float(getattr(r, c)) for c in COLUMNS)))


def _scenario_spec(cfg, seed, scenario="blip_bayes") -> ScenarioSpec:
    override = None
    if "prior_override.tau1_sq" in cfg or "prior_override.tau2_sq" in cfg:
        try:
            override = (cfg["prior_override.tau1_sq"], cfg["prior_override.tau2_sq"])
        except KeyError as exc:
            raise ConfigError(f"prior_override needs both tau1_sq and tau2_sq ({exc})") from None
    protect = tuple(cfg.get("protect", (BIAS, FIRST_ORDER)))
    bad = set(protect) - {BIAS, FIRST_ORDER, SECOND_ORDER}
    if bad:
        raise ConfigError(f"unknown categories in protect: {sorted(bad)}")
    return ScenarioSpec(scenario=scenario, reset_batch=cfg.get("reset_batch", 1),
                        bootstrap=_bootstrap_config(cfg, seed), lasso=_lasso_config(cfg, seed),
                        protect=protect, prior_override=override)


def _report(msg: str):
    print(msg, file=sys.stderr)


# --- commands ---------------------------------------------------------------


def cmd_estimate_prior(cfg, seed):
    stream = _stream(cfg, seed)
    t = cfg.get("reset_batch", 1)
    if not 1 <= t <= stream.n_batches:
        raise ConfigError(f"reset_batch must be in 1..{stream.n_batches}")
    data = stream.upto(t)
    res = bootstrap_until_viable(stream.schema.categories, data.X, data.y,
                                 _bootstrap_config(cfg, seed))
    doc = {"epochs_used": res.epochs_used, "n_examples": len(data),
           "estimates": {k: {"nu_hat": e.nu_hat, "tau_sq_hat": e.tau_sq_hat,
                             "n_features": e.n_features, "degenerate": e.degenerate}
                         for k, e in res.estimates.items()}}
    text = json.dumps(doc, indent=2)
    print(text)
    if cfg.get("output.path"):
        _write_text(cfg["output.path"], text + "\n")


def _write_text(path, text):
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def cmd_run_scenario(cfg, seed):
    stream = _stream(cfg, seed)
    which = cfg.get("scenario", "blip_bayes")
    names = ("blip", "blip_bayes", "blip_twice") if which == "all" else (which,)
    spec = _scenario_spec(cfg, seed, names[0])
    if spec.reset_batch > stream.n_batches:
        raise ConfigError(f"reset_batch {spec.reset_batch} exceeds {stream.n_batches} batches")
    out = run_scenarios(spec, stream, names)
    for name, s in out.items():
        ll = s.column("log_loss")
        _report(f"{name}: mean log loss {ll.mean():.6f} over batches "
                f"{s.rows[0].batch}..{s.rows[-1].batch}")
    for p in _write_series(out, cfg):
        _report(f"wrote {p}")


def cmd_tau_sweep(cfg, seed):
    stream = _stream(cfg, seed)
    base = _scenario_spec(cfg, seed)
    overrides = cfg.get("sweep.overrides", [(5.0, 5.0), (0.1, 0.1), (0.01, 0.01)])
    out = run_tau_sweep(base, stream, overrides)
    for name, s in out.items():
        _report(f"{name}: final log loss {s.rows[-1].log_loss:.6f}")
    for p in _write_series(out, cfg):
        _report(f"wrote {p}")


def cmd_bandit_ab(cfg, seed):
    variations = tuple(cfg.get("env.variations", (2, 3, 3, 2)))
    if "env.widgets" in cfg and cfg["env.widgets"] != len(variations):
        if "env.variations" in cfg:
            raise ConfigError(f"env.widgets={cfg['env.widgets']} but env.variations has "
                              f"{len(variations)} entries")
        variations = (2,) * cfg["env.widgets"]
    tau, nu = _tau_nu(cfg, (0.6, 0.2))
    n = cfg.get("seeds", 20)
    if n < 1:
        raise ConfigError("seeds must be >= 1")
    seeds = list(range(seed, seed + n))
    T = cfg.get("bandit.T", 50_000)
    rp = cfg.get("bandit.random_phase", 2000)
    if not 0 <= rp <= T:
        raise ConfigError("need 0 <= bandit.random_phase <= bandit.T")
    eb = EBConfig(bootstrap=_bootstrap_config(cfg, seed))
    res = run_bandit_ab(variations, tau, T, rp, seeds, nu=nu,
                        batch_size=cfg.get("bandit.batch_size", 500), eb=eb,
                        baseline=cfg.get("bandit.baseline", 0.5), n_jobs=cfg.get("n_jobs", 1))
    reg_s, reg_e = res.final("regret")
    suc_s, suc_e = res.final("success")
    pl_s, pl_e = res.plateaus()
    diff = suc_s - suc_e
    summary = {
        "seeds": seeds, "T": T, "random_phase": rp, "variations": list(variations),
        "final_regret": {"standard": reg_s.tolist(), "eb": reg_e.tolist()},
        "median_regret": {"standard": float(np.median(reg_s)), "eb": float(np.median(reg_e))},
        "final_success": {"standard": suc_s.tolist(), "eb": suc_e.tolist()},
        "plateau_round": {"standard": pl_s, "eb": pl_e},
        "tau_hat": [r.tau_hat for r in res.eb],
        "sign_test_p_eb_lower_regret": paired_sign_test(reg_e, reg_s),
        "wilcoxon_p_success": (float(stats.wilcoxon(suc_s, suc_e).pvalue)
                               if np.any(diff != 0) else 1.0),
    }
    series = {}
    for i, s in enumerate(seeds):
        for policy in ("standard", "eb"):
            series[f"{policy}_seed{s}"] = res.series(policy, i)
    _report(f"median cumulative regret: standard {summary['median_regret']['standard']:.2f}, "
            f"eb {summary['median_regret']['eb']:.2f}")
    path, _ = _output(cfg)
    text = json.dumps(summary, indent=2, default=_json_default)
    if path is None:
        print(text)
        return
    for p in _write_series(series, cfg):
        _report(f"wrote {p}")
    p = Path(path)
    _write_text(p.with_name(p.stem + "_summary.json"), text + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(type(o).__name__)


def cmd_ingest(cfg, seed):
    for key in ("data.path", "data.label_column", "data.positive_label", "output.path"):
        if key not in cfg:
            raise ConfigError(f"ingest needs {key}")
    stream, schema = ingest_csv(cfg["data.path"], cfg["data.label_column"],
                                cfg["data.positive_label"],
                                cfg.get("data.interaction_mode", "all_pairs"),
                                n_batches=cfg.get("data.n_batches", 6),
                                test_path=cfg.get("data.test_path"))
    out = cfg["output.path"]
    try:
        stream.to_jsonl(out)
    except OSError as exc:
        raise OSError(f"cannot write {out}: {exc}") from exc
    _write_text(_schema_path(out), schema.to_json() + "\n")
    _report(f"{sum(len(b) for b in stream.batches)} training rows in {stream.n_batches} batches, "
            f"{len(schema.features)} features, {len(schema.interactions)} pairs, "
            f"dimension {schema.dimension}")
    _report(f"wrote {out} and {_schema_path(out)}")


def cmd_regret_bound(cfg, seed):
    kw = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("regret.")}
    missing = {"d", "T", "S"} - set(kw)
    if missing:
        raise ConfigError(f"regret-bound needs {sorted('regret.' + m for m in missing)}")
    params = RegretBoundParams(**kw)
    p, c, c2 = regret_constants(params.tau_min, params.tau_max)
    doc = {"bound": regret_bound(params), "p": p, "c": c, "c_prime": c2,
           "c_phi": params.link_lower_bound, "per_round": regret_bound(params) / params.T}
    print(json.dumps(doc, indent=2))


HANDLERS = {
    "estimate-prior": cmd_estimate_prior,
    "run-scenario": cmd_run_scenario,
    "tau-sweep": cmd_tau_sweep,
    "bandit-ab": cmd_bandit_ab,
    "ingest": cmd_ingest,
    "regret-bound": cmd_regret_bound,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if "." in k or k in KEYS}
    try:
        doc = load_config(args.config) if args.config else {}
        cfg = resolve(args.command, doc, flags)
        if cfg.get("scenario", "blip_bayes") not in ("blip", "blip_bayes", "blip_twice", "all"):
            raise ConfigError(f"unknown scenario {cfg['scenario']!r}")
        HANDLERS[args.command](cfg, args.seed)
    except DegeneratePriorError as exc:
        _report(f"degenerate prior: {exc}")
        for k, e in (exc.estimates or {}).items():
            _report(f"  {k}: tau_sq_hat={e.tau_sq_hat:.6g} n_features={e.n_features}")
        return EXIT_DEGENERATE
    except OSError as exc:
        _report(f"I/O error: {exc}")
        return EXIT_IO
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        _report(f"configuration error: {exc}")
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
