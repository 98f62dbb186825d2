"""Command-line interface: ``mempate fit`` and ``mempate simulate``.

Options come from a ``--config`` file (see :mod:`mempate.config`);
command-line flags override it.  Every run writes a manifest holding the
fully resolved configuration, the seed and library versions.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .data import Schema, load_dataset
from .errors import ConfigError, MemError, MemPateError
from .mem import ModelPrior, build_mem_space, no_borrow_space
from .models import BartModel, BLMModel, EstimandSpec
from .pate import pate_posterior, summarize
from .sim import ScenarioConfig, delta_grid, run_monte_carlo

log = logging.getLogger("mempate")

FLOAT = "{:.17g}"

_BART_TYPES = {"m": int, "n_burn": int, "n_cuts": int, "max_depth": int, "nu": float, "k": float,
               "q": float, "alpha": float, "beta_depth": float, "gamma": float, "tau2": float,
               "lam": float, "gamma_rule": str, "node_prior": str, "change_moves": "bool"}


def _fmt(x: float) -> str:
    return FLOAT.format(float(x))


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected true/false, got {text!r}")


def _build_model(kind: str, opts: cfgmod.Options):
    if kind == "blm":
        return BLMModel(formula=opts.list("blm.formula"),
                        include_compliance=opts.bool("blm.include_compliance", False),
                        hyper_source=opts.str("blm.hyper_source", "block"))
    if kind == "bart":
        section = {k: v for k, v in opts.section("bart").items()
                   if k not in ("n_prior_draws", "include_compliance")}
        overrides = {}
        for key, text in section.items():
            conv = _BART_TYPES.get(key)
            if conv is None:
                raise ConfigError(f"unknown option 'bart.{key}'")
            try:
                overrides[key] = _bool(text) if conv == "bool" else conv(text)
            except ValueError:
                raise ConfigError(f"option 'bart.{key}' has invalid value {text!r}") from None
        return BartModel(overrides=overrides, n_prior_draws=opts.int("bart.n_prior_draws", 100),
                         include_compliance=opts.bool("bart.include_compliance", False))
    raise ConfigError(f"unknown model {kind!r} (expected 'blm' or 'bart')")


def _schema(opts: cfgmod.Options) -> Schema:
    covs = opts.list("schema.covariates")
    if covs is None:
        raise ConfigError("missing required option 'schema.covariates'")
    supp = opts.list("schema.supplemental")
    return Schema(outcome=opts.str("schema.outcome"), treatment=opts.str("schema.treatment"),
                  source=opts.str("schema.source"), primary=opts.str("schema.primary"),
                  covariates=tuple(covs), compliance=opts.opt_str("schema.compliance"),
                  supplemental=None if supp is None else tuple(supp))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def run_fit(opts: cfgmod.Options, out: Path) -> list[str]:
    data = load_dataset(opts.str("data.path"), _schema(opts), delimiter=opts.str("data.delimiter", ","),
                        strict=opts.bool("data.strict", True))
    if data.n_dropped:
        log.warning("lenient mode: dropped %d incomplete rows", data.n_dropped)
    model = _build_model(opts.str("model", "blm"), opts)
    seed = opts.int("seed")
    threads = opts.int("threads", 1)
    B = opts.int("B", 1000)
    if B < 1:
        raise ConfigError("B must be >= 1")
    spec = EstimandSpec(opts.str("estimand.compliance", "none"))
    if opts.bool("borrow", True):
        r = opts.int("prior.r", model.predictor_count(data))
        prior = ModelPrior(opts.str("prior", "flat-half"), r)
        space = build_mem_space(data, model, prior, seed=seed, threads=threads)
    else:
        opts.str("prior", "flat-half")
        space = no_borrow_space(data)
    post = pate_posterior(data, model, space, B, np.random.default_rng([seed, 1]), spec, threads=threads)

    rows = []
    for q, z in enumerate(space.patterns):
        rows.append([q + 1, *("Yes" if v else "No" for v in z.z), _fmt(space.prior_probs[q]),
                     _fmt(space.log_marginals[q]), _fmt(space.weights[q]), int(post.mem_allocation[q])])
    _write_csv(out / "mem_weights.csv",
               ["mem", *data.supplemental, "prior", "log_marginal", "omega", "draws"], rows)
    summary_rows = [["mean", "sd", "lower", "upper", "mass", "B"]]
    if post.B >= 2:
        s = summarize(post)
        summary_rows.append([_fmt(s.mean), _fmt(s.sd), _fmt(s.lower), _fmt(s.upper), _fmt(s.mass), post.B])
    else:
        summary_rows.append([_fmt(post.draws.mean()), "", "", "", "", post.B])
    _write_csv(out / "pate_summary.csv", summary_rows[0], summary_rows[1:])
    _write_csv(out / "pate_draws.csv", ["pate"], [[_fmt(d)] for d in post.draws])
    return ["mem_weights.csv", "pate_summary.csv", "pate_draws.csv"]


def run_simulate(opts: cfgmod.Options, out: Path) -> list[str]:
    scenario = ScenarioConfig(scenario=opts.int("sim.scenario", 1),
                              n_primary=opts.int("sim.n_primary", 100),
                              n_supplemental=opts.int("sim.n_supplemental", 100))
    deltas = opts.list("sim.deltas")
    if deltas is not None:
        try:
            deltas = [float(d) for d in deltas]
        except ValueError:
            raise ConfigError("sim.deltas must be a list of numbers") from None
    else:
        deltas = list(delta_grid(opts.int("sim.part", 1)))
    kind = opts.str("model", "blm")
    prior = ModelPrior(opts.str("prior", "flat-half")).kind
    estimators = opts.list("sim.estimators")
    if estimators is None:
        estimators = [f"nb-{kind}"] + ([] if not opts.bool("borrow", True) else [f"{kind}:{prior}"])
    model_options = {}
    for k in ("blm", "bart"):
        m = _build_model(k, opts)
        model_options[k] = ({"formula": m.formula, "include_compliance": m.include_compliance,
                             "hyper_source": m.hyper_source} if k == "blm" else
                            {"overrides": m.overrides, "n_prior_draws": m.n_prior_draws,
                             "include_compliance": m.include_compliance})
    result = run_monte_carlo(scenario, estimators, opts.int("sim.reps", 100), B=opts.int("B", 100),
                             seed=opts.int("seed"), deltas=deltas, threads=opts.int("threads", 1),
                             model_options=model_options)
    result.to_csv(out / "mc_results.csv")
    return ["mc_results.csv"]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="master seed (generated and recorded if omitted)")
    common.add_argument("--threads", type=int, help="worker threads (1 = canonical order)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--model", choices=("blm", "bart"))
    common.add_argument("--prior", choices=("half", "flat-half", "power-r", "inverse-r", "power-half-r"))
    common.add_argument("--no-borrow", action="store_true", help="fit the primary source alone")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any configuration key")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="mempate", description="Treatment-effect estimation with multisource borrowing.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common], help="estimate the PATE from a CSV dataset")
    sub.add_parser("simulate", parents=[common], help="run a Monte Carlo study")
    return p


def resolve(args) -> dict[str, str]:
    values = cfgmod.load(args.config) if args.config else {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        values[key.strip()] = value.strip()
    flags = {"seed": args.seed, "threads": args.threads, "out": args.out, "model": args.model, "prior": args.prior}
    for k, v in flags.items():
        if v is not None:
            values[k] = str(v)
    if args.no_borrow:
        values["borrow"] = "false"
    if values.get("command", args.command) != args.command:
        log.info("config command %r overridden by %r", values["command"], args.command)
    values["command"] = args.command
    if not values.get("seed"):
        values["seed"] = str(int(np.random.SeedSequence().entropy % (2 ** 63)))
    return values


def _diagnostic(exc: BaseException) -> str:
    module = getattr(exc, "module", type(exc).__module__.split(".")[-1])
    parts = [f"module={module}"]
    if isinstance(exc, MemError):
        if exc.pattern is not None:
            parts.append(f"pattern={exc.pattern}")
        if exc.block is not None:
            parts.append(f"block={exc.block}")
    return f"mempate: error [{' '.join(parts)}]: {exc}"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(levelname)s: %(message)s")
    try:
        values = resolve(args)
        opts = cfgmod.Options(values)
        opts.used.update({"command", "config"})
        out = Path(opts.str("out", "."))
        out.mkdir(parents=True, exist_ok=True)
        runner = run_fit if args.command == "fit" else run_simulate
        outputs = runner(opts, out)
        for k in opts.unknown():
            log.warning("unused configuration key %r", k)
        # the output location does not affect any artifact, so it stays out of the manifest
        resolved = {k: v for k, v in opts.resolved().items() if k != "out"}
        cfgmod.write_manifest(out / "manifest.txt", resolved, outputs)
    except (MemPateError, OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(_diagnostic(exc), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
