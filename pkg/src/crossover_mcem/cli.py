"""Command-line interface: ``fit``, ``simulate``, ``power`` and ``lrt``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .dataio import (
    DesignConfig,
    load_json,
    missing_report,
    parse_dataset,
    scenario_from_dict,
    write_table,
)
from .exceptions import CovarianceError, DataError, DesignError, FitError, ParameterError
from .inference import MiConfig, coefficient_pvalues, fit_report, lrt, mi_standard_errors
from .mcem import McemConfig, Restriction, hypothesis_restriction, mcem_fit, restricted_fit
from .simulation import degrade, normality_diagnostic, power_study, run_replications

log = logging.getLogger("crossover_mcem")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mc-samples", type=int, default=1000, help="Monte Carlo samples per E-step after warm-up")
    p.add_argument("--imputations", type=int, default=100, help="imputed datasets per repetition")
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--m0", type=int, default=5, help="imputation repetitions")
    p.add_argument("--miss-mode", choices=("element", "period-block"), default=None)
    p.add_argument("--stat", choices=("loglik", "q"), default="loglik")
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crossover-mcem", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a dataset: estimates, SEs, p-values, AIC/BIC/RMSE")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--design", type=Path, required=True)
    p.add_argument("--log-response", action="store_true", help="fit log(responses)")
    p.add_argument("--degrade", type=float, default=None,
                   help="add Bernoulli missingness up to this overall fraction")
    p.add_argument("--no-pvalues", action="store_true")
    _common(p)

    p = sub.add_parser("simulate", help="replication study with bias/MSE/ECP summary")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--miss-prob", type=float, default=None)
    p.add_argument("--reps", type=int, default=None)
    _common(p)

    p = sub.add_parser("power", help="empirical power of the MCEM-LRT over a grid")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--reps", type=int, default=None)
    _common(p)

    p = sub.add_parser("lrt", help="likelihood-ratio test of a restriction")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--design", type=Path, required=True)
    p.add_argument("--hypothesis", default=None,
                   help="treatment | period | response | pair:A,B")
    p.add_argument("--drop", default=None, help="comma-separated coefficient names to set to zero")
    p.add_argument("--log-response", action="store_true")
    _common(p)
    return parser


def mcem_config(args) -> McemConfig:
    c = args.mc_samples
    if c < 1:
        raise UsageError("--mc-samples must be >= 1")
    return McemConfig(c_schedule=((1, min(100, c)), (21, c)), seed=args.seed)


def mi_config(args) -> MiConfig:
    try:
        return MiConfig(b=args.imputations, burn_in=args.burn_in, m0=args.m0, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _parse_hypothesis(text):
    if text in ("treatment", "period", "response"):
        return text
    if text and text.startswith("pair:"):
        try:
            a, b = (int(x) for x in text[5:].split(","))
        except ValueError:
            raise UsageError(f"bad pair hypothesis {text!r}; use pair:A,B") from None
        return ("pair", a, b)
    raise UsageError(f"unknown hypothesis {text!r}")


def _manifest(args, extra: dict) -> dict:
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "verbose"}
    return {
        "command": args.command,
        "arguments": cfg,
        "seed": args.seed,
        **extra,
        "versions": {
            "crossover_mcem": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }


def _write_manifest(out: Path, manifest: dict) -> None:
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _load_data(args):
    config = DesignConfig.load(args.design)
    data = parse_dataset(args.data, config)
    if args.log_response:
        if any(np.any(v[k] <= 0) for v, k in zip(data.values, data.mask)):
            raise DataError("--log-response needs strictly positive responses")
        data = data.map_values(np.log)
    return config, data


def cmd_fit(args) -> int:
    config, data = _load_data(args)
    design = data.design
    if args.degrade is not None:
        mode = args.miss_mode or "element"
        data = degrade(data, args.degrade, mode, np.random.default_rng([args.seed, 99]))
    report_missing = missing_report(data)
    cfg = mcem_config(args)
    fit = mcem_fit(design, data, cfg)
    if not fit.converged:
        raise FitError(f"MCEM did not converge in {cfg.max_iter} iterations")
    mi = mi_standard_errors(fit, design, data, mi_config(args))
    pvals = {} if args.no_pvalues else coefficient_pvalues(fit, design, data, cfg, mi.se, args.stat)
    rep = fit_report(fit, design, data)
    rows = []
    est = fit.params.as_array()
    for j, name in enumerate(mi.names):
        rows.append({"variable": name, "mle": est[j], "se": mi.se[j], "p_value": pvals.get(name)})
    rows += [{"variable": "AIC", "mle": rep.aic}, {"variable": "BIC", "mle": rep.bic},
             {"variable": "RMSE", "mle": rep.rmse}]
    args.out.mkdir(parents=True, exist_ok=True)
    write_table(rows, ("variable", "mle", "se", "p_value"), args.out / "fit.txt", args.out / "fit.csv")
    _write_manifest(args.out, _manifest(args, {
        "design": config.to_dict(),
        "missing_percent": report_missing,
        "log_response": bool(args.log_response),
        "converged": fit.converged,
        "iterations": fit.n_iter,
        "loglik": fit.loglik,
        "mcem": asdict(cfg),
        "mi": asdict(mi_config(args)),
    }))
    print((args.out / "fit.txt").read_text(), end="")
    return EXIT_OK


def cmd_simulate(args) -> int:
    raw = load_json(args.config) if args.config else {}
    scenario = scenario_from_dict(raw)
    changes = {"seed": args.seed if args.config is None or "seed" not in raw else scenario.seed}
    if args.miss_prob is not None:
        changes["miss_prob"] = args.miss_prob
    if args.reps is not None:
        changes["reps"] = args.reps
    if args.miss_mode is not None:
        changes["miss_mode"] = args.miss_mode
    scenario = replace(scenario, **changes)
    summary = run_replications(scenario, mcem_config(args), mi_config(args))
    args.out.mkdir(parents=True, exist_ok=True)
    cols = ("parameter", "true", "mle", "se", "bias", "mse", "ecp")
    write_table(list(summary.rows()), cols, args.out / "simulate.txt", args.out / "simulate.csv")
    per_rep = [dict(zip(summary.names, e)) | {f"se_{k}": s for k, s in zip(summary.names, se)}
               for e, se in zip(summary.estimates, summary.ses)]
    rep_cols = summary.names + tuple(f"se_{k}" for k in summary.names)
    write_table(per_rep, rep_cols, args.out / "replications.txt", args.out / "replications.csv")
    extra = {"converged": summary.n_converged, "reps": summary.n_reps, "mask_redraws": summary.redraws,
             "scenario": {"miss_prob": scenario.miss_prob, "miss_mode": scenario.miss_mode,
                          "reps": scenario.reps, "seed": scenario.seed,
                          "assignment": scenario.design.assignment,
                          "n_subjects": scenario.design.n_subjects,
                          "truth": scenario.true_params.as_array()}}
    if summary.n_converged >= 30:
        norm = normality_diagnostic(summary.estimates, summary.names)
        write_table([dict(zip(norm.names, z)) for z in norm.standardized], norm.names,
                    args.out / "normality.txt", args.out / "normality.csv")
        extra["ks_distance"] = dict(zip(norm.names, norm.ks))
    _write_manifest(args.out, _manifest(args, extra))
    print((args.out / "simulate.txt").read_text(), end="")
    return EXIT_OK


def cmd_power(args) -> int:
    raw = load_json(args.config)
    base = scenario_from_dict(raw.get("scenario", {}))
    base = replace(base, seed=args.seed, miss_mode=args.miss_mode or base.miss_mode)
    hyp = raw.get("hypothesis", "treatment")
    hyp = tuple(hyp) if isinstance(hyp, list) else hyp
    points = power_study(
        base,
        hyp,
        n_grid=tuple(raw.get("n_grid", (20, 50, 100))),
        miss_grid=tuple(raw.get("miss_grid", (0.15, 0.25, 0.35))),
        effects=tuple(raw.get("effects", (None,))),
        alpha=float(raw.get("alpha", 0.05)),
        reps=args.reps if args.reps is not None else int(raw.get("reps", 1000)),
        mcem_config=mcem_config(args),
        stat=args.stat,
    )
    rows = [{"n_per_sequence": p.n_per_sequence, "miss_prob": p.miss_prob,
             "effect": p.effect, "power": p.power, "rejections": p.rejections,
             "valid_reps": p.n_valid} for p in points]
    args.out.mkdir(parents=True, exist_ok=True)
    cols = ("n_per_sequence", "miss_prob", "effect", "power", "rejections", "valid_reps")
    write_table(rows, cols, args.out / "power.txt", args.out / "power.csv")
    _write_manifest(args.out, _manifest(args, {"grid": raw}))
    print((args.out / "power.txt").read_text(), end="")
    return EXIT_OK


def cmd_lrt(args) -> int:
    _, data = _load_data(args)
    design = data.design
    if (args.hypothesis is None) == (args.drop is None):
        raise UsageError("give exactly one of --hypothesis or --drop")
    if args.drop is not None:
        restriction = Restriction(drop=tuple(x.strip() for x in args.drop.split(",") if x.strip()))
    else:
        restriction = hypothesis_restriction(design, _parse_hypothesis(args.hypothesis))
    cfg = mcem_config(args)
    full = mcem_fit(design, data, cfg)
    reduced = restricted_fit(design, data, cfg, restriction)
    if not (full.converged and reduced.converged):
        raise FitError("MCEM did not converge")
    res = lrt(full, reduced, stat=args.stat)
    row = {"statistic": res.statistic, "df": res.df, "p_value": res.p_value,
           "full_loglik": res.full_loglik, "reduced_loglik": res.reduced_loglik, "stat": res.stat}
    args.out.mkdir(parents=True, exist_ok=True)
    write_table([row], tuple(row), args.out / "lrt.txt", args.out / "lrt.csv")
    _write_manifest(args.out, _manifest(args, {"restriction": asdict(restriction)}))
    print((args.out / "lrt.txt").read_text(), end="")
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "power": cmd_power, "lrt": cmd_lrt}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DesignError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, CovarianceError, ParameterError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(run_cli())
