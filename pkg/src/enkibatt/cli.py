"""Command line entry point: ``enkibatt simulate | identify | validate | report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import data_io as dio
from .enki import IdentificationError
from .estimator import EnKIBatteryIdentifier, output_rmse
from .models import nominal_params
from .simulator import (
    DriveCycle,
    MeasurementSeries,
    SimulationError,
    add_noise,
    composite_cycle,
    simulate,
    standard_design,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
logger = logging.getLogger("enkibatt")


@dataclass
class CommandOutcome:
    exit_code: int
    summary: str
    artifacts: list[Path] = field(default_factory=list)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="enkibatt", description="Ensemble Kalman identification of "
                     "electro-thermal battery models.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def common(p):
        p.add_argument("--config", type=Path, help="YAML run configuration")
        p.add_argument("--model", help="override the model (thevenin or ndct)")
        p.add_argument("--out", type=Path, help="output directory (default: config output.dir or .)")
        return p

    p = common(sub.add_parser("simulate", help="generate synthetic measurements"))
    p.add_argument("--seed", type=int, help="seed for profile and noise")
    p.add_argument("--cycle", type=Path, nargs="+",
                   help="drive-cycle CSV(s) to use instead of a synthetic profile, joined in order")
    p.add_argument("--params", type=Path, help="parameter file (default: nominal values)")
    p.add_argument("--noiseless", action="store_true", help="skip measurement noise")

    p = common(sub.add_parser("identify", help="run ensemble Kalman identification"))
    p.add_argument("--seed", type=int, help="master seed for the ensemble")
    p.add_argument("--cycle", type=Path, nargs="+", help="drive-cycle CSV(s)")
    p.add_argument("--data", type=Path, nargs="+", help="measurement CSV(s), one per cycle file")
    p.add_argument("--ref-params", type=Path, help="reference parameters for relative errors")
    p.add_argument("--jobs", type=int, help="worker threads for member simulations")
    p.add_argument("--timestamps", action="store_true",
                   help="record start/end times (makes the results file non-reproducible)")

    p = common(sub.add_parser("validate", help="compare a parameter set against measurements"))
    p.add_argument("--params", type=Path, required=True, help="results JSON or parameter file")
    p.add_argument("--cycle", type=Path, nargs="+", help="drive-cycle CSV(s)")
    p.add_argument("--data", type=Path, nargs="+", help="measurement CSV(s), one per cycle file")

    p = common(sub.add_parser("report", help="tabulate per-iteration statistics"))
    p.add_argument("--results", type=Path, required=True, help="results JSON from identify")
    p.add_argument("--ref-params", type=Path, help="reference parameters for a comparison table")
    return parser


# ----------------------------------------------------------------------- helpers


def _config(args, *, check_paths=True) -> dio.RunConfig:
    overrides: dict = {}
    if getattr(args, "model", None):
        overrides["model"] = args.model
    if getattr(args, "seed", None) is not None:
        overrides.setdefault("enki", {})["seed"] = args.seed
    if getattr(args, "jobs", None) is not None:
        overrides.setdefault("enki", {})["n_jobs"] = args.jobs
    for key in ("cycle", "data"):
        value = getattr(args, key, None)
        if value is not None:
            paths = [str(v.resolve()) for v in value]
            overrides.setdefault("data", {})["measurements" if key == "data" else "cycle"] = (
                paths[0] if len(paths) == 1 else paths
            )
    if args.config is not None:
        cfg = dio.load_config(args.config, check_paths=check_paths, overrides=overrides)
    elif "model" in overrides:
        cfg = dio.load_config({}, check_paths=check_paths, overrides=overrides)
    else:
        raise UsageError("either --config or --model is required")
    for w in cfg.warnings:
        logger.warning("config: %s", w)
    return cfg


def _out_dir(args, cfg) -> Path:
    if args.out is not None:
        return args.out
    return cfg.output_dir if cfg is not None and cfg.output_dir is not None else Path(".")


def _load_cycle(cfg) -> DriveCycle:
    return dio.load_cycles(cfg.cycle_paths, cfg.t_amb, cfg.constants.max_current)


def _load_pair(cfg):
    if not cfg.cycle_paths:
        raise dio.DataError("no drive cycle given (use --cycle or data.cycle)")
    return dio.load_dataset(cfg.cycle_paths, cfg.measurements_paths, cfg.t_amb,
                            cfg.constants.max_current)


def _reference(path, cfg):
    if path is not None:
        name, theta = dio.read_params(path, cfg.model if cfg else None)
        if cfg is not None and name != cfg.model:
            raise dio.DataError(f"reference parameters are for {name}, config model is {cfg.model}")
        return theta
    return None if cfg is None else cfg.reference


# ---------------------------------------------------------------------- commands


def cmd_simulate(args) -> CommandOutcome:
    cfg = _config(args, check_paths=False)
    model = cfg.model_obj
    seed = cfg.enki.seed
    # explicit --cycle, then configured segments, then an existing data.cycle
    use_file = args.cycle is not None or (
        not cfg.segments and cfg.cycle_paths and all(p.is_file() for p in cfg.cycle_paths)
    )
    if use_file:
        cycle = _load_cycle(cfg)
    else:
        specs = cfg.segments or tuple(standard_design(dt=cfg.dt))
        cycle = composite_cycle(specs, seed=[seed, 5])
    if args.params is not None:
        name, theta = dio.read_params(args.params, cfg.model)
        if name != model.name:
            raise dio.DataError(f"parameter file is for {name}, model is {model.name}")
    elif cfg.reference is not None:
        theta = cfg.reference
    else:
        theta = nominal_params(model)
    traj = simulate(model, theta, cfg.constants, cycle, substeps=cfg.substeps)
    if args.noiseless:
        meas = MeasurementSeries(traj.times, traj.outputs[:, 0], traj.outputs[:, 1])
    else:
        meas = add_noise(traj, cfg.noise, seed=[seed, 6])
    chash = cfg.config_hash()
    out = _out_dir(args, cfg)
    tag = f"config_hash={chash} seed={seed} model={model.name}"
    paths = [out / "cycle.csv", out / "measurements.csv", out / "true_params.yaml"]
    dio.write_drive_cycle(cycle, paths[0], comment=tag)
    dio.write_measurements(meas, paths[1], comment=tag)
    dio.write_params(model, theta, paths[2], comment=tag)
    return CommandOutcome(
        EXIT_OK,
        f"simulated {len(cycle)} samples ({cycle.times[-1] - cycle.times[0] + cycle.dt:g} s) "
        f"of {model.name} data into {out}",
        paths,
    )


def cmd_identify(args) -> CommandOutcome:
    cfg = _config(args)
    cycle, meas = _load_pair(cfg)
    reference = _reference(args.ref_params, cfg)
    seed = cfg.enki.seed
    est = EnKIBatteryIdentifier(
        model=cfg.model, n_rc=cfg.n_rc, n_members=cfg.enki.members,
        max_iter=cfg.enki.max_iter, prior=cfg.prior(seed),
        voltage_var=cfg.noise.voltage_var, temp_var=cfg.noise.temp_var,
        constants=cfg.constants, t_amb=cfg.t_amb, substeps=cfg.substeps,
        dmc_dimension=cfg.enki.dmc_dimension, variance_form=cfg.enki.variance_form,
        perturbation=cfg.enki.perturbation, misfit_on=cfg.enki.misfit_on,
        positivity=cfg.enki.positivity, n_jobs=cfg.enki.n_jobs, random_state=seed,
    )
    X = np.column_stack([cycle.times, cycle.current, cycle.t_amb])
    y = meas.values
    started = datetime.now(timezone.utc).isoformat() if args.timestamps else None
    est.fit(X, y)
    rmse = output_rmse(y, est.predict(X))
    stamps = None
    if args.timestamps:
        stamps = {"started": started, "finished": datetime.now(timezone.utc).isoformat()}
    bundle = dio.ResultBundle.from_result(
        cfg.model_obj, est.result_, rmse=rmse, config_hash=cfg.config_hash(), seed=seed,
        reference=reference, timestamps=stamps,
    )
    path = _out_dir(args, cfg) / "results.json"
    dio.write_results(bundle, path)
    lines = [
        f"{'complete' if est.converged_ else 'INCOMPLETE'} after {est.n_iter_} iterations "
        f"(alpha sum {sum(est.alphas_):.12g})",
        f"RMSE voltage {rmse['voltage']:.4g} V, surface temperature {rmse['surf_temp']:.4g} K",
    ]
    for name, value in est.params_.items():
        err = bundle.relative_errors_pct
        lines.append(f"  {name:8s} {value:.6g}" + (f"  ({err[name]:.3f} %)" if err else ""))
    lines.append(f"wrote {path}")
    return CommandOutcome(EXIT_OK, "\n".join(lines), [path])


def cmd_validate(args) -> CommandOutcome:
    cfg = _config(args)
    name, theta = dio.read_params(args.params, cfg.model)
    if name != cfg.model:
        raise dio.DataError(f"parameter file is for {name}, config model is {cfg.model}")
    cycle, meas = _load_pair(cfg)
    traj = simulate(cfg.model_obj, theta, cfg.constants, cycle, substeps=cfg.substeps)
    rmse = output_rmse(meas.values, traj.outputs)
    out = _out_dir(args, cfg)
    chash = cfg.config_hash()
    residuals = out / "residuals.csv"
    lines = [f"# config_hash={chash}", "time_s,voltage_meas_V,voltage_pred_V,surf_temp_meas_K,surf_temp_pred_K"]
    for row in zip(meas.times.tolist(), meas.voltage.tolist(), traj.outputs[:, 0].tolist(),
                   meas.surf_temp.tolist(), traj.outputs[:, 1].tolist()):
        lines.append(",".join(repr(v) for v in row))
    summary_path = out / "validation.json"
    doc = {"model": name, "rmse": rmse, "n_samples": len(cycle), "config_hash": chash,
           "parameters": dict(zip(cfg.model_obj.param_names, map(float, theta)))}
    dio.atomic_write_text(residuals, "\n".join(lines) + "\n")
    dio.atomic_write_text(summary_path, json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return CommandOutcome(
        EXIT_OK,
        f"voltage RMSE {rmse['voltage']:.6g} V\nsurface temperature RMSE {rmse['surf_temp']:.6g} K",
        [residuals, summary_path],
    )


def cmd_report(args) -> CommandOutcome:
    bundle = dio.read_results(args.results)
    cfg = _config(args) if (args.config is not None or args.model) else None
    if args.ref_params is not None:
        name, reference = dio.read_params(args.ref_params, bundle.model)
        if name != bundle.model:
            raise dio.DataError(f"reference parameters are for {name}, results are for {bundle.model}")
    else:
        reference = bundle.reference if bundle.reference is not None else _reference(None, cfg)
    out = _out_dir(args, cfg)
    tag = f"config_hash={bundle.config_hash} seed={bundle.seed} model={bundle.model}"
    box = out / "boxplots.csv"
    dio.write_boxplot_table(bundle.records, box, names=bundle.param_names, comment=tag)
    artifacts = [box]
    iters = out / "iterations.csv"
    rows = [f"# {tag}", "iteration,alpha,t,misfit_mean,misfit_var,n_failed,n_range_violations"]
    for r in bundle.records:
        rows.append(f"{r.iteration},{r.alpha!r},{r.t!r},{r.misfit_mean!r},{r.misfit_var!r},"
                    f"{r.n_failed},{r.n_range_violations}")
    dio.atomic_write_text(iters, "\n".join(rows) + "\n")
    artifacts.append(iters)
    lines = [f"{bundle.model}: {len(bundle.records)} iterations, "
             f"{'complete' if bundle.complete else 'incomplete'}"]
    if reference is not None:
        comp = out / "comparison.csv"
        dio.write_comparison_table(bundle.param_names, bundle.theta_hat, reference, comp, comment=tag)
        artifacts.append(comp)
        lines.append(f"{'parameter':10s} {'true':>12s} {'estimated':>12s} {'rel. err %':>10s}")
        for n, h, r in zip(bundle.param_names, bundle.theta_hat, reference):
            lines.append(f"{n:10s} {r:12.6g} {h:12.6g} {100 * abs(h - r) / abs(r):10.3f}")
    lines.extend(f"wrote {p}" for p in artifacts)
    return CommandOutcome(EXIT_OK, "\n".join(lines), artifacts)


COMMANDS = {
    "simulate": cmd_simulate,
    "identify": cmd_identify,
    "validate": cmd_validate,
    "report": cmd_report,
}


def run_cli(argv=None) -> CommandOutcome:
    """Parse ``argv`` and run one subcommand, mapping failures to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return CommandOutcome(EXIT_USAGE, str(exc))
    except dio.DataError as exc:
        return CommandOutcome(EXIT_DATA, f"data error: {exc}")
    except IdentificationError as exc:
        diag = json.dumps(exc.diagnostics, sort_keys=True)
        return CommandOutcome(EXIT_NUMERIC, f"identification aborted at iteration {exc.iteration}: "
                              f"{exc}\ndiagnostics: {diag}")
    except (SimulationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return CommandOutcome(EXIT_NUMERIC, f"numerical failure: {exc}")
    except ValueError as exc:
        return CommandOutcome(EXIT_DATA, f"invalid input: {exc}")


def main(argv=None) -> int:
    outcome = run_cli(argv)
    stream = sys.stdout if outcome.exit_code == EXIT_OK else sys.stderr
    print(outcome.summary, file=stream)
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
