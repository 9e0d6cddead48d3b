"""``phycr`` command-line interface.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.
``PHYCR_THREADS`` caps BLAS worker threads (default 1, which keeps every
command bit-reproducible).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import evaluate, fileio, physics, refsolve, trainer
from .errors import AlignmentError, ConfigurationError, ContractError, DimensionError, FormatError, NumericError

log = logging.getLogger("phycr")

SYSTEMS = {"burgers": physics.burgers, "lambda-omega": physics.lambda_omega, "fn": physics.fitzhugh_nagumo}
LOSS_HEADER = ("epoch", "lr", "loss", "mean_sq", "window_start")
ABLATION_HEADER = ("model",) + fileio.CURVE_HEADER
ABLATIONS = {"full": {}, "no-ar": {"no_ar": True}, "no-residual": {"no_residual": True}}


# -- helpers ------------------------------------------------------------------
def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_ic(args, cfg: trainer.RunConfig) -> np.ndarray:
    if getattr(args, "ic", None):
        u0 = fileio.read_field(args.ic)
    else:
        u0 = cfg.ic_scale * refsolve.initial_condition(cfg.system, cfg.ic_seed)
    want = (cfg.arch.channels,) + cfg.system.grid
    if u0.shape != want:
        raise ConfigurationError(f"--ic: field shape {u0.shape} does not match the config grid {want}")
    return u0


def _write_curve(path, curve: evaluate.ErrorCurve):
    fileio.write_csv(path, fileio.CURVE_HEADER, curve.rows())


def _plot_script(out: Path, plots: list):
    """Emit a gnuplot script; ``plots`` holds ``(csv name, x column, y column, title)``."""
    lines = ["# gnuplot script: gnuplot -p plot.gp", "set datafile separator ','", "set key autotitle columnhead",
             "set grid"]
    for name, x, y, title, logscale in plots:
        lines.append("set logscale y" if logscale else "unset logscale y")
        lines.append(f"set title '{title}'")
        lines.append(f"plot '{name}' using {x}:{y} with lines title '{title}'")
        lines.append("pause -1")
    (out / "plot.gp").write_text("\n".join(lines) + "\n")


def _train_outputs(out: Path, train_log: trainer.TrainLog):
    fileio.write_csv(out / "loss.csv", LOSS_HEADER, train_log.rows)
    _plot_script(out, [("loss.csv", 1, 3, "physics loss", True)])


# -- commands -----------------------------------------------------------------
def cmd_gen_ic(args):
    sys_ = SYSTEMS[args.system](args.grid)
    u0 = args.scale * refsolve.initial_condition(sys_, args.seed)
    fileio.write_field(args.out, u0)
    log.info("wrote %s %s std %.4f", args.out, u0.shape, u0.std())


def cmd_solve_ref(args):
    cfg = config_mod.load(args.config)
    u0 = _load_ic(args, cfg)
    steps = cfg.steps if args.steps is None else args.steps
    run = refsolve.SolverRun.for_system(cfg.system, steps, args.fine_dt or cfg.ref_dt or None, strict=args.strict)
    frames = refsolve.solve(u0, cfg.system, run)
    fileio.write_traj(args.out, frames, cfg.system.dt)
    log.info("wrote %s: %d snapshots at dt=%g", args.out, len(frames), cfg.system.dt)


def cmd_train(args):
    cfg = config_mod.load(args.config)
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    u0 = _load_ic(args, cfg)
    out = _out_dir(args.out_dir)
    (out / "config.txt").write_text(config_mod.dumps(cfg))
    fileio.write_field(out / "ic.phyf", u0)
    try:
        ckpt, train_log = trainer.train(cfg, u0, out, args.epochs)
    except trainer.TrainingAborted as exc:
        fileio.write_checkpoint(out / "last_good.phyc", exc.checkpoint)
        raise
    _train_outputs(out, train_log)
    log.info("trained %d epochs, final loss %.6e", ckpt.epoch, train_log.rows[-1][2] if train_log.rows else np.nan)


def cmd_resume(args):
    cfg = config_mod.load(args.config)
    ckpt = fileio.read_checkpoint(args.ckpt)
    out = _out_dir(args.out_dir)
    try:
        final, train_log = trainer.resume(ckpt, cfg, args.epochs, out)
    except trainer.TrainingAborted as exc:
        fileio.write_checkpoint(out / "last_good.phyc", exc.checkpoint)
        raise
    _train_outputs(out, train_log)
    log.info("resumed to epoch %d", final.epoch)


def cmd_rollout(args):
    cfg = config_mod.load(args.config)
    ckpt = fileio.read_checkpoint(args.ckpt)
    u0 = fileio.read_field(args.ic) if args.ic else ckpt.u0
    steps = cfg.steps + cfg.extrap_steps if args.steps is None else args.steps
    frames = trainer.infer(ckpt, u0, steps, cfg.system.dt)
    fileio.write_traj(args.out, frames, cfg.system.dt)
    log.info("wrote %s: %d snapshots", args.out, len(frames))


def cmd_eval(args):
    pred, dt = fileio.read_traj(args.pred)
    ref, ref_dt = fileio.read_traj(args.ref)
    ref = evaluate.thin(ref, ref_dt, dt)
    horizon = min(len(pred), len(ref)) - 1
    split = horizon if args.split is None else args.split
    out = _out_dir(args.out_dir)
    curve = evaluate.error_curve(pred, ref, split, dt)
    base = evaluate.error_curve(evaluate.persistence(pred[0], horizon), ref, split, dt)
    _write_curve(out / "curve.csv", curve)
    _write_curve(out / "persistence.csv", base)
    _plot_script(out, [("curve.csv", 2, 3, "a-RMSE", False), ("persistence.csv", 2, 3, "persistence a-RMSE", False)])
    train_pct = evaluate.relative_error(pred[:horizon + 1], ref[:horizon + 1], 1, split + 1)
    print(f"a_rmse {curve.final:.6e}  persistence {base.final:.6e}  train_err_pct {train_pct:.4f}", end="")
    if split < horizon:
        print(f"  extrap_err_pct {evaluate.relative_error(pred[:horizon + 1], ref[:horizon + 1], split + 1):.4f}",
              end="")
    print()


def cmd_ablate(args):
    cfg = config_mod.load(args.config)
    u0 = _load_ic(args, cfg)
    out = _out_dir(args.out_dir)
    horizon = cfg.steps + cfg.extrap_steps
    ref = evaluate.reference_for(cfg, u0, horizon)
    rows = []
    for name, change in ABLATIONS.items():
        run_cfg = cfg.with_(arch=replace(cfg.arch, **change))
        ckpt, train_log = trainer.train(run_cfg, u0, _out_dir(out / name), args.epochs)
        _train_outputs(out / name, train_log)
        pred = trainer.infer(ckpt, u0, horizon, cfg.system.dt)
        curve = evaluate.error_curve(pred, ref, cfg.steps, cfg.system.dt)
        rows += [(name,) + r for r in curve.rows()]
        log.info("%s: final a-RMSE %.4e", name, curve.final)
    fileio.write_csv(out / "ablation.csv", ABLATION_HEADER, rows)
    lines = ["# gnuplot script: gnuplot -p plot.gp", "set datafile separator ','", "set grid", "set title 'a-RMSE'",
             "plot " + ", ".join(f"'ablation.csv' using (strcol(1) eq '{n}' ? $3 : 1/0):4 with lines title '{n}'"
                                 for n in ABLATIONS),
             "pause -1"]
    (out / "plot.gp").write_text("\n".join(lines) + "\n")


def cmd_compare_cycles(args):
    cfg = config_mod.load(args.config)
    u0 = _load_ic(args, cfg)
    out = _out_dir(args.out_dir)
    cycles = tuple(int(c) for c in args.cycles.split(","))
    reports = evaluate.compare_cycles(cfg, u0, cycles, args.epochs, repeats=args.repeats)
    fileio.write_csv(out / "report.csv", fileio.REPORT_HEADER, [r.row() for r in reports])
    lines = ["# gnuplot script: gnuplot -p plot.gp", "set datafile separator ','", "set style data histogram",
             "set style fill solid", "set title 'time per epoch [s]'",
             "plot 'report.csv' using 2:xtic(1) title columnhead", "pause -1"]
    (out / "plot.gp").write_text("\n".join(lines) + "\n")
    for r in reports:
        print("{}  {:.4f} s/epoch  train {:.3f}%  extrap {:.3f}%".format(*r.row()))


def cmd_generalize(args):
    cfg = config_mod.load(args.config)
    ckpt = fileio.read_checkpoint(args.ckpt)
    seeds = tuple(int(s) for s in args.seeds.split(",")) if args.seeds else None
    out = _out_dir(args.out_dir)
    plots = []
    for seed, (curve, base) in evaluate.generalization_suite(ckpt, cfg, seeds, args.steps).items():
        _write_curve(out / f"curve_seed{seed}.csv", curve)
        _write_curve(out / f"persistence_seed{seed}.csv", base)
        plots.append((f"curve_seed{seed}.csv", 2, 3, f"a-RMSE seed {seed}", False))
        print(f"seed {seed}: a_rmse {curve.final:.6e}  persistence {base.final:.6e}")
    _plot_script(out, plots)


# -- parser -------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phycr", description="Train recurrent conv nets to time-step 2D PDEs from the equations alone.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("gen-ic", cmd_gen_ic, "Sample a benchmark initial condition into a field file.")
    sp.add_argument("--system", required=True, choices=sorted(SYSTEMS), help="benchmark system")
    sp.add_argument("--seed", type=int, default=0, help="sampler seed (default 0)")
    sp.add_argument("--grid", type=int, default=128, help="grid size per side (default 128)")
    sp.add_argument("--scale", type=float, default=1.0, help="amplitude factor applied to the sample (default 1)")
    sp.add_argument("--out", required=True, help="output field file (.phyf)")

    sp = add("solve-ref", cmd_solve_ref, "Integrate the reference solution on the coarse snapshot grid.")
    sp.add_argument("--config", required=True, help="run configuration file")
    sp.add_argument("--ic", help="initial field file (default: sample from the config's ic_seed)")
    sp.add_argument("--out", required=True, help="output trajectory file (.phyt)")
    sp.add_argument("--steps", type=int, help="coarse steps to produce (default: training steps)")
    sp.add_argument("--fine-dt", type=float, help="internal solver step (default: per-system reference step)")
    sp.add_argument("--strict", action="store_true", help="fail instead of warning on a too-large solver step")

    for name, fn, help_ in (("train", cmd_train, "Train from initialization with the physics loss only."),
                            ("ablate", cmd_ablate, "Train full / no-ar / no-residual variants under one budget."),
                            ("compare-cycles", cmd_compare_cycles,
                             "Time and score PhyCRNet-s across cycle indices.")):
        sp = add(name, fn, help_)
        sp.add_argument("--config", required=True, help="run configuration file")
        sp.add_argument("--ic", help="initial field file (default: sample from the config's ic_seed)")
        sp.add_argument("--out-dir", required=True, help="run directory for outputs")
        sp.add_argument("--epochs", type=int, help="override the configured epoch count")
        if name == "train":
            sp.add_argument("--seed", type=int, help="override the parameter-initialization seed")
        if name == "compare-cycles":
            sp.add_argument("--cycles", default="0,10,50,100", help="comma-separated cycle indices")
            sp.add_argument("--repeats", type=int, default=1, help="timing repeats, the median is reported")

    sp = add("resume", cmd_resume, "Continue training from a checkpoint.")
    sp.add_argument("--config", required=True, help="run configuration file (its hash must match)")
    sp.add_argument("--ckpt", required=True, help="checkpoint file (.phyc)")
    sp.add_argument("--epochs", type=int, required=True, help="extra epochs to train")
    sp.add_argument("--out-dir", required=True, help="run directory for outputs")

    sp = add("rollout", cmd_rollout, "Roll a trained model forward from an initial field.")
    sp.add_argument("--config", required=True, help="run configuration file (provides dt)")
    sp.add_argument("--ckpt", required=True, help="checkpoint file (.phyc)")
    sp.add_argument("--ic", help="initial field file (default: the training initial condition)")
    sp.add_argument("--steps", type=int, help="steps to roll out (default: training + extrapolation steps)")
    sp.add_argument("--out", required=True, help="output trajectory file (.phyt)")

    sp = add("eval", cmd_eval, "Compare a predicted trajectory against a reference.")
    sp.add_argument("--pred", required=True, help="predicted trajectory file")
    sp.add_argument("--ref", required=True, help="reference trajectory file (thinned to the prediction dt)")
    sp.add_argument("--split", type=int, help="last training-phase step (default: whole horizon)")
    sp.add_argument("--out-dir", required=True, help="directory for curve CSVs and plot script")

    sp = add("generalize", cmd_generalize, "Evaluate a checkpoint on unseen initial conditions.")
    sp.add_argument("--config", required=True, help="run configuration file")
    sp.add_argument("--ckpt", required=True, help="checkpoint file (.phyc)")
    sp.add_argument("--seeds", help="comma-separated IC seeds (default: the config's gen_seeds)")
    sp.add_argument("--steps", type=int, help="rollout steps (default: the config's gen_steps)")
    sp.add_argument("--out-dir", required=True, help="directory for curve CSVs and plot script")
    return p


def _thread_limit():
    raw = os.environ.get("PHYCR_THREADS", "1")
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigurationError(f"PHYCR_THREADS must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with _thread_limit():
            args.func(args)
    except (ConfigurationError, DimensionError, ContractError, AlignmentError) as exc:
        print(f"phycr {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        at = f" (step {exc.step})" if getattr(exc, "step", None) is not None else ""
        print(f"phycr {args.command}: numeric failure{at}: {exc}", file=sys.stderr)
        return 3
    except (FormatError, OSError) as exc:
        print(f"phycr {args.command}: I/O error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
