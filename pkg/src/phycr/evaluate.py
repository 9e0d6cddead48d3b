"""Error metrics, error-propagation curves and the comparison harnesses.

All functions are read-only on their inputs.  Trajectories are arrays of shape
``(K, C, H, W)`` with snapshot 0 the initial condition.
"""
from __future__ import annotations

import gc
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import refsolve, trainer
from .errors import AlignmentError, ContractError, DimensionError

PHASES = ("training", "extrapolation")


def thin(ref: np.ndarray, ref_dt: float, dt: float) -> np.ndarray:
    """Subsample ``ref`` (spacing ``ref_dt``) to spacing ``dt`` by exact integer stride."""
    ratio = dt / ref_dt
    stride = round(ratio)
    if stride < 1 or not math.isclose(stride, ratio, rel_tol=1e-9, abs_tol=0.0):
        raise AlignmentError(f"prediction dt {dt:g} is not an integer multiple of reference dt {ref_dt:g}")
    return ref[::stride]


def _check_pair(pred, ref):
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.ndim != 4 or ref.ndim != 4:
        raise DimensionError(f"trajectories must be (K, C, H, W); got {pred.shape} and {ref.shape}")
    if pred.shape[1:] != ref.shape[1:]:
        raise DimensionError(f"grid/channels differ: pred {pred.shape[1:]} vs ref {ref.shape[1:]}")
    return pred, ref


def step_sq_errors(pred, ref) -> np.ndarray:
    """Per-snapshot ``||pred_k - ref_k||^2 / (H W)``, channels summed."""
    pred, ref = _check_pair(pred, ref)
    k = min(len(pred), len(ref))
    H, W = pred.shape[-2:]
    diff = pred[:k] - ref[:k]
    return np.einsum("kchw,kchw->k", diff, diff) / (H * W)


def a_rmse(pred, ref, tau: int | None = None) -> float:
    """Accumulative RMSE over steps ``1..tau`` (the initial snapshot is excluded).

    ``tau`` defaults to the last common step.
    """
    e = step_sq_errors(pred, ref)
    horizon = len(e) - 1
    tau = horizon if tau is None else tau
    if not 1 <= tau <= horizon:
        raise ContractError(f"tau must lie in [1, {horizon}], got {tau}")
    return float(np.sqrt(e[1:tau + 1].mean()))


@dataclass(frozen=True)
class ErrorCurve:
    steps: np.ndarray
    times: np.ndarray
    values: np.ndarray
    phases: tuple

    def rows(self):
        return [(int(s), float(t), float(v), p) for s, t, v, p in zip(self.steps, self.times, self.values, self.phases)]

    @property
    def final(self) -> float:
        return float(self.values[-1])


def error_curve(pred, ref, split_step: int, dt: float = 1.0) -> ErrorCurve:
    """a-RMSE at every step ``tau = 1..K-1``; steps ``<= split_step`` are tagged training."""
    e = step_sq_errors(pred, ref)
    horizon = len(e) - 1
    if horizon < 1:
        raise ContractError("need at least two snapshots")
    if not 0 <= split_step <= horizon:
        raise ContractError(f"split_step {split_step} outside the horizon [0, {horizon}]")
    steps = np.arange(1, horizon + 1)
    values = np.sqrt(np.cumsum(e[1:]) / steps)
    phases = tuple(PHASES[0] if s <= split_step else PHASES[1] for s in steps)
    return ErrorCurve(steps, steps * float(dt), values, phases)


def persistence(u0, steps: int) -> np.ndarray:
    """Trivial forecast repeating ``u0``."""
    return np.repeat(np.asarray(u0, dtype=np.float64)[None], steps + 1, axis=0)


def relative_error(pred, ref, start: int = 0, stop: int | None = None) -> float:
    """``100 * ||pred - ref||_F / ||ref||_F`` over snapshots ``start..stop-1``."""
    pred, ref = _check_pair(pred, ref)
    p, r = pred[start:stop], ref[start:stop]
    if p.shape != r.shape or p.size == 0:
        raise DimensionError(f"phase blocks differ or are empty: {p.shape} vs {r.shape}")
    denom = np.linalg.norm(r.ravel())
    if denom == 0.0:
        raise ContractError("reference block has zero norm; relative error undefined")
    return 100.0 * float(np.linalg.norm((p - r).ravel()) / denom)


# -- harnesses ---------------------------------------------------------------
@dataclass(frozen=True)
class CycleReport:
    cycle_index: int
    time_per_epoch_s: float
    train_err_pct: float
    extrap_err_pct: float

    def row(self):
        return (f"T={self.cycle_index}", self.time_per_epoch_s, self.train_err_pct, self.extrap_err_pct)


def reference_for(cfg: trainer.RunConfig, u0, steps: int) -> np.ndarray:
    run = refsolve.SolverRun.for_system(cfg.system, steps, cfg.ref_dt or None)
    return refsolve.solve(u0, cfg.system, run)


def time_epochs(cfgs: list, u0, epochs: int, repeats: int = 1):
    """Seconds per epoch for each config: the median over ``repeats`` timed runs.

    Each repeat trains every config for ``epochs`` epochs from scratch.
    Repeats are interleaved round-robin with the starting config rotated each
    round, so slow drifts in machine speed hit every config alike, and the
    median discards the bursts of a shared CPU.  Garbage collection is paused
    while timing, as ``timeit`` does.  Returns ``(times, checkpoints)``.
    """
    n = len(cfgs)
    samples = [[] for _ in range(n)]
    ckpts = [None] * n
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for r in range(max(1, repeats)):
            for j in range(n):
                k = (r + j) % n
                t0 = time.perf_counter()
                ckpts[k], _ = trainer.train(cfgs[k], u0, epochs=epochs)
                samples[k].append((time.perf_counter() - t0) / max(1, epochs))
                gc.collect()
    finally:
        if gc_was_enabled:
            gc.enable()
    return [float(np.median(s)) for s in samples], ckpts


def compare_cycles(cfg: trainer.RunConfig, u0, cycles=(0, 10, 50, 100), epochs: int | None = None,
                   ref: np.ndarray | None = None, repeats: int = 1) -> list:
    """Train one model per cycle index under an identical budget and seed."""
    epochs = cfg.epochs if epochs is None else epochs
    horizon = cfg.steps + cfg.extrap_steps
    if ref is None:
        ref = reference_for(cfg, u0, horizon)
    cfgs = [cfg.with_(arch=replace(cfg.arch, cycle_index=int(c))) for c in cycles]
    seconds, ckpts = time_epochs(cfgs, u0, epochs, repeats)
    out = []
    split = cfg.steps + 1
    for c, sec, ckpt in zip(cycles, seconds, ckpts):
        pred = trainer.infer(ckpt, u0, horizon, cfg.system.dt)
        train_pct = relative_error(pred, ref, 1, split)
        extrap_pct = relative_error(pred, ref, split) if cfg.extrap_steps > 0 else math.nan
        out.append(CycleReport(int(c), sec, train_pct, extrap_pct))
    return out


def generalization_suite(ckpt: trainer.Checkpoint, cfg: trainer.RunConfig, seeds=None, steps: int | None = None):
    """For each IC seed: sample the benchmark IC, solve the reference, roll out the model.

    Returns ``{seed: (ErrorCurve, persistence ErrorCurve)}``.
    """
    seeds = cfg.gen_seeds if seeds is None else tuple(seeds)
    steps = cfg.gen_steps if steps is None else steps
    out = {}
    for seed in seeds:
        u0 = cfg.ic_scale * refsolve.initial_condition(cfg.system, seed)
        ref = reference_for(cfg, u0, steps)
        pred = trainer.infer(ckpt, u0, steps, cfg.system.dt)
        split = min(cfg.steps, steps)
        out[seed] = (error_curve(pred, ref, split, cfg.system.dt),
                     error_curve(persistence(u0, steps), ref, split, cfg.system.dt))
    return out
