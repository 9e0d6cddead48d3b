"""Label-free training: roll out, score the physics residual, step Adam.

Nothing here reads reference solutions.  The initial condition is handed in
by the caller.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import physics
from . import tensor as T
from .errors import ConfigurationError, NumericError
from .layers import ArchSpec, Carry, init_params, rollout
from .optim import AdamState, adam_step
from .physics import PdeSystem

log = logging.getLogger(__name__)

WINDOW_POLICIES = ("cycle", "fixed-interval")
WINDOW_STATES = ("reset", "carry")
LOSS_TAIL = 100


@dataclass(frozen=True)
class RunConfig:
    system: PdeSystem
    arch: ArchSpec = ArchSpec()
    epochs: int = 10000
    lr: float = 6e-4
    lr_decay: float = 0.99
    lr_every: int = 50
    steps: int = 1000
    window: float = 0.5
    window_policy: str = "cycle"
    window_state: str = "reset"
    pretrain: bool = False
    seed: int = 0
    checkpoint_every: int = 0
    ic_seed: int = 0
    ic_scale: float = 1.0
    extrap_steps: int = 1000
    ref_dt: float = 0.0
    gen_seeds: tuple = (1, 2, 3, 4)
    gen_steps: int = 4500

    def __post_init__(self):
        object.__setattr__(self, "gen_seeds", tuple(int(s) for s in self.gen_seeds))
        if self.window_policy not in WINDOW_POLICIES:
            raise ConfigurationError(f"window_policy must be one of {WINDOW_POLICIES}, got {self.window_policy!r}")
        if self.window_state not in WINDOW_STATES:
            raise ConfigurationError(f"window_state must be one of {WINDOW_STATES}, got {self.window_state!r}")
        if not 0.0 < self.window <= 1.0:
            raise ConfigurationError(f"window fraction must be in (0, 1], got {self.window}")
        if self.lr <= 0 or self.lr_decay <= 0 or self.lr_every < 1:
            raise ConfigurationError("learning-rate schedule needs lr > 0, lr_decay > 0, lr_every >= 1")
        if self.steps < 2:
            raise ConfigurationError(f"steps must be >= 2 (time derivative needs 3 snapshots), got {self.steps}")
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        self.arch.check_grid(*self.system.grid)
        if self.arch.channels != self.system.channels:
            raise ConfigurationError("arch channels differ from the PDE system's")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.lr_every)

    def identity(self) -> dict:
        """Fields that define a training run (epoch budget and eval settings excluded)."""
        d = asdict(self)
        for key in ("epochs", "checkpoint_every", "extrap_steps", "ref_dt", "gen_seeds", "gen_steps"):
            d.pop(key)
        d["system"]["bc"] = physics.format_bc(self.system.bc) if not isinstance(self.system.bc, tuple) \
            else [physics.format_bc(b) for b in self.system.bc]
        return d

    def config_hash(self) -> bytes:
        blob = json.dumps(self.identity(), sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(blob.encode()).digest()

    def with_(self, **changes) -> RunConfig:
        return replace(self, **changes)


def preset(name: str, grid: int = 128) -> RunConfig:
    """Full-scale benchmark settings."""
    if name == "burgers":
        return RunConfig(physics.burgers(grid), lr=6e-4, lr_decay=0.99, lr_every=50, steps=1000, extrap_steps=1000)
    if name in ("lambda-omega", "lo"):
        return RunConfig(physics.lambda_omega(grid), lr=5e-4, lr_decay=0.98, lr_every=100, steps=200, extrap_steps=200)
    if name in ("fn", "fitzhugh-nagumo"):
        return RunConfig(physics.fitzhugh_nagumo(grid), lr=5e-5, lr_decay=0.995, lr_every=50, steps=750,
                         extrap_steps=750)
    raise ConfigurationError(f"unknown system preset {name!r}; expected burgers, lambda-omega or fn")


@dataclass
class Checkpoint:
    params: dict
    adam: AdamState
    epoch: int
    config_hash: bytes
    arch: ArchSpec
    u0: np.ndarray
    loss_tail: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def tensors(self) -> dict:
        return {k: T.Tensor(v, requires_grad=True) for k, v in self.params.items()}


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # (epoch, lr, loss, mean_sq, window_start)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows])


class TrainingAborted(NumericError):
    """Loss became non-finite; ``checkpoint`` holds the last good state."""

    def __init__(self, message, checkpoint, step=None):
        super().__init__(message, step)
        self.checkpoint = checkpoint


def window_for(cfg: RunConfig, epoch: int):
    """``(start, length)`` of the training window used at ``epoch``."""
    total = cfg.steps
    if cfg.window_policy == "fixed-interval":
        start = total // 3
        return start, max(2, 2 * total // 3 - start)
    frac = cfg.window
    if cfg.pretrain and epoch < math.ceil(0.05 * cfg.epochs):
        frac = 0.1
    length = min(total, max(2, round(frac * total)))
    starts = [s for s in range(0, total, length) if total - s >= 2]
    start = starts[epoch % len(starts)]
    return start, min(length, total - start)


def _window_input(params, cfg: RunConfig, u0: T.Tensor, start: int):
    if start == 0:
        return u0, None
    with T.no_grad():
        frames, carry = rollout(u0, start, params, cfg.system.dt, cfg.arch)
    u_start = T.Tensor(frames[-1].data)
    if cfg.window_state == "carry":
        state = carry.lstm
        lstm = type(state)(T.Tensor(state.h.data), T.Tensor(state.c.data))
        return u_start, Carry(lstm, carry.step, u0 if cfg.arch.no_ar else None)
    net_state = type(carry.lstm).zeros(*carry.lstm.h.shape)
    return u_start, Carry(net_state, 0, u0 if cfg.arch.no_ar else None)


def train_epoch(params: dict, cfg: RunConfig, u0: T.Tensor, epoch: int):
    """Forward + backward for one epoch; returns ``(loss, mean_sq, grads, window_start)``."""
    start, length = window_for(cfg, epoch)
    u_start, carry = _window_input(params, cfg, u0, start)
    for p in params.values():
        p.zero_grad()
    frames, _ = rollout(u_start, length, params, cfg.system.dt, cfg.arch, carry)
    traj = T.stack(frames, axis=0)
    loss = physics.physics_loss(traj, cfg.system)
    value = loss.item()
    if not math.isfinite(value):
        return value, math.nan, None, start
    loss.backward()
    grads = {k: p.grad for k, p in params.items()}
    return value, value / traj.size, grads, start


def initial_checkpoint(cfg: RunConfig, u0) -> Checkpoint:
    params = init_params(cfg.arch, cfg.seed)
    return Checkpoint({k: p.data for k, p in params.items()}, AdamState.for_params(params), 0,
                      cfg.config_hash(), cfg.arch, np.array(u0, dtype=np.float64))


def _snapshot(params, adam, epoch, cfg, u0, tail) -> Checkpoint:
    return Checkpoint({k: p.data.copy() for k, p in params.items()}, adam.copy(), epoch,
                      cfg.config_hash(), cfg.arch, u0.copy(), np.array(tail[-LOSS_TAIL:]))


def _run(ckpt: Checkpoint, cfg: RunConfig, epochs: int, out_dir=None, log_rows=None) -> tuple:
    from .fileio import write_checkpoint

    params = ckpt.tensors()
    adam = ckpt.adam.copy()
    u0 = T.Tensor(ckpt.u0)
    tail = list(ckpt.loss_tail)
    train_log = TrainLog(log_rows if log_rows is not None else [])
    first_loss = tail[0] if tail else None
    bad_streak = 0
    warned = False
    last_good = ckpt
    for epoch in range(ckpt.epoch, ckpt.epoch + epochs):
        lr = cfg.lr_at(epoch)
        loss, msq, grads, start = train_epoch(params, cfg, u0, epoch)
        if grads is None:
            raise TrainingAborted(f"non-finite loss at epoch {epoch}", last_good, step=epoch)
        train_log.rows.append((epoch, lr, loss, msq, start))
        tail.append(loss)
        if first_loss is None:
            first_loss = loss
        bad_streak = bad_streak + 1 if loss > 1e3 * first_loss else 0
        if bad_streak >= 100 and not warned:
            log.warning("loss above 1000x its initial value for 100 epochs (epoch %d)", epoch)
            warned = True
        try:
            params = adam_step(params, grads, adam, lr)
        except NumericError as exc:
            raise TrainingAborted(f"epoch {epoch}: {exc}", last_good, step=epoch) from exc
        done = epoch + 1
        if log.isEnabledFor(logging.INFO) and (done % 50 == 0 or done == ckpt.epoch + epochs):
            log.info("epoch %d lr %.3e loss %.6e mse %.3e", done, lr, loss, msq)
        if cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
            last_good = _snapshot(params, adam, done, cfg, ckpt.u0, tail)
            if out_dir is not None:
                write_checkpoint(Path(out_dir) / f"ckpt_{done:06d}.phyc", last_good)
    final = _snapshot(params, adam, ckpt.epoch + epochs, cfg, ckpt.u0, tail)
    if out_dir is not None:
        write_checkpoint(Path(out_dir) / "final.phyc", final)
    return final, train_log


def train(cfg: RunConfig, u0, out_dir=None, epochs: int | None = None):
    """Train from initialization; returns ``(Checkpoint, TrainLog)``."""
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.shape != (cfg.arch.channels,) + cfg.system.grid:
        raise ConfigurationError(f"initial field shape {u0.shape} != {(cfg.arch.channels,) + cfg.system.grid}")
    return _run(initial_checkpoint(cfg, u0), cfg, cfg.epochs if epochs is None else epochs, out_dir)


def resume(ckpt: Checkpoint, cfg: RunConfig, extra_epochs: int, out_dir=None):
    """Continue training with restored Adam moments and schedule position."""
    if ckpt.config_hash != cfg.config_hash():
        raise ConfigurationError("checkpoint config hash does not match the run configuration; refusing to resume")
    if extra_epochs < 0:
        raise ConfigurationError(f"extra_epochs must be >= 0, got {extra_epochs}")
    return _run(ckpt, cfg, extra_epochs, out_dir)


def infer(ckpt: Checkpoint, u0, steps: int, dt: float) -> np.ndarray:
    """Pure rollout of ``steps`` steps from ``u0``; returns ``(steps + 1, C, H, W)``."""
    params = {k: T.Tensor(v) for k, v in ckpt.params.items()}
    with T.no_grad():
        frames, _ = rollout(np.asarray(u0, dtype=np.float64), steps, params, dt, ckpt.arch)
    return np.stack([f.data for f in frames])
