import logging

import numpy as np
import pytest

from phycr import physics as P
from phycr import trainer as TR
from phycr.errors import ConfigurationError
from phycr.layers import ArchSpec, init_params, rollout

SMALL = ArchSpec(encoder_widths=(4, 32), hidden=32, upscale=4)


@pytest.fixture
def cfg():
    return TR.RunConfig(P.burgers(16), SMALL, epochs=6, lr=1e-3, steps=6, window=0.5)


@pytest.fixture
def u0(rng):
    return 0.2 * rng.standard_normal((2, 16, 16))


def params_equal(a, b):
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def test_lr_schedule_matches_closed_form():
    c = TR.preset("burgers", 32)
    assert c.lr_at(0) == 6e-4 and c.lr_at(49) == 6e-4
    assert abs(c.lr_at(100) - 5.8806e-4) < 1e-15
    lo, fn = TR.preset("lambda-omega", 32), TR.preset("fn", 32)
    assert abs(lo.lr_at(250) - 5e-4 * 0.98**2) < 1e-18
    assert abs(fn.lr_at(149) - 5e-5 * 0.995**2) < 1e-18


def test_presets_follow_benchmarks():
    b, lo, fn = (TR.preset(n, 128) for n in ("burgers", "lambda-omega", "fn"))
    assert (b.steps, lo.steps, fn.steps) == (1000, 200, 750)
    assert (b.system.dt, lo.system.dt, fn.system.dt) == (0.002, 0.025, 0.006)
    assert b.epochs == 10000
    assert fn.gen_steps == 4500 and len(fn.gen_seeds) == 4
    with pytest.raises(ConfigurationError):
        TR.preset("heat")


def test_cycle_window_covers_horizon(cfg):
    starts = [TR.window_for(cfg, e) for e in range(4)]
    assert starts == [(0, 3), (3, 3), (0, 3), (3, 3)]
    full = cfg.with_(window=1.0)
    assert TR.window_for(full, 7) == (0, 6)
    fixed = cfg.with_(steps=9, window_policy="fixed-interval")
    assert TR.window_for(fixed, 0) == (3, 3)


def test_pretrain_uses_short_window(cfg):
    c = cfg.with_(steps=40, epochs=100, pretrain=True)
    assert TR.window_for(c, 0)[1] == 4 and TR.window_for(c, 4)[1] == 4
    assert TR.window_for(c, 5)[1] == 20


def test_zero_epochs_returns_initialization(cfg, u0):
    ckpt, log = TR.train(cfg, u0, epochs=0)
    init = {k: p.data for k, p in init_params(SMALL, cfg.seed).items()}
    assert params_equal(ckpt.params, init) and log.rows == [] and ckpt.epoch == 0


def test_epoch_zero_loss_equals_initial_rollout_loss(cfg, u0):
    _, log = TR.train(cfg.with_(window=1.0), u0, epochs=1)
    frames, _ = rollout(u0, cfg.steps, init_params(SMALL, cfg.seed), cfg.system.dt, SMALL)
    traj = np.stack([f.data for f in frames])
    assert log.rows[0][2] == P.physics_loss(traj, cfg.system)
    assert log.rows[0][1] == cfg.lr


def test_training_reduces_loss(u0):
    c = TR.RunConfig(P.burgers(16), SMALL, lr=3e-3, steps=4, window=1.0)
    _, log = TR.train(c, u0, epochs=40)
    assert log.losses[-1] < 0.5 * log.losses[0]


def test_training_is_bit_reproducible(cfg, u0):
    a, la = TR.train(cfg, u0)
    b, lb = TR.train(cfg, u0)
    assert params_equal(a.params, b.params) and la.rows == lb.rows


@pytest.mark.parametrize("state", ["reset", "carry"])
def test_split_resume_equals_unsplit(cfg, u0, state):
    c = cfg.with_(window_state=state)
    whole, _ = TR.train(c, u0, epochs=6)
    half, _ = TR.train(c, u0, epochs=3)
    resumed, _ = TR.resume(half, c, 3)
    assert params_equal(whole.params, resumed.params)
    assert resumed.epoch == 6 and resumed.adam.step == whole.adam.step
    assert all(np.array_equal(whole.adam.m[k], resumed.adam.m[k]) for k in whole.params)


def test_resume_zero_epochs_is_identity(cfg, u0):
    ckpt, _ = TR.train(cfg, u0, epochs=2)
    same, _ = TR.resume(ckpt, cfg, 0)
    assert params_equal(ckpt.params, same.params) and same.epoch == 2


def test_resume_refuses_other_config(cfg, u0):
    ckpt, _ = TR.train(cfg, u0, epochs=1)
    with pytest.raises(ConfigurationError, match="hash"):
        TR.resume(ckpt, cfg.with_(lr=2e-3), 1)
    # epoch budget and evaluation settings are not part of the identity
    TR.resume(ckpt, cfg.with_(epochs=99, extrap_steps=5), 0)


def test_infer_reproduces_training_rollout(cfg, u0):
    ckpt, _ = TR.train(cfg, u0, epochs=2)
    traj = TR.infer(ckpt, u0, cfg.steps, cfg.system.dt)
    params = ckpt.tensors()
    frames, _ = rollout(u0, cfg.steps, params, cfg.system.dt, SMALL)
    assert np.array_equal(traj, np.stack([f.data for f in frames]))
    assert TR.infer(ckpt, u0, 3 * cfg.steps, cfg.system.dt).shape == (3 * cfg.steps + 1, 2, 16, 16)


def test_nan_aborts_with_last_good_checkpoint(cfg, u0):
    c = cfg.with_(checkpoint_every=2)
    bad = u0.copy()
    bad[0, 0, 0] = 1e200  # squares overflow inside the loss
    with pytest.raises(TR.TrainingAborted) as info:
        with np.errstate(all="ignore"):
            TR.train(c, bad, epochs=3)
    assert info.value.checkpoint.epoch == 0


def test_divergence_warning(cfg, u0, caplog, monkeypatch):
    losses = iter([1.0] + [1e4] * 200)

    def fake_epoch(params, c, u, epoch):
        return next(losses), 0.0, {k: np.zeros(p.shape) for k, p in params.items()}, 0

    monkeypatch.setattr(TR, "train_epoch", fake_epoch)
    with caplog.at_level(logging.WARNING, logger="phycr.trainer"):
        TR.train(cfg, u0, epochs=105)
    assert "1000x" in caplog.text


def test_checkpoints_written_at_cadence(cfg, u0, tmp_path):
    TR.train(cfg.with_(checkpoint_every=2), u0, out_dir=tmp_path, epochs=4)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["ckpt_000002.phyc", "ckpt_000004.phyc", "final.phyc"]


def test_config_validation():
    with pytest.raises(ConfigurationError):
        TR.RunConfig(P.burgers(16), SMALL, window=0.0)
    with pytest.raises(ConfigurationError):
        TR.RunConfig(P.burgers(16), SMALL, window_policy="random")
    with pytest.raises(ConfigurationError):
        TR.RunConfig(P.burgers(18), SMALL)
    with pytest.raises(ConfigurationError):
        TR.RunConfig(P.burgers(16), SMALL, steps=1)


def test_trainer_does_not_import_reference_solvers():
    import ast
    import inspect

    tree = ast.parse(inspect.getsource(TR))
    names = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.ImportFrom):
            names.add(node.module or "")
            names.update(a.name for a in node.names)
        elif isinstance(node, ast.Import):
            names.update(a.name for a in node.names)
    assert not any("refsolve" in n for n in names)
