from pathlib import Path

import pytest

from phycr import config as C
from phycr import physics as P
from phycr import trainer as TR
from phycr.errors import ConfigurationError

DESK = """
# desk-scale Burgers
[system]
preset = burgers
grid = 32

[arch]
cycle_index = 10

[train]
steps = 50        # training horizon
epochs = 2000
window_policy = "fixed-interval"
pretrain = true

[eval]
gen_seeds = [5, 6]
"""


def test_parse_overrides_preset():
    cfg = C.loads(DESK)
    assert cfg.system == P.burgers(32)
    assert cfg.arch.cycle_index == 10
    assert (cfg.steps, cfg.epochs, cfg.window_policy, cfg.pretrain) == (50, 2000, "fixed-interval", True)
    assert cfg.gen_seeds == (5, 6)
    assert cfg.lr == 6e-4 and cfg.lr_every == 50


@pytest.mark.parametrize("name", ["burgers", "lambda-omega", "fn"])
def test_preset_defaults(name):
    cfg = C.loads(f"[system]\npreset = {name}\n")
    assert cfg == TR.preset(name, 128)


def test_dump_round_trip():
    cfg = C.loads(DESK)
    assert C.loads(C.dumps(cfg)) == cfg
    per_side = cfg.with_(system=cfg.system.with_(bc=(P.Neumann(0.5), P.PERIODIC, P.Dirichlet(1.0), P.PERIODIC)))
    assert C.loads(C.dumps(per_side)) == per_side


@pytest.mark.parametrize("text,line,key", [
    ("[train]\nepochs = 5\nbogus = 1\n", 3, "bogus"),
    ("[arch]\ncycle_index = ten\n", 2, "cycle_index"),
    ("[train]\nlr = -1\n", 2, "lr"),
    ("[system]\npreset = burgers\ngrid = 30\n", 3, "grid"),
    ("[system]\nbc = robin\n", 2, "bc"),
    ("[train]\nseed = 1\nseed = 2\n", 3, "seed"),
    ("\n\n[train]\nwindow = 1.5\n", 4, "window"),
])
def test_errors_name_line_and_key(text, line, key):
    with pytest.raises(ConfigurationError) as info:
        C.loads(text, "run.cfg")
    msg = str(info.value)
    assert f"run.cfg:{line}" in msg and key in msg


def test_unknown_section_and_garbage():
    with pytest.raises(ConfigurationError, match=":1: unknown section"):
        C.loads("[model]\n")
    with pytest.raises(ConfigurationError, match=":2: expected 'key = value'"):
        C.loads("[train]\njust words\n")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError, match="cannot read"):
        C.load(tmp_path / "nope.cfg")


@pytest.mark.parametrize("path", sorted((Path(__file__).parents[1] / "configs").glob("*.cfg")), ids=lambda p: p.name)
def test_shipped_configs_load_and_round_trip(path):
    cfg = C.load(path)
    assert C.loads(C.dumps(cfg)) == cfg
