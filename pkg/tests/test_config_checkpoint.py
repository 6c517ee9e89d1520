import numpy as np
import pytest
import torch

from metavrp import checkpoint as ckpt_io
from metavrp import config as C
from metavrp.errors import InvalidArgument, ParseError
from metavrp.meta import MetaState
from metavrp.policy import ModelConfig, init_params


def test_defaults_build_every_section():
    cfg = C.resolve()
    assert C.model_config(cfg) == ModelConfig()
    inner, outer = C.inner_config(cfg), C.outer_config(cfg)
    assert inner.K == 1 and inner.alpha == 1e-4 and inner.differentiable
    assert outer.beta == 1e-4 and outer.rule == "switch" and outer.total_iters == 2000
    assert C.train_settings(cfg).M == 64
    st = C.scheduler_state(cfg)
    assert [d.name for d in st.dists] == ["uniform", "gm_2_5"]


def test_resolution_order(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\nouter.beta = 0.001\ninner.K = 3  # trailing\n\n")
    cfg = C.resolve("paper_scale", f, {"inner.K": "2"})
    assert cfg["outer.beta"] == 0.001
    assert cfg["inner.K"] == 2
    assert cfg["scheduler.n_max"] == 200


@pytest.mark.parametrize("text,exc", [("nonsense", ParseError), ("bogus.key = 1", InvalidArgument),
                                      ("inner.K = two", InvalidArgument),
                                      ("outer.lr_decay = maybe", InvalidArgument)])
def test_bad_config_text(tmp_path, text, exc):
    f = tmp_path / "bad.cfg"
    f.write_text(text + "\n")
    with pytest.raises(exc):
        C.resolve(None, f)


def test_bad_preset_and_override():
    with pytest.raises(InvalidArgument):
        C.resolve("huge_scale")
    with pytest.raises(InvalidArgument):
        C.parse_overrides(["inner.K"])


def test_hash_stable_and_sensitive():
    a, b = C.resolve(), C.resolve()
    assert C.config_hash(a) == C.config_hash(b)
    assert len(C.config_hash(a)) == 16
    b["outer.beta"] = 2e-4
    assert C.config_hash(a) != C.config_hash(b)
    assert C.parse_config_text(C.dump(a))["outer.beta"] == "0.0001"


def test_checkpoint_round_trip(tmp_path):
    cfg = C.resolve(overrides={"model.embed_dim": "16", "model.heads": "2"})
    p = init_params(C.model_config(cfg), 3)
    g = torch.Generator().manual_seed(0)
    opt = {"m": torch.randn(p.values.numel(), generator=g, dtype=torch.float64),
           "v": torch.rand(p.values.numel(), generator=g, dtype=torch.float64), "t": 17}
    state = MetaState(p, 42, 7, opt)
    sched = {"weights": np.array([0.25, 0.75]), "gaps": np.array([0.1, 0.2]), "refreshed_at": 40}
    path = tmp_path / "a.ckpt"
    ckpt_io.save(path, ckpt_io.Checkpoint(state, cfg, sched, {"note": "x"}))
    back = ckpt_io.load(path)
    assert torch.equal(back.state.params.values, p.values)
    assert torch.equal(back.state.opt_state["m"], opt["m"])
    assert torch.equal(back.state.opt_state["v"], opt["v"])
    assert back.state.opt_state["t"] == 17 and back.state.e == 42 and back.state.seed == 7
    assert back.state.params.layout == p.layout
    assert back.state.params.config == p.config
    assert back.config == cfg
    assert np.array_equal(back.scheduler["weights"], sched["weights"])
    assert back.scheduler["refreshed_at"] == 40 and back.extra == {"note": "x"}


def test_checkpoint_corruption(tmp_path):
    path = tmp_path / "a.ckpt"
    ckpt_io.save(path, ckpt_io.Checkpoint(MetaState(init_params(ModelConfig(embed_dim=8, heads=2), 0)), {}))
    raw = path.read_bytes()
    (tmp_path / "trunc.ckpt").write_bytes(raw[:-5])
    with pytest.raises(ParseError):
        ckpt_io.load(tmp_path / "trunc.ckpt")
    (tmp_path / "magic.ckpt").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(ParseError):
        ckpt_io.load(tmp_path / "magic.ckpt")
