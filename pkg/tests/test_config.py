import json

import pytest

from trajgame.config import ENV_VAR, Config, load_config, save_config


def test_defaults():
    c = Config()
    assert c.pref_hidden == (16, 24)
    assert c.order_hidden == (16, 4) and c.time_hidden == (64, 32)
    assert c.dropout == 0.6
    assert (c.big_change, c.small_change) == (1.2, 1.04)
    assert (c.dt, c.horizon_s) == (0.2, 7.0)
    assert c.n_future == 35 and c.num_steps == 34
    assert c.k_tilde == 4


@pytest.mark.parametrize("bad", [{"variant": "X"}, {"dropout": 1.0}, {"horizon_s": 7.1},
                                 {"corner_backward": "ad"}, {"k_tilde": 0}, {"optimizer": "sgd"}])
def test_invalid_values(bad):
    with pytest.raises(ValueError):
        Config(**bad)


def test_unknown_keys_rejected(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"k_tilda": 3}))
    with pytest.raises(ValueError, match="k_tilda"):
        load_config(tmp_path / "c.json")


def test_roundtrip_and_env_override(tmp_path, monkeypatch):
    c = Config(variant="TGL-D", k_tilde=2, time_hidden=(8, 4))
    save_config(c, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == c
    monkeypatch.setenv(ENV_VAR, str(tmp_path / "c.json"))
    assert load_config().variant == "TGL-D"
    assert load_config(seed=5).seed == 5


def test_solver_and_game_views():
    c = Config(grad_tol=1e-6, zeta=2.0)
    assert c.solve_options().grad_tol == 1e-6
    assert c.driving().zeta == 2.0
