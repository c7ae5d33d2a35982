import math

import pytest

from sllg.config import ConfigError, defaults, load_config, model_params, step_config, twin_config


def write(tmp_path, text, name="c.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_defaults_validate():
    cfg = load_config(environ={})
    assert cfg == defaults()
    assert cfg["blowup"]["epsilon0"] == 2 * math.pi
    assert model_params(cfg).beta == 0.5


def test_precedence(tmp_path):
    path = write(tmp_path, "model:\n  alpha: 0.5\n  beta: 0.3\nstep:\n  dt: 1e-4\n")
    env = {"SLLG_MODEL__ALPHA": "0.7", "SLLG_SEED": "9", "OTHER": "x"}
    cfg = load_config(path, ["model.alpha=0.9"], environ=env)
    assert cfg["model"]["alpha"] == 0.9
    assert cfg["model"]["beta"] == 0.3
    assert cfg["seed"] == 9
    assert cfg["step"]["dt"] == 1e-4  # YAML 1.1 reads this as a string
    assert load_config(path, environ=env)["model"]["alpha"] == 0.7


def test_lists_and_bools(tmp_path):
    cfg = load_config(None, ["run.snapshot_times=[0.001, 0.002]", "step.adaptive=false",
                             "run.t_end=0.01"], environ={})
    assert cfg["run"]["snapshot_times"] == [0.001, 0.002]
    assert step_config(cfg).adaptive is False


def test_unknown_key_line(tmp_path):
    path = write(tmp_path, "grid:\n  nx: 32\n  nz: 4\n")
    with pytest.raises(ConfigError, match=r"c.yaml:3: unknown key 'grid.nz'"):
        load_config(path, environ={})


def test_type_error_line(tmp_path):
    path = write(tmp_path, "seed: 1\nmodel:\n  alpha: fast\n")
    with pytest.raises(ConfigError, match=r"c.yaml:3: model.alpha: expected a number"):
        load_config(path, environ={})


def test_domain_error_pinpointed(tmp_path):
    path = write(tmp_path, "seed: 1\nmodel:\n  alpha: 1.0\n\n  beta: 1.2\n")
    with pytest.raises(ConfigError, match=r"c.yaml:5: model.beta: beta must lie in \(0, 1\)"):
        load_config(path, environ={})
    with pytest.raises(ConfigError, match="--set model.beta"):
        load_config(None, ["model.beta=1.2"], environ={})
    with pytest.raises(ConfigError, match="SLLG_MODEL__BETA"):
        load_config(None, environ={"SLLG_MODEL__BETA": "0"})


def test_malformed_yaml(tmp_path):
    path = write(tmp_path, "model:\n  alpha: [1,\n  beta: 2\n")
    with pytest.raises(ConfigError, match=r"c.yaml:\d+: malformed YAML"):
        load_config(path, environ={})
    with pytest.raises(ConfigError, match="top level must be a mapping"):
        load_config(write(tmp_path, "- 1\n- 2\n", "l.yaml"), environ={})


@pytest.mark.parametrize("override,fragment", [
    ("grid.nx=48", "powers of two"),
    ("step.scheme=euler", "scheme"),
    ("lp.beta_exp=0.5", "lp.beta_exp"),
    ("run.snapshot_times=[1.0]", "snapshot_times"),
    ("threads=0", "threads"),
    ("twin.delta=-1", "delta"),
    ("blowup.epsilon0=0", "epsilon0"),
    ("initial.kind=vortex", "kind"),
    ("nonsense", "key=value"),
])
def test_rejections(override, fragment):
    with pytest.raises(ConfigError, match=fragment):
        load_config(None, [override], environ={})


def test_manifest_accepted_as_config(tmp_path):
    import json

    cfg = load_config(None, ["seed=4", "model.alpha=0.25"], environ={})
    path = write(tmp_path, json.dumps({"kind": "sllg-manifest", "config": cfg}), "manifest.json")
    assert load_config(path, environ={}) == cfg


def test_twin_builder():
    cfg = load_config(None, ["twin.delta=0.01", "threads=2"], environ={})
    tc = twin_config(cfg)
    assert tc.delta == 0.01 and tc.threads == 2 and tc.base.nx == 64
