import pytest

from convexcip.config import ConfigError, InverseConfig, load_config


def test_defaults():
    c = InverseConfig()
    assert (c.T, c.Nt, c.epsilon, c.alpha, c.lam, c.c) == (4.0, 20, 0.01, 3e-5, 3.0, 5.0)
    assert c.forward_mesh == pytest.approx(1 / 60) and c.forward_steps == 800
    c3 = InverseConfig(n=3)
    assert c3.forward_mesh == 0.1 and c3.forward_steps == 400
    assert c.forward_radius == 6.0 and c.forward_formulation == "total"
    assert c3.forward_radius == 2.5 and c3.forward_formulation == "scattered"
    assert InverseConfig(n=3, radius=4.0, formulation="total").forward_radius == 4.0


def test_invalid_values_name_the_field():
    with pytest.raises(ConfigError) as info:
        InverseConfig(epsilon=5.0)
    assert info.value.path == "problem.epsilon"
    with pytest.raises(ConfigError, match="forward.time_scheme"):
        InverseConfig(time_scheme="rk4")
    with pytest.raises(ConfigError, match="forward.substeps"):
        InverseConfig(substeps=0)
    with pytest.raises(ConfigError, match="problem.Nt"):
        InverseConfig(Nt=3)


def test_ini_env_and_override_precedence(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[problem]\nlam = 2\nNt = 12\n[data]\nphantom = L\n")
    env = {"CONVEXCIP_PROBLEM_LAM": "1.5", "CONVEXCIP_DATA_SIGMA": "0.01"}
    c = load_config(str(p), {"Nt": "30"}, environ=env)
    assert c.lam == 1.5 and c.sigma == 0.01 and c.Nt == 30 and c.phantom == "L"
    assert load_config(str(p), environ={}).lam == 2.0


def test_bad_ini_entries(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[problem]\nbogus = 1\n")
    with pytest.raises(ConfigError, match="problem.bogus"):
        load_config(str(p), environ={})
    p.write_text("[data]\nlam = 1\n")  # right key, wrong section
    with pytest.raises(ConfigError):
        load_config(str(p), environ={})
    p.write_text("[problem]\nNt = many\n")
    with pytest.raises(ConfigError, match="cannot parse"):
        load_config(str(p), environ={})
    with pytest.raises(ConfigError, match="CONVEXCIP_PROBLEM_N"):
        load_config(None, environ={"CONVEXCIP_PROBLEM_N": "two"})


def test_optional_and_bool_parsing():
    c = load_config(None, {"mesh": "auto", "anchor": "off", "steps": "40"}, environ={})
    assert c.mesh is None and c.anchor is False and c.steps == 40


def test_to_ini_round_trip(tmp_path):
    c = InverseConfig(lam=2.5, alpha=1e-6, mesh=0.05, phantom="SZ", anchor=False)
    p = tmp_path / "c.ini"
    p.write_text(c.to_ini())
    assert load_config(str(p), environ={}) == c
    p.write_text(InverseConfig().to_ini())
    assert load_config(str(p), environ={}) == InverseConfig()
