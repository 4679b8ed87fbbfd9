import pytest

from gaussdrift.config import DEFAULTS, ConfigError, RunConfig, dump_config, load_config, parse_config


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.cfg"
    p.write_text("")
    assert load_config(p) == DEFAULTS
    assert parse_config("# only a comment\n\n") == DEFAULTS


def test_values_comments_and_lists():
    cfg = parse_config("""
        bath.temperature = 0.5   # trailing comment
        vicinity.max_active = 3
        delta_x_list = 2, 4,6 , 8
        coherence_mode = mean-of-norms
        master_seed = 18446744073709551615
    """)
    assert cfg.temperature == 0.5
    assert cfg.max_active == 3
    assert cfg.delta_x_list == (2.0, 4.0, 6.0, 8.0)
    assert cfg.coherence_mode == "mean-of-norms"
    assert cfg.master_seed == 2**64 - 1


def test_dump_round_trips():
    cfg = DEFAULTS.replace(epsilon=0.1 + 0.2, delta_x_list=(1.5, 1 / 3), bath_mode="roster")
    assert parse_config(dump_config(cfg)) == cfg


def test_constraint_violation_names_key():
    with pytest.raises(ConfigError) as exc:
        parse_config("\nbath.density = -1\n")
    assert exc.value.kind == "constraint"
    assert exc.value.key == "bath.density"
    assert exc.value.line == 2
    assert "bath.density" in str(exc.value)


def test_unknown_key():
    with pytest.raises(ConfigError) as exc:
        parse_config("bath.densty = 1")
    assert exc.value.kind == "unknown-key" and exc.value.key == "bath.densty"


@pytest.mark.parametrize("text,line", [("a b c", 1), ("\n\nn_samples = many", 3),
                                       ("t_max =", 1), ("t_max = 1\nt_max = 2", 2)])
def test_parse_errors_report_line(text, line):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.kind == "parse" and exc.value.line == line
    assert f"line {line}" in str(exc.value)


@pytest.mark.parametrize("key,value", [
    ("model.width", "0"), ("bath.mass", "-2"), ("bath.env_width", "0"), ("bath.mode", "gas"),
    ("vicinity.radius", "0"), ("vicinity.max_active", "0"), ("ode_rel_tol", "0"),
    ("ode_abs_tol", "-1"), ("ode_max_step", "0"), ("n_samples", "4"), ("n_realizations", "0"),
    ("master_seed", "-1"), ("threads", "-1"), ("delta_x_list", "1, -2"), ("delta_x_list", "1, 1"),
    ("coherence_mode", "median"), ("separation_axis", "z"), ("t_max", "nan"),
    ("bath.roster_size", "-5"), ("model.epsilon", "-1"), ("noise_floor", "0"),
])
def test_each_constraint(key, value):
    with pytest.raises(ConfigError) as exc:
        parse_config(f"{key} = {value}")
    assert exc.value.key == key


def test_runconfig_builds_module_parameters():
    cfg = RunConfig(max_active=2, width=5.0, ode_rel_tol=1e-6)
    s = cfg.trajectory_settings()
    assert s.bath.max_active == 2 and s.width == 5.0 and s.rtol == 1e-6
    assert s.bath.interaction_width == 5.0
    assert cfg.resolved_threads() >= 1
    assert RunConfig(threads=3).resolved_threads() == 3
