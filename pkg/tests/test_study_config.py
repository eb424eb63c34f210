import json

import pytest

from src.errors import ConfigError
from src.study_config import config_from_dict, parse_config, validate_config, velocity_polynomial


def minimal(**extra):
    config = {"problem": {"polytope": "segment", "velocity": "bump"}}
    config.update(extra)
    return config


def test_flagship_preset_file():
    config = parse_config("flagship")
    assert config.problem.polytope.dimension == 1
    assert config.levels == (8, 16, 32, 64, 128)
    assert config.T == 3.0
    assert config.s_step == 0.05
    assert config.x_window == 6.0
    assert config.problem.udot0.value(0.5) == pytest.approx(0.25)
    assert config.ma_resolutions == (128, 256, 512)


def test_all_shipped_presets_parse():
    for name in ("flagship", "linear-velocity", "zero-velocity", "simplex2"):
        assert parse_config(name).source.endswith(name + ".json")


def test_defaults_are_filled():
    config = config_from_dict(minimal())
    assert config.quadrature_tol == 1e-8
    assert config.singular_tol is None
    assert config.lifespan_resolution == 256
    assert config.ma_T == (1.5, 3.0)
    assert config.seed == 0 and config.plots is False


def test_unknown_key_is_named():
    with pytest.raises(ConfigError) as info:
        validate_config(minimal(foo=1))
    assert "foo" in info.value.keys


def test_missing_problem_is_named():
    with pytest.raises(ConfigError) as info:
        validate_config({"levels": [8, 16]})
    assert "problem" in info.value.keys


def test_all_errors_are_listed():
    with pytest.raises(ConfigError) as info:
        validate_config({"problem": {"polytope": "segment", "velocity": "bump", "bar": 2}, "foo": 1, "T": "x"})
    assert {"foo", "problem.bar", "T"} <= set(info.value.keys)


def test_levels_must_increase():
    with pytest.raises(ConfigError) as info:
        config_from_dict(minimal(levels=[16, 8]))
    assert info.value.keys == ["levels"]


def test_T_must_be_positive():
    with pytest.raises(ConfigError):
        config_from_dict(minimal(T=0))


def test_empty_grids_are_rejected():
    with pytest.raises(ConfigError):
        config_from_dict(minimal(levels=[]))
    with pytest.raises(ConfigError):
        config_from_dict(minimal(x_points=0))


def test_velocity_presets(segment, square):
    assert velocity_polynomial(segment, "zero").terms == ()
    assert velocity_polynomial(segment, "linear:1,0")(segment.vertices).tolist() == [0.0, 1.0]
    assert velocity_polynomial(segment, "linear:2")(segment.vertices).tolist() == [0.0, 2.0]
    assert velocity_polynomial(segment, "convex-bump")([[0.5]])[0] == pytest.approx(-0.25)
    assert velocity_polynomial(square, "bump")([[0.5, 0.5]])[0] == pytest.approx(0.5)
    assert velocity_polynomial(segment, [[1.0, [3]]])([[0.5]])[0] == pytest.approx(0.125)
    with pytest.raises(ConfigError):
        velocity_polynomial(square, "linear:1")


def test_inline_polytope_and_bad_polytope():
    good = minimal()
    good["problem"]["polytope"] = {"normals": [[1], [-1]], "offsets": [0, -2]}
    assert config_from_dict(good).problem.polytope.vertices.ravel().tolist() == [0.0, 2.0]
    bad = minimal()
    bad["problem"]["polytope"] = {"normals": [[2], [-1]], "offsets": [0, -1]}
    with pytest.raises(ConfigError) as info:
        config_from_dict(bad)
    assert info.value.keys == ["problem"]


def test_nonconvex_u0_is_a_problem_error():
    config = minimal()
    config["problem"]["u0_smooth"] = [[3.0, [1]], [-3.0, [2]]]
    with pytest.raises(ConfigError) as info:
        config_from_dict(config)
    assert info.value.keys == ["problem"]
    assert "strictly convex" in str(info.value)


def test_problem_key_tracks_problem_block():
    a = config_from_dict(minimal())
    b = config_from_dict(minimal(T=1.0, levels=[4, 8]))
    c = config_from_dict({"problem": {"polytope": "segment", "velocity": "linear:1,0"}})
    assert a.problem_key() == b.problem_key()
    assert a.problem_key() != c.problem_key()


def test_parse_config_reports_broken_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        parse_config(str(path))
    with pytest.raises(ConfigError):
        parse_config(str(tmp_path / "missing.json"))


def test_parse_config_from_file(tmp_path):
    path = tmp_path / "study.json"
    path.write_text(json.dumps(minimal(levels=[2, 4, 8], output=str(tmp_path / "out"))))
    config = parse_config(str(path))
    assert config.levels == (2, 4, 8)
    assert config.output == str(tmp_path / "out")
