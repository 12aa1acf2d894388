from __future__ import annotations

import pytest

from besselwalk.config import ConfigError, KToken, config_to_text, load_config, parse_config
from besselwalk.walk import PerturbationKind

BASE = """[run]
experiment = converge-tail
n_grid = 64, 128
k_list = 1, sqrt:0.5
chi = 0.2
seed = 42

[spec.a]
delta = 0.5
perturbation.kind = rational

[spec.b]
delta = 0
perturbation.kind = inverse_square
perturbation.c = 0.1
x_override = 0.5, 0.45
"""


def test_parse_and_round_trip():
    cfg = parse_config(BASE)
    assert cfg.experiment == "converge-tail"
    assert cfg.n_grid == (64, 128) and cfg.chi == 0.2 and cfg.seed == 42
    assert [s for s, _ in cfg.specs] == ["a", "b"]
    assert cfg.spec_map["a"].kind is PerturbationKind.RATIONAL
    assert cfg.spec_map["b"].x_override == (0.5, 0.45)
    assert cfg.k_list[1].at(64) == 4 and cfg.k_list[1].label == "sqrt:0.5"
    assert parse_config(config_to_text(cfg)) == cfg


@pytest.mark.parametrize("edit,line,key", [
    (("chi = 0.2", "chi = 1.5"), 5, "chi"),
    (("n_grid = 64, 128", "n_grid = 128, 64"), 3, "n_grid"),
    (("seed = 42", "sede = 42"), 6, "sede"),
    (("perturbation.c = 0.1", "perturbation.cc = 0.1"), 15, "perturbation.cc"),
    (("experiment = converge-tail", "experiment = nope"), 2, "experiment"),
])
def test_errors_name_line_and_key(edit, line, key):
    with pytest.raises(ConfigError) as exc:
        parse_config(BASE.replace(*edit))
    assert exc.value.line == line and exc.value.key == key
    assert f"line {line}" in str(exc.value)


def test_duplicate_spec_ids():
    with pytest.raises(ConfigError) as exc:
        parse_config(BASE + "\n[spec.a]\ndelta = 1\n")
    assert "unique" in str(exc.value)


def test_missing_sections(tmp_path):
    with pytest.raises(ConfigError):
        parse_config("[spec.a]\ndelta=0\n")
    with pytest.raises(ConfigError):
        parse_config("[run]\n")
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.ini"))


def test_bad_spec_value():
    with pytest.raises(ConfigError) as exc:
        parse_config(BASE.replace("delta = 0.5", "delta = 30"))
    assert exc.value.section == "spec.a"


def test_ktoken():
    assert KToken.parse("7").at(10**6) == 7
    assert KToken.parse("sqrt:1").at(4096) == 64
    with pytest.raises(ValueError):
        KToken.parse("-1")
