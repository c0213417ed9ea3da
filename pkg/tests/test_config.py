import math

import pytest
from hypothesis import given, settings, strategies as st

from ymflow.config import (ConfigError, format_value, load_config, parse_config, parse_value)
from ymflow.scenarios import shipped_scenarios

MINIMAL = """\
[torus]
n = 1
grid = [16, 16]

[bundle]
construction = line
degrees = [1]

[flow]
t_max = 0
"""


def test_minimal_config_fills_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.torus.tau == [1j]
    assert cfg.bundle.degrees == [[1]]
    assert cfg.flow.t_max == 0 and cfg.flow.dt is None and cfg.flow.cfl == 0.5
    assert cfg.flow.sample_every == 10 and cfg.flow.snapshot_every == 1000
    assert cfg.diagnostics.radii == [2.0, 3.0, 4.0] and cfg.diagnostics.epsilon is None
    assert cfg.output.precision == 17 and cfg.filtration.stages == []


def test_odd_grid_names_the_key():
    with pytest.raises(ConfigError) as exc:
        parse_config(MINIMAL.replace("[16, 16]", "[15, 16]"))
    (ln, msg), = exc.value.errors
    assert ln == 3 and "torus.grid" in msg


def test_all_errors_reported_with_lines():
    text = """\
[torus]
n = 1
grid = [16, 16]
colour = red
[bundle]
construction = spiral
[flow]
t_max = -1
sample_every = 0
[nowhere]
"""
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    lines = {ln for ln, _ in exc.value.errors}
    assert lines == {4, 6, 8, 9, 10}
    assert all(ln > 0 for ln, _ in exc.value.errors)


def test_missing_keys_point_at_section_or_zero():
    with pytest.raises(ConfigError) as exc:
        parse_config("[torus]\nn = 1\n")
    by_msg = {m: ln for ln, m in exc.value.errors}
    assert by_msg["missing required key torus.grid"] == 1
    assert by_msg["missing required key flow.t_max"] == 0


def test_duplicate_and_syntax_errors():
    with pytest.raises(ConfigError) as exc:
        parse_config(MINIMAL + "t_max = 1\nnot a pair\n[bad header\n")
    msgs = " ".join(m for _, m in exc.value.errors)
    assert "duplicate key flow.t_max" in msgs and "expected 'key = value'" in msgs
    assert "bad section header" in msgs


def test_golden_split_unstable():
    cfg = load_config(shipped_scenarios()["split_unstable"])
    assert (cfg.torus.n, cfg.torus.grid, cfg.torus.tau) == (1, [32, 32], [1j])
    assert cfg.bundle.construction == "sum" and cfg.bundle.degrees == [[1], [-1]]
    assert cfg.filtration.stages == ["canonical"] and cfg.filtration.expected_degrees == [1.0]
    assert cfg.flow.t_max == 5.0 and cfg.flow.dt is None and cfg.flow.cfl == 1.0
    assert cfg.flow.monitors == ["stage", "residuals", "moser", "density"]
    assert cfg.diagnostics.q == 8.0 and cfg.diagnostics.p == 2.0 and cfg.diagnostics.window is None
    assert cfg.output.directory == "out/split_unstable"


@pytest.mark.parametrize("name", sorted(shipped_scenarios()))
def test_shipped_configs_echo_round_trip(name):
    cfg = load_config(shipped_scenarios()[name])
    assert parse_config(cfg.echo()) == cfg


def test_overrides_replace_values():
    path = shipped_scenarios()["split_unstable"]
    cfg = load_config(path, {("torus", "grid"): [16, 16], ("flow", "t_max"): 0.5})
    assert cfg.torus.grid == [16, 16] and cfg.flow.t_max == 0.5
    with pytest.raises(ConfigError) as exc:
        load_config(path, {("torus", "grid"): [9, 9]})
    assert exc.value.errors[0][0] == 0


def test_value_types():
    assert parse_value("3") == 3 and isinstance(parse_value("3"), int)
    assert parse_value("-2.5e-3") == -2.5e-3
    assert parse_value("0.3+1.2i") == 0.3 + 1.2j and parse_value("1i") == 1j
    assert parse_value("[1, [2, 3], word]") == [1, [2, 3], "word"]
    assert parse_value('"a, b"') == "a, b"
    assert parse_value("i") == "i"
    for bad in ("", "[1, 2", "@x", '"open'):
        with pytest.raises(ValueError):
            parse_value(bad)


_scalars = st.one_of(
    st.integers(-10**12, 10**12),
    st.floats(allow_nan=False),
    st.complex_numbers(allow_nan=False, allow_infinity=False),
    st.text(st.characters(blacklist_characters='"', blacklist_categories=("Cc", "Cs", "Zl", "Zp")),
            max_size=12),
)


@settings(max_examples=300, deadline=None)
@given(st.recursive(_scalars, lambda inner: st.lists(inner, max_size=4), max_leaves=10))
def test_format_parse_round_trip(v):
    back = parse_value(format_value(v))
    assert back == v and type(back) is type(v)
    if isinstance(v, float) and v == 0:
        assert math.copysign(1, back) == math.copysign(1, v)
