import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmgrw.config import EMIT_CHOICES, RunConfig, load_config, parse_config, serialize_config
from bmgrw.errors import ConfigError
from bmgrw.scenario import PRESETS


def test_defaults_and_comments():
    cfg = parse_config("""
# a comment line
scenario = two_gaussian   # trailing comment
grid.n = 512
initial.p0 = 0.7
output_dir = "runs/a#b"
""")
    assert cfg.preset == "two_gaussian"
    assert cfg.scenario.grid.n == 512
    assert cfg.scenario.initial.p0 == 0.7
    assert cfg.output_dir == "runs/a#b"
    assert cfg.emit == list(EMIT_CHOICES)


def test_int_promotes_to_float():
    cfg = parse_config("collapse.g = 2")
    assert cfg.scenario.collapse.g == 2.0 and isinstance(cfg.scenario.collapse.g, float)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_round_trip_every_preset(name):
    cfg = parse_config(f"scenario = {name}")
    text = serialize_config(cfg)
    again = parse_config(text)
    assert again.scenario == cfg.scenario
    assert serialize_config(again) == text


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**64 - 1), st.sampled_from([128, 256, 512]), st.floats(0.1, 2.0),
       st.lists(st.sampled_from(EMIT_CHOICES), unique=True))
def test_round_trip_property(seed, n, width, emit):
    cfg = parse_config(f"seed = {seed}\ngrid.n = {n}\ninitial.width = [{width!r}]\nemit = {emit}\ndt = 1e-4"
                       .replace("'", '"'))
    again = parse_config(serialize_config(cfg))
    assert again.scenario == cfg.scenario and again.emit == cfg.emit
    assert again.seed == seed


def test_overrides_win():
    cfg = parse_config("seed = 3\noutput_dir = a", overrides={"seed": 9, "output_dir": "b"})
    assert cfg.seed == 9 and cfg.output_dir == "b"


@pytest.mark.parametrize("text,key,line", [
    ("grid.n = 128\nbogus.key = 1", "bogus.key", 2),
    ("seed = 1\n\nseed = 2", "seed", 3),
    ("grid.n = 12.5", "grid.n", 1),
    ("# x\nkinetic = 1", "kinetic", 2),
    ("seed = -1", "seed", 1),
    ("threads = 0", "threads", 1),
    ("threads = many", "threads", 1),
    ("emit = [\"pdf\"]", "emit", 1),
    ("scenario = nothing", "scenario", None),
    ("dt = 0.01", "dt", 1),
    ("initial.p0 = 1.5", "initial.p0", 1),
    ("horizon = [1, 2", "horizon", 1),
])
def test_errors_carry_key_and_line(text, key, line):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.key == key
    assert exc.value.line == line


def test_line_without_equals():
    with pytest.raises(ConfigError) as exc:
        parse_config("seed = 1\njunk")
    assert exc.value.line == 2


def test_stability_bound_message():
    with pytest.raises(ConfigError, match="stability bound"):
        parse_config("dt = 0.01")


def test_threads():
    assert parse_config("threads = auto").thread_count() >= 1
    assert parse_config("threads = 3").thread_count() == 3
    assert RunConfig().thread_count() == 1


def test_load_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("scenario = equilibrium\nreplicas = 7\n")
    cfg = load_config(path, overrides={"seed": 4})
    assert cfg.scenario.replicas == 7 and cfg.seed == 4


def test_documented_examples_parse():
    import pathlib
    import re
    doc = pathlib.Path(__file__).resolve().parents[1] / "docs" / "config.md"
    blocks = re.findall(r"```\n(scenario = .*?)```", doc.read_text(), re.S)
    assert len(blocks) >= 10
    for text in blocks:
        cfg = parse_config(text)
        assert parse_config(serialize_config(cfg)).scenario == cfg.scenario
