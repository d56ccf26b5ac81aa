import pytest

from dpts.config import ENV_VAR, load_settings, parse_seeds
from dpts.errors import InvalidConfig


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_defaults_without_file(monkeypatch):
    monkeypatch.delenv(ENV_VAR, raising=False)
    s = load_settings(None)
    assert s.engine.width == 4 and s.backend["kind"] == "synthetic" and not s.bench_given


def test_sections_and_types(tmp_path):
    path = write(tmp_path, """
[engine]
width = 2
lambda_es = 0.4
use_search = off
max_expansions = 30
[memory]
o_max = 5000
[env]
depth = 3
term_prob = 0.1
[baseline]
beam_k = 2
time_limit_seconds = none
[bench]
algorithms = dpts, mcts
seeds = 0..4
lambda_es_grid = 0, 0.4
""")
    s = load_settings(path)
    assert s.engine.width == 2 and s.engine.lambda_es == 0.4 and s.engine.use_search is False
    assert s.engine.budget.max_expansions == 30 and s.memory.o_max == 5000
    assert s.env == {"depth": 3, "term_prob": 0.1}
    assert s.baseline.beam_k == 2 and s.baseline.time_limit_seconds is None
    assert s.bench.seeds == [0, 1, 2, 3, 4] and s.bench.lambda_es_grid == [0.0, 0.4]
    assert s.bench_given


def test_overrides(tmp_path):
    path = write(tmp_path, "[engine]\nwidth = 2\n")
    s = load_settings(path, ["engine.width=3", "engine.lambda_es=0.9", "bench.seeds=1,5"])
    assert s.engine.width == 3 and s.engine.lambda_es == 0.9 and s.bench.seeds == [1, 5]


def test_env_var_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_VAR, write(tmp_path, "[engine]\nwidth = 5\n"))
    assert load_settings(None).engine.width == 5


@pytest.mark.parametrize("text", [
    "[engine]\nwidht = 2\n",
    "[nope]\nx = 1\n",
    "[engine]\nwidth = two\n",
    "[engine]\nwidth = 0\n",
    "[backend]\nkind = grpc\n",
    "[backend]\nkind = http\n",
    "not an ini",
])
def test_rejections(tmp_path, text):
    with pytest.raises(InvalidConfig):
        load_settings(write(tmp_path, text))


def test_missing_file_named(tmp_path):
    missing = str(tmp_path / "absent.ini")
    with pytest.raises(InvalidConfig, match="absent.ini"):
        load_settings(missing)


@pytest.mark.parametrize("bad", ["engine", "engine.width", "width=3"])
def test_bad_override_syntax(bad):
    with pytest.raises(InvalidConfig):
        load_settings(None, [bad])


def test_seed_syntax():
    assert parse_seeds("2..4") == [2, 3, 4]
    assert parse_seeds("7") == [7]
    with pytest.raises(ValueError):
        parse_seeds("5..1")
