import json

import pytest

from evocf.cli import DATA_FILES, load_prepared, main
from evocf.config import config_items, format_config, parse_config
from evocf.errors import ConfigError
from evocf.evolution import EvolutionConfig

FAST = """\
population_size = 4
total_generation_number = 3
length_of_dnn = 4-5
neurons = 16-32
embedding_dim = 4-8
proxy_epochs = 1
final_epochs = 2
"""


@pytest.fixture(scope="module")
def toy_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    assert main(["prepare", "--toy", "--negatives", "20", "--out", str(out)]) == 0
    return out


@pytest.fixture
def fast_config(tmp_path):
    path = tmp_path / "fast.conf"
    path.write_text(FAST)
    return path


def evolve(data, out, *extra):
    return main(["evolve", "--data", str(data), "--out", str(out), *map(str, extra)])


def test_prepare_small_fixture(tmp_path, capsys):
    src = tmp_path / "three.dat"
    src.write_text("1::10::5::100\n1::11::4::200\n1::12::3::300\n")
    out = tmp_path / "a"
    assert main(["prepare", "--input", str(src), "--negatives", "0", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == sorted(DATA_FILES)
    assert "evaluated_users=1" in capsys.readouterr().out
    assert main(["prepare", "--input", str(src), "--negatives", "0", "--out", str(tmp_path / "b")]) == 0
    for name in DATA_FILES:
        assert (out / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_prepare_reports_dropped_user(tmp_path, capsys):
    src = tmp_path / "x.tsv"
    src.write_text("a\tp\t1\na\tq\t2\na\tr\t3\nb\tp\t1\nb\tq\t2\n")
    assert main(["prepare", "--input", str(src), "--format", "tsv_triples", "--negatives", "0",
                 "--out", str(tmp_path / "d")]) == 0
    assert "dropped_users=1" in capsys.readouterr().out.splitlines()


def test_prepare_round_trip(toy_data):
    ds = load_prepared(toy_data)
    assert ds.integrity_violations() == []
    assert ds.eval_negatives.shape[1] == 20


def test_prepare_parse_error_exit_2(tmp_path, capsys):
    src = tmp_path / "bad.dat"
    src.write_text("1::10::5::100\n1::11::five::200\n")
    assert main(["prepare", "--input", str(src), "--out", str(tmp_path / "o")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_prepare_missing_input_exit_2(tmp_path):
    assert main(["prepare", "--input", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2


def test_usage_error_exit_1(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["evolve", "--data", str(tmp_path)])
    assert info.value.code == 1


def test_bad_config_exit_1_before_compute(toy_data, tmp_path):
    conf = tmp_path / "bad.conf"
    conf.write_text("population_size = 0\n")
    assert evolve(toy_data, tmp_path / "run", "--config", conf) == 1
    assert not (tmp_path / "run").exists()


@pytest.mark.slow
def test_evolve_defaults_on_toy(toy_data, tmp_path):
    run = tmp_path / "run"
    assert evolve(toy_data, run) == 0
    lines = (run / "history.csv").read_text().splitlines()
    assert lines[0] == "generation,best_ndcg,mean_ndcg"
    assert len(lines) == 21
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["config"]["population_size"] == "16"
    assert manifest["status"] == "complete"


def test_evolve_is_deterministic(toy_data, tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("population_size = 8\ntotal_generation_number = 3\nproxy_epochs = 1\n"
                    "neurons = 16-64\nembedding_dim = 4-16\n")
    for name in ("a", "b"):
        assert evolve(toy_data, tmp_path / name, "--config", conf, "--seed", 3) == 0
    for name in ("best_genome.json", "history.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_interrupt_and_resume(toy_data, tmp_path, fast_config):
    assert evolve(toy_data, tmp_path / "full", "--config", fast_config) == 0
    part = tmp_path / "part"
    assert evolve(toy_data, part, "--config", fast_config, "--stop-after", 2) == 0
    assert not (part / "history.csv").exists()
    assert json.loads((part / "manifest.json").read_text())["status"] == "interrupted"
    assert evolve(toy_data, part, "--resume") == 0
    for name in ("best_genome.json", "history.csv"):
        assert (part / name).read_bytes() == (tmp_path / "full" / name).read_bytes()


def test_non_empty_rundir_rejected(toy_data, tmp_path, fast_config):
    run = tmp_path / "run"
    run.mkdir()
    (run / "keep.txt").write_text("x")
    assert evolve(toy_data, run, "--config", fast_config) == 1


def test_resume_without_checkpoint_exit_4(toy_data, tmp_path):
    assert evolve(toy_data, tmp_path / "empty", "--resume") == 4


def test_report(toy_data, tmp_path, fast_config, capsys):
    run = tmp_path / "run"
    assert evolve(toy_data, run, "--config", fast_config) == 0
    capsys.readouterr()
    assert main(["report", "--run", str(run), "--data", str(toy_data), "--k-max", "10"]) == 0
    text = (run / "report" / "metrics.csv").read_text()
    assert capsys.readouterr().out == text
    rows = text.splitlines()
    assert rows[0] == "K,HR,NDCG" and len(rows) == 11
    values = [tuple(map(float, r.split(","))) for r in rows[1:]]
    assert [int(v[0]) for v in values] == list(range(1, 11))
    for (_, h0, n0), (_, h1, n1) in zip(values, values[1:]):
        assert h1 >= h0 and n1 >= n0
    for name in ("metrics.png", "network.bin"):
        assert (run / "report" / name).stat().st_size > 0
    manifest = json.loads((run / "manifest.json").read_text())
    assert "report/metrics.csv" in manifest["artifacts"]


def test_report_without_candidates_hits_at_one(tmp_path, fast_config):
    data = tmp_path / "data"
    assert main(["prepare", "--toy", "--negatives", "0", "--out", str(data)]) == 0
    run = tmp_path / "run"
    assert evolve(data, run, "--config", fast_config) == 0
    assert main(["report", "--run", str(run), "--data", str(data)]) == 0
    assert (run / "report" / "metrics.csv").read_text().splitlines()[1] == "1,1.0,1.0"


def test_report_missing_best_genome_exit_4(toy_data, tmp_path):
    (tmp_path / "run").mkdir()
    assert main(["report", "--run", str(tmp_path / "run"), "--data", str(toy_data)]) == 4


def test_manifest_snapshot_reproduces_artifacts(toy_data, tmp_path, fast_config):
    first = tmp_path / "first"
    assert evolve(toy_data, first, "--config", fast_config, "--seed", 9) == 0
    manifest = json.loads((first / "manifest.json").read_text())
    conf = tmp_path / "snapshot.conf"
    conf.write_text("".join(f"{k} = {v}\n" for k, v in manifest["config"].items()))
    second = tmp_path / "second"
    assert evolve(toy_data, second, "--config", conf) == 0
    again = json.loads((second / "manifest.json").read_text())
    assert again["artifacts"] == manifest["artifacts"]


def test_synth_writes_movielens(tmp_path, capsys):
    out = tmp_path / "s.dat"
    assert main(["synth", "--users", "5", "--items", "12", "--mean-per-user", "6", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert f"interactions={len(lines)}" in capsys.readouterr().out
    assert all(len(line.split("::")) == 4 for line in lines)


def test_config_round_trip():
    cfg = parse_config(FAST)
    assert cfg.population_size == 4 and cfg.ranges.neurons == (16, 32)
    assert parse_config(format_config(cfg)) == cfg
    assert config_items(EvolutionConfig())["total_generation_number"] == "20"


def test_config_defaults_match_table():
    items = config_items(EvolutionConfig())
    assert items["population_size"] == "16"
    assert items["length_of_dnn"] == "4-10"
    assert items["neurons"] == "16-256"
    assert items["dropout_rate"] == "0.0-0.5"
    assert items["elitism_rate"] == "0.2"
    assert items["distribution_index"] == "1.0"


@pytest.mark.parametrize("text, match", [
    ("population_size 4", "expected 'key = value'"),
    ("colour = red", "unknown key"),
    ("neurons = 16", "expected lo-hi"),
    ("population_size = four", "cannot read"),
    ("neurons = 64-16", "exceeds upper bound"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)
