import csv
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from autoassign.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main
from autoassign.config import STRATEGY_NAMES, ConfigError, RunConfig

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

TINY = """\
scene.train_count = 24
scene.test_count = 4
optim.iterations = 12
optim.warmup = 4
optim.batch_size = 2
"""


def write_cfg(tmp_path, text=TINY, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- config

def test_defaults_round_trip_through_text():
    cfg = RunConfig()
    again = RunConfig.parse(cfg.to_text())
    assert again.values == cfg.values and again.categories == cfg.categories
    assert again.to_text() == cfg.to_text()


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.cfg")))
def test_shipped_configs_load(name):
    RunConfig.load(CONFIGS / name)


def test_unknown_key_names_line_and_key():
    with pytest.raises(ConfigError, match=r"x\.cfg:2: unknown key 'optim\.lerning_rate'"):
        RunConfig.parse("run.seed = 1\noptim.lerning_rate = 3\n", "x.cfg")


def test_bad_value_names_key():
    with pytest.raises(ConfigError, match=r"x\.cfg:1: key 'optim\.iterations'"):
        RunConfig.parse("optim.iterations = many\n", "x.cfg")


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError, match="repeats line 1"):
        RunConfig.parse("run.seed = 1\nrun.seed = 2\n")


def test_choice_outside_allowed_set():
    with pytest.raises(ConfigError, match="prior.mode"):
        RunConfig.parse("prior.mode = sometimes\n")


def test_category_indices_must_be_contiguous():
    with pytest.raises(ConfigError, match="contiguous"):
        RunConfig.parse("scene.category.1.kind = ellipse\n")


def test_every_strategy_resolves():
    for name in STRATEGY_NAMES:
        RunConfig().with_strategy(name)
    with pytest.raises(ConfigError):
        RunConfig().with_strategy("atss")


def test_offset_category_parsed():
    cfg = RunConfig.load(CONFIGS / "prior_shift.cfg")
    spec = cfg.scene_config().categories[2]
    assert spec.kind == "bottom-bar" and spec.offset_y == 0.25


# ---------------------------------------------------------------- exit codes

def test_missing_config_is_usage_error(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.cfg")]) == EXIT_USAGE


def test_unknown_key_is_usage_error(tmp_path, capsys):
    path = write_cfg(tmp_path, "model.depth = 3\n")
    assert main(["train", "--config", str(path)]) == EXIT_USAGE
    assert "run.cfg:1" in capsys.readouterr().err


def test_unknown_strategy_lists_valid_names(tmp_path, capsys):
    path = write_cfg(tmp_path)
    assert main(["train", "--config", str(path), "--strategy", "atss"]) == EXIT_USAGE
    assert "center-sampling+scale-ranges" in capsys.readouterr().err


def test_unknown_command(tmp_path):
    assert main(["fit", "--config", str(write_cfg(tmp_path))]) == EXIT_USAGE


def test_eval_without_checkpoint(tmp_path):
    path = write_cfg(tmp_path)
    assert main(["eval", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_gradcheck_fault_names_op(tmp_path, capsys):
    path = write_cfg(tmp_path, "gradcheck.seeds = 0\ngradcheck.model_seeds = 0\n"
                               "gradcheck.inject_fault = exp\n")
    assert main(["gradcheck", "--config", str(path), "--out", str(tmp_path / "g")]) == EXIT_FAIL
    out = capsys.readouterr().out
    assert "fault injected into 'exp'" in out and "exp" in out.split("failing ops:")[1]
    assert (tmp_path / "g" / "gradcheck_report.txt").exists()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "autoassign", "train", "--config",
                           str(tmp_path / "missing.cfg")], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE and "not found" in proc.stderr


# ---------------------------------------------------------------- commands

@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    path = write_cfg(root)
    out = root / "run"
    assert main(["train", "--config", str(path), "--out", str(out)]) == EXIT_OK
    return path, out


def test_train_outputs(trained):
    _, out = trained
    for name in ("checkpoint.bin", "checkpoint.manifest", "train_log.jsonl", "run_config.txt",
                 "probe_weights/positive_weights.csv", "probe_weights/negative_weights.csv"):
        assert (out / name).exists(), name
    assert len((out / "train_log.jsonl").read_text().splitlines()) == 12
    RunConfig.load(out / "run_config.txt")


def test_eval_writes_csv(trained):
    path, out = trained
    assert main(["eval", "--config", str(path), "--out", str(out)]) == EXIT_OK
    rows = read_rows(out / "eval.csv")
    assert [r["category"] for r in rows] == ["0", "1", "2", "3", "mean"]


def test_dump_weights_cardinality_and_normalization(trained):
    path, out = trained
    assert main(["dump-weights", "--config", str(path), "--out", str(out)]) == EXIT_OK
    files = sorted((out / "weights").glob("*.csv"))
    pos = [f for f in files if f.name.startswith("positive")]
    neg = [f for f in files if f.name.startswith("negative")]
    assert len(neg) == 2 and len(pos) % 2 == 0 and pos
    by_obj = {}
    for f in pos:
        for r in read_rows(f):
            by_obj[r["object_id"]] = by_obj.get(r["object_id"], 0.0) + float(r["w_pos"])
    assert len(by_obj) == len(pos) // 2
    for total in by_obj.values():
        assert total == pytest.approx(1.0, abs=1e-9)
    assert sum(len(read_rows(f)) for f in neg) == 320
    first = {f.name: f.read_bytes() for f in files}
    assert main(["dump-weights", "--config", str(path), "--out", str(out)]) == EXIT_OK
    assert {f.name: f.read_bytes() for f in sorted((out / "weights").glob("*.csv"))} == first


def test_dump_weights_bad_scene(trained, tmp_path, capsys):
    path, out = trained
    bad = write_cfg(tmp_path, TINY + f"dump.scene_id = 99\ndump.checkpoint = {out}\n")
    assert main(["dump-weights", "--config", str(bad), "--out", str(tmp_path / "d")]) == EXIT_USAGE
    assert "scene id 99" in capsys.readouterr().err


def test_gen_data(tmp_path):
    path = write_cfg(tmp_path)
    assert main(["gen-data", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_OK
    assert (tmp_path / "o" / "data" / "train").is_dir()
    assert (tmp_path / "o" / "data" / "test").is_dir()


def test_compare_single_strategy(tmp_path):
    path = write_cfg(tmp_path, TINY + "compare.seeds = 0\n")
    out = tmp_path / "c"
    assert main(["compare", "--config", str(path), "--out", str(out),
                 "--strategy", "center-sampling"]) == EXIT_OK
    table = read_rows(out / "compare.csv")
    assert len(table) == 1 and table[0]["strategy"] == "center-sampling"
    assert {f"ap50_cat{i}" for i in range(4)} <= set(table[0])
    runs = read_rows(out / "compare_runs.csv")
    assert len(runs) == 1 and "mu_y_cat3" in runs[0]


def test_rerun_is_bit_identical(tmp_path):
    path = write_cfg(tmp_path)
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["train", "--config", str(path), "--out", str(out)]) == EXIT_OK
    for name in ("checkpoint.bin", "train_log.jsonl", "probe_weights/positive_weights.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


def test_seed_changes_result(tmp_path):
    path = write_cfg(tmp_path)
    main(["train", "--config", str(path), "--out", str(tmp_path / "a")])
    main(["train", "--config", str(path), "--out", str(tmp_path / "b"), "--seed", "5"])
    assert (tmp_path / "a" / "checkpoint.bin").read_bytes() != \
        (tmp_path / "b" / "checkpoint.bin").read_bytes()


def test_smoke_config_runs_quickly(tmp_path):
    t0 = time.perf_counter()
    assert main(["train", "--config", str(CONFIGS / "smoke.cfg"),
                 "--out", str(tmp_path / "s")]) == EXIT_OK
    assert time.perf_counter() - t0 < 60


def test_offset_dataset_moves_prior_down(tmp_path):
    # one bottom-bar category with a 1x1 head; the prior centre should drift toward the bar
    text = ("scene.category.0.kind = bottom-bar\nscene.category.0.size_min = 32\n"
            "scene.category.0.size_max = 56\nscene.category.0.offset_y = 0.25\n"
            "scene.category.0.evidence_h = 0.1\nmodel.head_kernel = 1\n"
            "scene.train_count = 200\nscene.test_count = 4\noptim.iterations = 300\n")
    path = write_cfg(tmp_path, text)
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_OK
    last = (tmp_path / "o" / "train_log.jsonl").read_text().splitlines()[-1]
    mu = np.asarray(json.loads(last)["mu"])
    assert mu[0, 1] > 0.0
