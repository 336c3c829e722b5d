import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from aggmatch import cli
from aggmatch.config import apply_overrides, from_dict, load_config
from aggmatch.errors import ConfigError
from aggmatch.runner import OUTPUT_ROOT_ENV
from aggmatch.trainer import METRIC_COLUMNS

TINY = {
    "dataset": {"source": "synth", "kind": "blobs", "n": 500, "classes": 4, "dim": 6, "noise": 0.5, "center_scale": 1.0, "test_fraction": 0.2},
    "split": {"labels_per_class": 4},
    "model": {"hidden": 16, "feature_dim": 8},
    "train": {"method": "aggmatch", "iterations": 30, "batch_size": 8, "mu": 2, "queue_size": 8, "num_subsets": 2, "tau": 0.6, "eval_every": 10},
    "seeds": [0],
    "output_dir": "out",
}


@pytest.fixture
def config_file(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "root"))

    def write(doc=None, name="cfg.json"):
        path = tmp_path / name
        path.write_text(json.dumps(TINY if doc is None else doc))
        return path

    return write


def out_dir(tmp_path):
    return tmp_path / "root" / "out"


# -- config --------------------------------------------------------------------

def test_missing_section_is_named():
    doc = {k: v for k, v in TINY.items() if k != "dataset"}
    with pytest.raises(ConfigError, match="dataset"):
        from_dict(doc)


@pytest.mark.parametrize(
    "patch, fragment",
    [
        ({"train": {**TINY["train"], "bogus": 1}}, "train.bogus"),
        ({"flavour": 1}, "flavour"),
        ({"train": {**TINY["train"], "lr": "fast"}}, "train.lr"),
        ({"train": {**TINY["train"], "tau": 1.5}}, "tau"),
        ({"seeds": []}, "seeds"),
        ({"methods": ["mixmatch"]}, "methods"),
        ({"noise": {"mapping": {"0": 0}, "rate": 0.5}}, "noise"),
    ],
)
def test_invalid_configs(patch, fragment):
    with pytest.raises(ConfigError, match=fragment):
        from_dict({**TINY, **patch})


def test_overrides_parse_json_values():
    raw = apply_overrides(TINY, ["train.iterations=10", "train.method=fixmatch", "split.labels_per_class=2"])
    cfg = from_dict(raw)
    assert cfg.train.iterations == 10 and cfg.train.method == "fixmatch" and cfg.split.labels_per_class == 2
    assert TINY["train"]["iterations"] == 30


def test_config_echo_reloads_identically(tmp_path):
    cfg = from_dict({**TINY, "noise": {"mapping": {"0": 1}, "rate": 0.1}})
    assert from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_shipped_configs_validate():
    from pathlib import Path

    root = Path(__file__).resolve().parent.parent / "configs"
    for path in sorted(root.glob("*.json")):
        load_config(path)


# -- run -------------------------------------------------------------------------

def test_run_with_override_writes_metrics_and_report(config_file, tmp_path):
    code = cli.main(["run", str(config_file()), "--train.iterations=10"])
    assert code == 0
    out = out_dir(tmp_path)
    with open(out / "metrics_aggmatch_0.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(METRIC_COLUMNS)
    assert [r[0] for r in rows[1:]] == [str(i) for i in range(1, 11)]
    report = json.loads((out / "report.json").read_text())
    assert report["summary"]["aggmatch"]["test_acc_std"] == 0.0
    assert report["config"]["train"]["iterations"] == 10
    assert (out / "checkpoint_aggmatch_0" / "model.txt").exists()


def test_metric_floats_have_nine_significant_digits(config_file, tmp_path):
    assert cli.main(["run", str(config_file())]) == 0
    with open(out_dir(tmp_path) / "metrics_aggmatch_0.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["test_acc"] == "nan"
    value = rows[0]["loss_sup"]
    assert len(value.replace(".", "").replace("-", "").lstrip("0").split("e")[0]) <= 9


def test_runs_are_byte_identical(config_file, tmp_path):
    path = config_file()
    assert cli.main(["run", str(path)]) == 0
    first = (out_dir(tmp_path) / "metrics_aggmatch_0.csv").read_bytes()
    assert cli.main(["run", str(path)]) == 0
    assert (out_dir(tmp_path) / "metrics_aggmatch_0.csv").read_bytes() == first


def test_report_rerun_from_echo(config_file, tmp_path):
    assert cli.main(["run", str(config_file())]) == 0
    out = out_dir(tmp_path)
    report = json.loads((out / "report.json").read_text())
    first = (out / "metrics_aggmatch_0.csv").read_bytes()
    echo = tmp_path / "echo.json"
    echo.write_text(json.dumps(report["config"]))
    assert cli.main(["run", str(echo)]) == 0
    assert (out / "metrics_aggmatch_0.csv").read_bytes() == first


def test_invalid_config_exit_code(config_file, capsys):
    doc = {k: v for k, v in TINY.items() if k != "dataset"}
    assert cli.main(["run", str(config_file(doc))]) == 2
    assert "dataset" in capsys.readouterr().err


def test_bad_override_exit_code(config_file):
    assert cli.main(["run", str(config_file()), "--train.lr=-1"]) == 2
    assert cli.main(["run", str(config_file()), "stray"]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_abort_exit_code(config_file, tmp_path):
    path = config_file()
    # a huge learning rate drives the logits to overflow
    assert cli.main(["run", str(path), "--train.lr=1e200", "--train.method=supervised"]) == 3
    dumps = list(out_dir(tmp_path).glob("abort_*.json"))
    assert len(dumps) == 1
    diag = json.loads(dumps[0].read_text())
    assert diag["method"] == "supervised" and "queue_fill" in diag


def test_parallel_seeds_match_sequential(config_file, tmp_path):
    doc = {**TINY, "seeds": [0, 1]}
    assert cli.main(["run", str(config_file(doc))]) == 0
    seq = [(out_dir(tmp_path) / f"metrics_aggmatch_{s}.csv").read_bytes() for s in (0, 1)]
    assert cli.main(["run", str(config_file({**doc, "parallel_seeds": True}))]) == 0
    par = [(out_dir(tmp_path) / f"metrics_aggmatch_{s}.csv").read_bytes() for s in (0, 1)]
    assert seq == par
    assert seq[0] != seq[1]


# -- dump ------------------------------------------------------------------------

def test_dump_without_checkpoint(config_file):
    assert cli.main(["dump", str(config_file()), "--what=features"]) == 2


def test_dumps(config_file, tmp_path):
    doc = {**TINY, "dataset": {**TINY["dataset"], "n": 2000}}
    path = config_file(doc)
    assert cli.main(["run", str(path)]) == 0
    out = out_dir(tmp_path)

    assert cli.main(["dump", str(path), "--what=features"]) == 0
    with open(out / "dump_features_aggmatch_0.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) - 1 == 400
    assert all(len(r) == 1 + 8 for r in rows)

    assert cli.main(["dump", str(path), "--what=attention", "--probe=5"]) == 0
    with open(out / "dump_attention_aggmatch_0.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[1][0] == "class"
    weights = np.array([[float(v) for v in r[1:]] for r in rows[2:]])
    assert weights.shape[0] == 5
    np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-7)

    assert cli.main(["dump", str(path), "--what=queue"]) == 0
    with open(out / "dump_queue_aggmatch_0.csv") as fh:
        rows = list(csv.reader(fh))
    assert 0 < len(rows) - 1 <= 4 * 8


def test_module_entry_point(config_file, tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "aggmatch", "run", str(config_file()), "--train.iterations=3"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "report.json" in proc.stdout
