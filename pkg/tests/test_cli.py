import json
import subprocess
import sys

import numpy as np
import pytest

from hoprbm.cli import build_parser, main
from hoprbm.data_io import ModelArchive, load_model, read_metrics_csv, save_model


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_missing_model_reports_json_error(capsys, tmp_path):
    code, out, err = run(capsys, "eval", "ais", "--model", str(tmp_path / "none.hrbm"))
    assert code == 1 and out == ""
    doc = json.loads(err)
    assert doc["error"] == "not_found" and doc["type"] == "FileNotFoundError"


def test_corrupted_archive_error_code(capsys, tmp_path):
    path = tmp_path / "bad.hrbm"
    path.write_bytes(b"HOPRBM01" + b"\x05" + bytes(7) + b"{{{{{")
    code, _, err = run(capsys, "reverse", "binarize", "--model", str(path))
    assert code == 1
    assert json.loads(err)["error"] == "schema_mismatch"


def test_render_shape_error(capsys, tmp_path):
    path = tmp_path / "w.hrbm"
    save_model(ModelArchive("rbm", (10, 2), 1.0, {"W": np.ones((10, 2))}), path)
    code, _, err = run(capsys, "render", "--model", str(path), "--out", str(tmp_path / "w.png"))
    assert code == 1 and json.loads(err)["error"] == "shape_unknown"
    code, out, _ = run(capsys, "render", "--model", str(path), "--out", str(tmp_path / "w.png"), "--shape", "2,5")
    assert code == 0 and json.loads(out)["out"].endswith("w.png")


def test_ais_on_archive(capsys, tmp_path):
    path = tmp_path / "z.hrbm"
    save_model(ModelArchive("rbm", (6, 2), 1.0, {"W": np.zeros((6, 2))}), path)
    csv = tmp_path / "w.csv"
    code, out, _ = run(capsys, "eval", "ais", "--model", str(path), "--chains", "8", "--steps", "20", "--out", str(csv))
    assert code == 0
    doc = json.loads(out)
    assert doc["value"] == pytest.approx(6 * np.log(2)) and doc["method"] == "ais"
    assert len(read_metrics_csv(csv)) == 8


def test_parser_lists_every_subcommand():
    text = build_parser().format_help()
    for name in ("patterns", "map", "train", "eval", "reverse", "classify", "retrieve", "render", "experiment"):
        assert name in text


def test_entry_point_exit_codes(tmp_path):
    res = subprocess.run([sys.executable, "-m", "hoprbm.cli", "eval", "ais", "--model", str(tmp_path / "x")],
                         capture_output=True, text=True)
    assert res.returncode != 0
    assert json.loads(res.stderr.strip().splitlines()[-1])["error"] == "not_found"


@pytest.mark.usefixtures("mnist_train")
def test_pipeline_end_to_end(capsys, tmp_path):
    pat, rbm, hop = (str(tmp_path / n) for n in ("p.hrbm", "r.hrbm", "h.hrbm"))
    code, out, _ = run(capsys, "patterns", "build", "--k", "1", "--subset", "3000", "--out", pat)
    assert code == 0 and json.loads(out)["p"] == 10
    code, out, _ = run(capsys, "map", "hn2rbm", "--patterns", pat, "--beta", "2.0", "--out", rbm)
    assert code == 0
    arc = load_model(rbm)
    np.testing.assert_allclose(arc.matrices["W"] @ arc.matrices["R"], arc.matrices["xi"], atol=1e-10)
    code, out, _ = run(capsys, "reverse", "binarize", "--model", rbm, "--out", hop)
    doc = json.loads(out)
    assert code == 0 and doc["binarization_error"] < 1e-10 and doc["bits_changed"] == 0
    np.testing.assert_array_equal(load_model(hop).matrices["xi"], arc.matrices["xi"])
    code, out, _ = run(capsys, "retrieve", "--model", hop, "--patterns", hop, "--test-subset", "200")
    assert code == 0 and json.loads(out)["accuracy"] > 0.5
    code, out, _ = run(capsys, "render", "--model", pat, "--out", str(tmp_path / "xi.png"))
    assert code == 0
    metrics = str(tmp_path / "m.csv")
    code, out, _ = run(capsys, "train", "--init", "pca", "--subset", "500", "--epochs", "1", "--cd", "2",
                       "--out", str(tmp_path / "t.hrbm"), "--metrics", metrics)
    assert code == 0 and {r["metric"] for r in read_metrics_csv(metrics)} >= {"weight_norm"}
    code, out, _ = run(capsys, "classify", "poe", "--init", "hopfield", "--k", "1", "--epochs", "0",
                       "--subset", "2000", "--test-subset", "500")
    assert code == 0 and json.loads(out)["test_error"] < 0.5


@pytest.mark.usefixtures("mnist_train")
def test_experiment_command_is_deterministic(capsys, tmp_path):
    blobs = []
    for name in ("a", "b"):
        code, out, _ = run(capsys, "--threads", "1", "experiment", "fig4_generative", "--out", str(tmp_path / name),
                           "--subset", "500", "--runs", "1", "--epochs", "1", "--chains", "10", "--ais-steps", "30",
                           "--cd", "2", "--inits", "hopfield,random")
        assert code == 0
        blobs.append((tmp_path / name / "metrics.csv").read_bytes())
    assert blobs[0] == blobs[1]
