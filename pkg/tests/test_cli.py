import csv
import json

import numpy as np
import pytest

from maskbeam.cli import main
from maskbeam.network import init_params
from maskbeam.weightfile import save_weights

SMALL = ["--set", "duration=1.0", "--set", "num_mics=2", "--set", "fft_size=256",
         "--set", "hop=64"]


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "nested" / "sim"
    assert main(["simulate", "--seed", "7", "--out", str(out)] + SMALL) == 0
    return out


def test_simulate_creates_outputs(sim_dir):
    for name in ("mixture.wav", "speech.wav", "interference.wav", "masks.mbmk", "config.txt",
                 "manifest.json"):
        assert (sim_dir / name).exists()
    man = json.loads((sim_dir / "manifest.json").read_text())
    assert man["seed"] == "7" and "numpy" in man["versions"] and len(man["config_hash"]) == 64


def test_simulate_deterministic(sim_dir, tmp_path):
    assert main(["simulate", "--seed", "7", "--out", str(tmp_path / "b")] + SMALL) == 0
    a = json.loads((sim_dir / "manifest.json").read_text())
    b = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert a["manifest_hash"] == b["manifest_hash"]


def test_invalid_scenario(tmp_path, capsys):
    assert main(["simulate", "--set", "scenario=9", "--out", str(tmp_path)]) == 2
    assert "scenario" in capsys.readouterr().err


def test_invalid_config(tmp_path):
    assert main(["simulate", "--set", "bogus=1", "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--set", "duration=abc", "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.txt")]) == 2
    assert main(["frobnicate"]) == 2


def test_config_file(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("M = 1\nK = 1\nT = 1\n")
    assert main(["report", "--config", str(cfg)]) == 0


def test_enhance_oracle_deterministic(sim_dir, tmp_path):
    for name in ("a", "b"):
        assert main(["enhance", "--set", f"data={sim_dir}", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "enhanced.wav").read_bytes() == (tmp_path / "b" / "enhanced.wav").read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "a" / "eval.csv")))
    assert rows[0]["beamformer"] == "gev-ban" and float(rows[0]["delta_snr_db"]) > 0


@pytest.mark.parametrize("bf", ["mvdr", "gev-pan"])
@pytest.mark.parametrize("psd", ["recursive", "oja"])
def test_enhance_variants(sim_dir, tmp_path, bf, psd):
    assert main(["enhance", "--beamformer", bf, "--psd", psd, "--set", f"data={sim_dir}",
                 "--out", str(tmp_path)]) == 0


def test_enhance_then_evaluate(sim_dir, tmp_path):
    assert main(["enhance", "--set", f"data={sim_dir}", "--out", str(tmp_path / "e")]) == 0
    assert main(["evaluate", "--set", f"data={sim_dir}",
                 "--set", f"enhanced={tmp_path / 'e' / 'enhanced.wav'}",
                 "--out", str(tmp_path / "v")]) == 0
    row = next(csv.DictReader(open(tmp_path / "v" / "eval.csv")))
    assert float(row["delta_snr_db"]) > 0


def test_enhance_with_network(sim_dir, tmp_path):
    w = tmp_path / "w.mbnw"
    save_weights(w, init_params(129, 2, seed=0, prec="q2_2"))
    assert main(["enhance", "--precision", "q2.2", "--set", f"data={sim_dir}",
                 "--set", "oracle=false", "--set", f"weights={w}", "--out", str(tmp_path)]) == 0
    row = next(csv.DictReader(open(tmp_path / "eval.csv")))
    assert 0 <= float(row["mask_accuracy"]) <= 1


def test_enhance_precision_mismatch(sim_dir, tmp_path, capsys):
    w = tmp_path / "w.mbnw"
    save_weights(w, init_params(129, 2, seed=0, prec="f32"))
    code = main(["enhance", "--precision", "bin1", "--set", f"data={sim_dir}",
                 "--set", "oracle=false", "--set", f"weights={w}", "--out", str(tmp_path)])
    assert code == 2
    assert "precision mismatch" in capsys.readouterr().err


def test_enhance_missing_data(tmp_path):
    assert main(["enhance", "--set", f"data={tmp_path / 'nope'}", "--out", str(tmp_path)]) == 2


def test_report_prints_table(capsys, tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    for n in ("590976", "6156", "526338", "8421408", "1579014", "11123892"):
        assert n in text
    assert (tmp_path / "report.txt").read_text().strip() == text.strip()


def test_bench_csv(tmp_path):
    assert main(["bench", "--set", "sizes=256,64,128", "--set", "reps=1", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "bench.csv")))
    sizes = [int(r["size"]) for r in rows]
    assert sizes == sorted(sizes) == [64, 128, 256]
    assert all(float(r["speedup"]) > 0 for r in rows)


def test_train_writes_checkpoint(tmp_path):
    args = ["train", "--seed", "1", "--out", str(tmp_path), "--set", "epochs=3",
            "--set", "validation_period=1", "--set", "num_train=3", "--set", "num_val=2",
            "--set", "frames=16", "--set", "fft_size=32", "--set", "hop=8"]
    assert main(args) == 0
    assert (tmp_path / "weights.mbnw").stat().st_size > 0
    rows = list(csv.DictReader(open(tmp_path / "curves.csv")))
    assert [int(r["epoch"]) for r in rows] == [1, 2, 3]
    assert np.isfinite([float(r["val_loss"]) for r in rows]).all()


def test_train_rejects_empty_dataset(tmp_path):
    assert main(["train", "--set", "num_train=0", "--out", str(tmp_path)]) == 2
