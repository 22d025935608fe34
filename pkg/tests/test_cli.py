import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import tiny_config
from ssdkd import cli, data, pgm
from ssdkd.io import read_csv


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "config.json"
    p.write_text(tiny_config().to_json())
    return p


@pytest.fixture
def teacher_ckpt(tmp_path, cfg_path):
    out = tmp_path / "teacher.ckpt"
    assert cli.main(["pretrain", "--config", str(cfg_path), "--out", str(out)]) == 0
    return out


def test_pretrain_outputs(tmp_path, cfg_path, teacher_ckpt):
    header, rows = read_csv(str(teacher_ckpt) + ".metrics.csv")
    assert header == cli.METRICS_HEADER and rows
    again = tmp_path / "again.ckpt"
    assert cli.main(["pretrain", "--config", str(cfg_path), "--out", str(again), "--cache-data"]) == 0
    assert again.read_bytes() == teacher_ckpt.read_bytes()
    assert (tmp_path / "again.ckpt.data").exists()


def test_missing_key_exits_2_naming_it(tmp_path, capsys):
    d = tiny_config().to_dict()
    del d["teacher"]["lr"]
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    assert cli.main(["pretrain", "--config", str(p), "--out", str(tmp_path / "x")]) == 2
    assert "teacher.lr" in capsys.readouterr().err


def test_bad_json_exits_2_with_position(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"teacher": {"lr": 0.1},\n "student": }')
    assert cli.main(["pretrain", "--config", str(p), "--out", str(tmp_path / "x")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as info:
        cli.main(["distill"])
    assert info.value.code == 2


def test_distill_outputs(tmp_path, cfg_path, teacher_ckpt):
    out = tmp_path / "run"
    assert cli.main(["distill", "--config", str(cfg_path), "--teacher", str(teacher_ckpt),
                     "--out", str(out)]) == 0
    cfg = tiny_config()
    header, rows = read_csv(out / "metrics.csv")
    assert header == cli.METRICS_HEADER
    keys = [tuple(r[i] for i in (0, 1, 2, 3, 5)) for r in rows]
    assert len(keys) == len(set(keys))
    assert {int(r[1]) for r in rows} == {-1, *range(cfg.engine.epochs)}
    forwards = [float(r[4]) for r in rows if r[3] == "original_forwards"]
    assert forwards == [0.0]

    hist = json.loads((out / "histograms.json").read_text())
    assert len(hist) == cfg.engine.epochs
    for e, h in enumerate(hist, start=1):
        size = min(e * cfg.engine.synth_batch, cfg.replay.capacity)
        assert set(h) == {"epoch", "bins", "census"}
        assert sum(h["bins"]) == size == sum(h["census"].values())
        assert list(h["census"]) == [str(c) for c in range(cfg.data.classes)]
    with open(out / "buffer.csv", newline="") as fh:
        buffer_rows = list(csv.reader(fh))
    assert buffer_rows[0] == ["seq", "c_T", "p_T", "priority", "probability"]
    assert len(buffer_rows) - 1 == cfg.replay.capacity
    assert (out / "student.ckpt").read_bytes()[:4] == b"SSDK"


def test_one_epoch_emits_one_report_set(tmp_path, teacher_ckpt):
    p = tmp_path / "one.json"
    p.write_text(tiny_config(engine={"epochs": 1}).to_json())
    out = tmp_path / "run1"
    assert cli.main(["distill", "--config", str(p), "--teacher", str(teacher_ckpt), "--out", str(out)]) == 0
    _, rows = read_csv(out / "metrics.csv")
    assert {r[1] for r in rows} == {"-1", "0"}


def test_distill_bad_magic_exits_2(tmp_path, cfg_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"XXXX\x01\x00")
    assert cli.main(["distill", "--config", str(cfg_path), "--teacher", str(bad),
                     "--out", str(tmp_path / "o")]) == 2


def test_distill_numerical_failure_exits_3(tmp_path, cfg_path, teacher_ckpt):
    from ssdkd.nn import load_checkpoint, save_checkpoint

    arrays = load_checkpoint(teacher_ckpt)
    arrays["0.weight"][0, 0] = np.nan
    broken = tmp_path / "nan.ckpt"
    save_checkpoint(broken, arrays)
    assert cli.main(["distill", "--config", str(cfg_path), "--teacher", str(broken),
                     "--out", str(tmp_path / "o")]) == 3


def test_seed_env_override(tmp_path, cfg_path, teacher_ckpt, monkeypatch):
    monkeypatch.setenv("SSDKD_SEED", "17")
    out = tmp_path / "seeded"
    assert cli.main(["distill", "--config", str(cfg_path), "--teacher", str(teacher_ckpt),
                     "--out", str(out)]) == 0
    _, rows = read_csv(out / "metrics.csv")
    assert {r[5] for r in rows} == {"17"}
    monkeypatch.setenv("SSDKD_SEED", "abc")
    assert cli.main(["distill", "--config", str(cfg_path), "--teacher", str(teacher_ckpt),
                     "--out", str(out)]) == 2


def test_ablate_csv(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(tiny_config(engine={"epochs": 1}).to_json())
    out = tmp_path / "abl"
    assert cli.main(["ablate", "--config", str(p), "--seeds", "2", "--out", str(out)]) == 0
    header, rows = read_csv(out / "ablation.csv")
    assert header == ["ps", "difficulty", "diversity", "seed", "accuracy", "seconds"]
    assert len(rows) == 12
    assert cli.main(["ablate", "--config", str(p), "--seeds", "0", "--out", str(out)]) == 2


def test_dump_samples_scatter_and_clamp(tmp_path, cfg_path, teacher_ckpt, capsys):
    run = tmp_path / "run"
    cli.main(["distill", "--config", str(cfg_path), "--teacher", str(teacher_ckpt), "--out", str(run)])
    capsys.readouterr()
    out = tmp_path / "dump"
    assert cli.main(["dump-samples", "--student-dir", str(run), "--count", "1000", "--out", str(out)]) == 0
    err = capsys.readouterr().err
    assert "writing all" in err and "scatter" in err
    header, rows = read_csv(out / "scatter.csv")
    assert header == ["index", "c_T", "x", "y"] and len(rows) == tiny_config().replay.capacity
    assert cli.main(["dump-samples", "--student-dir", str(tmp_path / "nope"), "--count", "1",
                     "--out", str(out)]) == 2


def test_dump_samples_pgm_for_idx_data(tmp_path):
    rng = np.random.default_rng(0)
    labels = np.repeat(np.arange(3), 40).astype(np.uint8)
    means = rng.integers(40, 200, (3, 8, 8))
    imgs = np.clip(means[labels] + rng.integers(-20, 20, (120, 8, 8)), 0, 255).astype(np.uint8)
    (tmp_path / "img.idx").write_bytes(data.write_idx(imgs))
    (tmp_path / "lab.idx").write_bytes(data.write_idx(labels))
    cfg = tiny_config(data={"kind": "idx", "classes": 3, "test_size": 30,
                            "idx_images": str(tmp_path / "img.idx"), "idx_labels": str(tmp_path / "lab.idx")},
                      engine={"epochs": 1})
    p = tmp_path / "c.json"
    p.write_text(cfg.to_json())
    ckpt = tmp_path / "t.ckpt"
    assert cli.main(["pretrain", "--config", str(p), "--out", str(ckpt)]) == 0
    run = tmp_path / "run"
    assert cli.main(["distill", "--config", str(p), "--teacher", str(ckpt), "--out", str(run)]) == 0
    out = tmp_path / "pgm"
    assert cli.main(["dump-samples", "--student-dir", str(run), "--count", "3", "--out", str(out)]) == 0
    files = sorted(out.glob("*.pgm"))
    assert len(files) == 3
    for f in files:
        blob = f.read_bytes()
        assert blob.startswith(b"P5\n8 8\n255\n")
        assert pgm.parse_pgm(blob).shape == (8, 8)


def test_distill_metrics_byte_identical(tmp_path, cfg_path, teacher_ckpt):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        cli.main(["distill", "--config", str(cfg_path), "--teacher", str(teacher_ckpt), "--out", str(out)])
        outs.append((out / "metrics.csv").read_bytes())
    assert outs[0] == outs[1]


def test_module_entry_point(cfg_path, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ssdkd", "pretrain", "--config", str(cfg_path),
                           "--out", str(tmp_path / "m.ckpt")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
