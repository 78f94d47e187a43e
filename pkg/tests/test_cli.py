import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from fallfuse.cli import main, merge_curves
from fallfuse.config import load_config
from fallfuse.data import read_cache
from fallfuse.errors import ConfigError

from fakecorpus import write_corpus


def _config(tmp_path, body, name="run.toml"):
    path = tmp_path / name
    path.write_text(body)
    return path


BASE = """
seed = 1
out = "out"
[corpus.synth]
n = {n}
{synth}
[model]
variants = {variants}
[train]
epochs = {epochs}
"""


def _base(n=100, variants='["SensorMLP"]', epochs=1, synth=""):
    return BASE.format(n=n, variants=variants, epochs=epochs, synth=synth)


def _run(tmp_path, cmd, n=100, variants='["SensorMLP"]', epochs=1, extra="", synth="", args=()):
    cfg = _config(tmp_path, _base(n, variants, epochs, synth) + extra)
    return main([cmd, "--config", str(cfg), *args])


def test_synth_writes_reloadable_cache(tmp_path, capsys):
    assert _run(tmp_path, "synth") == 0
    data, meta = read_cache(tmp_path / "out" / "data.ffd")
    assert len(data) == 100 and meta["source"] == "synth"
    assert "100 examples" in capsys.readouterr().out


def test_synth_is_byte_identical(tmp_path):
    cfg = _config(tmp_path, _base(n=50, variants='["Fusion"]', epochs=1))
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "data.ffd").read_bytes() == (tmp_path / "b" / "data.ffd").read_bytes()
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "c"), "--seed", "2"]) == 0
    assert (tmp_path / "a" / "data.ffd").read_bytes() != (tmp_path / "c" / "data.ffd").read_bytes()


def test_synth_reported_prevalence(tmp_path, capsys):
    assert _run(tmp_path, "synth", n=5000, synth="prevalence = 0.3") == 0
    data, _ = read_cache(tmp_path / "out" / "data.ffd")
    # recount from the cache
    recount = float(np.mean(data.label))
    out = capsys.readouterr().out
    reported = float(out.rsplit("prevalence", 1)[1])
    assert abs(reported - recount) < 1e-4
    assert abs(recount - 0.3) <= 0.02


def test_bad_config_exit_2(tmp_path, capsys):
    assert main(["synth", "--config", str(tmp_path / "missing.toml")]) == 2
    cfg = _config(tmp_path, "this is = = not toml")
    assert main(["train", "--config", str(cfg)]) == 2
    cfg = _config(tmp_path, "[model]\nvariants = []\n", "empty.toml")
    assert main(["train", "--config", str(cfg)]) == 2
    cfg = _config(tmp_path, "[model]\nvariants = ['Radar']\n", "radar.toml")
    assert main(["train", "--config", str(cfg)]) == 2
    cfg = _config(tmp_path, "[model]\nvariants = ['Fusion']\n[train]\nlr = -1.0\n", "lr.toml")
    assert main(["train", "--config", str(cfg)]) == 2
    assert "fallfuse train" in capsys.readouterr().err
    assert main(["frobnicate", "--config", str(cfg)]) == 2
    assert main(["train"]) == 2


def test_train_eval_curves_pipeline(tmp_path):
    variants = '["Fusion", "SensorMLP"]'
    for cmd in ("train", "eval", "curves"):
        assert _run(tmp_path, cmd, n=120, variants=variants, epochs=2) == 0
    out = tmp_path / "out"
    for v in ("Fusion", "SensorMLP"):
        lines = (out / v / "epochs.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_accuracy,val_f1,seconds" and len(lines) == 3
        assert (out / v / "model.ckpt").read_bytes().startswith(b"FALLFUSE-CKPT-1")
    metrics = (out / "metrics.csv").read_text().splitlines()
    assert metrics[0] == "variant,split,averaging,accuracy,precision,recall,f1"
    assert len(metrics) == 1 + 2 * 3
    assert {ln.split(",")[0] for ln in metrics[1:]} == {"Fusion", "SensorMLP"}
    assert all(ln.split(",")[1] == "test" for ln in metrics[1:])
    curves = (out / "curves.csv").read_text().splitlines()
    assert curves[0] == "variant,epoch,metric,value"
    assert len(curves) == 1 + 2 * 2 * 2
    keys = [(ln.split(",")[0], int(ln.split(",")[1])) for ln in curves[1:]]
    assert keys == sorted(keys)


def test_train_epochs_one_gives_one_row(tmp_path):
    assert _run(tmp_path, "train", epochs=1) == 0
    assert len((tmp_path / "out" / "SensorMLP" / "epochs.csv").read_text().splitlines()) == 2


def test_train_is_byte_identical(tmp_path):
    cfg = _config(tmp_path, _base(n=100, variants='["Fusion"]', epochs=2))
    for d in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
    for f in ("epochs.csv", "model.ckpt"):
        assert (tmp_path / "a" / "Fusion" / f).read_bytes() == (tmp_path / "b" / "Fusion" / f).read_bytes()


def test_wall_clock_opt_in(tmp_path):
    assert _run(tmp_path, "train", extra="wall_clock = true\n") == 0
    row = (tmp_path / "out" / "SensorMLP" / "epochs.csv").read_text().splitlines()[1]
    assert float(row.split(",")[-1]) > 0


def test_divergence_exit_3(tmp_path, capsys):
    extra = 'algorithm = "SGD"\nlr = 1e300\n'
    with np.errstate(all="ignore"):
        assert _run(tmp_path, "train", epochs=2, extra=extra) == 3
    err = capsys.readouterr().err
    assert "SensorMLP" in err and "non-finite loss at epoch" in err and "batch 1" in err


def test_modality_mismatch_exit_4(tmp_path):
    assert _run(tmp_path, "train", variants='["MultiSensorFusion"]') == 0
    # the 12-wide checkpoint against a corpus holding only the wrist sensor
    cfg = _config(tmp_path, _base(variants='["MultiSensorFusion"]', synth="extra_sites = 0"), "narrow.toml")
    assert main(["eval", "--config", str(cfg)]) == 4
    # training a 12-wide model on the narrow corpus fails the same way
    wide = _base(variants='["MultiSensorFusion"]\nmulti_sensor_width = 12', synth="extra_sites = 0")
    cfg = _config(tmp_path, wide, "wide.toml")
    assert main(["train", "--config", str(cfg)]) == 4


def test_eval_without_checkpoint_exit_2(tmp_path):
    assert _run(tmp_path, "eval") == 2


def _epochs_csv(path, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("epoch,train_loss,val_accuracy,val_f1,seconds\n"
                    + "".join(f"{e},{l},{a},{f},0.0\n" for e, l, a, f in rows))


def test_curves_row_counts_and_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    inputs = {}
    for v in ("SensorMLP", "Fusion"):
        rows = [(e, repr(float(rng.random())), repr(float(rng.random())), repr(float(rng.random())))
                for e in range(1, 51)]
        _epochs_csv(tmp_path / v / "epochs.csv", rows)
        inputs[v] = tmp_path / v / "epochs.csv"
    merged = merge_curves(inputs)
    lines = merged.splitlines()
    assert len(lines) - 1 == 200
    assert lines[1].startswith("Fusion,1,val_accuracy,")
    # split back per variant and compare with the inputs' metric columns
    for v, path in inputs.items():
        original = [ln.split(",") for ln in path.read_text().splitlines()[1:]]
        expect = "".join(f"{r[0]},{r[2]},{r[3]}\n" for r in original)
        mine = [ln.split(",") for ln in lines[1:] if ln.startswith(v + ",")]
        back = "".join(f"{a[1]},{a[3]},{b[3]}\n" for a, b in zip(mine[::2], mine[1::2]))
        assert back == expect


def test_curves_single_epoch(tmp_path):
    _epochs_csv(tmp_path / "Camera1" / "epochs.csv", [(1, "0.5", "0.75", "0.5")])
    assert merge_curves({"Camera1": tmp_path / "Camera1" / "epochs.csv"}).count("\n") == 3


def test_curves_malformed_exit_2_names_file_and_line(tmp_path, capsys):
    _epochs_csv(tmp_path / "out" / "SensorMLP" / "epochs.csv", [(1, "0.5", "0.75", "0.5"), (2, "x", "0.7", "0.6")])
    assert _run(tmp_path, "curves") == 2
    err = capsys.readouterr().err
    assert "epochs.csv:3" in err


def test_commands_do_not_touch_inputs(tmp_path):
    cfg = _config(tmp_path, _base(n=100, variants='["SensorMLP"]', epochs=1))
    before = cfg.read_bytes()
    assert main(["synth", "--config", str(cfg)]) == 0
    assert cfg.read_bytes() == before
    produced = {p.relative_to(tmp_path) for p in tmp_path.rglob("*") if p.is_file()}
    assert produced == {Path("run.toml"), Path("out/data.ffd")}


def test_cache_source(tmp_path):
    assert _run(tmp_path, "synth", n=80) == 0
    body = 'seed = 1\nout = "out"\n[corpus]\nsource = "cache"\ncache = "data.ffd"\n'
    body += '[model]\nvariants = ["SensorMLP"]\n[train]\nepochs = 1\n'
    cfg = _config(tmp_path, body, "cached.toml")
    assert main(["train", "--config", str(cfg)]) == 0
    assert main(["eval", "--config", str(cfg)]) == 0


def test_real_corpus_source_with_env_root(tmp_path, monkeypatch):
    write_corpus(tmp_path / "corpus", n=60, subjects=(1, 2, 3))
    monkeypatch.setenv("FALLFUSE_DATA_ROOT", str(tmp_path / "corpus"))
    body = ('seed = 1\nout = "out"\n[corpus]\nsource = "real"\n'
            '[corpus.real]\nroot = "ignored"\nextra_columns = ["ankle_ax"]\n'
            '[model]\nvariants = ["Fusion", "MultiSensorFusion"]\n[train]\nepochs = 1\n')
    cfg = _config(tmp_path, body)
    assert main(["synth", "--config", str(cfg)]) == 0
    data, meta = read_cache(tmp_path / "out" / "data.ffd")
    assert len(data) == 60 and data.sensor_width == 5 and meta["source"] == "real"
    assert main(["train", "--config", str(cfg)]) == 0
    assert main(["eval", "--config", str(cfg)]) == 0


def test_config_seed_fallbacks(tmp_path):
    cfg = _config(tmp_path, "seed = 4\n[model]\nvariants = ['Fusion']\n[split]\nseed = 9\n")
    run = load_config(cfg)
    assert (run.synth.seed, run.split.seed, run.train.seed) == (4, 9, 4)
    run = load_config(cfg, seed=11)
    assert (run.synth.seed, run.split.seed, run.train.seed) == (11, 9, 11)
    assert run.train.record_wall_clock is False
    with pytest.raises(ConfigError):
        load_config(_config(tmp_path, "[model]\nvariants = ['Fusion']\n[train]\nbogus = 1\n", "b.toml"))
    with pytest.raises(ConfigError):
        load_config(_config(tmp_path, "seed = -1\n[model]\nvariants = ['Fusion']\n", "c.toml"))


def test_console_script_entry_point(tmp_path):
    cfg = _config(tmp_path, _base(n=30, variants='["SensorMLP"]', epochs=1))
    proc = subprocess.run([sys.executable, "-m", "fallfuse.cli", "synth", "--config", str(cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "fallfuse.cli", "train", "--config", str(cfg), "--seed", "-3"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
