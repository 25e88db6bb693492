import json
import subprocess
import sys

import pytest

from mevgan.cli import main, resolve_config, UsageError

TINY = ["--set", "data.resolution=16", "--set", "data.n_videos=4", "--set", "data.frames_per_video=10",
        "--set", "data.size_range=[2.0,3.0]",
        "--set", "backbone.resolution=16", "--set", "backbone.g_widths=[8,8]", "--set", "backbone.d_widths=[8,8]",
        "--set", "backbone.steps=2", "--set", "backbone.batch_size=2"]
PLUGIN = ["--set", "plugin.epochs=1", "--set", "plugin.batch_size=4", "--set", "data.frames_per_video=10",
          "--set", "data.n_videos=4", "--set", "data.size_range=[2.0,3.0]"]


@pytest.fixture(scope="module")
def model(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["train-backbone", "--out", str(d / "bb.ckpt"), *TINY]) == 0
    assert main(["train-plugin", "--backbone", str(d / "bb.ckpt"), "--out", str(d / "mv.ckpt"), *PLUGIN]) == 0
    return d


def test_run_directory_records_config_seed_and_version(model):
    run = json.loads((model / "mv.ckpt.run" / "run.json").read_text())
    assert run["command"] == "train-plugin" and run["seed"] == 0 and run["version"]
    assert run["config"]["plugin.epochs"] == 1
    log = (model / "mv.ckpt.run" / "train-plugin.log").read_text().splitlines()
    assert log[0] == "epoch,step,d_loss,g_loss,d_real,d_fake" and len(log) == 2
    assert (model / "bb.ckpt.run" / "train-backbone.log").exists()


@pytest.mark.parametrize("fmt,name", [("ppm", "frame_0000.ppm"), ("pgm", "frame_0000.pgm"), ("raw", "clip.mvgn")])
def test_generate_is_byte_reproducible(model, fmt, name):
    outs = []
    for k in range(2):
        out = model / f"gen_{fmt}_{k}"
        assert main(["generate", "--ckpt", str(model / "mv.ckpt"), "--seed", "11", "--out", str(out),
                     "--format", fmt]) == 0
        outs.append(out)
    files = sorted(p.name for p in outs[0].iterdir() if p.name != "run.json")
    assert name in files
    for f in files:
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_generate_sixteen_frames(model):
    out = model / "gen16"
    assert main(["generate", "--ckpt", str(model / "mv.ckpt"), "--seed", "1", "--frames", "16",
                 "--out", str(out), "--format", "pgm"]) == 0
    assert len(list(out.glob("*.pgm"))) == 16


def test_unfrozen_backbone_exits_3(tmp_path, capsys):
    assert main(["train-backbone", "--out", str(tmp_path / "bb.ckpt"), "--no-freeze", *TINY]) == 0
    code = main(["train-plugin", "--backbone", str(tmp_path / "bb.ckpt"), "--out", str(tmp_path / "mv.ckpt"),
                 *PLUGIN])
    assert code == 3
    assert "freeze contract" in capsys.readouterr().err


def test_unknown_config_keys_are_rejected(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"plugin.epochs": 1, "plugin.epoch": 2}))
    assert main(["train-backbone", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "x")]) == 1
    assert main(["synth-data", "--out", str(tmp_path / "d"), "--set", "data.bogus=1"]) == 1
    with pytest.raises(UsageError):
        resolve_config(overrides=["nokey"])


def test_precedence_defaults_file_set_flag(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"seed": 3, "plugin.epochs": 7, "plugin.lr": 0.1}))
    cfg = resolve_config(tmp_path / "c.json", ["plugin.epochs=9", "seed=4"], seed=5)
    assert (cfg["plugin.epochs"], cfg["plugin.lr"], cfg["seed"], cfg["plugin.beta1"]) == (9, 0.1, 5, 0.5)


def test_usage_and_io_exit_codes(tmp_path):
    assert main(["generate", "--ckpt", str(tmp_path / "missing.ckpt"), "--seed", "0", "--out", str(tmp_path)]) == 2
    (tmp_path / "bad.ckpt").write_bytes(b"MVGN" + b"\0" * 20)
    assert main(["generate", "--ckpt", str(tmp_path / "bad.ckpt"), "--seed", "0", "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as info:
        main(["generate", "--seed", "0"])
    assert info.value.code == 1
    assert main(["--threads", "0", "mem-report"]) == 1


def test_synth_data_writes_manifest(tmp_path):
    out = tmp_path / "data"
    assert main(["synth-data", "--out", str(out), "--set", "data.n_videos=2", "--set", "data.frames_per_video=3",
                 "--set", "data.resolution=16"]) == 0
    assert len((out / "manifest.txt").read_text().splitlines()) == 2
    assert json.loads((out / "run.json").read_text())["command"] == "synth-data"


def test_mem_report_json(capsys):
    assert main(["mem-report", "--pipeline", "baseline", "--batch", "2", "--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["ratios"]["trainable_params"] > 1


@pytest.fixture(scope="module")
def eval_data(tmp_path_factory):
    data = tmp_path_factory.mktemp("eval") / "data"
    assert main(["synth-data", "--out", str(data), "--set", "data.n_videos=16", "--set", "data.frames_per_video=16",
                 "--set", "data.resolution=16", "--set", "data.size_range=[4.0,5.0]"]) == 0
    return data


def test_evaluate_prints_split_statistics(model, eval_data, tmp_path, capsys):
    code = main(["evaluate", "--ckpt", str(model / "mv.ckpt"), "--data", str(eval_data), "--metrics", "fid,is",
                 "--clips", "20", "--out", str(tmp_path / "r.csv"), "--set", "eval.probe_steps=600"])
    out = capsys.readouterr().out
    assert code == 0
    assert "FID" in out and "IS" in out and out.count("over 5 splits") == 2
    rows = (tmp_path / "r.csv").read_text().splitlines()
    assert rows[0] == "metric,value,std,n_samples,extractor_id" and len(rows) == 3
    assert all(r.endswith(",probe-conv64") for r in rows[1:])


def test_evaluate_json_and_bad_metric(model, eval_data, tmp_path, capsys):
    assert main(["evaluate", "--ckpt", str(model / "mv.ckpt"), "--data", str(eval_data), "--metrics", "fvd",
                 "--clips", "20", "--json", "--out", str(tmp_path / "r.json"),
                 "--set", "eval.probe_steps=600"]) == 0
    assert json.loads((tmp_path / "r.json").read_text())[0]["metric"] == "fvd"
    assert main(["evaluate", "--ckpt", str(model / "mv.ckpt"), "--data", str(eval_data), "--metrics", "psnr",
                 "--out", str(tmp_path / "r2.csv")]) == 1


def test_ungated_probe_exits_3(model, eval_data, tmp_path, capsys):
    code = main(["evaluate", "--ckpt", str(model / "mv.ckpt"), "--data", str(eval_data), "--metrics", "fid",
                 "--clips", "20", "--out", str(tmp_path / "r.csv"), "--set", "eval.probe_steps=0"])
    assert code == 3 and "gate" in capsys.readouterr().err


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "mevgan.cli", "mem-report"], capture_output=True, text=True)
    assert proc.returncode == 0 and "baseline-3d" in proc.stdout
