import json

import numpy as np
import pytest

from resframes import netpbm
from resframes.cli import main
from resframes.config import RunConfig, RunConfigError, load_run_config


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def fails(capsys, *argv):
    with pytest.raises(SystemExit) as exc:
        main([str(a) for a in argv])
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return exc.value.code, json.loads(err)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    main(["gen-data", "--preset", "motion-confound", "--seed", "7", "--n-train", "2", "--n-test", "1", "--out", str(out)])
    return out


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("run")
    main(["train", "--dataset", str(data_dir), "--arch", "micro3d", "--kind", "residual", "--preset", "scratch",
          "--epochs", "1", "--batch-size", "8", "--geometry", "desk", "--out", str(out)])
    return out


def test_gen_data_is_reproducible(tmp_path, capsys):
    trees = []
    for name in ("a", "b"):
        code, res = run(capsys, "gen-data", "--preset", "motion-confound", "--seed", "7",
                        "--n-train", "1", "--n-test", "1", "--out", tmp_path / name)
        assert code == 0 and res["train"] == 8
        root = tmp_path / name
        trees.append({p.relative_to(root): p.read_bytes() for p in root.rglob("*") if p.is_file()})
    assert trees[0] == trees[1]


def test_train_uses_scratch_defaults(run_dir):
    cfg = json.loads((run_dir / "config.json").read_text())
    assert cfg["run"]["preset"] == "scratch" and cfg["model"]["num_classes"] == 8
    log = [json.loads(line) for line in (run_dir / "train_log.jsonl").read_text().splitlines()]
    assert log[0]["lr"] == 0.1 and len(log) == 1
    assert (run_dir / "checkpoint.rclp").is_file()


def test_eval_then_fuse_with_itself(tmp_path, capsys, data_dir, run_dir):
    report = tmp_path / "m.json"
    code, res = run(capsys, "eval", "--checkpoint", run_dir / "checkpoint.rclp", "--dataset", data_dir,
                    "--out", report, "--n-clips", "2")
    assert code == 0
    rep = json.loads(report.read_text())
    assert rep["num_videos"] == 8 and rep["kind"] == "residual" and len(rep["videos"][0]["probs"]) == 8
    code, fused = run(capsys, "fuse", report, report, "--out", tmp_path / "f.json")
    assert fused["top1"] == rep["top1"] and fused["top5"] == rep["top5"]


def test_resume_from_checkpoint(tmp_path, capsys, data_dir, run_dir):
    code, res = run(capsys, "train", "--dataset", data_dir, "--epochs", "2", "--batch-size", "8",
                    "--geometry", "desk", "--checkpoint", run_dir / "checkpoint.rclp", "--resume",
                    "--out", tmp_path / "r")
    assert code == 0 and res["epochs_run"] == 1


def test_dump_residual(tmp_path, capsys, data_dir):
    video = next(p for p in (data_dir / "test").iterdir() if p.is_dir())
    code, res = run(capsys, "dump-residual", video, "--out", tmp_path / "res")
    assert res["frames"] == 23
    a = netpbm.read_image(video / "frame_00000.ppm").astype(int)
    b = netpbm.read_image(video / "frame_00001.ppm").astype(int)
    np.testing.assert_array_equal(netpbm.read_image(tmp_path / "res" / "residual_00000.ppm"), np.abs(a - b))


def test_gradcheck_layers(tmp_path, capsys):
    code, res = run(capsys, "gradcheck", "--arch", "layers", "--out", tmp_path / "g.json")
    assert code == 0 and res["passed"] and res["max_error"] < 1e-3
    assert json.loads((tmp_path / "g.json").read_text())["passed"]


def test_saliency(tmp_path, capsys, data_dir, run_dir):
    code, res = run(capsys, "saliency", "--checkpoint", run_dir / "checkpoint.rclp", "--dataset", data_dir,
                    "--video-id", "test_03_0000", "--out", tmp_path / "cam")
    assert res["frames"] == 16 and res["target"] == 3
    assert netpbm.read_image(tmp_path / "cam" / "cam_00015.pgm").shape == (28, 28, 1)


def test_unknown_flag_gives_usage_and_json_error(capsys):
    code, err = fails(capsys, "train", "--bogus")
    assert code == 2 and err["error"] == "usage"


def test_missing_dataset_is_one_line_error(tmp_path, capsys):
    code, err = fails(capsys, "train", "--dataset", tmp_path / "none", "--out", tmp_path / "o")
    assert code == 1 and "index.csv" in err["message"]


def test_corrupt_checkpoint(tmp_path, capsys, data_dir):
    bad = tmp_path / "bad.rclp"
    bad.write_bytes(b"nope")
    code, err = fails(capsys, "eval", "--checkpoint", bad, "--dataset", data_dir, "--out", tmp_path / "r.json")
    assert code == 1 and err["error"] == "CheckpointError"


class TestRunConfig:
    def test_precedence(self, tmp_path):
        cfg_file = tmp_path / "c.json"
        cfg_file.write_text(json.dumps({"epochs": 7, "lr": 0.5, "arch": "appearance2d"}))
        cfg = load_run_config(cfg_file, {"lr": 0.2, "epochs": None})
        assert (cfg.epochs, cfg.lr, cfg.arch) == (7, 0.2, "appearance2d")
        assert cfg.train_config().initial_lr == 0.2

    def test_unknown_keys_rejected(self, tmp_path):
        cfg_file = tmp_path / "c.json"
        cfg_file.write_text(json.dumps({"learning_rate": 1}))
        with pytest.raises(RunConfigError, match="learning_rate"):
            load_run_config(cfg_file, {})

    def test_roundtrip_through_json(self):
        cfg = RunConfig(geometry="desk", epochs=3)
        assert RunConfig().merged(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_preset_defaults(self):
        t = RunConfig(preset="finetune").train_config()
        assert (t.initial_lr, t.epochs) == (0.001, 50)

    def test_unknown_key_via_cli_config(self, tmp_path, capsys):
        cfg_file = tmp_path / "c.json"
        cfg_file.write_text('{"colour": 1}')
        code, err = fails(capsys, "gen-data", "--config", cfg_file, "--out", tmp_path / "d")
        assert code == 1 and err["error"] == "RunConfigError"
