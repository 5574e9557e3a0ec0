import os
import subprocess
import sys

import pytest

CLI = [sys.executable, "-m", "transfir.cli"]

SMALL = ["--types", "2", "--per-type", "6", "--anchors-per-type", "2", "--relations", "4",
         "--timestamps", "24", "--emergence", "0.25", "--noise", "0.05", "--dim", "8",
         "--stride", "3", "--seed", "1"]

FAST_TRAIN = ["--codebook-size", "4", "--chain-len", "4", "--window", "4", "--dim", "8",
              "--layers", "1", "--heads", "2", "--conv-channels", "8", "--epochs", "2",
              "--seed", "3", "--patience", "2"]


def run_cli(*args, cwd=None):
    proc = subprocess.run(CLI + list(args), capture_output=True, text=True, cwd=cwd)
    return proc.returncode, proc.stdout, proc.stderr


def kv_lines(stdout):
    out = {}
    for line in stdout.splitlines():
        if "=" in line and " " not in line.split("=")[0]:
            key, _, value = line.partition("=")
            out[key] = value
    return out


@pytest.fixture(scope="module")
def instance(tmp_path_factory):
    data_dir = str(tmp_path_factory.mktemp("data"))
    code, out, err = run_cli("synth", "--out", data_dir, *SMALL)
    assert code == 0, err
    return data_dir


@pytest.fixture(scope="module")
def trained(instance, tmp_path_factory):
    out_dir = str(tmp_path_factory.mktemp("run"))
    code, out, err = run_cli("train", "--data", instance, "--out", out_dir, *FAST_TRAIN)
    assert code == 0, err
    return out_dir


def test_synth_writes_expected_files(instance):
    for name in ("facts.txt", "entity2id.txt", "relation2id.txt", "embeddings.txt", "truth.json"):
        assert os.path.exists(os.path.join(instance, name)), name


def test_ingest_kv_matches_generator(instance):
    code, out, _ = run_cli("ingest", "--data", instance, "--format", "kv")
    assert code == 0
    kv = kv_lines(out)
    assert kv["entities"] == "16"      # 12 actors + 4 anchors
    assert kv["relations"] == "4"
    assert kv["timestamps"] == "24"
    assert kv["emerging_entities"] == "4"   # round(0.25 * 16)
    assert float(kv["emerging_fraction"]) == pytest.approx(0.25)


def test_ingest_missing_path_exits_2():
    code, out, err = run_cli("ingest", "--data", "/no/such/dir")
    assert code == 2
    assert "/no/such/dir" in err


def test_split_boundaries(instance):
    code, out, _ = run_cli("split", "--data", instance, "--format", "kv")
    assert code == 0
    kv = kv_lines(out)
    assert (kv["train_start"], kv["train_end"]) == ("0", "12")
    assert (kv["valid_start"], kv["valid_end"]) == ("12", "16")
    assert (kv["test_start"], kv["test_end"]) == ("16", "24")


def test_train_epochs_zero_writes_initialized_checkpoint(instance, tmp_path):
    out_dir = str(tmp_path / "init_run")
    code, out, err = run_cli("train", "--data", instance, "--out", out_dir,
                             *FAST_TRAIN[:-4], "--epochs", "0", "--seed", "3")
    assert code == 0, err
    assert os.path.exists(os.path.join(out_dir, "checkpoint.tfir"))
    log = open(os.path.join(out_dir, "train_log.txt")).read()
    assert "initialized_checkpoint_only" in log


def test_train_writes_log_and_marker(trained):
    log = open(os.path.join(trained, "train_log.txt")).read()
    assert "epoch=1" in log and "loss_lp=" in log and "valid_metric=" in log
    marker = open(os.path.join(trained, "best_epoch.txt")).read()
    assert "best_epoch=" in marker


def test_eval_reports_all_modes(instance, trained, tmp_path):
    out_dir = str(tmp_path / "eval")
    code, out, err = run_cli("eval", "--data", instance,
                             "--checkpoint", os.path.join(trained, "checkpoint.tfir"),
                             "--out", out_dir, "--format", "kv")
    assert code == 0, err
    assert "mode=vanilla direction=avg" in out
    assert "mode=emerging/query-side direction=forward" in out
    assert "mode=unknown/either-side direction=avg" in out
    report = open(os.path.join(out_dir, "eval_report_test.txt")).read()
    assert "mrr=" in report and "n_queries=" in report


def test_eval_zero_query_mode_reports_empty_and_exits_zero(instance, trained):
    # the valid interval has no first-appearing entities in this instance
    code, out, err = run_cli("eval", "--data", instance,
                             "--checkpoint", os.path.join(trained, "checkpoint.tfir"),
                             "--interval", "valid", "--modes", "emerging",
                             "--policy", "query-side", "--format", "kv")
    assert code == 0, err
    assert "n_queries=0" in out


def test_eval_ablate_flag_runs(instance, trained):
    code, out, err = run_cli("eval", "--data", instance,
                             "--checkpoint", os.path.join(trained, "checkpoint.tfir"),
                             "--modes", "emerging", "--policy", "query-side",
                             "--ablate", "no-transfer", "--format", "kv")
    assert code == 0, err
    assert "mode=emerging/query-side" in out


def test_eval_version_mismatch_exits_4(instance, trained, tmp_path):
    src = os.path.join(trained, "checkpoint.tfir")
    bad = str(tmp_path / "bad.tfir")
    blob = bytearray(open(src, "rb").read())
    blob[4:8] = (77).to_bytes(4, "little")
    open(bad, "wb").write(bytes(blob))
    code, out, err = run_cli("eval", "--data", instance, "--checkpoint", bad)
    assert code == 4
    assert "version" in err


def test_diagnose_outputs(instance, trained, tmp_path):
    out_dir = str(tmp_path / "diag")
    code, out, err = run_cli("diagnose", "--data", instance,
                             "--checkpoint", os.path.join(trained, "checkpoint.tfir"),
                             "--out", out_dir)
    assert code == 0, err
    assert "collapse_ratio=" in out
    rows = open(os.path.join(out_dir, "projection.txt")).read().strip().splitlines()
    assert rows[0] == "entity_id label x y"
    assert len(rows) == 1 + 16
    assert any(" emerging " in r for r in rows[1:])


def test_config_file_precedence(instance, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epochs = 0\nseed = 3\ndim = 8\ncodebook_size = 4\n"
                   "chain_len = 4\nwindow = 4\nlayers = 1\nheads = 2\nconv_channels = 8\n")
    out_dir = str(tmp_path / "cfg_run")
    code, out, err = run_cli("train", "--data", instance, "--out", out_dir, "--config", str(cfg))
    assert code == 0, err
    assert "initialized checkpoint" in out  # config epochs=0 applied
    # CLI flag overrides the config file
    out_dir2 = str(tmp_path / "cfg_run2")
    code, out, err = run_cli("train", "--data", instance, "--out", out_dir2,
                             "--config", str(cfg), "--epochs", "1")
    assert code == 0, err
    assert "epoch=1" in open(os.path.join(out_dir2, "train_log.txt")).read()


def test_train_determinism_same_seed(instance, tmp_path):
    outs = []
    for name in ("a", "b"):
        out_dir = str(tmp_path / name)
        code, _, err = run_cli("train", "--data", instance, "--out", out_dir, *FAST_TRAIN)
        assert code == 0, err
        outs.append(out_dir)
    blob_a = open(os.path.join(outs[0], "checkpoint.tfir"), "rb").read()
    blob_b = open(os.path.join(outs[1], "checkpoint.tfir"), "rb").read()
    assert blob_a == blob_b
    assert (open(os.path.join(outs[0], "train_log.txt")).read()
            == open(os.path.join(outs[1], "train_log.txt")).read())
