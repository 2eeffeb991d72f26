"""Command-line contract: exit codes, output files, determinism."""

import json

import pytest

from invlink.cli import main

PLANTED_DATASET = {
    "kind": "planted",
    "n_nodes": 60,
    "n_timestamps": 4,
    "seed": 3,
}

TRAIN_SECTION = {
    "epochs": 4,
    "learning_rate": 0.02,
    "beta": 0.1,
    "tau": 1.0,
    "d_s": 8,
    "d_e": 1,
    "d_t": 4,
    "hidden": [8, 8, 8],
    "seed": 3,
}


def write_config(tmp_path, name="config.json", **extra):
    cfg = {"seed": 3, "train": dict(TRAIN_SECTION), "dataset": dict(PLANTED_DATASET)}
    cfg.update(extra)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def test_train_happy_path(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    for artifact in ("checkpoint.json", "metrics.csv", "summary.json",
                     "resolved_config.json", "train_log.txt"):
        assert (out / artifact).exists(), artifact


def test_missing_config_exits_2(tmp_path, capsys):
    rc = main(["train", "--config", str(tmp_path / "nope.json")])
    assert rc == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert "nope.json" in err["error"]


def test_bad_dataset_path_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, dataset={
        "kind": "files", "edges": str(tmp_path / "missing_edges.txt"),
        "d_s": 2, "d_e": 1, "splits": [2, 1, 1]})
    rc = main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")])
    assert rc == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert "missing_edges.txt" in err["error"]


def test_train_rerun_bit_identical_metrics(tmp_path):
    cfg = write_config(tmp_path)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["train", "--config", str(cfg), "--out", str(out1), "--quiet"]) == 0
    assert main(["train", "--config", str(cfg), "--out", str(out2), "--quiet"]) == 0
    for name in ("metrics.csv", "summary.json", "checkpoint.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_eval_after_train_and_determinism(tmp_path):
    cfg = write_config(tmp_path)
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(run), "--quiet"]) == 0
    ev1, ev2 = tmp_path / "ev1", tmp_path / "ev2"
    for out in (ev1, ev2):
        rc = main(["eval", "--config", str(cfg), "--out", str(out),
                   "--checkpoint", str(run / "checkpoint.json"), "--quiet"])
        assert rc == 0
        assert (out / "eval_metrics.csv").exists()
    assert (ev1 / "eval_metrics.csv").read_bytes() == (ev2 / "eval_metrics.csv").read_bytes()


def test_trained_model_separates_training_split(tmp_path):
    # a converged run scores its own training distribution well
    cfg = write_config(tmp_path)
    cfg_doc = json.loads(cfg.read_text())
    cfg_doc["train"]["epochs"] = 30
    cfg_doc["train"]["patience"] = 30
    cfg.write_text(json.dumps(cfg_doc))
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(run), "--quiet"]) == 0
    metrics = (run / "metrics.csv").read_text().splitlines()
    test_in = [l for l in metrics if ",test-in," in l]
    assert test_in, "no test-in record"
    auc = float(test_in[0].split(",")[3])
    assert auc > 0.9


def test_corrupted_checkpoint_exits_3(tmp_path, capsys):
    cfg = write_config(tmp_path)
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(run), "--quiet"]) == 0
    ckpt = run / "checkpoint.json"
    ckpt.write_text(ckpt.read_text()[:100])
    rc = main(["eval", "--config", str(cfg), "--out", str(tmp_path / "ev"),
               "--checkpoint", str(ckpt), "--quiet"])
    assert rc == 3


def test_synth_planted_writes_dataset(tmp_path):
    cfg_path = tmp_path / "synth.json"
    cfg_path.write_text(json.dumps({
        "shift": {"kind": "planted-motif", "n_nodes": 60, "n_timestamps": 4,
                  "seed": 1}}))
    out = tmp_path / "méout"
    assert main(["synth", "--config", str(cfg_path), "--out", str(out)]) == 0
    for name in ("train_edges.txt", "train_queries.txt", "ood_edges.txt",
                 "ood_queries.txt", "dataset.json"):
        assert (out / name).exists(), name


def test_synth_node_feature_shift_constant_schedule(tmp_path):
    edges = tmp_path / "edges.txt"
    lines = [f"{i % 5} {(i + 1) % 5 + 5} {t} 1.0"
             for t in range(4) for i in range(6)]
    edges.write_text("\n".join(lines) + "\n")
    cfg_path = tmp_path / "synth.json"
    cfg_path.write_text(json.dumps({
        "dataset": {"kind": "files", "edges": str(edges), "d_s": 2, "d_e": 1},
        "shift": {"kind": "node-feature", "p_bar": 0.4, "sigma": 0.0,
                  "d": 4, "seed": 0}}))
    out = tmp_path / "shifted"
    assert main(["synth", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert (out / "edges.txt").exists()
    assert (out / "node_feats.txt").exists()
    manifest = json.loads((out / "dataset.json").read_text())
    assert manifest["sigma"] == 0.0


def test_ablate_writes_curves_and_is_deterministic(tmp_path):
    cfg = write_config(tmp_path, seeds=[3])
    out1, out2 = tmp_path / "a1", tmp_path / "a2"
    for out in (out1, out2):
        assert main(["ablate", "--config", str(cfg), "--out", str(out),
                     "--quiet"]) == 0
        assert (out / "curves_seed3_invariant.csv").exists()
        assert (out / "curves_seed3_all-links.csv").exists()
        assert (out / "ablation_summary.json").exists()
    for name in ("curves_seed3_invariant.csv", "curves_seed3_all-links.csv",
                 "ablation_summary.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    summary = json.loads((out1 / "ablation_summary.json").read_text())
    assert set(summary["variants"]) == {"invariant", "all-links"}


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--subgraphs", "2", "--seed", "0", "--quiet"]) == 0
    assert "max_rel_err" in capsys.readouterr().out


def test_flag_overrides_win_over_file(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "r"
    assert main(["train", "--config", str(cfg), "--out", str(out), "--quiet",
                 "--set", "train.epochs=1"]) == 0
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["train"]["epochs"] == 1
    log = (out / "train_log.txt").read_text().strip().splitlines()
    assert len(log) == 2  # header + one epoch


def test_unknown_train_key_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path)
    rc = main(["train", "--config", str(cfg), "--out", str(tmp_path / "x"),
               "--set", "train.learning_rte=0.1"])
    assert rc == 2
