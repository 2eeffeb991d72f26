"""Command-line entry point for reproducible runs driven by a JSON config.

Commands: ``train``, ``eval``, ``synth``, ``ablate``, ``gradcheck``.  Every
run resolves its configuration (file values overridden by flags), snapshots
it next to the outputs, and derives all randomness from the config seed, so
rerunning a command reproduces its output files byte for byte.

Exit codes: 0 success, 1 internal error, 2 input error, 3 checkpoint error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .ablation import VARIANTS, lower_ood_loss_fraction, run_ablation, write_curves
from .data import (ShiftError, generate_planted_motif_dataset, ood_edge_filter,
                   read_queries, synthesize_node_shift, write_dataset_manifest,
                   write_queries, write_store)
from .ibloss import total_loss  # noqa: F401  (re-exported for config docs)
from .metrics import MetricsRecord, export_metrics, roc_auc
from .nets import ModelParams
from .tgraph import (GraphFormatError, SplitError, TemporalGraphStore,
                     chronological_split, load_temporal_graph)
from .train import (TrainConfig, TrainData, derive_seed, eval_queries_for,
                    evaluate, fit)

OUT_ROOT_ENV = "INVLINK_OUT"

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_CHECKPOINT = 3


class InputError(ValueError):
    """Bad config, missing data file, or malformed input."""


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

_TRAIN_FIELDS = ("learning_rate", "batch_size", "epochs", "tau", "beta", "L", "K",
                 "seed", "d_s", "d_e", "d_t", "hidden", "patience",
                 "negative_retries", "all_links", "max_queries_per_time", "workers")


def load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise InputError(f"config file not found: {p}")
    try:
        with open(p, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"config {p} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise InputError(f"config {p} must hold a JSON object")
    return cfg


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` overrides (flags win over file values)."""
    for item in overrides or []:
        if "=" not in item:
            raise InputError(f"override '{item}' is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise InputError(f"override '{key}' descends into a non-object")
        node[parts[-1]] = value
    return cfg


def train_config_from(cfg: dict) -> TrainConfig:
    section = dict(cfg.get("train", {}))
    if "seed" in cfg and "seed" not in section:
        section["seed"] = cfg["seed"]
    unknown = set(section) - set(_TRAIN_FIELDS)
    if unknown:
        raise InputError(f"unknown train config keys: {sorted(unknown)}")
    if "hidden" in section:
        section["hidden"] = tuple(int(x) for x in section["hidden"])
    try:
        return TrainConfig(**section)
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad train config: {exc}") from exc


def resolve_out_dir(cfg: dict, cli_out: str | None) -> Path:
    out = cli_out or cfg.get("out_dir")
    if out is None:
        root = os.environ.get(OUT_ROOT_ENV, ".")
        out = str(Path(root) / "invlink-run")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def snapshot_config(cfg: dict, out_dir: Path) -> None:
    with open(out_dir / "resolved_config.json", "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def _read_lines(path: str) -> list[str]:
    p = Path(path)
    if not p.exists():
        raise InputError(f"data file not found: {p}")
    with open(p, "r", encoding="utf-8") as fh:
        return fh.readlines()


def _load_store_from_files(section: dict) -> TemporalGraphStore:
    for key in ("edges", "d_s", "d_e"):
        if key not in section:
            raise InputError(f"dataset config missing '{key}'")
    edge_lines = _read_lines(section["edges"])
    node_lines = _read_lines(section["node_feats"]) if section.get("node_feats") else None
    try:
        return load_temporal_graph(
            edge_lines, node_lines, (int(section["d_s"]), int(section["d_e"])),
            directed=bool(section.get("directed", False)),
            allow_self_loops=bool(section.get("allow_self_loops", False)))
    except GraphFormatError as exc:
        raise InputError(str(exc)) from exc


def build_dataset(cfg: dict, tcfg: TrainConfig) -> dict:
    """Resolve the config's dataset section into named TrainData splits.

    Returns {"train":, "val":, "test-in": optional, "test-ood": optional}.
    """
    section = cfg.get("dataset")
    if not isinstance(section, dict) or "kind" not in section:
        raise InputError("config needs a dataset section with a 'kind'")
    kind = section["kind"]
    if kind == "planted":
        ds = generate_planted_motif_dataset(
            n_nodes=int(section.get("n_nodes", 200)),
            n_timestamps=int(section.get("n_timestamps", 6)),
            spurious_flip=bool(section.get("spurious_flip", True)),
            seed=int(section.get("seed", tcfg.seed)),
            train_rate=float(section.get("train_rate", 0.9)),
            d_s=int(section.get("d_s", tcfg.d_s)),
            hub_magnitude=float(section.get("hub_magnitude", 3.0)),
            background_edges=int(section.get("background_edges", 0)))
        if ds.train.store.d_s != tcfg.d_s or ds.train.store.d_e != tcfg.d_e:
            raise InputError(
                f"train config dims ({tcfg.d_s},{tcfg.d_e}) do not match the planted "
                f"dataset ({ds.train.store.d_s},{ds.train.store.d_e})")
        times = sorted(ds.train.queries_by_t)
        val_t = times[-1]
        train_qs = [q for t in times[:-1] for q in ds.train.queries_by_t[t]]
        val_qs = list(ds.train.queries_by_t[val_t])
        return {
            "train": TrainData.from_queries(ds.train.store, train_qs),
            "val": TrainData.from_queries(ds.train.store, val_qs),
            "train-full": ds.train,        # used by ablate, which has no val split
            "test-in": ds.train,
            "test-ood": ds.ood,
        }
    if kind == "files":
        store = _load_store_from_files(section)
        counts = tuple(int(x) for x in section.get("splits", (0, 0, 0)))
        if sum(counts) <= 0:
            raise InputError("files dataset needs a 'splits' triple")
        held_out = section.get("held_out_attr")
        ood_store = None
        if held_out is not None:
            try:
                store, ood_store = ood_edge_filter(store, str(held_out))
            except (ValueError,) as exc:
                raise InputError(str(exc)) from exc
        try:
            train_v, val_v, test_v = chronological_split(store, counts)
        except SplitError as exc:
            raise InputError(str(exc)) from exc
        out = {
            "train": TrainData.from_view(train_v),
            "val": TrainData.from_view(val_v),
            "test-in": TrainData.from_view(test_v),
        }
        if ood_store is not None:
            _, _, ood_test = chronological_split(ood_store, counts)
            out["test-ood"] = TrainData.from_view(ood_test)
        if section.get("queries"):
            for split, qpath in section["queries"].items():
                if split not in out:
                    raise InputError(f"queries given for unknown split '{split}'")
                base = out[split].store
                out[split] = TrainData.from_queries(base, read_queries(qpath))
        return out
    raise InputError(f"unknown dataset kind '{kind}'")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _eval_split(model, tdata: TrainData, tcfg: TrainConfig, seed_tag: str):
    queries = eval_queries_for(tdata, tcfg, derive_seed(tcfg.seed, seed_tag))
    scores, labels, lb = evaluate(model, tdata.store, queries, tcfg)
    return roc_auc(scores, labels), lb


def cmd_train(args) -> int:
    cfg = apply_overrides(load_config(args.config), args.set)
    tcfg = train_config_from(cfg)
    out_dir = resolve_out_dir(cfg, args.out)
    snapshot_config(cfg, out_dir)
    splits = build_dataset(cfg, tcfg)
    model = tcfg.build_model(horizon=max(splits["train"].store.t_max, 1))

    log_lines: list[str] = []

    def log(line: str) -> None:
        log_lines.append(line)
        if not args.quiet:
            print(line)

    log(f"{'epoch':>5} {'task_loss':>12} {'kl_loss':>12} {'total':>12} {'val_auc':>8}")
    result = fit(model, splits["train"], splits["val"], tcfg, log=log)
    result.model.save(out_dir / "checkpoint.json")
    with open(out_dir / "train_log.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(log_lines) + "\n")

    records = [MetricsRecord(tcfg.seed, "train", r.epoch, 0.5, r.task, r.kl, r.total)
               for r in result.history]
    for split in ("val", "test-in", "test-ood"):
        if split in splits:
            auc, lb = _eval_split(result.model, splits[split], tcfg, f"final-{split}")
            records.append(MetricsRecord(tcfg.seed, split if split != "val" else "val",
                                         result.best_epoch, auc, lb.task, lb.kl, lb.total))
    export_metrics(records, out_dir / "metrics.csv", out_dir / "summary.json")
    print(f"best_epoch={result.best_epoch} best_val_auc={result.best_val_auc:.6f} "
          f"out={out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = apply_overrides(load_config(args.config), args.set)
    tcfg = train_config_from(cfg)
    out_dir = resolve_out_dir(cfg, args.out)
    model = ModelParams.load(args.checkpoint)
    if model.dims != (tcfg.d_s, tcfg.d_e, tcfg.d_t):
        raise T.ManifestError(
            f"checkpoint dims {model.dims} do not match config "
            f"({tcfg.d_s},{tcfg.d_e},{tcfg.d_t})")
    snapshot_config(cfg, out_dir)
    splits = build_dataset(cfg, tcfg)
    records = []
    for split in ("test-in", "test-ood"):
        if split not in splits:
            continue
        auc, lb = _eval_split(model, splits[split], tcfg, f"final-{split}")
        records.append(MetricsRecord(tcfg.seed, split, 0, auc, lb.task, lb.kl, lb.total))
        print(f"{split}: roc_auc={auc:.6f} task={lb.task:.6f} kl={lb.kl:.6f}")
    if not records:
        raise InputError("dataset config provides no test splits to evaluate")
    export_metrics(records, out_dir / "eval_metrics.csv", out_dir / "eval_summary.json")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = apply_overrides(load_config(args.config), args.set)
    out_dir = resolve_out_dir(cfg, args.out)
    snapshot_config(cfg, out_dir)
    section = cfg.get("shift")
    if not isinstance(section, dict) or "kind" not in section:
        raise InputError("config needs a shift section with a 'kind'")
    kind = section["kind"]
    if kind == "node-feature":
        if "dataset" not in cfg:
            raise InputError("node-feature shift needs a dataset section")
        base = _load_store_from_files(cfg["dataset"])
        shifted = synthesize_node_shift(
            base, p_bar=float(section.get("p_bar", 0.4)),
            sigma=float(section.get("sigma", 0.05)),
            d=int(section.get("d", 64)), seed=int(section.get("seed", 0)))
        write_store(shifted, out_dir / "edges.txt", out_dir / "node_feats.txt")
        write_dataset_manifest(out_dir / "dataset.json",
                               {**section, "source": cfg["dataset"].get("edges")})
    elif kind == "planted-motif":
        ds = generate_planted_motif_dataset(
            n_nodes=int(section.get("n_nodes", 200)),
            n_timestamps=int(section.get("n_timestamps", 6)),
            spurious_flip=bool(section.get("spurious_flip", True)),
            seed=int(section.get("seed", 0)),
            train_rate=float(section.get("train_rate", 0.9)),
            d_s=int(section.get("d_s", 8)),
            hub_magnitude=float(section.get("hub_magnitude", 3.0)),
            background_edges=int(section.get("background_edges", 0)))
        for name, tdata in ds.splits().items():
            write_store(tdata.store, out_dir / f"{name}_edges.txt",
                        out_dir / f"{name}_node_feats.txt")
            write_queries(tdata.all_queries(), out_dir / f"{name}_queries.txt")
        write_dataset_manifest(out_dir / "dataset.json", ds.spec)
    else:
        raise InputError(f"unknown shift kind '{kind}'")
    print(f"synthesized dataset under {out_dir}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = apply_overrides(load_config(args.config), args.set)
    tcfg = train_config_from(cfg)
    out_dir = resolve_out_dir(cfg, args.out)
    snapshot_config(cfg, out_dir)
    if "dataset" not in cfg:
        raise InputError("ablate needs a dataset section")
    seeds = [int(s) for s in cfg.get("seeds", [tcfg.seed])]
    summary = {"schema": 1, "seeds": seeds, "variants": {v: {} for v in VARIANTS}}
    per_variant_auc = {v: [] for v in VARIANTS}
    fractions = []
    for seed in seeds:
        scfg = replace(tcfg, seed=seed)
        splits = build_dataset({**cfg, "dataset": {**cfg["dataset"], "seed": seed}}, scfg)
        if "test-ood" not in splits:
            raise InputError("ablate needs a dataset with an OOD split")
        train_data = splits.get("train-full", splits["train"])
        ood_data = splits["test-ood"]
        curves = run_ablation(train_data, ood_data, scfg,
                              log=None if args.quiet else print)
        for variant in VARIANTS:
            write_curves(curves[variant], out_dir / f"curves_seed{seed}_{variant}.csv")
            per_variant_auc[variant].append(curves[variant].final_ood_auc)
        fractions.append(lower_ood_loss_fraction(
            curves, after_epoch=min(5, scfg.epochs - 1)))
    for variant in VARIANTS:
        vals = np.array(per_variant_auc[variant])
        summary["variants"][variant] = {
            "ood_auc_mean": float(vals.mean()),
            "ood_auc_std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
        }
    summary["ood_auc_margin"] = (summary["variants"]["invariant"]["ood_auc_mean"]
                                 - summary["variants"]["all-links"]["ood_auc_mean"])
    summary["lower_ood_loss_fraction"] = [float(f) for f in fractions]
    with open(out_dir / "ablation_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"ablation margin={summary['ood_auc_margin']:.4f} out={out_dir}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    # deferred import: gradcheck builds toy subgraphs through the test harness
    from .gradcheck import run_gradcheck
    worst = run_gradcheck(n_subgraphs=args.subgraphs, seed=args.seed,
                          verbose=not args.quiet)
    print(f"gradcheck max_rel_err={worst:.3e} over {args.subgraphs} subgraphs")
    return EXIT_OK if worst < 1e-4 else EXIT_INTERNAL


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="invlink",
        description="Invariant link selection for temporal link prediction")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value (dotted keys; JSON values)")
        p.add_argument("--quiet", action="store_true")

    p_train = sub.add_parser("train", help="train and checkpoint a model")
    common(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on test splits")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.set_defaults(fn=cmd_eval)

    p_synth = sub.add_parser("synth", help="synthesize a shifted dataset")
    common(p_synth)
    p_synth.set_defaults(fn=cmd_synth)

    p_ablate = sub.add_parser("ablate", help="selector vs all-links loss curves")
    common(p_ablate)
    p_ablate.set_defaults(fn=cmd_ablate)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p_grad.add_argument("--subgraphs", type=int, default=5)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--quiet", action="store_true")
    p_grad.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (InputError, GraphFormatError, SplitError, ShiftError) as exc:
        print(json.dumps({"error": str(exc), "code": EXIT_INPUT}), file=sys.stderr)
        return EXIT_INPUT
    except T.ManifestError as exc:
        print(json.dumps({"error": str(exc), "code": EXIT_CHECKPOINT}), file=sys.stderr)
        return EXIT_CHECKPOINT
    except Exception as exc:  # pragma: no cover - defensive
        print(json.dumps({"error": f"{type(exc).__name__}: {exc}",
                          "code": EXIT_INTERNAL}), file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
