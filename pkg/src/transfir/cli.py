"""Command-line surface: ingest | split | train | eval | diagnose | synth.

Exit codes: 0 success, 2 input error, 3 numeric divergence, 4 checkpoint
incompatibility. Configuration precedence: command-line flags > config
file (`key = value` lines) > built-in defaults. All randomness flows
from --seed. Thread environment variables are pinned before numpy loads
so repeated runs are reproducible.
"""

from __future__ import annotations

import argparse
import os
import sys


def _positive_threads(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return n


def _ratios(text: str):
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("ratios must be three comma-separated numbers")
    return tuple(parts)


HP_FLAGS = [
    # (flag, dest, type, help)
    ("--codebook-size", "codebook_size", int, "number of cluster prototypes"),
    ("--chain-len", "chain_len", int, "interactions kept per chain (top-k)"),
    ("--window", "window", int, "lookback horizon in snapshots"),
    ("--dim", "dim", int, "hidden dimension"),
    ("--layers", "layers", int, "transformer depth"),
    ("--heads", "heads", int, "attention heads"),
    ("--codebook-weight", "codebook_weight", float, "prototype-pull loss weight"),
    ("--commitment-weight", "commitment_weight", float, "commitment loss weight"),
    ("--cluster-loss-weight", "cluster_loss_weight", float, "clustering objective weight"),
    ("--lr", "lr", float, "learning rate"),
    ("--epochs", "epochs", int, "training epochs"),
    ("--seed", "seed", int, "seed for every random choice"),
    ("--transfer-scope", "transfer_scope", str, "apply transfer to 'all' or 'non-query' entities"),
    ("--conv-channels", "conv_channels", int, "decoder convolution channels"),
    ("--kernel-width", "kernel_width", int, "decoder kernel width (odd)"),
    ("--patience", "patience", int, "early-stopping patience in epochs"),
    ("--grad-clip", "grad_clip", float, "global gradient-norm clip"),
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transfir",
                                     description="Inductive temporal-KG reasoning pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_flags(p, embeddings=True):
        p.add_argument("--data", required=True, help="dataset directory")
        if embeddings:
            p.add_argument("--embeddings", default=None,
                           help="entity embedding file (default: DATA/embeddings.txt)")
        p.add_argument("--ratios", type=_ratios, default=None,
                       help="train,valid,test timestamp ratios (default 0.5,0.2,0.3)")
        p.add_argument("--config", default=None, help="key = value configuration file")

    p = sub.add_parser("ingest", help="summarize a dataset")
    add_data_flags(p, embeddings=False)
    p.add_argument("--format", choices=("text", "kv"), default="text")

    p = sub.add_parser("split", help="print chronological split boundaries")
    add_data_flags(p, embeddings=False)
    p.add_argument("--format", choices=("text", "kv"), default="text")

    p = sub.add_parser("train", help="train a model")
    add_data_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=_positive_threads, default=None,
                   help="worker threads (default 1 for reproducible training)")
    p.add_argument("--cache-assignments", action="store_true", default=None,
                   help="recompute cluster assignments once per epoch instead of per timestamp")
    for flag, dest, typ, help_text in HP_FLAGS:
        p.add_argument(flag, dest=dest, type=typ, default=None, help=help_text)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None, help="directory for report files")
    p.add_argument("--modes", default="vanilla,emerging,unknown",
                   help="comma-separated: vanilla,emerging,unknown")
    p.add_argument("--policy", choices=("query-side", "either-side", "both"), default="both")
    p.add_argument("--interval", choices=("test", "valid"), default="test")
    p.add_argument("--ablate", choices=("no-transfer",), default=None,
                   help="zero the dynamic prototypes during evaluation")
    p.add_argument("--threads", type=_positive_threads, default=None,
                   help="worker threads (default: available cores)")
    p.add_argument("--format", choices=("text", "kv"), default="text")

    p = sub.add_parser("diagnose", help="collapse ratio and 2-D projection of a checkpoint")
    add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=_positive_threads, default=None)

    p = sub.add_parser("synth", help="generate a planted-pattern instance")
    p.add_argument("--out", required=True)
    # None defers to the generator's own defaults
    p.add_argument("--types", type=int, default=None)
    p.add_argument("--per-type", dest="per_type", type=int, default=None)
    p.add_argument("--anchors-per-type", dest="anchors_per_type", type=int, default=None)
    p.add_argument("--relations", type=int, default=None)
    p.add_argument("--timestamps", type=int, default=None)
    p.add_argument("--emergence", type=float, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--jitter", type=float, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--pattern", choices=("alternating", "ambiguous"), default=None)
    p.add_argument("--format", choices=("text", "kv"), default="text")
    return parser


# ---------------------------------------------------------------------------
# Configuration resolution


def read_config(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}: expected `key = value`, got {line!r}")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def resolve_hyperparams(args, config: dict[str, str]):
    from .model import Hyperparams

    hp = Hyperparams()
    for flag, dest, typ, _ in HP_FLAGS + [("", "cache_assignments", bool, "")]:
        cli_value = getattr(args, dest, None)
        if cli_value is not None:
            setattr(hp, dest, cli_value)
        elif dest in config:
            raw = config[dest]
            setattr(hp, dest, raw == "True" if typ is bool else typ(raw))
    hp.validate()
    return hp


def _resolve(args, config, key, default):
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _pin_threads(n: int) -> None:
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


# ---------------------------------------------------------------------------
# Commands


def _load_everything(args, config, *, need_embeddings=True):
    from .data import add_inverse_relations, chronological_split, load_dataset, load_embeddings

    data_dir = args.data
    if not os.path.isdir(data_dir):
        raise FileNotFoundError(data_dir)
    g = load_dataset(data_dir)
    ratios = _resolve(args, config, "ratios", (0.5, 0.2, 0.3))
    if isinstance(ratios, str):
        ratios = tuple(float(x) for x in ratios.split(","))
    split = chronological_split(g, ratios)
    table = None
    if need_embeddings:
        path = _resolve(args, config, "embeddings", None) or os.path.join(data_dir, "embeddings.txt")
        if not os.path.exists(path):
            raise FileNotFoundError(path)
        table = load_embeddings(path, g.vocab.num_entities)
    return g, add_inverse_relations(g), split, table


def cmd_ingest(args) -> int:
    from .evaluation import emergence_stats

    config = read_config(args.config)
    g, _, split, _ = _load_everything(args, config, need_embeddings=False)
    stats = emergence_stats(g, split)
    pairs = [
        ("entities", g.vocab.num_entities),
        ("relations", g.vocab.num_relations),
        ("timestamps", g.num_timestamps),
        ("facts", g.num_facts()),
        ("appearing_entities", stats.appearing_count),
        ("emerging_entities", stats.emerging_count),
        ("emerging_fraction", f"{stats.emerging_fraction:.6f}"),
        ("train", f"{split.train[0]}..{split.train[1]}"),
        ("valid", f"{split.valid[0]}..{split.valid[1]}"),
        ("test", f"{split.test[0]}..{split.test[1]}"),
    ]
    if args.format == "kv":
        for key, value in pairs:
            print(f"{key}={value}")
    else:
        print(f"dataset {args.data}")
        for key, value in pairs:
            print(f"  {key}: {value}")
    return 0


def cmd_split(args) -> int:
    config = read_config(args.config)
    g, _, split, _ = _load_everything(args, config, need_embeddings=False)
    if args.format == "kv":
        for name in ("train", "valid", "test"):
            lo, hi = split.interval(name)
            print(f"{name}_start={lo}")
            print(f"{name}_end={hi}")
    else:
        print(f"timestamps: {g.num_timestamps}")
        for name in ("train", "valid", "test"):
            lo, hi = split.interval(name)
            print(f"  {name}: [{lo}, {hi})")
    return 0


def _format_record(record: dict) -> str:
    parts = []
    for key, value in record.items():
        parts.append(f"{key}={value:.6f}" if isinstance(value, float) else f"{key}={value}")
    return " ".join(parts)


def cmd_train(args) -> int:
    from .evaluation import EvalMode, evaluate
    from .model import Model
    from .training import Adam, fit, save_checkpoint

    config = read_config(args.config)
    hp = resolve_hyperparams(args, config)
    g, g_aug, split, table = _load_everything(args, config)
    os.makedirs(args.out, exist_ok=True)
    model = Model(table.entities.values, g.vocab.num_relations, hp)
    opt = Adam(model.named_parameters(), lr=hp.lr)
    checkpoint_path = os.path.join(args.out, "checkpoint.tfir")
    log_path = os.path.join(args.out, "train_log.txt")

    if hp.epochs == 0:
        save_checkpoint(model, opt, checkpoint_path)
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write("epoch=0 note=initialized_checkpoint_only\n")
        print(f"wrote initialized checkpoint to {checkpoint_path}")
        return 0

    emerging_mode = EvalMode(setting="emerging", policy="query-side")
    vanilla_mode = EvalMode(setting="vanilla")

    def validate_fn(m) -> float:
        report = evaluate(m, g_aug, split, emerging_mode, interval="valid")
        if report.empty:  # no entity first appears in the validation window
            report = evaluate(m, g_aug, split, vanilla_mode, interval="valid")
        return report.averaged.mrr

    log_fh = open(log_path, "a", encoding="utf-8")
    best_state = {"saved": False}

    def log_fn(record):
        log_fh.write(_format_record(record) + "\n")
        log_fh.flush()
        print(_format_record(record))
        if record.get("improved"):
            save_checkpoint(model, opt, checkpoint_path, extra_meta={"epoch": str(record["epoch"])})
            best_state["saved"] = True

    try:
        result = fit(model, g_aug, split, opt, validate_fn=validate_fn, log_fn=log_fn)
    finally:
        log_fh.close()
    if not best_state["saved"]:
        save_checkpoint(model, opt, checkpoint_path)
    with open(os.path.join(args.out, "best_epoch.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"best_epoch={result.best_epoch}\n")
        fh.write(f"best_valid_metric={result.best_metric:.10f}\n")
        fh.write(f"stopped_early={result.stopped_early}\n")
    print(f"best_epoch={result.best_epoch} best_valid_metric={result.best_metric:.6f}")
    return 0


def _report_lines(label: str, report) -> list[str]:
    lines = []
    for direction, metrics in (("forward", report.forward), ("inverse", report.inverse),
                               ("avg", report.averaged)):
        lines.append(f"mode={label} direction={direction} mrr={metrics.mrr:.6f} "
                     f"hits3={metrics.hits3:.6f} hits10={metrics.hits10:.6f} "
                     f"n_queries={metrics.n_queries}")
    return lines


def cmd_eval(args) -> int:
    from .evaluation import EvalMode, evaluate
    from .training import load_checkpoint

    config = read_config(args.config)
    g, g_aug, split, _ = _load_everything(args, config, need_embeddings=False)
    model, _, _ = load_checkpoint(args.checkpoint)
    if model.num_entities != g.vocab.num_entities:
        from .errors import IntegrityError
        raise IntegrityError(f"checkpoint holds {model.num_entities} entities, "
                             f"dataset has {g.vocab.num_entities}")
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    policies = ["query-side", "either-side"] if args.policy == "both" else [args.policy]
    threads = args.threads or os.cpu_count() or 1
    ablate = args.ablate == "no-transfer"

    lines: list[str] = []
    for setting in modes:
        for policy in policies:
            if setting == "vanilla" and policy != policies[0]:
                continue  # policy is irrelevant for vanilla
            mode = EvalMode(setting=setting, policy=policy)
            report = evaluate(model, g_aug, split, mode, interval=args.interval,
                              ablate_transfer=ablate, threads=threads)
            label = setting if setting == "vanilla" else f"{setting}/{policy}"
            if args.format == "text":
                status = " (no matching queries)" if report.empty else ""
                print(f"[{label}]{status}")
            lines.extend(_report_lines(label, report))
    for line in lines:
        print(line)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        suffix = "_no_transfer" if ablate else ""
        out_path = os.path.join(args.out, f"eval_report_{args.interval}{suffix}.txt")
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"report written to {out_path}")
    return 0


def cmd_diagnose(args) -> int:
    import numpy as np

    from .data import emerging_entities, first_appearance
    from .evaluation import collapse_ratio, emit_projection
    from .model import run_snapshot, snapshot_queries
    from .training import load_checkpoint

    config = read_config(args.config)
    g, g_aug, split, _ = _load_everything(args, config, need_embeddings=False)
    model, _, _ = load_checkpoint(args.checkpoint)
    os.makedirs(args.out, exist_ok=True)

    # transferred entity table after walking the whole test range
    carry = model.zero_prototypes()
    transferred = model.entities.values
    for t in range(*split.test):
        out = run_snapshot(model, g_aug, snapshot_queries(g_aug, t), carry)
        carry = out.proto_carry
        transferred = out.transferred.values

    emerging = sorted(emerging_entities(g_aug, split))
    appearing = sorted(first_appearance(g_aug))
    known = [e for e in appearing if e not in set(emerging)]
    labels = ["emerging" if e in set(emerging) else "known" for e in range(model.num_entities)]
    emit_projection(transferred, labels, os.path.join(args.out, "projection.txt"),
                    ids=range(model.num_entities))

    report_path = os.path.join(args.out, "collapse_report.txt")
    if len(emerging) < 2 or len(known) < 2:
        message = (f"collapse ratio undefined: {len(emerging)} emerging / "
                   f"{len(known)} known entities (need >= 2 of each)")
        with open(report_path, "w", encoding="utf-8") as fh:
            fh.write(message + "\n")
        print(message)
        return 0
    ratio = collapse_ratio(transferred[np.asarray(emerging)], transferred[np.asarray(known)])
    lines = [f"collapse_ratio={ratio:.6f}",
             f"n_emerging={len(emerging)}",
             f"n_known={len(known)}",
             f"projection_rows={model.num_entities}"]
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    return 0


def cmd_synth(args) -> int:
    from .synthetic import SynthSpec, write_instance

    overrides = {field: value for field, value in (
        ("n_types", args.types), ("per_type", args.per_type),
        ("anchors_per_type", args.anchors_per_type), ("n_relations", args.relations),
        ("n_timestamps", args.timestamps), ("emergence", args.emergence),
        ("noise", args.noise), ("dim", args.dim), ("jitter", args.jitter),
        ("stride", args.stride), ("seed", args.seed), ("pattern", args.pattern),
    ) if value is not None}
    spec = SynthSpec(**overrides)
    g, _, truth = write_instance(args.out, spec)
    pairs = [("entities", spec.n_entities), ("relations", spec.n_relations),
             ("timestamps", g.num_timestamps), ("facts", g.num_facts()),
             ("emerging", len(truth.emerging)), ("out", args.out)]
    if args.format == "kv":
        for key, value in pairs:
            print(f"{key}={value}")
    else:
        print("synthetic instance written: " +
              ", ".join(f"{key}={value}" for key, value in pairs))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    default_threads = 1 if args.command == "train" else (os.cpu_count() or 1)
    _pin_threads(getattr(args, "threads", None) or default_threads)

    from .errors import (CheckpointVersionError, ConfigError, ContractError, IntegrityError,
                         NumericError, ParseError, VocabError)

    handler = {"ingest": cmd_ingest, "split": cmd_split, "train": cmd_train,
               "eval": cmd_eval, "diagnose": cmd_diagnose, "synth": cmd_synth}[args.command]
    try:
        return handler(args)
    except FileNotFoundError as exc:
        print(f"error: missing file or directory: {exc}", file=sys.stderr)
        return 2
    except (ParseError, VocabError, IntegrityError, ConfigError, ContractError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return 3
    except CheckpointVersionError as exc:
        print(f"checkpoint incompatibility: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
