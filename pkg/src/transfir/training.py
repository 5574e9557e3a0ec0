"""Chronological per-timestamp training, the adaptive-moment optimizer, checkpoints.

Each epoch walks the training timestamps strictly ascending. A timestamp
step assigns clusters, encodes every query's chain, pools prototypes,
transfers, scores, and takes one optimizer step on

    total = link_prediction + cluster_loss_weight * clustering_objective

Prototypes reset to zero at the start of every epoch and carry across
timestamps within it. Gradients are clipped at a global norm before the
update. The frozen entity table is never registered with the optimizer.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import codebook as cb
from .autodiff import Tape, backward
from .data import Split, TemporalKG
from .errors import CheckpointVersionError, ContractError, IntegrityError, NumericError
from .model import Hyperparams, Model, run_snapshot, snapshot_queries

CHECKPOINT_MAGIC = b"TFIR"
CHECKPOINT_VERSION = 1


class Adam:
    """Adaptive-moment updates with bias correction; grads cleared after a step."""

    def __init__(self, named_params, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {name: np.zeros_like(p.values) for name, p in self.params}
        self.v = {name: np.zeros_like(p.values) for name, p in self.params}
        self.steps = 0

    def step(self) -> None:
        for name, p in self.params:
            if p.grad is None:
                raise ContractError(f"parameter {name!r} has no gradient")
        self.steps += 1
        c1 = 1.0 - self.beta1 ** self.steps
        c2 = 1.0 - self.beta2 ** self.steps
        for name, p in self.params:
            g = p.grad
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            p.values -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None


def fill_missing_grads(named_params) -> None:
    """Parameters untouched by a step's graph legitimately have zero gradient."""
    for _, p in named_params:
        if p.grad is None:
            p.grad = np.zeros_like(p.values)


def clip_global_norm(named_params, max_norm: float) -> float:
    total = 0.0
    for _, p in named_params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    total = total ** 0.5
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for _, p in named_params:
            if p.grad is not None:
                p.grad *= factor
    return total


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class EpochReport:
    mean_lp: float
    mean_cluster: float
    dead_codes: int
    steps: int


def train_timestamp(model: Model, g: TemporalKG, t: int, proto_carry: np.ndarray,
                    opt: Adam, assignments: np.ndarray | None = None
                    ) -> tuple[float, float, np.ndarray]:
    """One optimizer step on all queries at timestamp t; no-op when there are none."""
    queries = snapshot_queries(g, t)
    if not len(queries):
        return 0.0, 0.0, proto_carry
    hp = model.hp
    pi = assignments if assignments is not None else model.assignments()
    with Tape():
        out = run_snapshot(model, g, queries, proto_carry, assignments=pi)
        lp = ad.cross_entropy_logits(out.logits, queries[:, 2])
        cluster = ad.add(
            ad.scale(cb.codebook_loss(model.codebook, model.entities, pi), hp.codebook_weight),
            ad.scale(cb.commitment_loss(model.codebook, model.entities, pi), hp.commitment_weight))
        loss = ad.add(lp, ad.scale(cluster, hp.cluster_loss_weight))
        if not np.isfinite(loss.values):
            raise NumericError(f"non-finite loss at timestamp {t}")
        backward(loss)
    named = model.named_parameters()
    fill_missing_grads(named)
    clip_global_norm(named, hp.grad_clip)
    opt.step()
    return float(lp.values), float(cluster.values), out.proto_carry


def train_epoch(model: Model, g: TemporalKG, split: Split, opt: Adam) -> EpochReport:
    """All training timestamps in ascending order, prototypes reset at epoch start."""
    lo, hi = split.train
    carry = model.zero_prototypes()
    cached = model.assignments() if model.hp.cache_assignments else None
    lp_values, cluster_values = [], []
    pi = cached if cached is not None else model.assignments()
    for t in range(lo, hi):
        if not model.hp.cache_assignments:
            pi = model.assignments()
        if not len(snapshot_queries(g, t)):
            continue
        lp, cluster, carry = train_timestamp(model, g, t, carry, opt, assignments=pi)
        lp_values.append(lp)
        cluster_values.append(cluster)
    final_pi = model.assignments()
    return EpochReport(
        mean_lp=float(np.mean(lp_values)) if lp_values else 0.0,
        mean_cluster=float(np.mean(cluster_values)) if cluster_values else 0.0,
        dead_codes=cb.dead_code_count(final_pi, model.hp.codebook_size),
        steps=len(lp_values))


@dataclass
class FitResult:
    epoch_log: list[dict]
    best_epoch: int
    best_metric: float
    stopped_early: bool


def fit(model: Model, g: TemporalKG, split: Split, opt: Adam,
        validate_fn=None, log_fn=None) -> FitResult:
    """Epoch loop with early stopping on the validation metric.

    `validate_fn(model) -> float` is called after each epoch (higher is
    better); training stops once `hp.patience` epochs pass with no
    improvement. Returns the per-epoch log; the caller owns checkpointing.
    """
    hp = model.hp
    log: list[dict] = []
    best_metric = -np.inf
    best_epoch = 0
    stale = 0
    stopped = False
    for epoch in range(1, hp.epochs + 1):
        report = train_epoch(model, g, split, opt)
        record = {"epoch": epoch, "loss_lp": report.mean_lp, "loss_cluster": report.mean_cluster,
                  "dead_codes": report.dead_codes, "steps": report.steps}
        if validate_fn is not None:
            metric = float(validate_fn(model))
            record["valid_metric"] = metric
            if metric > best_metric:
                best_metric, best_epoch, stale = metric, epoch, 0
                record["improved"] = 1
            else:
                stale += 1
                record["improved"] = 0
        log.append(record)
        if log_fn is not None:
            log_fn(record)
        if validate_fn is not None and stale >= hp.patience:
            stopped = True
            break
    if validate_fn is None and log:
        best_epoch = len(log)
    return FitResult(epoch_log=log, best_epoch=best_epoch, best_metric=best_metric,
                     stopped_early=stopped)


# ---------------------------------------------------------------------------
# Checkpoints
#
# Layout: magic `TFIR`, u32 format version, u32-length-prefixed metadata
# block (key=value lines), u32 record count, then per tensor: u16 name
# length, name, u8 ndim, u32 dims, row-major float64 payload.


def _write_record(fh, name: str, values: np.ndarray) -> None:
    raw = name.encode("utf-8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    arr = np.ascontiguousarray(values, dtype=np.float64)
    fh.write(struct.pack("<B", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(arr.tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise IntegrityError("checkpoint truncated")
    return buf


def _read_record(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, name_len).decode("utf-8")
    (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
    shape = tuple(struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    values = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8").reshape(shape).copy()
    return name, values


def save_checkpoint(model: Model, opt: Adam | None, path: str,
                    extra_meta: dict[str, str] | None = None) -> None:
    meta = {f"hp.{k}": v for k, v in model.hp.to_meta().items()}
    meta["num_entities"] = str(model.num_entities)
    meta["num_base_relations"] = str(model.num_base_relations)
    meta["opt_steps"] = str(opt.steps) if opt is not None else ""
    if extra_meta:
        meta.update(extra_meta)
    records: list[tuple[str, np.ndarray]] = [("frozen.entities", model.entities.values)]
    records.extend((name, p.values) for name, p in model.named_parameters())
    if opt is not None:
        records.extend((f"opt.m.{name}", opt.m[name]) for name, _ in opt.params)
        records.extend((f"opt.v.{name}", opt.v[name]) for name, _ in opt.params)
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    meta_block = "".join(f"{k}={v}\n" for k, v in meta.items()).encode("utf-8")
    buf.write(struct.pack("<I", len(meta_block)))
    buf.write(meta_block)
    buf.write(struct.pack("<I", len(records)))
    for name, values in records:
        _write_record(buf, name, values)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path: str) -> tuple[Model, Adam | None, dict[str, str]]:
    """Rebuild the model (and optimizer state, when stored) from a checkpoint."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != CHECKPOINT_MAGIC:
            raise IntegrityError(f"{path}: not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionError(
                f"{path}: format version {version}, this build supports {CHECKPOINT_VERSION}")
        (meta_len,) = struct.unpack("<I", _read_exact(fh, 4))
        meta: dict[str, str] = {}
        for line in _read_exact(fh, meta_len).decode("utf-8").splitlines():
            if line:
                key, _, value = line.partition("=")
                meta[key] = value
        (n_records,) = struct.unpack("<I", _read_exact(fh, 4))
        tensors = dict(_read_record(fh) for _ in range(n_records))
        if fh.read(1) != b"":
            raise IntegrityError(f"{path}: trailing bytes after declared records")

    hp = Hyperparams.from_meta({k[3:]: v for k, v in meta.items() if k.startswith("hp.")})
    if "frozen.entities" not in tensors:
        raise IntegrityError(f"{path}: missing frozen entity table")
    model = Model(tensors["frozen.entities"], int(meta["num_base_relations"]), hp)
    for name, p in model.named_parameters():
        if name not in tensors:
            raise IntegrityError(f"{path}: missing tensor {name!r}")
        if tensors[name].shape != p.values.shape:
            raise IntegrityError(f"{path}: tensor {name!r} has shape {tensors[name].shape}, "
                                 f"expected {p.values.shape}")
        p.values = tensors[name]
    opt = None
    if meta.get("opt_steps"):
        opt = Adam(model.named_parameters(), lr=hp.lr)
        opt.steps = int(meta["opt_steps"])
        for name, _ in opt.params:
            m_key, v_key = f"opt.m.{name}", f"opt.v.{name}"
            if m_key not in tensors or v_key not in tensors:
                raise IntegrityError(f"{path}: missing optimizer state for {name!r}")
            opt.m[name] = tensors[m_key]
            opt.v[name] = tensors[v_key]
    return model, opt, meta
