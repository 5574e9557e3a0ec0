from __future__ import annotations

import hashlib
import os

import numpy as np

HASHING_ENCODER = "hashing"
DEFAULT_ENCODER = "bert-base-uncased"
DEFAULT_DIM = 768


class ExportIntegrityError(Exception):
    """Vocabulary or output inconsistent with its own declaration."""


class EncoderUnavailable(Exception):
    """The requested text encoder cannot be loaded in this environment."""


def read_titles(vocab_dir: str) -> list[str]:
    """Entity titles ordered by id; ids must be dense 0..N-1."""
    path = os.path.join(vocab_dir, "entity2id.txt")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    by_id: dict[int, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            name, sep, ident = line.rpartition("\t")
            if not sep:
                raise ExportIntegrityError(f"{path}:{lineno}: expected `name<TAB>id`")
            try:
                ident = int(ident)
            except ValueError:
                raise ExportIntegrityError(f"{path}:{lineno}: non-integer id {ident!r}")
            if ident in by_id:
                raise ExportIntegrityError(f"{path}:{lineno}: duplicate id {ident}")
            by_id[ident] = name
    if sorted(by_id) != list(range(len(by_id))):
        raise ExportIntegrityError(f"{path}: entity ids are not dense 0..{len(by_id) - 1}")
    return [by_id[i] for i in range(len(by_id))]


# ---------------------------------------------------------------------------
# Offline hashing encoder: stable across runs and platforms, no downloads.


def _features(title: str):
    text = title.lower()
    for word in text.split():
        yield "w:" + word
    padded = f" {text} "
    for i in range(len(padded) - 2):
        yield "c:" + padded[i:i + 3]


def hashing_vectors(titles: list[str], dim: int) -> np.ndarray:
    """Signed feature hashing of words and character trigrams, unit norm."""
    if dim < 1:
        raise ExportIntegrityError(f"dimension must be >= 1, got {dim}")
    out = np.zeros((len(titles), dim))
    for row, title in enumerate(titles):
        for feat in _features(title):
            digest = hashlib.blake2b(feat.encode("utf-8"), digest_size=8).digest()
            value = int.from_bytes(digest, "little")
            sign = 1.0 if value & 1 else -1.0
            out[row, (value >> 1) % dim] += sign
        norm = np.linalg.norm(out[row])
        if norm > 0:
            out[row] /= norm
    return out


# ---------------------------------------------------------------------------
# Pretrained-encoder path: mean pooling over final-layer token vectors.


def transformer_vectors(titles: list[str], model_name: str, batch_size: int = 32,
                        dim: int | None = None) -> np.ndarray:
    try:
        import torch
        from transformers import AutoModel, AutoTokenizer
    except ImportError as exc:
        raise EncoderUnavailable(
            "the pretrained-encoder path needs `transformers` and `torch`; "
            "install them with `pip install embed-export[plm]` "
            f"or use `--encoder {HASHING_ENCODER}` for the offline built-in ({exc})")
    try:
        tokenizer = AutoTokenizer.from_pretrained(model_name)
        model = AutoModel.from_pretrained(model_name)
    except Exception as exc:
        raise EncoderUnavailable(
            f"encoder {model_name!r} is not available locally or cached; download it once with "
            f"`python -c \"from transformers import AutoModel, AutoTokenizer; "
            f"AutoModel.from_pretrained('{model_name}'); AutoTokenizer.from_pretrained('{model_name}')\"` "
            f"on a connected machine, or use `--encoder {HASHING_ENCODER}` ({exc})")
    model.eval()
    hidden = int(model.config.hidden_size)
    if dim is not None and dim != hidden:
        raise ExportIntegrityError(
            f"--dim {dim} does not match {model_name!r} hidden size {hidden}")
    rows = []
    with torch.no_grad():
        for start in range(0, len(titles), batch_size):
            batch = titles[start:start + batch_size]
            encoded = tokenizer(batch, padding=True, truncation=True, return_tensors="pt")
            states = model(**encoded).last_hidden_state
            mask = encoded["attention_mask"].unsqueeze(-1).to(states.dtype)
            pooled = (states * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1.0)
            rows.append(pooled.double().cpu().numpy())
    return np.vstack(rows) if rows else np.zeros((0, hidden))


def encode_titles(titles: list[str], encoder: str = DEFAULT_ENCODER,
                  dim: int | None = None, batch_size: int = 32) -> np.ndarray:
    if encoder == HASHING_ENCODER:
        return hashing_vectors(titles, dim if dim is not None else DEFAULT_DIM)
    return transformer_vectors(titles, encoder, batch_size=batch_size, dim=dim)


# ---------------------------------------------------------------------------
# Output


def write_embedding_file(path: str, matrix: np.ndarray) -> None:
    n, d = matrix.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{n} {d}\n")
        for ident in range(n):
            fh.write(f"{ident} " + " ".join(repr(float(v)) for v in matrix[ident]) + "\n")


def export_embeddings(vocab_dir: str, out_path: str, encoder: str = DEFAULT_ENCODER,
                      dim: int | None = None, batch_size: int = 32) -> np.ndarray:
    """Encode every entity title and write the embedding file; returns the matrix."""
    titles = read_titles(vocab_dir)
    matrix = encode_titles(titles, encoder=encoder, dim=dim, batch_size=batch_size)
    if matrix.shape[0] != len(titles):
        raise ExportIntegrityError(
            f"encoder produced {matrix.shape[0]} rows for {len(titles)} titles")
    write_embedding_file(out_path, matrix)
    return matrix
