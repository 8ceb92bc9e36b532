"""Prompt-dump ingestion, frozen-encoder inference, and CEMB cache writing.

The prompt dump is newline-delimited JSON: a header line
{"n_rows", "n_cols", "schema_hash"} followed by one {"i", "j", "text"} record
per cell. The output cache is the CEMB binary format (little-endian): magic
"CEMB", version u32, N u64, m u32, d u32, provider-id u32, seed u64,
schema-hash u64, then N*m*d float32 values row-major.

Identical prompt texts are encoded once and reuse the same vector, so equal
cells always get bitwise-identical rows.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CACHE_MAGIC = b"CEMB"
CACHE_VERSION = 1
PROVIDER_EXTERNAL = 3

_HEADER = struct.Struct("<4sIQIIIQQ")

DEFAULT_MODEL = "princeton-nlp/sup-simcse-roberta-base"


class ExportError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExporterConfig:
    model: str = DEFAULT_MODEL
    max_length: int = 512        # token limit D; longer prompts are truncated
    batch_size: int = 32
    pooling: str = "mean"        # mean over non-padding token embeddings

    def __post_init__(self):
        if self.max_length < 8:
            raise ExportError("max_length (D) must be >= 8")
        if self.batch_size < 1:
            raise ExportError("batch_size must be >= 1")
        if self.pooling != "mean":
            raise ExportError("pooling is fixed to 'mean'")


@dataclass
class PromptDump:
    n_rows: int
    n_cols: int
    schema_hash: int
    texts: list[str] = field(default_factory=list)   # row-major, length N*m


def read_prompts(path) -> PromptDump:
    path = Path(path)
    if not path.exists():
        raise ExportError(f"prompts file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ExportError(f"no prompts in {path}")
    try:
        header = json.loads(lines[0])
        n_rows = int(header["n_rows"])
        n_cols = int(header["n_cols"])
        sch = int(header["schema_hash"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ExportError(f"bad prompt-dump header in {path}: {exc}")
    expected = n_rows * n_cols
    if expected == 0 or len(lines) - 1 == 0:
        raise ExportError(f"no prompts in {path}")
    if len(lines) - 1 != expected:
        raise ExportError(
            f"prompt count mismatch: header says {expected} cells, "
            f"found {len(lines) - 1} records"
        )
    texts: list[str | None] = [None] * expected
    for ln in lines[1:]:
        try:
            rec = json.loads(ln)
            i, j, text = int(rec["i"]), int(rec["j"]), str(rec["text"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ExportError(f"bad prompt record in {path}: {exc}")
        if not (0 <= i < n_rows and 0 <= j < n_cols):
            raise ExportError(f"prompt index ({i}, {j}) outside "
                              f"{n_rows}x{n_cols} grid")
        slot = i * n_cols + j
        if texts[slot] is not None:
            raise ExportError(f"duplicate prompt record for cell ({i}, {j})")
        texts[slot] = text
    if any(t is None for t in texts):
        raise ExportError("prompt dump is missing cells despite matching count")
    return PromptDump(n_rows=n_rows, n_cols=n_cols, schema_hash=sch,
                     texts=texts)


def load_encoder(model_id: str):
    """Load (tokenizer, frozen model) or fail with an actionable message."""
    try:
        import torch
        from transformers import AutoModel, AutoTokenizer
    except ImportError as exc:
        raise ExportError(
            f"torch/transformers are required to run the encoder: {exc}"
        )
    try:
        tokenizer = AutoTokenizer.from_pretrained(model_id)
        model = AutoModel.from_pretrained(model_id)
    except Exception as exc:
        raise ExportError(
            f"could not load encoder '{model_id}': {exc}. "
            "Pass --model with a local directory containing the model, or "
            "pre-download it to the HuggingFace cache on a machine with "
            "network access."
        )
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return tokenizer, model


def encode_texts(texts: list[str], tokenizer, model,
                 config: ExporterConfig) -> tuple[np.ndarray, int]:
    """Encode unique texts with masked mean pooling.

    Returns (float32 matrix aligned with `texts`, number of truncated texts).
    """
    import torch

    unique = sorted(set(texts))
    index = {t: k for k, t in enumerate(unique)}
    dim = model.config.hidden_size
    vectors = np.empty((len(unique), dim), dtype=np.float32)
    truncated = 0
    with torch.no_grad():
        for start in range(0, len(unique), config.batch_size):
            batch = unique[start:start + config.batch_size]
            full = tokenizer(batch, truncation=False)["input_ids"]
            truncated += sum(len(ids) > config.max_length for ids in full)
            enc = tokenizer(batch, padding=True, truncation=True,
                            max_length=config.max_length, return_tensors="pt")
            out = model(**enc).last_hidden_state            # (B, T, d)
            mask = enc["attention_mask"].unsqueeze(-1).to(out.dtype)
            pooled = (out * mask).sum(dim=1) / mask.sum(dim=1)
            vectors[start:start + len(batch)] = \
                pooled.to(torch.float32).cpu().numpy()
    rows = np.stack([vectors[index[t]] for t in texts])
    return rows, truncated


def write_cemb(path, values: np.ndarray, seed: int, schema_hash: int) -> None:
    """Write an (N, m, d) float32 array as a CEMB cache (provider id 3)."""
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 3:
        raise ExportError(f"expected (N, m, d) values, got shape {values.shape}")
    n, m, d = values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, n, m, d,
                              PROVIDER_EXTERNAL, seed, schema_hash))
        fh.write(values.tobytes())


def export(prompts_path, out_path, config: ExporterConfig) -> dict:
    """Run the full pipeline; returns a small summary dict."""
    dump = read_prompts(prompts_path)
    tokenizer, model = load_encoder(config.model)
    rows, truncated = encode_texts(dump.texts, tokenizer, model, config)
    values = rows.reshape(dump.n_rows, dump.n_cols, -1)
    write_cemb(out_path, values, seed=0, schema_hash=dump.schema_hash)
    return {
        "n_rows": dump.n_rows,
        "n_cols": dump.n_cols,
        "dim": int(values.shape[2]),
        "unique_prompts": len(set(dump.texts)),
        "truncated": truncated,
        "out": str(out_path),
    }
