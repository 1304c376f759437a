"""Versioned checkpoint container for model parameters.

Layout of a ``NICKPT v1`` file:

    b"NICKPT v1\\n"
    8-byte little-endian header length
    header JSON (utf-8, sorted keys)
    payload: float64 little-endian row-major tensor data, concatenated
             in the exact order of the header's tensor manifest

The header carries the resolved config echo, the vocabulary (full dump
plus its sha256), the builtin name->row index map, the optimizer step
count, and the tensor manifest.  Parameters are stored under ``param.``
and Adam moments under ``opt.m.`` / ``opt.v.`` so a loaded model can
resume training exactly where it stopped.

Saving is deterministic: two models with identical parameter bytes
produce byte-identical files.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct

import numpy as np

from .config import Config
from .guesser import Vocabulary

MAGIC = b"NICKPT v1\n"


class CheckpointError(Exception):
    """Raised when a checkpoint file is malformed or incompatible."""


@dataclasses.dataclass
class Checkpoint:
    """Decoded checkpoint contents, not yet bound to a model."""

    config: dict
    vocab_text: str
    vocab_sha256: str
    builtin_index: dict
    step: int
    tensors: dict  # full key (param./opt.m./opt.v.) -> ndarray


def _manifest(model) -> list:
    keys = []
    for name in model.store.names():
        keys.append(f"param.{name}")
        keys.append(f"opt.m.{name}")
        keys.append(f"opt.v.{name}")
    return sorted(keys)


def _tensor_for_key(model, key: str) -> np.ndarray:
    if key.startswith("param."):
        return model.store[key[len("param."):]].data
    if key.startswith("opt.m."):
        return model.store.m[key[len("opt.m."):]]
    if key.startswith("opt.v."):
        return model.store.v[key[len("opt.v."):]]
    raise CheckpointError(f"unknown tensor namespace in {key!r}")


def save_checkpoint(path: str, model) -> None:
    keys = _manifest(model)
    manifest = []
    blobs = []
    for key in keys:
        arr = np.ascontiguousarray(_tensor_for_key(model, key), dtype="<f8")
        manifest.append([key, list(arr.shape)])
        blobs.append(arr.tobytes())
    header = {
        "builtin_index": model.builtins.index_map(),
        "config": model.config.to_dict(),
        "format": "NICKPT v1",
        "step": model.store.step,
        "tensors": manifest,
        "vocab": model.vocab.dump(),
        "vocab_sha256": model.vocab.content_hash(),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for chunk in blobs:
            fh.write(chunk)
    os.replace(tmp, path)


def read_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic, not a NICKPT v1 file")
    off = len(MAGIC)
    if len(data) < off + 8:
        raise CheckpointError(f"{path}: truncated header length")
    (hlen,) = struct.unpack_from("<Q", data, off)
    off += 8
    if len(data) < off + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc
    off += hlen
    if header.get("format") != "NICKPT v1":
        raise CheckpointError(f"{path}: unknown format {header.get('format')!r}")
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        key, shape = entry[0], tuple(entry[1])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 8
        if len(data) < off + nbytes:
            raise CheckpointError(f"{path}: payload truncated at {key!r}")
        flat = np.frombuffer(data, dtype="<f8", count=count, offset=off)
        tensors[key] = flat.reshape(shape).astype(np.float64)
        off += nbytes
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes after payload")
    return Checkpoint(
        config=header["config"],
        vocab_text=header["vocab"],
        vocab_sha256=header["vocab_sha256"],
        builtin_index=header["builtin_index"],
        step=int(header["step"]),
        tensors=tensors,
    )


def load_model(path: str):
    """Reconstruct a full model from a checkpoint file.

    The stored config echo rebuilds the architecture, the embedded
    vocabulary is verified against its recorded hash, and every tensor
    (parameters and optimizer moments) is overwritten with the stored
    bytes.  Name or shape mismatches mean the file does not describe
    this codebase's parameterization and raise CheckpointError.
    """
    from .model import Model

    ck = read_checkpoint(path)
    try:
        config = Config(**ck.config).validate()
    except TypeError as exc:
        raise CheckpointError(f"{path}: config echo mismatch: {exc}") from exc
    vocab = Vocabulary.loads(ck.vocab_text, origin=path)
    if vocab.content_hash() != ck.vocab_sha256:
        raise CheckpointError(f"{path}: vocabulary hash mismatch")
    model = Model.fresh(config, vocab, seed=0)
    expected = set(_manifest(model))
    stored = set(ck.tensors)
    if expected != stored:
        missing = sorted(expected - stored)[:3]
        extra = sorted(stored - expected)[:3]
        raise CheckpointError(
            f"{path}: tensor set mismatch (missing {missing}, extra {extra})")
    for key, arr in ck.tensors.items():
        target = _tensor_for_key(model, key)
        if target.shape != arr.shape:
            raise CheckpointError(
                f"{path}: {key!r} has shape {arr.shape}, expected {target.shape}")
        target[...] = arr
    model.store.step = ck.step
    model.builtins.load_index_map(ck.builtin_index)
    return model
