"""Self-describing model container: a JSON header (config echo, vocabularies,
tensor directory) followed by the raw row-major float64 little-endian tensor
data. Saving and reloading the same model is bit-identical."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .experts import ExpertBank, Vocabulary
from .policy import ActorValueNet, TrainConfig

MAGIC = b"ESMOEB01"


class ModelFormatError(ValueError):
    """Unreadable or wrong-version model file."""


def save_container(path: str | Path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    names = sorted(tensors)
    blobs = [np.asarray(tensors[n], dtype="<f8") for n in names]
    header = {
        "meta": meta,
        "tensors": [{"name": n, "shape": list(b.shape)} for n, b in zip(names, blobs)],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for b in blobs:
            f.write(b.tobytes(order="C"))


def load_container(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ModelFormatError(f"{path}: not an {MAGIC.decode()} model file")
        (header_len,) = struct.unpack("<Q", f.read(8))
        try:
            header = json.loads(f.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ModelFormatError(f"{path}: corrupt header ({e})") from e
        tensors = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 8)
            if len(raw) != count * 8:
                raise ModelFormatError(f"{path}: truncated tensor {entry['name']!r}")
            tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return tensors, header["meta"]


def _module_tensors(module: torch.nn.Module, prefix: str) -> dict[str, np.ndarray]:
    out = {}
    for name, p in module.named_parameters():
        out[f"{prefix}.{name}"] = p.detach().numpy()
    for name, b in module.named_buffers():
        out[f"{prefix}.{name}"] = b.detach().numpy()
    return out


def save_bundle(
    path: str | Path,
    bank: ExpertBank,
    net: ActorValueNet,
    config: TrainConfig,
    d1: int,
    d2: int,
    dropout: float,
    extra_meta: Optional[dict] = None,
) -> None:
    tensors = {**_module_tensors(bank, "bank"), **_module_tensors(net, "net")}
    meta = {
        "format_version": 1,
        "d_h": bank.d_h,
        "max_len": bank.max_len,
        "alpha": bank.alpha,
        "vocab": list(bank.vocab.tokens),
        "vocab_sha256": bank.vocab.sha256(),
        "head_vocabs": {h: list(v) for h, v in bank.head_vocabs.items()},
        "net": {"d1": d1, "d2": d2, "dropout": dropout},
        "train_config": asdict(config),
        "seed": config.seed,
    }
    if extra_meta:
        meta["extra"] = extra_meta
    save_container(path, tensors, meta)


def load_bundle(path: str | Path) -> tuple[ExpertBank, ActorValueNet, TrainConfig, dict]:
    tensors, meta = load_container(path)
    if meta.get("format_version") != 1:
        raise ModelFormatError(f"{path}: unsupported bundle version")
    vocab = Vocabulary(meta["vocab"])
    if vocab.sha256() != meta["vocab_sha256"]:
        raise ModelFormatError(f"{path}: vocabulary hash mismatch")
    head_vocabs = {h: tuple(v) for h, v in meta["head_vocabs"].items()}
    config = TrainConfig(**meta["train_config"])
    bank = ExpertBank(
        vocab,
        head_vocabs,
        d_h=meta["d_h"],
        max_len=meta["max_len"],
        alpha=meta["alpha"],
    )
    net = ActorValueNet(
        config.k_steps,
        d_h=meta["d_h"],
        d1=meta["net"]["d1"],
        d2=meta["net"]["d2"],
        dropout=meta["net"]["dropout"],
    )
    for module, prefix in ((bank, "bank"), (net, "net")):
        state = dict(module.named_parameters())
        state.update(module.named_buffers())
        for name, tensor in state.items():
            key = f"{prefix}.{name}"
            if key not in tensors:
                raise ModelFormatError(f"{path}: missing tensor {key!r}")
            if tuple(tensor.shape) != tensors[key].shape:
                raise ModelFormatError(f"{path}: shape mismatch for {key!r}")
            with torch.no_grad():
                tensor.copy_(torch.from_numpy(tensors[key]))
    return bank, net, config, meta
