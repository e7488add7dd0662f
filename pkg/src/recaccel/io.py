"""Two-part model files: ``<stem>.json`` header and ``<stem>.bin`` blob.

The blob holds every parameter as little-endian float64 in header order,
followed by the pruning masks packed one bit per weight (little bit order).
The header records shapes, byte offsets, storage bit widths, quantization
parameters and a SHA-256 of the blob.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .exceptions import DomainError
from .model import Model, ModelSpec, model_bits
from .quant import QuantParams

FORMAT = "recaccel-model/1"


def _paths(path) -> tuple:
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".json", ".bin") else p
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def model_to_bytes(model: Model) -> tuple:
    """Return ``(header_dict, blob_bytes)``."""
    chunks, tensors, masks = [], [], []
    offset = 0
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        raw = arr.tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    for name in sorted(model.masks):
        mask = model.masks[name]
        raw = np.packbits(mask.astype(bool).ravel(), bitorder="little").tobytes()
        masks.append({"name": name, "shape": list(mask.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    header = {
        "format": FORMAT,
        "spec": model.spec.to_dict(),
        "tensors": tensors,
        "masks": masks,
        "qparams": {n: qp.to_dict() for n, qp in sorted(model.qparams.items())},
        "storage_bits": model_bits(model),
        "fake_quant": model.fake_quant,
        "act_bits": model.act_bits,
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    return header, blob


def save_model(model: Model, path) -> tuple:
    hpath, bpath = _paths(path)
    header, blob = model_to_bytes(model)
    hpath.parent.mkdir(parents=True, exist_ok=True)
    bpath.write_bytes(blob)
    hpath.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return hpath, bpath


def load_model(path) -> Model:
    hpath, bpath = _paths(path)
    header = json.loads(hpath.read_text())
    if header.get("format") != FORMAT:
        raise DomainError(f"{hpath} is not a {FORMAT} header")
    blob = bpath.read_bytes()
    if hashlib.sha256(blob).hexdigest() != header["sha256"]:
        raise DomainError(f"{bpath} does not match its header checksum")
    params = {}
    for t in header["tensors"]:
        raw = blob[t["offset"]:t["offset"] + t["nbytes"]]
        params[t["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(t["shape"])
    masks = {}
    for mk in header["masks"]:
        raw = np.frombuffer(blob[mk["offset"]:mk["offset"] + mk["nbytes"]], dtype=np.uint8)
        n = int(np.prod(mk["shape"]))
        bits = np.unpackbits(raw, bitorder="little")[:n]
        masks[mk["name"]] = bits.astype(np.float64).reshape(mk["shape"])
    return Model(
        spec=ModelSpec.from_dict(header["spec"]),
        params=params,
        masks=masks,
        qparams={n: QuantParams.from_dict(q) for n, q in header["qparams"].items()},
        fake_quant=header["fake_quant"],
        act_bits=header["act_bits"],
    )


def model_checksum(model: Model) -> str:
    """SHA-256 over the serialized header and blob."""
    header, blob = model_to_bytes(model)
    h = hashlib.sha256(json.dumps(header, sort_keys=True).encode())
    h.update(blob)
    return h.hexdigest()
