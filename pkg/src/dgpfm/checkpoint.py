"""Self-describing checkpoint container.

Layout (little-endian)::

    b"DGPFMCKP"          8-byte magic
    u16                  format version
    u64                  header length in bytes
    header               UTF-8 JSON: model kind, configuration, grid, kernels,
                         normalization and the name/shape of every array
    f64 arrays           concatenated in header order

Arrays are stored as raw 64-bit floats, so save -> load reproduces every
parameter bit for bit.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict
from typing import Any

import numpy as np
import torch

from .baselines import FlrModel, FourierBasis
from .data import FormatError, Normalizer
from .inference import Learner
from .model import DGPFM, ModelConfig
from .quadrature import grid_from_description

MAGIC = b"DGPFMCKP"
VERSION = 1
_PRELUDE = struct.Struct("<8sHQ")


def write_container(path, header: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    header = dict(header)
    header["arrays"] = [{"name": n, "shape": list(np.shape(a))} for n, a in arrays]
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PRELUDE.pack(MAGIC, VERSION, len(text)))
        fh.write(text)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _PRELUDE.size:
        raise FormatError("truncated checkpoint prelude", len(raw))
    magic, version, hlen = _PRELUDE.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 8)
    pos = _PRELUDE.size
    if pos + hlen > len(raw):
        raise FormatError("truncated checkpoint header", len(raw))
    try:
        header = json.loads(raw[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint header: {exc}", pos) from exc
    pos += hlen
    arrays = {}
    for spec in header["arrays"]:
        count = int(np.prod(spec["shape"], dtype=np.int64))
        if pos + 8 * count > len(raw):
            raise FormatError(f"truncated array {spec['name']!r}", pos)
        arrays[spec["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(spec["shape"]).copy()
        pos += 8 * count
    if pos != len(raw):
        raise FormatError("trailing bytes after last array", pos)
    return header, arrays


def save_learner(path, learner: Learner, norm: Normalizer | None = None, extra: dict | None = None) -> None:
    model = learner.model
    state = learner.state_dict()
    header: dict[str, Any] = {
        "kind": "dgpfm",
        "model_config": asdict(model.cfg),
        "grid": model.grid.describe(),
        "kernels": {
            "input": [k.describe() for k in model.encoder.kernels],
            "activation": [a.kernel.describe() for a in model.activations],
            "interpolation": model.head.kernel.describe(),
        },
        "weight_prior": learner.weight_prior,
        "normalizer": norm.to_dict() if norm is not None else None,
        "extra": extra or {},
    }
    write_container(path, header, [(k, v.detach().numpy()) for k, v in state.items()])


def load_learner(path) -> tuple[Learner, Normalizer | None, dict]:
    header, arrays = read_container(path)
    if header.get("kind") != "dgpfm":
        raise FormatError(f"checkpoint holds a {header.get('kind')!r} model, not 'dgpfm'", 0)
    cfg = ModelConfig(**header["model_config"])
    learner = Learner(DGPFM(cfg, grid_from_description(header["grid"])), header.get("weight_prior", 0.0))
    state = {k: torch.from_numpy(v) for k, v in arrays.items()}
    learner.load_state_dict(state, strict=True)
    norm = Normalizer.from_dict(header["normalizer"]) if header.get("normalizer") else None
    return learner, norm, header


def save_flr(path, model: FlrModel, norm: Normalizer | None = None, extra: dict | None = None) -> None:
    header = {
        "kind": "flr_fourier",
        "K": model.out_basis.K,
        "L": model.in_basis.K,
        "d": model.in_basis.d,
        "lam": model.lam,
        "normalizer": norm.to_dict() if norm is not None else None,
        "extra": extra or {},
    }
    write_container(path, header, model.arrays())


def load_flr(path) -> tuple[FlrModel, Normalizer | None, dict]:
    header, arrays = read_container(path)
    if header.get("kind") != "flr_fourier":
        raise FormatError(f"checkpoint holds a {header.get('kind')!r} model, not 'flr_fourier'", 0)
    model = FlrModel(
        FourierBasis(header["L"], header["d"]), FourierBasis(header["K"], header["d"]),
        arrays["omega"], arrays["intercept"], header["lam"], arrays["noise_var"],
    )
    norm = Normalizer.from_dict(header["normalizer"]) if header.get("normalizer") else None
    return model, norm, header


def checkpoint_kind(path) -> str:
    header, _ = read_container(path)
    return header.get("kind", "")
