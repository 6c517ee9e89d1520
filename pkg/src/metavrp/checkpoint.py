"""Single-file checkpoints: JSON header then length-prefixed float64 arrays.

Layout (all integers little-endian uint64)::

    b"MVRPCKPT" | header_len | header JSON (utf-8)
    for each name in header["arrays"]: count | count float64 values (little-endian)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import config_hash
from .errors import ParseError
from .meta import MetaState
from .policy import ModelConfig, PolicyParams, Slot

MAGIC = b"MVRPCKPT"
FORMAT_VERSION = 1
_U64 = struct.Struct("<Q")


@dataclass
class Checkpoint:
    state: MetaState
    config: dict
    scheduler: dict = field(default_factory=dict)  # weights, gaps, refreshed_at
    extra: dict = field(default_factory=dict)


def _layout_json(layout) -> list:
    return [[s.name, s.offset, list(s.shape)] for s in layout]


def save(path, ckpt: Checkpoint) -> None:
    st = ckpt.state
    arrays = {"params": st.params.values.detach().cpu().numpy()}
    opt = {}
    if st.opt_state:
        arrays["adam.m"] = st.opt_state["m"].detach().cpu().numpy()
        arrays["adam.v"] = st.opt_state["v"].detach().cpu().numpy()
        opt["t"] = int(st.opt_state["t"])
    sched = {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v)
             for k, v in ckpt.scheduler.items()}
    header = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config,
        "config_hash": config_hash(ckpt.config) if ckpt.config else None,
        "iteration": st.e,
        "seed": st.seed,
        "rng": {"kind": "numpy.default_rng([seed, iteration])", "seed": st.seed, "next_iter": st.e},
        "model": vars(st.params.config).copy(),
        "layout": _layout_json(st.params.layout),
        "dtype": str(st.params.values.dtype).replace("torch.", ""),
        "optimizer": opt,
        "scheduler": sched,
        "extra": ckpt.extra,
        "arrays": list(arrays),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_U64.pack(len(blob)))
        fh.write(blob)
        for name in header["arrays"]:
            a = np.ascontiguousarray(arrays[name], dtype="<f8")
            fh.write(_U64.pack(a.size))
            fh.write(a.tobytes())
    tmp.replace(path)


def _read_u64(fh) -> int:
    raw = fh.read(8)
    if len(raw) != 8:
        raise ParseError("truncated checkpoint")
    return _U64.unpack(raw)[0]


def load(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ParseError(f"{path} is not a checkpoint")
        n = _read_u64(fh)
        try:
            header = json.loads(fh.read(n).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(f"bad checkpoint header: {exc}") from exc
        if header.get("format_version") != FORMAT_VERSION:
            raise ParseError(f"unsupported checkpoint version {header.get('format_version')}")
        arrays = {}
        for name in header["arrays"]:
            count = _read_u64(fh)
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise ParseError(f"truncated array {name!r}")
            arrays[name] = np.frombuffer(raw, dtype="<f8").copy()
    dtype = getattr(torch, header.get("dtype", "float64"))
    cfg = ModelConfig(**header["model"])
    layout = tuple(Slot(name, off, tuple(shape)) for name, off, shape in header["layout"])
    params = PolicyParams(torch.as_tensor(arrays["params"], dtype=dtype), layout, cfg)
    opt_state = {}
    if "adam.m" in arrays:
        opt_state = {"m": torch.as_tensor(arrays["adam.m"], dtype=dtype),
                     "v": torch.as_tensor(arrays["adam.v"], dtype=dtype),
                     "t": int(header["optimizer"]["t"])}
    state = MetaState(params, int(header["iteration"]), int(header["seed"]), opt_state)
    sched = dict(header.get("scheduler", {}))
    for key in ("weights", "gaps"):
        if key in sched:
            sched[key] = np.asarray(sched[key], dtype=np.float64)
    return Checkpoint(state, header["config"], sched, header.get("extra", {}))
