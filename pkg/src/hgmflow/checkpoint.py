"""Versioned binary container for trained models.

Layout, all integers little-endian:

    magic   8 bytes  b"HGADCKPT"
    version u32      currently 1
    hlen    u32      byte length of the JSON header
    header  hlen bytes, UTF-8 JSON
    payload raw array bytes, back to back

The header carries the run config, its hash, the seed, and one entry per
feature level describing the flow and prior hyperparameters plus an array
manifest (name, dtype, shape, payload offset, byte count).  Arrays are
stored little-endian in C order.  Loading rebuilds live models; a config
whose recomputed hash disagrees with the stored one is rejected.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Node
from .config import RunConfig, config_hash
from .flow import CouplingBlock, FlowModel
from .prior import HierarchicalPrior

__all__ = ["Checkpoint", "CheckpointError", "save_checkpoint", "load_checkpoint"]

MAGIC = b"HGADCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    models: list[FlowModel]
    priors: list[HierarchicalPrior]
    config: RunConfig
    config_hash: str
    seed: int


def _le(arr: np.ndarray) -> np.ndarray:
    dt = arr.dtype.newbyteorder("<")
    return np.ascontiguousarray(arr, dtype=dt)


def _level_arrays(model: FlowModel, prior: HierarchicalPrior):
    for i, blk in enumerate(model.blocks):
        yield f"block{i}.w1", blk.w1.value
        yield f"block{i}.b1", blk.b1.value
        yield f"block{i}.w2", blk.w2.value
        yield f"block{i}.b2", blk.b2.value
        yield f"block{i}.scale", blk.scale
        if blk.perm is not None:
            yield f"block{i}.perm", blk.perm.astype(np.int64)
        if blk.rotation is not None:
            yield f"block{i}.rotation", blk.rotation
    yield "prior.mu", prior.mu.value
    yield "prior.psi", prior.psi.value
    yield "prior.delta_free", prior.delta_free.value
    yield "prior.psi_y", prior.psi_y.value


def save_checkpoint(
    path,
    models: list[FlowModel],
    priors: list[HierarchicalPrior],
    config: RunConfig,
    seed: int | None = None,
) -> Path:
    if len(models) != len(priors):
        raise CheckpointError(
            f"{len(models)} models but {len(priors)} priors"
        )
    path = Path(path)
    levels = []
    chunks: list[bytes] = []
    offset = 0
    for model, prior in zip(models, priors):
        manifest = []
        for name, arr in _level_arrays(model, prior):
            arr = _le(arr)
            blob = arr.tobytes()
            manifest.append(
                {
                    "name": name,
                    "dtype": arr.dtype.str,
                    "shape": list(arr.shape),
                    "offset": offset,
                    "nbytes": len(blob),
                }
            )
            chunks.append(blob)
            offset += len(blob)
        clamp = model.blocks[0].clamp_alpha if model.blocks else 1.9
        levels.append(
            {
                "flow": {
                    "input_dim": model.input_dim,
                    "pos_dim": model.pos_dim,
                    "hidden": model.hidden,
                    "perm_mode": model.perm_mode,
                    "n_blocks": model.n_blocks,
                    "clamp_alpha": clamp,
                    "padded_from": model.padded_from,
                },
                "prior": {
                    "n_classes": prior.n_classes,
                    "n_intra": prior.n_intra,
                    "dim": prior.dim,
                    "trainable": prior.trainable,
                },
                "arrays": manifest,
            }
        )
    header = {
        "config": config.to_dict(),
        "config_hash": config_hash(config),
        "seed": config.train.seed if seed is None else seed,
        "levels": levels,
        "payload_bytes": offset,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(hbytes)))
        fh.write(hbytes)
        for blob in chunks:
            fh.write(blob)
    return path


def _pull(arrays: dict, name: str) -> np.ndarray:
    if name not in arrays:
        raise CheckpointError(f"checkpoint missing array {name!r}")
    return arrays.pop(name)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise CheckpointError(f"file too short ({len(raw)} bytes) for a header")
    if raw[:8] != MAGIC:
        raise CheckpointError(f"bad magic {raw[:8]!r}")
    version, hlen = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    if len(raw) < 16 + hlen:
        raise CheckpointError(
            f"truncated header: needs {16 + hlen} bytes, file has {len(raw)}"
        )
    try:
        header = json.loads(raw[16 : 16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"unreadable header: {err}") from err
    payload = raw[16 + hlen :]
    expected = header.get("payload_bytes", len(payload))
    if len(payload) < expected:
        raise CheckpointError(
            f"truncated payload: needs {expected} bytes, file has {len(payload)}"
        )
    config = RunConfig.from_dict(header["config"])
    stored_hash = header["config_hash"]
    if config_hash(config) != stored_hash:
        raise CheckpointError("config hash mismatch; header was altered")

    models: list[FlowModel] = []
    priors: list[HierarchicalPrior] = []
    for level in header["levels"]:
        arrays = {}
        for meta in level["arrays"]:
            start, n = meta["offset"], meta["nbytes"]
            if start + n > len(payload):
                raise CheckpointError(
                    f"array {meta['name']!r} extends past payload end"
                )
            arr = np.frombuffer(
                payload, dtype=np.dtype(meta["dtype"]), count=-1,
                offset=start,
            )[: n // np.dtype(meta["dtype"]).itemsize]
            arrays[meta["name"]] = arr.reshape(meta["shape"]).copy()
        fmeta = level["flow"]
        model = FlowModel(
            input_dim=fmeta["input_dim"],
            pos_dim=fmeta["pos_dim"],
            hidden=fmeta["hidden"],
            perm_mode=fmeta["perm_mode"],
            padded_from=fmeta["padded_from"],
        )
        for i in range(fmeta["n_blocks"]):
            perm = None
            perm_inv = None
            rotation = None
            if fmeta["perm_mode"] == "hard":
                perm = _pull(arrays, f"block{i}.perm").astype(np.int64)
                perm_inv = np.argsort(perm)
            else:
                rotation = _pull(arrays, f"block{i}.rotation")
            model.blocks.append(
                CouplingBlock(
                    w1=Node(_pull(arrays, f"block{i}.w1")),
                    b1=Node(_pull(arrays, f"block{i}.b1")),
                    w2=Node(_pull(arrays, f"block{i}.w2")),
                    b2=Node(_pull(arrays, f"block{i}.b2")),
                    scale=_pull(arrays, f"block{i}.scale"),
                    clamp_alpha=fmeta["clamp_alpha"],
                    perm=perm,
                    perm_inv=perm_inv,
                    rotation=rotation,
                )
            )
        pmeta = level["prior"]
        prior = HierarchicalPrior(
            n_classes=pmeta["n_classes"],
            n_intra=pmeta["n_intra"],
            dim=pmeta["dim"],
            mu=Node(_pull(arrays, "prior.mu")),
            psi=Node(_pull(arrays, "prior.psi")),
            delta_free=Node(_pull(arrays, "prior.delta_free")),
            psi_y=Node(_pull(arrays, "prior.psi_y")),
            trainable=pmeta["trainable"],
        )
        if arrays:
            raise CheckpointError(
                f"unreferenced arrays in manifest: {sorted(arrays)}"
            )
        models.append(model)
        priors.append(prior)
    return Checkpoint(
        models=models,
        priors=priors,
        config=config,
        config_hash=stored_hash,
        seed=header["seed"],
    )
