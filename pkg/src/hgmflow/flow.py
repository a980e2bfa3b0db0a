"""Invertible coupling flow mapping feature vectors to a latent space.

Each block splits the feature axis in half, passes the first half (plus a
positional conditioning row) through a two-layer tanh MLP that predicts a
log-scale and an offset for the second half, then applies a fixed channel
permutation and a fixed per-channel scaling.  The log-scale is soft-clamped,
``s_hat = alpha * tanh(s_raw / alpha)``, so a single block can change volume
by at most ``alpha`` per channel and the map stays invertible for any subnet
output.

The Jacobian of a block is triangular up to the permutation, so its
log-determinant is ``sum(s_hat) + sum(log(scale))`` per sample; the model
log-determinant is the sum over blocks.

Two evaluation paths exist on purpose: a graph path built from
:mod:`hgmflow.autodiff` nodes for training, and a plain-numpy mirror with the
identical operation order for scoring and inversion.  They agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ShapeError

__all__ = [
    "CouplingBlock",
    "FlowModel",
    "init_flow",
    "block_forward",
    "block_forward_np",
    "block_inverse_np",
    "flow_forward",
    "flow_forward_np",
    "flow_inverse_np",
    "positional_embedding",
]

DEFAULT_BLOCKS = 12
DEFAULT_CLAMP = 1.9
DEFAULT_POS_DIM = 256


@dataclass
class CouplingBlock:
    """One coupling step plus its fixed permutation and channel scaling."""

    w1: Node
    b1: Node
    w2: Node
    b2: Node
    scale: np.ndarray  # fixed positive constants, init 1.0, never trained
    clamp_alpha: float
    perm: np.ndarray | None = None  # hard mode: channel reorder
    perm_inv: np.ndarray | None = None
    rotation: np.ndarray | None = None  # orthogonal mode: det +1 matrix

    @property
    def log_scale_sum(self) -> float:
        return float(np.sum(np.log(self.scale)))


@dataclass
class FlowModel:
    input_dim: int
    pos_dim: int
    hidden: int
    perm_mode: str
    blocks: list[CouplingBlock] = field(default_factory=list)
    padded_from: int | None = None  # original feature dim if zero-padded upstream

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def params(self) -> list[tuple[str, Node]]:
        out = []
        for i, blk in enumerate(self.blocks):
            out += [
                (f"block{i}.w1", blk.w1),
                (f"block{i}.b1", blk.b1),
                (f"block{i}.w2", blk.w2),
                (f"block{i}.b2", blk.b2),
            ]
        return out


def default_hidden(input_dim: int) -> int:
    return 2 * max(input_dim, 64)


def init_flow(
    input_dim: int,
    *,
    pos_dim: int = DEFAULT_POS_DIM,
    n_blocks: int = DEFAULT_BLOCKS,
    hidden: int | None = None,
    clamp_alpha: float = DEFAULT_CLAMP,
    perm_mode: str = "hard",
    seed: int = 0,
    dtype=np.float32,
    padded_from: int | None = None,
) -> FlowModel:
    """Build a flow with seeded permutations and subnet weights.

    The hidden layer is Xavier-initialized; the output layer starts at zero so
    every block begins as the identity coupling (volume change zero) and
    training moves it away gradually.
    """
    if input_dim < 2 or input_dim % 2 != 0:
        raise ShapeError(
            f"input_dim must be even and >= 2, got {input_dim}; "
            "pad odd feature dims at ingestion"
        )
    if perm_mode not in ("hard", "orthogonal"):
        raise ValueError(f"unknown perm_mode {perm_mode!r}")
    if hidden is None:
        hidden = default_hidden(input_dim)
    rng = np.random.default_rng(seed)
    half = input_dim // 2
    fan_in = half + pos_dim
    model = FlowModel(
        input_dim=input_dim,
        pos_dim=pos_dim,
        hidden=hidden,
        perm_mode=perm_mode,
        padded_from=padded_from,
    )
    for _ in range(n_blocks):
        w1 = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, hidden))
        perm = perm_inv = rotation = None
        if perm_mode == "hard":
            perm = rng.permutation(input_dim)
            perm_inv = np.argsort(perm)
        else:
            a = rng.normal(size=(input_dim, input_dim))
            q, r = np.linalg.qr(a)
            q = q * np.sign(np.diag(r))
            if np.linalg.det(q) < 0:
                q[:, 0] = -q[:, 0]  # force det +1 so log|det| stays 0
            rotation = q.astype(dtype)
        model.blocks.append(
            CouplingBlock(
                w1=Node(w1.astype(dtype)),
                b1=Node(np.zeros(hidden, dtype=dtype)),
                w2=Node(np.zeros((hidden, input_dim), dtype=dtype)),
                b2=Node(np.zeros(input_dim, dtype=dtype)),
                scale=np.ones(input_dim, dtype=dtype),
                clamp_alpha=float(clamp_alpha),
                perm=perm,
                perm_inv=perm_inv,
                rotation=rotation,
            )
        )
    return model


def _check_pos(pos: np.ndarray, n: int, pos_dim: int) -> np.ndarray:
    pos = np.asarray(pos)
    if pos.shape != (n, pos_dim):
        raise ShapeError(f"conditioning rows must be {(n, pos_dim)}, got {pos.shape}")
    return pos


# -- graph path --------------------------------------------------------------


def block_forward(block: CouplingBlock, x: Node, pos: np.ndarray) -> tuple[Node, Node]:
    """Forward one block; returns (z, per-sample log-determinant)."""
    d = x.shape[1]
    x1, x2 = ad.split(x, 2, axis=1)
    h = ad.concat([x1, pos.astype(x.dtype)], axis=1)
    a1 = ad.tanh(ad.add(ad.matmul(h, block.w1), block.b1))
    raw = ad.add(ad.matmul(a1, block.w2), block.b2)
    s_raw, t = ad.split(raw, 2, axis=1)
    alpha = block.clamp_alpha
    s_hat = ad.mul(ad.tanh(ad.mul(s_raw, 1.0 / alpha)), alpha)
    z2 = ad.add(ad.mul(x2, ad.exp(s_hat)), t)
    z = ad.concat([x1, z2], axis=1)
    if block.perm is not None:
        z = ad.permute_feature(z, block.perm)
    else:
        z = ad.matmul(z, block.rotation)
    z = ad.mul(z, block.scale)
    logdet = ad.add(ad.asum(s_hat, axis=1), block.log_scale_sum)
    return z, logdet


def flow_forward(model: FlowModel, x: Node, pos: np.ndarray) -> tuple[Node, Node]:
    """Map inputs through every block, accumulating log-determinants."""
    n = x.shape[0]
    pos = _check_pos(pos, n, model.pos_dim)
    if x.shape[1] != model.input_dim:
        raise ShapeError(f"expected dim {model.input_dim}, got {x.shape[1]}")
    z = x
    logdet = None
    for blk in model.blocks:
        z, ld = block_forward(blk, z, pos)
        logdet = ld if logdet is None else ad.add(logdet, ld)
    if logdet is None:
        logdet = Node(np.zeros(n, dtype=x.dtype))
    return z, logdet


# -- numpy mirror ------------------------------------------------------------


def _subnet_np(block: CouplingBlock, x1: np.ndarray, pos: np.ndarray):
    h = np.concatenate([x1, pos.astype(x1.dtype)], axis=1)
    a1 = np.tanh(h @ block.w1.value + block.b1.value)
    raw = a1 @ block.w2.value + block.b2.value
    s_raw, t = np.split(raw, 2, axis=1)
    alpha = block.clamp_alpha
    s_hat = np.tanh(s_raw * (1.0 / alpha)) * alpha
    return s_hat, t


def block_forward_np(
    block: CouplingBlock, x: np.ndarray, pos: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    x1, x2 = np.split(x, 2, axis=1)
    s_hat, t = _subnet_np(block, x1, pos)
    z2 = x2 * np.exp(s_hat) + t
    z = np.concatenate([x1, z2], axis=1)
    if block.perm is not None:
        z = z[:, block.perm]
    else:
        z = z @ block.rotation
    z = z * block.scale
    logdet = s_hat.sum(axis=1) + block.log_scale_sum
    return z, logdet


def block_inverse_np(
    block: CouplingBlock, z: np.ndarray, pos: np.ndarray
) -> np.ndarray:
    u = z / block.scale
    if block.perm_inv is not None:
        u = u[:, block.perm_inv]
    else:
        u = u @ block.rotation.T
    x1, u2 = np.split(u, 2, axis=1)
    s_hat, t = _subnet_np(block, x1, pos)
    x2 = (u2 - t) * np.exp(-s_hat)
    return np.concatenate([x1, x2], axis=1)


def flow_forward_np(
    model: FlowModel, x: np.ndarray, pos: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    pos = _check_pos(pos, x.shape[0], model.pos_dim)
    z = x
    logdet = np.zeros(x.shape[0], dtype=x.dtype)
    for blk in model.blocks:
        z, ld = block_forward_np(blk, z, pos)
        logdet = logdet + ld
    return z, logdet


def flow_inverse_np(model: FlowModel, z: np.ndarray, pos: np.ndarray) -> np.ndarray:
    pos = _check_pos(pos, z.shape[0], model.pos_dim)
    x = z
    for blk in reversed(model.blocks):
        x = block_inverse_np(blk, x, pos)
    return x


# -- positional conditioning -------------------------------------------------


def positional_embedding(
    h: int, w: int, pos_dim: int, mode: str = "sinusoidal", dtype=np.float32
) -> np.ndarray:
    """Fixed conditioning table, one row per grid location in row-major order.

    Sinusoidal mode interleaves sin/cos of the row and column coordinates at
    geometrically spaced frequencies (pos_dim must be divisible by 4); zeros
    mode removes spatial conditioning and suits non-spatial data.
    """
    if mode == "zeros":
        return np.zeros((h * w, pos_dim), dtype=dtype)
    if mode != "sinusoidal":
        raise ValueError(f"unknown positional mode {mode!r}")
    if pos_dim % 4 != 0:
        raise ValueError(f"sinusoidal mode needs pos_dim divisible by 4, got {pos_dim}")
    quarter = pos_dim // 4
    freqs = 1.0 / (10000.0 ** (np.arange(quarter) * 4.0 / pos_dim))
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    rows = rows.reshape(-1, 1) * freqs  # (h*w, quarter)
    cols = cols.reshape(-1, 1) * freqs
    table = np.empty((h * w, pos_dim), dtype=np.float64)
    table[:, 0::4] = np.sin(rows)
    table[:, 1::4] = np.cos(rows)
    table[:, 2::4] = np.sin(cols)
    table[:, 3::4] = np.cos(cols)
    return table.astype(dtype)
