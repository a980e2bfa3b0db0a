"""Feature datasets: synthetic generation and the HGF1 binary format.

A dataset is a stack of K feature levels (one per backbone scale when features
come from an image model; K=1 with a 1x1 grid for plain vector data), plus
per-image class labels, optional anomaly flags, and optional pixel masks.

The synthetic generator builds a controllable multi-class, multi-modal task:
each class is an isotropic Gaussian mixture, and anomalies are derived from it
by one of three recipes (offset from a normal sample, midpoints between class
anchors, or inflated-scale draws).  The generative density is available in
closed form so tests can verify that every recipe produces points that are
analytically less likely than the normal population.

HGF1 layout (all integers little-endian u32 unless noted):

    magic "HGF1" | version | K | Y | N
    K x ( H | W | d | N*H*W*d float32 row-major )
    N   u32 labels
    u8  anomaly-flag presence | [N u8 flags]
    u8  mask presence         | [H | W | N*H*W u8 masks]

Odd feature dims are zero-padded to even at ingestion and the original width
is recorded on the level, because the flow splits channels in half.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LevelFeatures",
    "FeatureDataset",
    "SynthSpec",
    "ModeLayout",
    "default_acceptance_spec",
    "mode_layout",
    "generate_synthetic",
    "true_log_density",
    "write_features",
    "read_features",
    "HGF1Error",
    "TruncationError",
]

MAGIC = b"HGF1"
FORMAT_VERSION = 1
ANOMALY_RECIPES = ("offset", "between-centers", "scale-inflation")


class HGF1Error(ValueError):
    """Malformed HGF1 content; `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (at byte {offset})")
        self.offset = offset


class TruncationError(HGF1Error):
    pass


@dataclass
class LevelFeatures:
    features: np.ndarray  # (N, H, W, d) float32
    padded_from: int | None = None  # original d before zero-padding, if odd

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def h(self) -> int:
        return self.features.shape[1]

    @property
    def w(self) -> int:
        return self.features.shape[2]

    @property
    def d(self) -> int:
        return self.features.shape[3]


def _pad_even(arr: np.ndarray) -> tuple[np.ndarray, int | None]:
    d = arr.shape[-1]
    if d % 2 == 0:
        return arr, None
    padded = np.concatenate(
        [arr, np.zeros(arr.shape[:-1] + (1,), dtype=arr.dtype)], axis=-1
    )
    return padded, d


@dataclass
class FeatureDataset:
    levels: list[LevelFeatures]
    labels: np.ndarray  # (N,) int64
    n_classes: int
    anomaly_flags: np.ndarray | None = None  # (N,) bool
    pixel_masks: np.ndarray | None = None  # (N, H, W) uint8

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.labels.shape[0]
        for k, level in enumerate(self.levels):
            if level.n != n:
                raise HGF1Error(
                    f"level {k} holds {level.n} items but there are {n} labels"
                )
        if self.labels.size and self.labels.max() >= self.n_classes:
            raise HGF1Error(
                f"label {int(self.labels.max())} out of range for "
                f"{self.n_classes} classes"
            )
        if self.anomaly_flags is not None:
            self.anomaly_flags = np.asarray(self.anomaly_flags, dtype=bool)
            if self.anomaly_flags.shape[0] != n:
                raise HGF1Error("anomaly flags length disagrees with labels")

    @property
    def n(self) -> int:
        return self.labels.shape[0]


# -- synthetic task ----------------------------------------------------------


@dataclass
class SynthSpec:
    n_classes: int = 4
    dim: int = 8
    modes_per_class: int = 3
    mode_offset: float = 4.0
    mode_scale: float = 0.5
    class_spread: float = 4.0
    n_train_per_class: int = 2000
    n_test_normal_per_class: int = 500
    n_test_anomaly_per_class: int = 500
    anomaly_recipe: str = "offset"
    anomaly_offset: float = 3.0
    inflation_factor: float = 3.0
    grid_h: int = 1
    grid_w: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.anomaly_recipe not in ANOMALY_RECIPES:
            raise ValueError(
                f"anomaly_recipe must be one of {ANOMALY_RECIPES}, "
                f"got {self.anomaly_recipe!r}"
            )

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    @classmethod
    def from_json_file(cls, path) -> "SynthSpec":
        with open(path) as fh:
            raw = json.load(fh)
        valid = set(cls().__dict__)
        unknown = set(raw) - valid
        if unknown:
            raise KeyError(f"unknown synthetic-spec keys: {sorted(unknown)}")
        return cls(**raw)


def default_acceptance_spec(seed: int = 0) -> SynthSpec:
    """The standard 4-class, 8-dim, 3-modes-per-class benchmark task."""
    return SynthSpec(seed=seed)


@dataclass
class ModeLayout:
    centers: np.ndarray  # (Y, J, d) mode centers
    scale: float
    anchors: np.ndarray  # (Y, d) class anchor points


def mode_layout(spec: SynthSpec) -> ModeLayout:
    """Deterministic class/mode geometry for a spec (independent of counts)."""
    rng = np.random.default_rng(spec.seed)
    y, j, d = spec.n_classes, spec.modes_per_class, spec.dim
    anchors = rng.normal(0.0, spec.class_spread, size=(y, d))
    dirs = rng.normal(size=(y, j, d))
    dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
    centers = anchors[:, None, :] + spec.mode_offset * dirs
    return ModeLayout(centers=centers, scale=spec.mode_scale, anchors=anchors)


def true_log_density(spec: SynthSpec, x: np.ndarray, class_idx: int) -> np.ndarray:
    """Exact log-density of points under one class's generating mixture."""
    layout = mode_layout(spec)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    centers = layout.centers[class_idx]  # (J, d)
    d = spec.dim
    var = layout.scale**2
    dist2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)  # (N, J)
    comp = (
        -0.5 * dist2 / var
        - 0.5 * d * np.log(2 * np.pi * var)
        - np.log(centers.shape[0])
    )
    m = comp.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(comp - m).sum(axis=1, keepdims=True)))[:, 0]


def _sample_class(rng, layout: ModeLayout, class_idx: int, count: int) -> np.ndarray:
    centers = layout.centers[class_idx]
    picks = rng.integers(0, centers.shape[0], size=count)
    return centers[picks] + rng.normal(0.0, layout.scale, size=(count, centers.shape[1]))


def _sample_anomalies(rng, spec: SynthSpec, layout: ModeLayout, class_idx: int, count: int):
    d = spec.dim
    if spec.anomaly_recipe == "offset":
        base = _sample_class(rng, layout, class_idx, count)
        dirs = rng.normal(size=(count, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return base + spec.anomaly_offset * dirs
    if spec.anomaly_recipe == "between-centers":
        if spec.n_classes >= 2:
            others = [y for y in range(spec.n_classes) if y != class_idx]
            partner = rng.choice(others, size=count)
            mids = 0.5 * (layout.anchors[class_idx] + layout.anchors[partner])
        else:
            pair = rng.integers(0, spec.modes_per_class, size=(count, 2))
            a = layout.centers[class_idx][pair[:, 0]]
            b = layout.centers[class_idx][pair[:, 1]]
            mids = 0.5 * (a + b)
        return mids + rng.normal(0.0, 0.2 * spec.mode_scale, size=(count, d))
    # scale-inflation: legitimate modes, inflated spread
    centers = layout.centers[class_idx]
    picks = rng.integers(0, centers.shape[0], size=count)
    noise = rng.normal(0.0, spec.mode_scale * spec.inflation_factor, size=(count, d))
    return centers[picks] + noise


def _as_level(vectors: np.ndarray, spec: SynthSpec) -> np.ndarray:
    n = vectors.shape[0] // (spec.grid_h * spec.grid_w)
    return vectors.reshape(n, spec.grid_h, spec.grid_w, spec.dim).astype(np.float32)


def generate_synthetic(spec: SynthSpec) -> tuple[FeatureDataset, FeatureDataset]:
    """Build (train, test) datasets; train holds only normal samples."""
    layout = mode_layout(spec)
    rng = np.random.default_rng(spec.seed + 1)
    cells = spec.grid_h * spec.grid_w

    train_vecs, train_labels = [], []
    test_vecs, test_labels, test_flags, test_masks = [], [], [], []

    for y in range(spec.n_classes):
        train_vecs.append(_sample_class(rng, layout, y, spec.n_train_per_class * cells))
        train_labels.append(np.full(spec.n_train_per_class, y))

        test_vecs.append(_sample_class(rng, layout, y, spec.n_test_normal_per_class * cells))
        test_labels.append(np.full(spec.n_test_normal_per_class, y))
        test_flags.append(np.zeros(spec.n_test_normal_per_class, dtype=bool))
        test_masks.append(
            np.zeros((spec.n_test_normal_per_class, spec.grid_h, spec.grid_w), np.uint8)
        )

        n_anom = spec.n_test_anomaly_per_class
        if cells == 1:
            anom = _sample_anomalies(rng, spec, layout, y, n_anom)
            masks = np.ones((n_anom, 1, 1), dtype=np.uint8)
        else:
            # Grid mode: normal background with an anomalous patch per image.
            anom = _sample_class(rng, layout, y, n_anom * cells)
            anom = anom.reshape(n_anom, spec.grid_h, spec.grid_w, spec.dim)
            masks = np.zeros((n_anom, spec.grid_h, spec.grid_w), dtype=np.uint8)
            ph = max(1, spec.grid_h // 2)
            pw = max(1, spec.grid_w // 2)
            for i in range(n_anom):
                r0 = rng.integers(0, spec.grid_h - ph + 1)
                c0 = rng.integers(0, spec.grid_w - pw + 1)
                patch = _sample_anomalies(rng, spec, layout, y, ph * pw)
                anom[i, r0 : r0 + ph, c0 : c0 + pw] = patch.reshape(ph, pw, spec.dim)
                masks[i, r0 : r0 + ph, c0 : c0 + pw] = 1
            anom = anom.reshape(n_anom * cells, spec.dim)
        test_vecs.append(anom)
        test_labels.append(np.full(n_anom, y))
        test_flags.append(np.ones(n_anom, dtype=bool))
        test_masks.append(masks)

    def build(vecs, labels, flags=None, masks=None):
        feats, padded_from = _pad_even(_as_level(np.concatenate(vecs), spec))
        return FeatureDataset(
            levels=[LevelFeatures(feats, padded_from=padded_from)],
            labels=np.concatenate(labels),
            n_classes=spec.n_classes,
            anomaly_flags=None if flags is None else np.concatenate(flags),
            pixel_masks=None
            if masks is None or cells == 1
            else np.concatenate(masks),
        )

    return (
        build(train_vecs, train_labels),
        build(test_vecs, test_labels, test_flags, test_masks),
    )


# -- HGF1 serialization ------------------------------------------------------


def write_features(path, dataset: FeatureDataset) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, len(dataset.levels), dataset.n_classes))
        fh.write(struct.pack("<I", dataset.n))
        for level in dataset.levels:
            fh.write(struct.pack("<III", level.h, level.w, level.d))
            fh.write(np.ascontiguousarray(level.features, dtype="<f4").tobytes())
        fh.write(dataset.labels.astype("<u4").tobytes())
        if dataset.anomaly_flags is None:
            fh.write(b"\x00")
        else:
            fh.write(b"\x01")
            fh.write(dataset.anomaly_flags.astype(np.uint8).tobytes())
        if dataset.pixel_masks is None:
            fh.write(b"\x00")
        else:
            fh.write(b"\x01")
            mh, mw = dataset.pixel_masks.shape[1:]
            fh.write(struct.pack("<II", mh, mw))
            fh.write(dataset.pixel_masks.astype(np.uint8).tobytes())


class _Cursor:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, count: int, what: str) -> bytes:
        if self.pos + count > len(self.blob):
            raise TruncationError(
                f"truncated file: {what} needs {count} bytes, "
                f"only {len(self.blob) - self.pos} remain",
                offset=self.pos,
            )
        out = self.blob[self.pos : self.pos + count]
        self.pos += count
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]


def read_features(path) -> FeatureDataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    cur = _Cursor(blob)
    magic = cur.take(4, "magic")
    if magic != MAGIC:
        raise HGF1Error(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    version = cur.u32("version")
    if version != FORMAT_VERSION:
        raise HGF1Error(f"unsupported format version {version}", offset=4)
    n_levels = cur.u32("level count")
    n_classes = cur.u32("class count")
    n = cur.u32("item count")
    if n_levels == 0 or n_classes == 0:
        raise HGF1Error("empty level or class count", offset=8)

    levels = []
    for k in range(n_levels):
        h = cur.u32(f"level {k} height")
        w = cur.u32(f"level {k} width")
        d = cur.u32(f"level {k} dim")
        raw = cur.take(n * h * w * d * 4, f"level {k} features")
        feats = np.frombuffer(raw, dtype="<f4").reshape(n, h, w, d).copy()
        if not np.all(np.isfinite(feats)):
            raise HGF1Error(f"level {k} contains non-finite features")
        feats, padded_from = _pad_even(feats)
        levels.append(LevelFeatures(feats, padded_from=padded_from))

    label_bytes = cur.take(n * 4, "labels")
    labels = np.frombuffer(label_bytes, dtype="<u4").astype(np.int64)
    bad = np.nonzero(labels >= n_classes)[0]
    if bad.size:
        raise HGF1Error(
            f"label {int(labels[bad[0]])} at index {int(bad[0])} "
            f">= class count {n_classes}"
        )

    flags = None
    if cur.u8("anomaly-flag presence") == 1:
        flags = (
            np.frombuffer(cur.take(n, "anomaly flags"), dtype=np.uint8).astype(bool)
        )

    masks = None
    if cur.u8("mask presence") == 1:
        mh = cur.u32("mask height")
        mw = cur.u32("mask width")
        masks = (
            np.frombuffer(cur.take(n * mh * mw, "masks"), dtype=np.uint8)
            .reshape(n, mh, mw)
            .copy()
        )

    if cur.pos != len(blob):
        warnings.warn(
            f"{len(blob) - cur.pos} trailing bytes ignored after HGF1 payload"
        )
    return FeatureDataset(
        levels=levels,
        labels=labels,
        n_classes=n_classes,
        anomaly_flags=flags,
        pixel_masks=masks,
    )
