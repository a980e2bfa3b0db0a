"""Anomaly score maps from per-location likelihood and posterior entropy.

For every feature level the flow maps each grid location to the latent space,
where the prior yields a log-likelihood under the labeled class's within-class
mixture and a negative posterior entropy over main centers.  Both statistics
are normalized per level across the whole evaluation set (exp-shift by the
per-level maximum by default, so values land in (0, 1] and ranks survive),
upsampled bilinearly (corner-aligned) to a common resolution, and combined:

    S_l = 1 - mean_k P_k          likelihood map
    S_e = 1 - mean_k NH_k         entropy map  (neutral 1 when Y == 1)
    S   = S_l * S_e               combined map

The image score is the maximum of S (or a top-quantile mean).  With one class
the entropy statistic is identically zero for every location, carrying no
signal, so S collapses to S_l and stays rank-identical to -logp.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ScoreConfig
from .data import FeatureDataset
from .flow import FlowModel, flow_forward_np, positional_embedding
from .prior import HierarchicalPrior, prior_values, sample_stats_np

__all__ = [
    "ScoreResult",
    "normalize_level",
    "bilinear_resize",
    "score_dataset",
    "export_score_maps",
    "pos_mode_for",
]


def pos_mode_for(mode: str, h: int, w: int) -> str:
    if mode == "auto":
        return "zeros" if h * w == 1 else "sinusoidal"
    return mode


def normalize_level(values: np.ndarray, scheme: str = "exp-shift") -> np.ndarray:
    """Normalize one level's statistics over the whole evaluation set.

    exp-shift: exp(v - max), strictly increasing, lands in (0, 1].
    minmax: (v - min) / (max - min), affine, lands in [0, 1].
    Degenerate all-equal input yields all ones with a warning either way.
    """
    if scheme not in ("exp-shift", "minmax"):
        raise ValueError(f"unknown normalization scheme {scheme!r}")
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot normalize an empty level")
    vmax = values.max()
    vmin = values.min()
    if vmax == vmin:
        warnings.warn(
            "degenerate level statistics (all equal); returning ones",
            RuntimeWarning,
        )
        return np.ones_like(values)
    if scheme == "exp-shift":
        return np.exp(values - vmax)
    return (values - vmin) / (vmax - vmin)


def bilinear_resize(maps: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Corner-aligned bilinear resize of a (N, H, W) stack."""
    maps = np.asarray(maps)
    n, h, w = maps.shape
    ht, wt = out_hw
    if (h, w) == (ht, wt):
        return maps.copy()

    def src_coords(size_in, size_out):
        if size_out == 1 or size_in == 1:
            return np.zeros(size_out)
        return np.arange(size_out) * (size_in - 1) / (size_out - 1)

    rs = src_coords(h, ht)
    cs = src_coords(w, wt)
    r0 = np.floor(rs).astype(int)
    c0 = np.floor(cs).astype(int)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rs - r0)[None, :, None]
    fc = (cs - c0)[None, None, :]
    top = maps[:, r0][:, :, c0] * (1 - fc) + maps[:, r0][:, :, c1] * fc
    bot = maps[:, r1][:, :, c0] * (1 - fc) + maps[:, r1][:, :, c1] * fc
    return top * (1 - fr) + bot * fr


@dataclass
class ScoreResult:
    s_l: np.ndarray  # (N, H, W) likelihood map
    s_e: np.ndarray  # (N, H, W) entropy map
    s: np.ndarray  # (N, H, W) combined map
    image_scores: np.ndarray  # (N,)
    labels: np.ndarray  # (N,) labels used for scoring
    level_logp: list[np.ndarray]  # raw per-level (N, H_k, W_k) log-likelihoods
    level_neg_entropy: list[np.ndarray]

    @property
    def image_logp(self) -> np.ndarray:
        """Mean location log-likelihood per image, averaged over levels."""
        per_level = [lp.reshape(lp.shape[0], -1).mean(axis=1) for lp in self.level_logp]
        return np.mean(per_level, axis=0)


def _infer_labels(
    models: list[FlowModel], priors: list[HierarchicalPrior], dataset: FeatureDataset,
    pos_mode: str,
) -> np.ndarray:
    """Assign each image the class whose main center lies closest on average."""
    votes = np.zeros((dataset.n, priors[0].n_classes))
    for model, prior, level in zip(models, priors, dataset.levels):
        table = positional_embedding(
            level.h, level.w, model.pos_dim,
            pos_mode_for(pos_mode, level.h, level.w),
            dtype=level.features.dtype,
        )
        x = level.features.reshape(-1, level.d)
        pos = np.tile(table, (level.n, 1))
        z, _ = flow_forward_np(model, x, pos)
        mu = prior.mu.value
        dist2 = ((z[:, None, :] - mu[None, :, :]) ** 2).sum(axis=2)
        votes += dist2.reshape(level.n, -1, mu.shape[0]).mean(axis=1)
    return votes.argmin(axis=1)


def score_dataset(
    models: list[FlowModel],
    priors: list[HierarchicalPrior],
    dataset: FeatureDataset,
    score_cfg: ScoreConfig | None = None,
    target_hw: tuple[int, int] | None = None,
    labels: np.ndarray | None = None,
    infer_class: bool = False,
    pos_mode: str = "auto",
) -> ScoreResult:
    """Score every image in `dataset`; labels default to the dataset's own."""
    cfg = score_cfg or ScoreConfig()
    if len(models) != len(dataset.levels) or len(priors) != len(dataset.levels):
        raise ValueError("need one model and one prior per feature level")
    if infer_class:
        labels = _infer_labels(models, priors, dataset, pos_mode)
    elif labels is None:
        labels = dataset.labels
    labels = np.asarray(labels)
    if target_hw is None:
        target_hw = (
            max(l.h for l in dataset.levels),
            max(l.w for l in dataset.levels),
        )

    single_class = all(p.n_classes == 1 for p in priors)
    p_sum = np.zeros((dataset.n, *target_hw))
    nh_sum = np.zeros((dataset.n, *target_hw))
    level_logp, level_nh = [], []
    for model, prior, level in zip(models, priors, dataset.levels):
        table = positional_embedding(
            level.h, level.w, model.pos_dim,
            pos_mode_for(pos_mode, level.h, level.w),
            dtype=level.features.dtype,
        )
        x = level.features.reshape(-1, level.d)
        pos = np.tile(table, (level.n, 1))
        z, logdet = flow_forward_np(model, x, pos)
        row_labels = np.repeat(labels, level.h * level.w)
        logp, nh = sample_stats_np(prior_values(prior), z, logdet, row_labels)
        level_logp.append(logp.reshape(level.n, level.h, level.w).astype(np.float64))
        level_nh.append(nh.reshape(level.n, level.h, level.w).astype(np.float64))

        p_norm = normalize_level(logp, cfg.normalization)
        p_sum += bilinear_resize(
            p_norm.reshape(level.n, level.h, level.w), target_hw
        )
        if not single_class:
            nh_stat = nh if cfg.entropy_sign == "asis" else -nh
            nh_norm = normalize_level(nh_stat, cfg.normalization)
            nh_sum += bilinear_resize(
                nh_norm.reshape(level.n, level.h, level.w), target_hw
            )

    k = len(dataset.levels)
    s_l = 1.0 - p_sum / k
    # A single class carries no posterior-entropy signal; the entropy map is
    # neutral so the combined map reduces to the likelihood map.
    s_e = np.ones_like(s_l) if single_class else 1.0 - nh_sum / k
    s = s_l * s_e

    flat = s.reshape(dataset.n, -1)
    if cfg.image_score == "max":
        image_scores = flat.max(axis=1)
    elif cfg.image_score == "topq":
        q = max(1, int(round(cfg.top_q * flat.shape[1])))
        image_scores = np.sort(flat, axis=1)[:, -q:].mean(axis=1)
    else:
        raise ValueError(f"unknown image_score rule {cfg.image_score!r}")
    return ScoreResult(
        s_l=s_l,
        s_e=s_e,
        s=s,
        image_scores=image_scores,
        labels=labels,
        level_logp=level_logp,
        level_neg_entropy=level_nh,
    )


def export_score_maps(out_dir, result: ScoreResult, anomaly_flags=None) -> list[str]:
    """Write raw float32 map grids plus an image-score CSV; returns paths.

    The CSV always carries the anomaly column; it is blank when no ground
    truth was supplied (e.g. scoring unlabeled data).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, arr in (("s_l", result.s_l), ("s_e", result.s_e), ("s", result.s)):
        path = out / f"{name}.npy"
        np.save(path, arr.astype(np.float32))
        written.append(str(path))
    csv_path = out / "image_scores.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "class", "label_is_anomalous", "image_score"])
        for i, (lbl, score) in enumerate(zip(result.labels, result.image_scores)):
            flag = "" if anomaly_flags is None else int(anomaly_flags[i])
            writer.writerow([i, int(lbl), flag, f"{score:.10g}"])
    written.append(str(csv_path))
    return written
