"""Hierarchical Gaussian mixture latent prior and its training losses.

The latent density is structured on two levels.  Across classes, each class
``y`` owns a learnable main center ``mu[y]`` and a mixing logit ``psi[y]``;
within a class, ``M`` sub-centers ``mu[y] + delta[y][m]`` with logits
``psi_y[y]`` capture intra-class multi-modality.  All covariances are fixed
at identity: only centers and logits train.

Four losses shape the latent space:

* ``loss_g``: negative log-likelihood of the across-class mixture (labels
  unused), pulling features toward the center set as a whole.
* ``loss_mi``: mutual-information surrogate, rewarding posterior mass of the
  true class and repelling the others.
* ``loss_entropy``: sparsifies the class-posterior computed from distances
  alone, so features commit to one center instead of drifting between two.
* ``loss_intra``: negative log-likelihood of the within-class mixture around
  the *frozen* main center (stop-gradient), so sub-centers specialize without
  dragging the class layout.

``delta[y][0]`` is structurally zero: the free parameter holds only the
``M - 1`` trailing offsets and a zero block is concatenated in front, so the
first sub-center always coincides with the main center, before and after any
optimizer step, exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node

__all__ = [
    "HierarchicalPrior",
    "PriorValues",
    "LossBundle",
    "init_prior",
    "loss_g",
    "loss_mi",
    "loss_entropy",
    "loss_intra",
    "total_loss",
    "prior_values",
    "sample_stats",
    "sample_stats_np",
    "unit_gaussian_reference",
]

DEFAULT_INTRA = 10
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class HierarchicalPrior:
    n_classes: int
    n_intra: int
    dim: int
    mu: Node  # (Y, d) main centers, init y + standard normal draw
    psi: Node  # (Y,) class mixing logits, init 0
    delta_free: Node  # (Y, M-1, d) trailing sub-center offsets, init 0
    psi_y: Node  # (Y, M) within-class mixing logits, init 0
    trainable: bool = True  # frozen-center ablation clears this

    def params(self) -> list[tuple[str, Node]]:
        if not self.trainable:
            return [("prior.delta", self.delta_free), ("prior.psi_y", self.psi_y)]
        return [
            ("prior.mu", self.mu),
            ("prior.psi", self.psi),
            ("prior.delta", self.delta_free),
            ("prior.psi_y", self.psi_y),
        ]

    def delta(self) -> Node:
        """Full (Y, M, d) offsets with the structural zero block in front."""
        zeros = np.zeros((self.n_classes, 1, self.dim), dtype=self.delta_free.dtype)
        return ad.concat([zeros, self.delta_free], axis=1)

    def delta_np(self) -> np.ndarray:
        zeros = np.zeros((self.n_classes, 1, self.dim), dtype=self.delta_free.dtype)
        return np.concatenate([zeros, self.delta_free.value], axis=1)


def init_prior(
    n_classes: int,
    dim: int,
    n_intra: int = DEFAULT_INTRA,
    seed: int = 0,
    dtype=np.float32,
    delta_init_scale: float = 0.5,
) -> HierarchicalPrior:
    """Seeded init: mu[y] = y + N(0, I) draw, logits zero.

    The free sub-center offsets start as small seeded noise rather than
    zeros: identical offsets receive identical gradients at every step and
    would stay merged forever, so the mixture needs distinct starting
    points to ever use more than two effective components.  The first
    offset stays structurally zero regardless.
    """
    if n_classes < 1 or n_intra < 1:
        raise ValueError("need at least one class and one sub-center")
    rng = np.random.default_rng(seed)
    offsets = np.arange(n_classes, dtype=np.float64)[:, None]
    mu = offsets + rng.standard_normal((n_classes, dim))
    delta = delta_init_scale * rng.standard_normal((n_classes, n_intra - 1, dim))
    return HierarchicalPrior(
        n_classes=n_classes,
        n_intra=n_intra,
        dim=dim,
        mu=Node(mu.astype(dtype)),
        psi=Node(np.zeros(n_classes, dtype=dtype)),
        delta_free=Node(delta.astype(dtype)),
        psi_y=Node(np.zeros((n_classes, n_intra), dtype=dtype)),
    )


def _onehot(labels: np.ndarray, n_classes: int, dtype) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ad.ShapeError(f"labels must be 1-D, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise IndexError(f"labels out of range for {n_classes} classes")
    out = np.zeros((labels.shape[0], n_classes), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _pairwise_sq_dist(z: Node, mu: Node) -> Node:
    # ||z - mu||^2 expanded so only matmul/square/sum are needed.
    zz = ad.asum(ad.square(z), axis=1, keepdims=True)  # (B, 1)
    mm = ad.asum(ad.square(mu), axis=1)  # (Y,)
    cross = ad.matmul(z, ad.transpose(mu))  # (B, Y)
    return ad.sub(ad.add(zz, mm), ad.mul(cross, 2.0))


def loss_g(prior: HierarchicalPrior, z: Node, logdet: Node) -> Node:
    """Across-class mixture NLL; labels are deliberately not used."""
    c = ad.logsoftmax(prior.psi, axis=0)  # (Y,)
    logits = ad.add(ad.mul(_pairwise_sq_dist(z, prior.mu), -0.5), c)
    lse = ad.logsumexp(logits, axis=1)  # (B,)
    const = 0.5 * prior.dim * LOG_2PI
    return ad.amean(ad.sub(const, ad.add(lse, logdet)))


def loss_mi(prior: HierarchicalPrior, z: Node, labels: np.ndarray) -> Node:
    """Posterior log-probability of the true class, offset by its prior mass."""
    onehot = _onehot(labels, prior.n_classes, z.dtype)
    c = ad.logsoftmax(prior.psi, axis=0)
    logits = ad.add(ad.mul(_pairwise_sq_dist(z, prior.mu), -0.5), c)
    ls = ad.logsoftmax(logits, axis=1)  # (B, Y)
    picked = ad.asum(ad.mul(ls, onehot), axis=1)  # (B,)
    c_label = ad.asum(ad.mul(c, onehot), axis=1)  # (B,)
    return ad.amean(ad.sub(c_label, picked))


def loss_entropy(
    prior: HierarchicalPrior, z: Node, include_weights: bool = False
) -> Node:
    """Entropy of the distance-only class posterior (weights off by default)."""
    g = ad.mul(_pairwise_sq_dist(z, prior.mu), -0.5)
    if include_weights:
        g = ad.add(g, ad.logsoftmax(prior.psi, axis=0))
    ls = ad.logsoftmax(g, axis=1)
    p = ad.exp(ls)
    per_sample = ad.asum(ad.mul(ad.neg(p), ls), axis=1)
    return ad.amean(per_sample)


def loss_intra(
    prior: HierarchicalPrior, z: Node, logdet: Node, labels: np.ndarray
) -> Node:
    """Within-class mixture NLL around the stop-gradient main center."""
    b = z.shape[0]
    y, m, d = prior.n_classes, prior.n_intra, prior.dim
    onehot = _onehot(labels, y, z.dtype)
    held_mu = ad.stop_gradient(ad.matmul(onehot, prior.mu))  # (B, d)
    delta_flat = ad.reshape(prior.delta(), (y, m * d))
    delta_b = ad.reshape(ad.matmul(onehot, delta_flat), (b, m, d))  # (B, M, d)
    centers = ad.add(ad.reshape(held_mu, (b, 1, d)), delta_b)
    diff = ad.sub(ad.reshape(z, (b, 1, d)), centers)
    dist2 = ad.asum(ad.square(diff), axis=2)  # (B, M)
    c_rows = ad.logsoftmax(prior.psi_y, axis=1)  # (Y, M)
    c_b = ad.matmul(onehot, c_rows)  # (B, M)
    lse = ad.logsumexp(ad.add(ad.mul(dist2, -0.5), c_b), axis=1)  # (B,)
    return ad.amean(ad.neg(ad.add(lse, logdet)))


@dataclass
class LossBundle:
    l_g: Node
    l_mi: Node
    l_e: Node
    l_in: Node
    total: Node
    lambda1: float
    lambda2: float
    stage: str

    def floats(self) -> dict[str, float]:
        return {
            "l_g": float(self.l_g.value),
            "l_mi": float(self.l_mi.value),
            "l_e": float(self.l_e.value),
            "l_in": float(self.l_in.value),
            "total": float(self.total.value),
        }


def total_loss(
    prior: HierarchicalPrior,
    z: Node,
    logdet: Node,
    labels: np.ndarray,
    lambda1: float = 1.0,
    lambda2: float = 100.0,
    stage: str = "full",
    entropy_include_weights: bool = False,
) -> LossBundle:
    """Weighted objective.  During ``stage="warmup"`` only the across-class
    terms train (entropy and within-class terms are computed for logging but
    excluded from the total, so their parameters receive no gradients)."""
    if stage not in ("warmup", "full"):
        raise ValueError(f"unknown stage {stage!r}")
    l_g = loss_g(prior, z, logdet)
    l_mi = loss_mi(prior, z, labels)
    l_e = loss_entropy(prior, z, include_weights=entropy_include_weights)
    l_in = loss_intra(prior, z, logdet, labels)
    total = ad.add(ad.mul(l_g, lambda1), ad.mul(l_mi, lambda2))
    if stage == "full":
        total = ad.add(ad.add(total, l_e), l_in)
    return LossBundle(
        l_g=l_g,
        l_mi=l_mi,
        l_e=l_e,
        l_in=l_in,
        total=total,
        lambda1=lambda1,
        lambda2=lambda2,
        stage=stage,
    )


# -- evaluation path (plain numpy) ------------------------------------------


@dataclass
class PriorValues:
    """Numpy snapshot of the prior for scoring, taken once per evaluation."""

    mu: np.ndarray  # (Y, d)
    log_w: np.ndarray  # (Y,) class log-weights
    delta: np.ndarray  # (Y, M, d)
    log_w_intra: np.ndarray  # (Y, M)


def _logsoftmax_np(x: np.ndarray, axis: int) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    shifted = x - m
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def prior_values(prior: HierarchicalPrior) -> PriorValues:
    return PriorValues(
        mu=prior.mu.value.copy(),
        log_w=_logsoftmax_np(prior.psi.value, axis=0),
        delta=prior.delta_np(),
        log_w_intra=_logsoftmax_np(prior.psi_y.value, axis=1),
    )


def sample_stats_np(
    pv: PriorValues, z: np.ndarray, logdet: np.ndarray, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample (log-likelihood, negative posterior entropy).

    The log-likelihood uses the labeled class's within-class mixture plus the
    volume term and the Gaussian normalizer.  The negative entropy uses the
    distance-only posterior over main centers and is always <= 0; it peaks at
    0 when the posterior is one-hot (or there is a single class).
    """
    z = np.asarray(z)
    labels = np.asarray(labels)
    d = z.shape[1]
    centers = pv.mu[labels][:, None, :] + pv.delta[labels]  # (N, M, d)
    dist2 = ((z[:, None, :] - centers) ** 2).sum(axis=2)  # (N, M)
    logits = -0.5 * dist2 + pv.log_w_intra[labels]
    m = logits.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True)))[:, 0]
    logp = lse + logdet - 0.5 * d * LOG_2PI

    zz = (z**2).sum(axis=1, keepdims=True)
    mm = (pv.mu**2).sum(axis=1)
    g = -0.5 * (zz + mm - 2.0 * z @ pv.mu.T)  # (N, Y)
    ls = _logsoftmax_np(g, axis=1)
    neg_entropy = (np.exp(ls) * ls).sum(axis=1)
    return logp, neg_entropy


def sample_stats(
    prior: HierarchicalPrior, z: np.ndarray, logdet: float, label: int
) -> tuple[float, float]:
    """Single-sample convenience wrapper over :func:`sample_stats_np`."""
    pv = prior_values(prior)
    logp, nh = sample_stats_np(
        pv,
        np.asarray(z)[None, :],
        np.asarray([logdet], dtype=np.float64),
        np.asarray([label]),
    )
    return float(logp[0]), float(nh[0])


def unit_gaussian_reference(z: np.ndarray, logdet: np.ndarray) -> float:
    """Plain unit-Gaussian flow objective, for equivalence checks and demos."""
    z = np.asarray(z)
    d = z.shape[1]
    return float(np.mean(0.5 * d * LOG_2PI + 0.5 * (z**2).sum(axis=1) - logdet))
