"""Two-stage training loop: Adam, step-drop schedule, per-level models.

Every feature level trains its own flow and prior.  The first few epochs are
a warmup in which only the across-class terms (weighted likelihood and
mutual-information surrogate) optimize; afterwards the entropy and
within-class terms join.  The within-class offsets therefore stay exactly
zero through warmup, and the structural first offset stays zero forever.

Weight decay is decoupled (parameters shrink by lr*wd before the Adam update)
and applies only to flow subnet parameters, never to prior centers or logits.
A global-norm gradient clip acts purely as a blow-up guard; a non-finite loss
or gradient aborts training with the epoch, level, and batch in the message.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import evaluation, scoring
from .autodiff import Node, NumericsError
from .config import RunConfig, TrainConfig
from .data import FeatureDataset
from .flow import FlowModel, default_hidden, flow_forward, init_flow, positional_embedding
from .prior import HierarchicalPrior, init_prior, total_loss
from .scoring import pos_mode_for

__all__ = [
    "AdamState",
    "adam_step",
    "clip_global_norm",
    "lr_at",
    "TrainAbort",
    "TrainResult",
    "build_models",
    "collapse_labels",
    "train",
    "write_metrics_csv",
    "METRIC_FIELDS",
]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

METRIC_FIELDS = ["epoch", "level", "l_g", "l_mi", "l_e", "l_in", "total", "lr", "auroc"]


class TrainAbort(RuntimeError):
    """Numerical failure during training, located at (epoch, level, batch)."""

    def __init__(self, epoch: int, level: int, batch: int, reason: str):
        super().__init__(
            f"training aborted at epoch {epoch}, level {level}, batch {batch}: {reason}"
        )
        self.epoch = epoch
        self.level = level
        self.batch = batch


@dataclass
class AdamState:
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def ensure(self, params) -> None:
        if not self.m:
            self.m = [np.zeros_like(p.value) for p in params]
            self.v = [np.zeros_like(p.value) for p in params]


def adam_step(
    params,
    grads,
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    decay_flags=None,
) -> None:
    """One Adam update with decoupled weight decay.

    Decay shrinks flagged parameters by ``lr * weight_decay`` *before* the
    moment update, so it never enters the moment estimates.
    """
    state.ensure(params)
    if decay_flags is None:
        decay_flags = [True] * len(params)
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1**state.t
    bc2 = 1.0 - ADAM_BETA2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.value)
        if not np.all(np.isfinite(g)):
            raise NumericsError("non-finite gradient in optimizer step")
        if weight_decay and decay_flags[i]:
            p.value -= lr * weight_decay * p.value
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.value -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def clip_global_norm(grads, max_norm: float) -> tuple[float, bool]:
    """Scale all grads in place so their joint norm is <= max_norm."""
    total = 0.0
    for g in grads:
        if g is not None:
            total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    norm = math.sqrt(total)
    if not math.isfinite(norm):
        raise NumericsError("non-finite gradient norm")
    if norm > max_norm > 0:
        factor = max_norm / norm
        for g in grads:
            if g is not None:
                g *= factor
        return norm, True
    return norm, False


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    drops = sum(1 for e in cfg.lr_drop_epochs if e <= epoch)
    return cfg.lr * (cfg.lr_drop_factor**drops)


def collapse_labels(labels: np.ndarray, y_effective: int | None) -> np.ndarray:
    if y_effective is None:
        return labels
    return labels % y_effective


@dataclass
class LevelState:
    model: FlowModel
    prior: HierarchicalPrior
    pos_table: np.ndarray
    adam: AdamState
    entries: list  # [(name, Node, decay_flag)]


@dataclass
class TrainResult:
    models: list[FlowModel]
    priors: list[HierarchicalPrior]
    metrics: list[dict]
    config: RunConfig
    n_classes_effective: int
    clip_events: int = 0

    def final_total(self) -> float:
        rows = [r for r in self.metrics if r["epoch"] == self.metrics[-1]["epoch"]]
        return float(np.mean([r["total"] for r in rows]))


def build_models(
    data: FeatureDataset, config: RunConfig
) -> tuple[list[FlowModel], list[HierarchicalPrior], list[np.ndarray]]:
    """Per-level flows, priors, and positional tables, all seeded from config."""
    mc, tc = config.model, config.train
    dtype = tc.dtype()
    y_eff = config.variant.y_effective or data.n_classes
    models, priors, tables = [], [], []
    for k, level in enumerate(data.levels):
        hidden = mc.hidden if mc.hidden is not None else default_hidden(level.d)
        model = init_flow(
            level.d,
            pos_dim=mc.pos_dim,
            n_blocks=mc.n_blocks,
            hidden=hidden,
            clamp_alpha=mc.clamp_alpha,
            perm_mode=mc.perm_mode,
            seed=tc.seed + 1000 * k + 1,
            dtype=dtype,
            padded_from=level.padded_from,
        )
        prior = init_prior(
            y_eff, level.d, n_intra=tc.n_intra, seed=tc.seed + 1000 * k + 2,
            dtype=dtype, delta_init_scale=tc.intra_init_scale,
        )
        prior.trainable = not config.variant.freeze_centers
        table = positional_embedding(
            level.h, level.w, mc.pos_dim,
            pos_mode_for(mc.pos_mode, level.h, level.w),
            dtype=dtype,
        )
        models.append(model)
        priors.append(prior)
        tables.append(table)
    return models, priors, tables


def _entries(model: FlowModel, prior: HierarchicalPrior):
    rows = [(name, node, True) for name, node in model.params()]
    rows += [(name, node, False) for name, node in prior.params()]
    return rows


def train(
    data: FeatureDataset,
    config: RunConfig,
    test_data: FeatureDataset | None = None,
    on_epoch=None,
) -> TrainResult:
    """Run the full two-stage schedule over every feature level.

    When `test_data` is given, image-level AUROC is evaluated every
    ``eval_every`` epochs (and at the end) and recorded in the metrics rows.
    Everything is deterministic in ``config.train.seed``.
    """
    tc = config.train
    dtype = tc.dtype()
    y_eff = config.variant.y_effective or data.n_classes
    labels_all = collapse_labels(data.labels, config.variant.y_effective)
    models, priors, tables = build_models(data, config)
    states = [
        LevelState(
            model=m,
            prior=p,
            pos_table=t,
            adam=AdamState(),
            entries=_entries(m, p),
        )
        for m, p, t in zip(models, priors, tables)
    ]
    shuffle_rng = np.random.default_rng(tc.seed + 777)
    metrics: list[dict] = []
    clip_events = 0

    for epoch in range(tc.epochs):
        lr = lr_at(epoch, tc)
        stage = "warmup" if epoch < tc.warmup_epochs else "full"
        epoch_rows = []
        for k, (level, st) in enumerate(zip(data.levels, states)):
            order = shuffle_rng.permutation(level.n)
            sums = {"l_g": 0.0, "l_mi": 0.0, "l_e": 0.0, "l_in": 0.0, "total": 0.0}
            n_batches = 0
            for bi in range(0, level.n, tc.batch_size):
                idx = order[bi : bi + tc.batch_size]
                xb = level.features[idx].reshape(-1, level.d).astype(dtype)
                pos = np.tile(st.pos_table, (idx.size, 1))
                row_labels = np.repeat(labels_all[idx], level.h * level.w)
                batch_no = bi // tc.batch_size
                try:
                    z, logdet = flow_forward(st.model, Node(xb), pos)
                    bundle = total_loss(
                        st.prior,
                        z,
                        logdet,
                        row_labels,
                        lambda1=tc.lambda1,
                        lambda2=tc.lambda2,
                        stage=stage,
                        entropy_include_weights=config.score.entropy_include_weights,
                    )
                    bundle.total.backward()
                    params = [node for _, node, _ in st.entries]
                    flags = [flag for _, _, flag in st.entries]
                    grads = [node.grad for node in params]
                    for node in params:
                        node.grad = None
                    grads = [
                        np.zeros_like(p.value) if g is None else g
                        for p, g in zip(params, grads)
                    ]
                    _, clipped = clip_global_norm(grads, tc.grad_clip)
                    clip_events += clipped
                    adam_step(
                        params, grads, st.adam, lr,
                        weight_decay=tc.weight_decay, decay_flags=flags,
                    )
                except (NumericsError, FloatingPointError) as err:
                    raise TrainAbort(epoch, k, batch_no, str(err)) from err
                vals = bundle.floats()
                for key in sums:
                    sums[key] += vals[key]
                n_batches += 1
            row = {key: sums[key] / max(n_batches, 1) for key in sums}
            row.update(epoch=epoch, level=k, lr=lr, auroc=None)
            epoch_rows.append(row)

        eval_due = test_data is not None and (
            (epoch + 1) % tc.eval_every == 0 or epoch == tc.epochs - 1
        )
        if eval_due:
            result = scoring.score_dataset(
                models,
                priors,
                test_data,
                score_cfg=config.score,
                labels=collapse_labels(test_data.labels, config.variant.y_effective),
                pos_mode=config.model.pos_mode,
            )
            score_auroc = evaluation.auroc(result.image_scores, test_data.anomaly_flags)
            for row in epoch_rows:
                row["auroc"] = score_auroc
        metrics.extend(epoch_rows)
        if on_epoch is not None:
            on_epoch(epoch, stage, epoch_rows)

    return TrainResult(
        models=models,
        priors=priors,
        metrics=metrics,
        config=config,
        n_classes_effective=y_eff,
        clip_events=clip_events,
    )


def write_metrics_csv(path, metrics: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_FIELDS)
        for row in metrics:
            out = []
            for name in METRIC_FIELDS:
                value = row.get(name)
                if value is None:
                    out.append("")
                elif isinstance(value, float):
                    out.append(f"{value:.10g}")
                else:
                    out.append(value)
            writer.writerow(out)
