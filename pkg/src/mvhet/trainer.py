"""End-to-end training: downstream loss plus weighted reconstruction and
orthogonality terms, Adam updates, model selection on a validation metric."""

from __future__ import annotations

import io
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import EmptyPositives, MissingLabels, MissingLinkSplit, NonFiniteLoss
from .evalkit import LinearSVM, macro_f1, rank_metrics
from .hetgraph import HeteroGraph
from .ingest import LinkSplit, NodeSplit, pair_codes, sample_negatives
from .model import ModelConfig, MVHetGNN, pair_logits
from .tensor import Tensor
from .views import ViewPlan

log = logging.getLogger(__name__)

TASKS = ("classification", "link")
VAL_METRICS = ("classifier", "svm")


@dataclass
class TrainConfig:
    task: str = "classification"
    epochs: int = 500
    patience: int = 30
    lr: float = 0.005
    lam: float = 0.1
    seed: int = 0
    neg_ratio: int = 1
    neg_seed: int | None = None  # defaults to ``seed``
    restore_best: bool = True  # False keeps the last epoch's parameters
    val_metric: str = "classifier"  # classification: softmax head argmax, or a linear SVM fit on train nodes

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if not self.lr > 0:
            raise ValueError("learning rate must be > 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.neg_ratio < 1:
            raise ValueError("neg_ratio must be >= 1")
        if self.val_metric not in VAL_METRICS:
            raise ValueError(f"val_metric must be one of {VAL_METRICS}, got {self.val_metric!r}")


@dataclass
class EpochRecord:
    epoch: int
    ds: float
    intra: float
    inter: float
    ortho: float
    total: float
    val_metric: float
    ds_pos: float = float("nan")


@dataclass
class TrainReport:
    lam: float
    ortho_weight: float
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    wall_time: float = 0.0

    @property
    def val_trace(self) -> list[float]:
        return [r.val_metric for r in self.epochs]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.epochs])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,L_ds,L_re_intra,L_re_inter,L_ortho,total,val_metric\n")
        for r in self.epochs:
            vals = [r.ds, r.intra, r.inter, r.ortho, r.total, r.val_metric]
            buf.write(f"{r.epoch}," + ",".join(repr(float(v)) for v in vals) + "\n")
        return buf.getvalue()


def early_stop(trace: Sequence[float], patience: int) -> int:
    """Index of the best (earliest maximal) value seen before the run would
    stop, i.e. before ``patience`` consecutive non-improving epochs are
    exceeded."""
    if not trace:
        raise ValueError("empty metric trace")
    best, best_val = 0, trace[0]
    for e, v in enumerate(trace[1:], start=1):
        if v > best_val:
            best, best_val = e, v
        elif e - best > patience:
            break
    return best


def link_loss(H_u: Tensor, H_a: Tensor, positives, rng: np.random.Generator | None = None,
              ratio: int = 1, negatives=None, known: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Negative-sampling loss summed over pairs; returns (total, positive part).

    Negatives are drawn with ``rng`` (ratio per positive) from pairs outside
    ``known`` unless given explicitly.
    """
    pos = np.asarray(positives, dtype=np.int64).reshape(-1, 2)
    if pos.shape[0] == 0:
        raise EmptyPositives("link loss needs at least one positive pair")
    if negatives is None:
        if known is None:
            known = pair_codes(pos, H_a.shape[0])
        negatives = sample_negatives(H_u.shape[0], H_a.shape[0], ratio * pos.shape[0], rng, known)
    neg = np.asarray(negatives, dtype=np.int64).reshape(-1, 2)
    pos_part = T.bce_with_logits(pair_logits(H_u, H_a, pos), 1.0, reduction="sum")
    if neg.shape[0] == 0:
        return pos_part, pos_part
    neg_part = T.bce_with_logits(pair_logits(H_u, H_a, neg), 0.0, reduction="sum")
    return T.add(pos_part, neg_part), pos_part


def _val_metric(model: MVHetGNN, cfg: TrainConfig, labels, split) -> float:
    with T.no_grad():
        out = model.forward(training=False)
    if cfg.task == "classification":
        if split.val.size == 0:
            return float("nan")
        if cfg.val_metric == "svm":
            (H,) = out.embeddings.values()
            if np.unique(labels[split.train]).size < 2:
                return float("nan")
            svm = LinearSVM().fit(H.data[split.train], labels[split.train])
            return macro_f1(labels[split.val], svm.predict(H.data[split.val]))
        pred = out.logits.data[split.val].argmax(axis=1)
        return macro_f1(labels[split.val], pred)
    if split.val_pos.size == 0:
        return float("nan")
    hu, ha = out.embeddings[split.src_type].data, out.embeddings[split.dst_type].data
    pairs = np.vstack([split.val_pos, split.val_neg])
    y = np.r_[np.ones(len(split.val_pos)), np.zeros(len(split.val_neg))]
    scores = np.einsum("ij,ij->i", hu[pairs[:, 0]], ha[pairs[:, 1]])
    return rank_metrics(scores, y)[0]


def train(g: HeteroGraph, plans: Sequence[ViewPlan], cfg: TrainConfig, model_cfg: ModelConfig,
          split: NodeSplit | LinkSplit, labels: np.ndarray | None = None,
          num_classes: int | None = None) -> tuple[MVHetGNN, TrainReport]:
    """Optimize a fresh model; returns it with the best-validation parameters."""
    t0 = time.perf_counter()
    if cfg.task == "classification":
        if labels is None or not isinstance(split, NodeSplit) or split.train.size == 0:
            raise MissingLabels("classification needs labels and a non-empty training split")
        labels = np.asarray(labels, dtype=np.int64)
        if (labels[split.train] < 0).any():
            raise MissingLabels("training split contains unlabeled nodes")
        if num_classes is None:
            num_classes = int(labels[labels >= 0].max()) + 1
        model = MVHetGNN(g, plans, model_cfg, num_classes=num_classes, seed=cfg.seed)
    else:
        if not isinstance(split, LinkSplit) or split.train_pos.size == 0:
            raise MissingLinkSplit("link prediction needs a LinkSplit with training positives")
        model = MVHetGNN(g, plans, model_cfg, seed=cfg.seed)
        for t in (split.src_type, split.dst_type):
            if t not in model.views:
                raise MissingLinkSplit(f"no view targets node type {g.schema.type_name(t)!r}")
        known = split.known if split.known.size else pair_codes(split.train_pos, g.num_nodes[split.dst_type])

    neg_seed = cfg.seed if cfg.neg_seed is None else cfg.neg_seed
    state = T.AdamState(lr=cfg.lr)
    report = TrainReport(lam=cfg.lam, ortho_weight=model_cfg.ortho_weight)
    best_val, best_epoch, best_state = -math.inf, 0, None

    for epoch in range(cfg.epochs):
        T.zero_grads(model.params.values())
        out = model.forward(training=True, epoch=epoch)
        ds_pos = float("nan")
        if cfg.task == "classification":
            l_ds = T.softmax_cross_entropy(out.logits, labels, split.train)
        else:
            rng = T.keyed_rng(neg_seed, epoch, 0xA11CE)
            l_ds, pos_part = link_loss(out.embeddings[split.src_type], out.embeddings[split.dst_type],
                                       split.train_pos, rng, cfg.neg_ratio, known=known)
            ds_pos = pos_part.item()
        recon = T.add(out.intra, out.inter)
        loss = T.add(T.add(l_ds, T.scale(recon, cfg.lam)), T.scale(out.ortho, model_cfg.ortho_weight))
        parts = dict(ds=l_ds.item(), intra=out.intra.item(), inter=out.inter.item(),
                     ortho=out.ortho.item(), total=loss.item())
        if not all(math.isfinite(v) for v in parts.values()):
            raise NonFiniteLoss(epoch, parts)
        T.backward(loss)
        T.adam_step(model.params, {k: p.grad for k, p in model.params.items()}, state)

        val = _val_metric(model, cfg, labels, split)
        report.epochs.append(EpochRecord(epoch, val_metric=val, ds_pos=ds_pos, **parts))
        if not math.isfinite(val):  # no validation data: keep the latest parameters
            best_epoch, best_state = epoch, model.state()
        elif val > best_val:
            best_val, best_epoch, best_state = val, epoch, model.state()
        if epoch - best_epoch > cfg.patience:
            log.info("early stop at epoch %d (best %d, val %.4f)", epoch, best_epoch, best_val)
            break

    if cfg.restore_best:
        model.load_state(best_state)
    report.best_epoch = best_epoch
    report.wall_time = time.perf_counter() - t0
    return model, report
