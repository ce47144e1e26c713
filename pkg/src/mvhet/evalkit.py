"""Downstream evaluation: linear SVM probe, k-means clustering, ranking metrics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata
from sklearn.cluster import KMeans
from sklearn.metrics import (adjusted_rand_score, average_precision_score, f1_score,
                             normalized_mutual_info_score)
from sklearn.model_selection import train_test_split

from .errors import DegenerateSplit, SingleClass


def macro_f1(y_true, y_pred) -> float:
    return float(f1_score(y_true, y_pred, average="macro", zero_division=0))


def micro_f1(y_true, y_pred) -> float:
    return float(f1_score(y_true, y_pred, average="micro", zero_division=0))


def nmi(a, b) -> float:
    """Mutual information normalized by the arithmetic mean of entropies."""
    return float(normalized_mutual_info_score(a, b, average_method="arithmetic"))


def ari(a, b) -> float:
    return float(adjusted_rand_score(a, b))


def auc_score(scores, labels) -> float:
    """Mann-Whitney AUC; tied positive/negative pairs get half credit."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both positive and negative examples")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def rank_metrics(scores, labels) -> tuple[float, float]:
    """(AUC, average precision)."""
    auc = auc_score(scores, labels)
    ap = float(average_precision_score(np.asarray(labels).reshape(-1).astype(int),
                                       np.asarray(scores, dtype=np.float64).reshape(-1)))
    return auc, ap


class LinearSVM:
    """One-vs-rest linear SVM: hinge loss plus L2, fit by deterministic
    full-batch subgradient descent with a 1/sqrt(t) step schedule.

    Objective per class: ||w||^2 / (2 C n) + mean_i max(0, 1 - y_i (w.x_i + b)).
    The best iterate (lowest objective) is kept. Inputs are standardized with
    the training mean and std.
    """

    def __init__(self, C: float = 1.0, iters: int = 300, step: float = 1.0):
        self.C, self.iters, self.step = C, iters, step

    def fit(self, X: np.ndarray, y: np.ndarray) -> "LinearSVM":
        X = np.asarray(X, dtype=np.float64)
        self.classes_ = np.unique(y)
        if self.classes_.size < 2:
            raise DegenerateSplit("SVM training split needs at least two classes")
        self.mu_ = X.mean(axis=0)
        self.sd_ = X.std(axis=0)
        self.sd_[self.sd_ == 0] = 1.0
        Xs = (X - self.mu_) / self.sd_
        n, d = Xs.shape
        Y = np.where(y[:, None] == self.classes_[None, :], 1.0, -1.0)
        W = np.zeros((d, self.classes_.size))
        b = np.zeros(self.classes_.size)
        reg = 1.0 / (self.C * n)

        def objective(W, b):
            margin = 1.0 - Y * (Xs @ W + b)
            return 0.5 * reg * (W * W).sum(axis=0) + np.maximum(margin, 0.0).mean(axis=0)

        best_obj = objective(W, b)
        best_W, best_b = W.copy(), b.copy()
        for t in range(1, self.iters + 1):
            active = (1.0 - Y * (Xs @ W + b)) > 0
            coef = np.where(active, Y, 0.0)
            gW = reg * W - Xs.T @ coef / n
            gb = -coef.mean(axis=0)
            eta = self.step / np.sqrt(t)
            W -= eta * gW
            b -= eta * gb
            obj = objective(W, b)
            better = obj < best_obj
            best_obj = np.where(better, obj, best_obj)
            best_W[:, better] = W[:, better]
            best_b[better] = b[better]
        self.coef_, self.intercept_ = best_W, best_b
        return self

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return ((np.asarray(X, dtype=np.float64) - self.mu_) / self.sd_) @ self.coef_ + self.intercept_

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.classes_[self.decision_function(X).argmax(axis=1)]


@dataclass
class ProbeConfig:
    proportions: Sequence[float] = (0.2, 0.4, 0.6, 0.8)
    repeats: int = 10
    C: float = 1.0
    seed: int = 0
    iters: int = 300

    def __post_init__(self):
        if not all(0.0 < p < 1.0 for p in self.proportions):
            raise ValueError("train proportions must lie in (0, 1)")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


@dataclass
class MetricsTable:
    """Rows of (metric, setting, value); setting is e.g. a train proportion."""

    rows: list[tuple[str, str, float]] = field(default_factory=list)

    def add(self, metric: str, setting: str, value: float) -> None:
        self.rows.append((metric, setting, float(value)))

    def get(self, metric: str, setting: str = "") -> float:
        for m, s, v in self.rows:
            if m == metric and s == setting:
                return v
        raise KeyError((metric, setting))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "setting", "value"])
        for m, s, v in self.rows:
            w.writerow([m, s, repr(v)])
        return buf.getvalue()

    def pretty(self) -> str:
        """Percent values, one metric block per group, like a results table."""
        lines = [f"{'Metric':<10}{'Train%':>8}{'Value(%)':>12}", "-" * 30]
        last = None
        for m, s, v in self.rows:
            if last is not None and m != last:
                lines.append("")
            lines.append(f"{m if m != last else '':<10}{s:>8}{100.0 * v:>12.2f}")
            last = m
        return "\n".join(lines) + "\n"


def _canonical(y: np.ndarray) -> np.ndarray:
    """Relabel classes by order of first appearance, so that splits and
    tie-breaks do not depend on the class ids themselves."""
    _, first, inv = np.unique(y, return_index=True, return_inverse=True)
    return np.argsort(np.argsort(first))[inv]


def svm_probe(embeddings: np.ndarray, labels: np.ndarray, cfg: ProbeConfig | None = None) -> MetricsTable:
    """Mean Macro-F1 / Micro-F1 of a linear SVM at each train proportion,
    over ``cfg.repeats`` stratified random splits."""
    cfg = cfg or ProbeConfig()
    X = np.asarray(embeddings, dtype=np.float64)
    y = _canonical(np.asarray(labels).reshape(-1))
    table = MetricsTable()
    macro_rows, micro_rows = [], []
    for p in cfg.proportions:
        macs, mics = [], []
        for rep in range(cfg.repeats):
            try:
                Xtr, Xte, ytr, yte = train_test_split(X, y, train_size=p, stratify=y,
                                                      random_state=cfg.seed + 1000 * rep)
            except ValueError as exc:
                raise DegenerateSplit(str(exc)) from None
            if np.unique(ytr).size < 2:
                raise DegenerateSplit("train split holds a single class")
            pred = LinearSVM(cfg.C, cfg.iters).fit(Xtr, ytr).predict(Xte)
            macs.append(macro_f1(yte, pred))
            mics.append(micro_f1(yte, pred))
        macro_rows.append((f"{round(100 * p)}%", float(np.mean(macs))))
        micro_rows.append((f"{round(100 * p)}%", float(np.mean(mics))))
    for s, v in macro_rows:
        table.add("Macro-F1", s, v)
    for s, v in micro_rows:
        table.add("Micro-F1", s, v)
    return table


def kmeans_cluster(embeddings: np.ndarray, labels: np.ndarray, K: int, restarts: int = 10,
                   seed: int = 0) -> tuple[np.ndarray, float, float]:
    """Lloyd's k-means with k-means++ seeding, restarted ``restarts`` times.

    Returns the assignment of the lowest-inertia restart and the NMI / ARI
    against ``labels`` averaged over restarts. Empty clusters are reseeded
    by the k-means implementation (farthest points).
    """
    X = np.asarray(embeddings, dtype=np.float64)
    if not 2 <= K <= X.shape[0]:
        raise ValueError(f"need 2 <= K <= n, got K={K}, n={X.shape[0]}")
    nmis, aris, best, best_inertia = [], [], None, np.inf
    for r in range(restarts):
        km = KMeans(n_clusters=K, init="k-means++", n_init=1, random_state=seed + r).fit(X)
        nmis.append(nmi(labels, km.labels_))
        aris.append(ari(labels, km.labels_))
        if km.inertia_ < best_inertia:
            best, best_inertia = km.labels_.copy(), km.inertia_
    return best, float(np.mean(nmis)), float(np.mean(aris))
