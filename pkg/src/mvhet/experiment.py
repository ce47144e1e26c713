"""Experiment configuration (TOML) and the pipelines behind the CLI.

A config names a dataset (manifest or synthetic spec), the metapath views,
model and training settings, and evaluation options. Everything a command
produces is a function of the config and its seed.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError, MissingLabels, UnknownVariant
from .evalkit import MetricsTable, ProbeConfig, kmeans_cluster, rank_metrics, svm_probe
from .hetgraph import UNLABELED, HeteroGraph
from .ingest import (LinkSplit, NodeSplit, SyntheticRelation, SyntheticSpec, generate_synthetic,
                     load_dataset, split_links, split_nodes)
from .model import ModelConfig, MVHetGNN, model_config_dict, score_links
from .trainer import TrainConfig, TrainReport, train
from .views import ViewPlan, compile_view, parse_metapath

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RelationSection(_Section):
    name: str
    src: str
    dst: str
    inverse: str | None = None
    symmetric: bool = False
    p_intra: float | None = None
    p_inter: float | None = None


class SyntheticSection(_Section):
    node_counts: dict[str, int]
    relations: list[RelationSection]
    num_classes: int = 3
    p_intra: float = 0.05
    p_inter: float = 0.005
    feature_dims: dict[str, int] = Field(default_factory=dict)
    noise: float = 1.0
    centroid_scale: float = 1.0
    seed: int | None = None  # graph seed; defaults to the experiment seed

    def to_spec(self, label_types: list[str] | None) -> SyntheticSpec:
        rels = [SyntheticRelation(**r.model_dump()) for r in self.relations]
        d = self.model_dump(exclude={"relations", "seed"})
        return SyntheticSpec(relations=rels, label_types=label_types, **d)


class DataSection(_Section):
    manifest: Path | None = None
    synthetic: SyntheticSection | None = None
    target: str | None = None  # labeled / embedded node type; defaults to the views' target
    split: list[float] | None = None  # node split fractions; overrides the manifest's

    @model_validator(mode="after")
    def _one_source(self):
        if (self.manifest is None) == (self.synthetic is None):
            raise ValueError("set exactly one of data.manifest or data.synthetic")
        return self

    @field_validator("split")
    @classmethod
    def _fractions(cls, v):
        if v is not None and (len(v) != 3 or min(v) < 0 or abs(sum(v) - 1.0) > 1e-9):
            raise ValueError("split needs three fractions >= 0 summing to 1")
        return v


class MetapathSection(_Section):
    path: str
    name: str | None = None


class ModelSection(_Section):
    d_feat: int = 64
    d_view: int = 32
    d_out: int = 32
    ae_layers: int = 2
    ae_hidden: list[int] = Field(default_factory=list)
    fusion: Literal["auto", "concat", "mean", "attn"] = "auto"
    use_transe: bool = True
    use_autoencoders: bool = True
    use_ortho_reg: bool = True
    ortho_weight: float = 1.0
    dropout: float = 0.5
    attn_dim: int = 32
    ae_init: Literal["glorot", "orthogonal"] = "glorot"
    recon_reduction: Literal["mean", "sum"] = "mean"


class TrainSection(_Section):
    task: Literal["classification", "link"] = "classification"
    epochs: int = 500
    patience: int = 30
    lr: float = 0.005
    lam: float = 0.1
    neg_ratio: int = 1
    restore_best: bool = True
    val_metric: Literal["classifier", "svm"] = "classifier"


class LinkSection(_Section):
    relation: str
    fractions: list[float] = Field(default_factory=lambda: [0.2, 0.1, 0.7])


class EvalSection(_Section):
    proportions: list[float] = Field(default_factory=lambda: [0.2, 0.4, 0.6, 0.8])
    repeats: int = 10
    svm_c: float = 1.0
    svm_iters: int = 300
    kmeans_restarts: int = 10


class ExperimentConfig(_Section):
    seed: int = 0
    output: Path = Path("runs/default")
    data: DataSection
    metapaths: list[str | MetapathSection]
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    link: LinkSection | None = None
    eval: EvalSection = Field(default_factory=EvalSection)

    @model_validator(mode="after")
    def _task_needs(self):
        if not self.metapaths:
            raise ValueError("metapaths: at least one view is required")
        if self.train.task == "link" and self.link is None:
            raise ValueError("train.task = 'link' needs a [link] section")
        return self

    def model_cfg(self) -> ModelConfig:
        try:
            return ModelConfig(**self.model.model_dump())
        except ValueError as exc:
            raise ConfigError(f"model: {exc}") from None

    def train_cfg(self) -> TrainConfig:
        try:
            return TrainConfig(seed=self.seed, **self.train.model_dump())
        except ValueError as exc:
            raise ConfigError(f"train: {exc}") from None

    def probe_cfg(self) -> ProbeConfig:
        e = self.eval
        try:
            return ProbeConfig(proportions=tuple(e.proportions), repeats=e.repeats, C=e.svm_c,
                               seed=self.seed, iters=e.svm_iters)
        except ValueError as exc:
            raise ConfigError(f"eval: {exc}") from None


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def parse_config(raw: dict, base: Path | None = None) -> ExperimentConfig:
    """Validate a raw mapping. A relative manifest path resolves against
    ``base`` (the config's directory); the output path stays as given."""
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None
    if base is not None:
        if cfg.data.manifest is not None and not cfg.data.manifest.is_absolute():
            cfg.data.manifest = base / cfg.data.manifest
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(raw, path.parent)


# ---------------------------------------------------------------- pipeline


@dataclass
class Experiment:
    cfg: ExperimentConfig
    graph: HeteroGraph  # training graph; held-out links removed for the link task
    plans: list[ViewPlan]
    split: NodeSplit | LinkSplit
    labels: np.ndarray | None
    num_classes: int | None
    target: int


def prepare(cfg: ExperimentConfig) -> Experiment:
    """Load or generate the graph, compile the views and build the split."""
    task = cfg.train.task
    if cfg.data.synthetic is not None:
        syn = cfg.data.synthetic
        spec = syn.to_spec(list(syn.node_counts))
        g, _ = generate_synthetic(spec, cfg.seed if syn.seed is None else syn.seed)
        node_split = None
    else:
        g, node_split = load_dataset(cfg.data.manifest)

    split: NodeSplit | LinkSplit
    if task == "link":
        g, split = split_links(g, cfg.link.relation, cfg.link.fractions, cfg.seed)
    plans = []
    for mp in cfg.metapaths:
        path, name = (mp, None) if isinstance(mp, str) else (mp.path, mp.name)
        plans.append(compile_view(g, parse_metapath(g.schema, path, name)))
    target_name = cfg.data.target or g.schema.type_name(plans[0].metapath.target_type)
    target = g.schema.type_id(target_name)

    labels = num_classes = None
    if task == "classification":
        if any(p.metapath.target_type != target for p in plans):
            raise ConfigError(f"metapaths: every view must end at the target type {target_name!r}")
        y = g.labels[target]
        if y is None or not (y != UNLABELED).any():
            raise MissingLabels(f"node type {target_name!r} has no labels")
        labels, num_classes = y, int(y.max()) + 1
        if cfg.data.split is not None or node_split is None:
            split = split_nodes(y, cfg.data.split or [0.2, 0.1, 0.7], cfg.seed)
        else:
            split = node_split
    return Experiment(cfg, g, plans, split, labels, num_classes, target)


def fresh_model(exp: Experiment, model_cfg: ModelConfig | None = None) -> MVHetGNN:
    return MVHetGNN(exp.graph, exp.plans, model_cfg or exp.cfg.model_cfg(),
                    num_classes=exp.num_classes, seed=exp.cfg.seed)


def run_train(exp: Experiment, model_cfg: ModelConfig | None = None) -> tuple[MVHetGNN, TrainReport]:
    return train(exp.graph, exp.plans, exp.cfg.train_cfg(), model_cfg or exp.cfg.model_cfg(),
                 exp.split, exp.labels, exp.num_classes)


def checkpoint_meta(exp: Experiment, model: MVHetGNN) -> dict:
    return {
        "model": model_config_dict(model.cfg),
        "views": [p.name for p in exp.plans],
        "view_digests": [p.digest() for p in exp.plans],
        "num_classes": exp.num_classes,
        "task": exp.cfg.train.task,
        "seed": exp.cfg.seed,
    }


def evaluate(exp: Experiment, model: MVHetGNN) -> MetricsTable:
    """Classification: SVM probe and k-means on test-node embeddings.
    Link prediction: AUC and AP on held-out test pairs."""
    emb = model.embed()
    if exp.cfg.train.task == "link":
        sp = exp.split
        pairs = np.vstack([sp.test_pos, sp.test_neg])
        y = np.r_[np.ones(len(sp.test_pos)), np.zeros(len(sp.test_neg))]
        auc, ap = rank_metrics(score_links(emb[sp.src_type], emb[sp.dst_type], pairs), y)
        table = MetricsTable()
        table.add("AUC", "test", auc)
        table.add("AP", "test", ap)
        return table
    idx = exp.split.test
    X, y = emb[exp.target][idx], exp.labels[idx]
    table = svm_probe(X, y, exp.cfg.probe_cfg())
    _, nmi_v, ari_v = kmeans_cluster(X, y, exp.num_classes, exp.cfg.eval.kmeans_restarts, exp.cfg.seed)
    table.add("NMI", "", nmi_v)
    table.add("ARI", "", ari_v)
    return table


def embeddings_tsv(g: HeteroGraph, H: np.ndarray, t: int) -> str:
    rows = ["node_id\t" + "\t".join(f"f{j}" for j in range(H.shape[1]))]
    for nid, h in zip(g.node_ids[t], H):
        rows.append(nid + "\t" + "\t".join(f"{v:.17g}" for v in h))
    return "\n".join(rows) + "\n"


# ------------------------------------------------------------------ ablate

VARIANTS: dict[str, dict] = {
    "auto": {},
    "mean": {"fusion": "mean"},
    "concat": {"fusion": "concat"},
    "attn": {"fusion": "attn"},
    "wo_transe": {"use_transe": False},
    "wo_ae": {"use_autoencoders": False},
    "wo_reg": {"use_ortho_reg": False},
}


def variant_name(raw: str) -> str:
    key = raw.strip().lower().replace("w/o", "wo").replace("-", "_").replace(" ", "_")
    key = {"woae": "wo_ae", "woreg": "wo_reg", "wotranse": "wo_transe", "attention": "attn"}.get(key, key)
    if key not in VARIANTS:
        raise UnknownVariant(f"unknown variant {raw!r}; choose from {', '.join(VARIANTS)}")
    return key


def variant_config(base: ModelConfig, name: str) -> ModelConfig:
    kw = {f.name: getattr(base, f.name) for f in fields(base)}
    kw.update(VARIANTS[variant_name(name)])
    return ModelConfig(**kw)


@dataclass
class AblationTable:
    metrics: list[tuple[str, str]]
    rows: list[tuple[str, list[float]]]

    def to_csv(self) -> str:
        head = ["variant"] + [f"{m}@{s}" if s else m for m, s in self.metrics]
        lines = [",".join(head)]
        for name, vals in self.rows:
            lines.append(",".join([name] + [repr(float(v)) for v in vals]))
        return "\n".join(lines) + "\n"

    def pretty(self) -> str:
        head = ["variant"] + [f"{m}@{s}" if s else m for m, s in self.metrics]
        w = max(12, *(len(h) + 2 for h in head))
        lines = ["".join(h.ljust(w) for h in head)]
        for name, vals in self.rows:
            lines.append(name.ljust(w) + "".join(f"{100 * v:.2f}".ljust(w) for v in vals))
        return "\n".join(lines) + "\n"


def ablate(exp: Experiment, variants: Sequence[str]) -> AblationTable:
    """Train and evaluate each variant with the experiment's seed."""
    names = [variant_name(v) for v in variants]
    base = exp.cfg.model_cfg()
    metrics, rows = None, []
    for name in names:
        model, _ = run_train(exp, variant_config(base, name))
        table = evaluate(exp, model)
        keys = [(m, s) for m, s, _ in table.rows]
        metrics = metrics or keys
        rows.append((name, [table.get(m, s) for m, s in metrics]))
    return AblationTable(metrics or [], rows)
