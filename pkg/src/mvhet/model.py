"""Learnable layers: type-specific feature transforms, the metapath ego
graph encoder, autoencoder-based multi-view fusion and the fusion ablations.

Parameter names (also the checkpoint keys)::

    W_type/<type>            d_type x d'
    h_rel/<relation>         1 x d'
    W_dir/O, W_dir/I         d' x d'
    ae/<view>/<m>/{W,b}      m = 1..M
    sae/{W1,b1,W2,b2}        supervised autoencoder over concatenated codes
    clf/W_C                  C x width(H)
    attn/{W_a,b_a,q}         attention fusion only
    lin/{W,b}                autoencoder-free fusion only

With two target node types (link prediction) the fusion blocks are
namespaced by type, e.g. ``sae/user/W1``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import tensor as T
from .errors import (CheckpointShapeMismatch, EmptyViewSet, IndexOutOfRange, RowCountMismatch,
                     ShapeMismatch)
from .hetgraph import Direction, HeteroGraph
from .tensor import Tensor
from .views import EgoGraph, ViewPlan

FUSIONS = ("auto", "concat", "mean", "attn")
CHECKPOINT_FORMAT = "mvhet-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    d_feat: int = 64  # d', shared width after the type transforms
    d_view: int = 32  # width of each view-specific code
    d_out: int = 32  # width of the fused embedding
    ae_layers: int = 2  # M, layers per view autoencoder
    ae_hidden: list[int] = field(default_factory=list)  # encoder widths between d' and d_view when M > 2
    fusion: str = "auto"
    use_transe: bool = True
    use_autoencoders: bool = True
    use_ortho_reg: bool = True
    ortho_weight: float = 1.0
    dropout: float = 0.5
    attn_dim: int = 32
    ae_init: str = "glorot"  # or "orthogonal"
    recon_reduction: str = "mean"  # "mean": 1/2 ||.||_F^2 over the entry count; "sum": unnormalized

    def __post_init__(self):
        if self.ae_layers < 2 or self.ae_layers % 2:
            raise ValueError(f"ae_layers must be a positive even number, got {self.ae_layers}")
        if min(self.d_feat, self.d_view, self.d_out, self.attn_dim) <= 0:
            raise ValueError("dimensions must be positive")
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.ortho_weight < 0:
            raise ValueError("ortho_weight must be >= 0")
        if self.recon_reduction not in ("sum", "mean"):
            raise ValueError(f"recon_reduction must be 'sum' or 'mean', got {self.recon_reduction!r}")
        if self.ae_hidden and len(self.ae_hidden) != self.ae_layers // 2 - 1:
            raise ValueError(f"ae_hidden needs {self.ae_layers // 2 - 1} widths")

    def encoder_widths(self) -> list[int]:
        """d', hidden..., d_view for one view autoencoder's encoder half."""
        half = self.ae_layers // 2
        if self.ae_hidden:
            hidden = list(self.ae_hidden)
        else:
            hidden = [int(round(w)) for w in np.linspace(self.d_feat, self.d_view, half + 1)[1:-1]]
        return [self.d_feat, *hidden, self.d_view]


# ------------------------------------------------------------------ init


def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-lim, lim, size=(rows, cols))


def semi_orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Matrix with orthonormal columns (or rows when cols > rows)."""
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


def _fusion_prefix(kind: str, target: str | None) -> str:
    return kind if target is None else f"{kind}/{target}"


def fused_width(cfg: ModelConfig, n_views: int) -> int:
    if cfg.fusion == "concat":
        return n_views * cfg.d_feat
    if cfg.fusion in ("mean", "attn"):
        return cfg.d_feat
    return cfg.d_out


def init_params(g: HeteroGraph, views: Mapping[int, Sequence[ViewPlan]], cfg: ModelConfig,
                num_classes: int | None, seed: int) -> dict[str, Tensor]:
    """All learnable tensors, created in a fixed order from ``seed``.

    Type transforms and relation vectors are created only for the types and
    relations visited by some view.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}

    def new(name, data):
        params[name] = Tensor(data, requires_grad=True, name=name)

    schema = g.schema
    plans = [p for ps in views.values() for p in ps]
    used_types = sorted({t for p in plans for t in p.metapath.node_types})
    used_rels = sorted({r for p in plans for r in p.metapath.relations})
    for t in used_types:
        new(f"W_type/{schema.type_name(t)}", glorot(rng, g.features[t].shape[1], cfg.d_feat))
    for r in used_rels:
        new(f"h_rel/{schema.relations[r].name}",
            rng.normal(0.0, 1.0 / np.sqrt(cfg.d_feat), size=(1, cfg.d_feat)))
    new("W_dir/O", glorot(rng, cfg.d_feat, cfg.d_feat))
    new("W_dir/I", glorot(rng, cfg.d_feat, cfg.d_feat))

    multi = len(views) > 1
    ae_init = semi_orthogonal if cfg.ae_init == "orthogonal" else glorot
    for t, plans_t in views.items():
        tname = schema.type_name(t) if multi else None
        n = len(plans_t)
        if cfg.fusion == "auto" and cfg.use_autoencoders:
            enc = cfg.encoder_widths()
            widths = enc + enc[-2::-1]
            for p in plans_t:
                for m in range(1, cfg.ae_layers + 1):
                    new(f"ae/{p.name}/{m}/W", ae_init(rng, widths[m - 1], widths[m]))
                    new(f"ae/{p.name}/{m}/b", np.zeros((1, widths[m])))
            pre = _fusion_prefix("sae", tname)
            cat = n * cfg.d_view
            new(f"{pre}/W1", ae_init(rng, cat, cfg.d_out))
            new(f"{pre}/b1", np.zeros((1, cfg.d_out)))
            new(f"{pre}/W2", glorot(rng, cfg.d_out, cat))
            new(f"{pre}/b2", np.zeros((1, cat)))
        elif cfg.fusion == "auto":
            pre = _fusion_prefix("lin", tname)
            new(f"{pre}/W", glorot(rng, n * cfg.d_feat, cfg.d_out))
            new(f"{pre}/b", np.zeros((1, cfg.d_out)))
        elif cfg.fusion == "attn":
            pre = _fusion_prefix("attn", tname)
            new(f"{pre}/W_a", glorot(rng, cfg.d_feat, cfg.attn_dim))
            new(f"{pre}/b_a", np.zeros((1, cfg.attn_dim)))
            new(f"{pre}/q", glorot(rng, cfg.attn_dim, 1))
    if num_classes is not None:
        (t,) = views.keys()
        new("clf/W_C", glorot(rng, num_classes, fused_width(cfg, len(views[t]))))
    return params


# -------------------------------------------------------------- encoder


def feature_transform(g: HeteroGraph, params: Mapping[str, Tensor],
                      types: Sequence[int] | None = None) -> dict[int, Tensor]:
    """ReLU(X_t W_t) for every node type that has a transform."""
    out = {}
    for t in (range(len(g.schema.node_types)) if types is None else types):
        key = f"W_type/{g.schema.type_name(t)}"
        if key not in params:
            continue
        x = g.features[t]
        w = params[key]
        if x.shape[1] != w.shape[0]:
            raise ShapeMismatch(f"{key}: features have width {x.shape[1]}, weight has {w.shape[0]} rows")
        out[t] = T.relu(T.matmul(Tensor(x), w))
    return out


def direction_weight(params: Mapping[str, Tensor], direction: Direction) -> Tensor:
    return params["W_dir/O" if direction is Direction.FORWARD else "W_dir/I"]


Aggregator = Callable[[object, Tensor], Tensor]


def encode_view(g: HeteroGraph, plan: ViewPlan, h_prime: Mapping[int, Tensor],
                params: Mapping[str, Tensor], cfg: ModelConfig, training: bool = False,
                rng_for_level: Callable[[int], np.random.Generator] | None = None,
                aggregator: Aggregator | None = None) -> Tensor:
    """Bottom-up propagation over the view's levels; returns |V_target| x d'.

    ``aggregator(level, messages)`` replaces the neighbor mean; this is the
    hook for learned normalizations (e.g. attention-weighted neighbors).
    """
    schema = g.schema
    h = h_prime[plan.metapath.node_types[0]]
    for i, lv in enumerate(plan.levels):
        w = direction_weight(params, lv.direction)
        if cfg.use_transe:
            rel = params[f"h_rel/{schema.relations[lv.relation].name}"]
            msg = T.matmul(T.add(h, rel), w)
        else:
            msg = T.matmul(h, w)
        agg = aggregator(lv, msg) if aggregator else T.spmm_mean(lv.adjacency, msg, lv.norms)
        h = T.add(h_prime[lv.dst_type], T.relu(agg))
        if training and cfg.dropout > 0:
            h = T.dropout(h, cfg.dropout, True, rng_for_level(i) if rng_for_level else None)
    return T.divide(h, plan.depth)


def encode_ego_reference(g: HeteroGraph, plan: ViewPlan, ego: EgoGraph,
                         h_prime: Mapping[int, np.ndarray], params: Mapping[str, np.ndarray],
                         use_transe: bool = True) -> np.ndarray:
    """Per-node evaluation of the encoder on one explicit ego graph (no
    dropout). Independent of the sparse level-wise path; used as an oracle."""
    types = plan.metapath.node_types
    rep = {(0, n): np.asarray(h_prime[types[0]][n], dtype=float) for n in ego.levels[0]}
    for l in range(1, len(ego.levels)):
        lv = plan.levels[l - 1]
        w = params["W_dir/O" if lv.direction is Direction.FORWARD else "W_dir/I"]
        hr = params[f"h_rel/{g.schema.relations[lv.relation].name}"].reshape(-1)
        children: dict[int, list[int]] = {}
        for c, par in ego.edges[l - 1]:
            children.setdefault(par, []).append(c)
        for node in ego.levels[l]:
            acc = np.zeros(w.shape[1])
            kids = children.get(node, [])
            for c in kids:
                src = rep[(l - 1, c)] + hr if use_transe else rep[(l - 1, c)]
                acc = acc + src @ w
            if kids:
                acc = acc / len(kids)
            rep[(l, node)] = np.asarray(h_prime[types[l]][node], dtype=float) + np.maximum(acc, 0.0)
    return rep[(len(ego.levels) - 1, ego.target)] / plan.depth


# --------------------------------------------------------------- fusion


@dataclass
class FusionResult:
    H: Tensor
    intra: Tensor
    inter: Tensor
    ortho: Tensor
    codes: list[Tensor] = field(default_factory=list)


def _zero() -> Tensor:
    return Tensor(np.zeros((1, 1)))


def _check_views(views: Sequence[Tensor]) -> None:
    if not views:
        raise EmptyViewSet("fusion needs at least one view")
    rows = {v.shape[0] for v in views}
    if len(rows) > 1:
        raise RowCountMismatch(f"view row counts differ: {[v.shape[0] for v in views]}")


def _recon(target: Tensor, approx: Tensor, cfg: ModelConfig) -> Tensor:
    c = 0.5 if cfg.recon_reduction == "sum" else 0.5 / target.data.size
    return T.scale(T.frobenius_sq(T.sub(target, approx)), c)


def fuse_auto(views: Sequence[Tensor], view_names: Sequence[str], params: Mapping[str, Tensor],
              cfg: ModelConfig, target: str | None = None) -> FusionResult:
    """Hierarchical autoencoders: per-view AEs compress each view, a
    two-layer supervised AE encodes their concatenated codes into H.

    Returns H with the intra-view and inter-view reconstruction losses and
    the orthogonality penalty over every encoder layer (view AEs and W1).
    """
    _check_views(views)
    half = cfg.ae_layers // 2
    codes, intra, ortho = [], _zero(), _zero()
    for hv, name in zip(views, view_names):
        z = hv
        for m in range(1, cfg.ae_layers + 1):
            w = params[f"ae/{name}/{m}/W"]
            z = T.relu(T.add(T.matmul(z, w), params[f"ae/{name}/{m}/b"]))
            if m <= half and cfg.use_ortho_reg:
                ortho = T.add(ortho, T.l1_offdiag_gram(w))
            if m == half:
                codes.append(z)
        intra = T.add(intra, _recon(hv, z, cfg))
    pre = _fusion_prefix("sae", target)
    zcat = T.concat_cols(codes) if len(codes) > 1 else codes[0]
    H = T.relu(T.add(T.matmul(zcat, params[f"{pre}/W1"]), params[f"{pre}/b1"]))
    zre = T.relu(T.add(T.matmul(H, params[f"{pre}/W2"]), params[f"{pre}/b2"]))
    inter = _recon(zcat, zre, cfg)
    if cfg.use_ortho_reg:
        ortho = T.add(ortho, T.l1_offdiag_gram(params[f"{pre}/W1"]))
    return FusionResult(H, intra, inter, ortho, codes)


def fuse_linear(views: Sequence[Tensor], params: Mapping[str, Tensor], cfg: ModelConfig,
                target: str | None = None) -> FusionResult:
    """Autoencoder-free ablation: one linear layer over concatenated views."""
    _check_views(views)
    pre = _fusion_prefix("lin", target)
    cat = T.concat_cols(views) if len(views) > 1 else views[0]
    H = T.add(T.matmul(cat, params[f"{pre}/W"]), params[f"{pre}/b"])
    ortho = T.l1_offdiag_gram(params[f"{pre}/W"]) if cfg.use_ortho_reg else _zero()
    return FusionResult(H, _zero(), _zero(), ortho)


def attention_weights(views: Sequence[Tensor], params: Mapping[str, Tensor],
                      target: str | None = None) -> Tensor:
    """1 x |views| softmax over per-view scores q^T tanh(W_a mean(H_j) + b_a)."""
    pre = _fusion_prefix("attn", target)
    scores = [T.matmul(T.tanh(T.add(T.matmul(T.mean_rows(v), params[f"{pre}/W_a"]), params[f"{pre}/b_a"])),
                       params[f"{pre}/q"]) for v in views]
    return T.softmax_row(T.concat_cols(scores) if len(scores) > 1 else scores[0])


def fuse_variant(views: Sequence[Tensor], params: Mapping[str, Tensor], cfg: ModelConfig,
                 target: str | None = None) -> Tensor:
    _check_views(views)
    if cfg.fusion == "concat":
        return T.concat_cols(views) if len(views) > 1 else views[0]
    if cfg.fusion == "mean":
        acc = views[0]
        for v in views[1:]:
            acc = T.add(acc, v)
        return T.scale(acc, 1.0 / len(views))
    if cfg.fusion == "attn":
        beta = attention_weights(views, params, target)
        acc = None
        for j, v in enumerate(views):
            term = T.hadamard(v, T.take_cols(beta, j, j + 1))
            acc = term if acc is None else T.add(acc, term)
        return acc
    raise ValueError(f"fuse_variant does not handle fusion {cfg.fusion!r}")


def fuse(views: Sequence[Tensor], view_names: Sequence[str], params: Mapping[str, Tensor],
         cfg: ModelConfig, target: str | None = None) -> FusionResult:
    if cfg.fusion == "auto":
        if cfg.use_autoencoders:
            return fuse_auto(views, view_names, params, cfg, target)
        return fuse_linear(views, params, cfg, target)
    return FusionResult(fuse_variant(views, params, cfg, target), _zero(), _zero(), _zero())


def decode_view(H: np.ndarray, j: int, params: Mapping[str, Tensor], cfg: ModelConfig,
                view_name: str, target: str | None = None) -> np.ndarray:
    """Reconstruct view j from the fused H through the supervised decoder
    block for j followed by view j's own decoder."""
    pre = _fusion_prefix("sae", target)
    lo, hi = j * cfg.d_view, (j + 1) * cfg.d_view
    z = np.maximum(H @ params[f"{pre}/W2"].data[:, lo:hi] + params[f"{pre}/b2"].data[:, lo:hi], 0.0)
    for m in range(cfg.ae_layers // 2 + 1, cfg.ae_layers + 1):
        z = np.maximum(z @ params[f"ae/{view_name}/{m}/W"].data + params[f"ae/{view_name}/{m}/b"].data, 0.0)
    return z


# ------------------------------------------------------------ heads


def classify(H: Tensor, W_C: Tensor) -> Tensor:
    if H.shape[1] != W_C.shape[1]:
        raise ShapeMismatch(f"classifier width {W_C.shape[1]} vs embedding width {H.shape[1]}")
    return T.matmul(H, T.transpose(W_C))


def pair_logits(H_u: Tensor, H_a: Tensor, pairs) -> Tensor:
    """n_pairs x 1 dot products h_u . h_a (differentiable)."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs[:, 0].min() < 0 or pairs[:, 0].max() >= H_u.shape[0]
                       or pairs[:, 1].min() < 0 or pairs[:, 1].max() >= H_a.shape[0]):
        raise IndexOutOfRange("pair index out of range")
    return T.row_sums(T.hadamard(T.take_rows(H_u, pairs[:, 0]), T.take_rows(H_a, pairs[:, 1])))


def score_links(H_u, H_a, pairs) -> np.ndarray:
    """sigmoid(h_u . h_a) per pair."""
    hu = H_u.data if isinstance(H_u, Tensor) else np.asarray(H_u, dtype=float)
    ha = H_a.data if isinstance(H_a, Tensor) else np.asarray(H_a, dtype=float)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs[:, 0].min() < 0 or pairs[:, 0].max() >= hu.shape[0]
                       or pairs[:, 1].min() < 0 or pairs[:, 1].max() >= ha.shape[0]):
        raise IndexOutOfRange("pair index out of range")
    dots = np.einsum("ij,ij->i", hu[pairs[:, 0]], ha[pairs[:, 1]])
    return T._sigmoid(dots)


# ------------------------------------------------------------ model


@dataclass
class ForwardResult:
    embeddings: dict[int, Tensor]
    view_embeddings: dict[int, list[Tensor]]
    fusion: dict[int, FusionResult]
    intra: Tensor
    inter: Tensor
    ortho: Tensor
    logits: Tensor | None = None


class MVHetGNN:
    """Full model over one graph and a set of compiled views.

    Views are grouped by their target node type; one group for node
    classification, two (e.g. user and artist) for link prediction.
    """

    def __init__(self, g: HeteroGraph, plans: Sequence[ViewPlan], cfg: ModelConfig,
                 num_classes: int | None = None, seed: int = 0):
        if not plans:
            raise EmptyViewSet("model needs at least one view")
        names = [p.name for p in plans]
        if len(set(names)) != len(names):
            raise ValueError(f"view names must be unique, got {names}")
        self.graph = g
        self.cfg = cfg
        self.seed = seed
        self.views: dict[int, list[ViewPlan]] = {}
        for p in plans:
            self.views.setdefault(p.metapath.target_type, []).append(p)
        if num_classes is not None and len(self.views) != 1:
            raise ValueError("classification needs views with a single target type")
        self.num_classes = num_classes
        self.params = init_params(g, self.views, cfg, num_classes, seed)
        self._types = sorted({t for p in plans for t in p.metapath.node_types})

    @property
    def targets(self) -> list[int]:
        return list(self.views)

    def target_tag(self, t: int) -> str | None:
        return self.graph.schema.type_name(t) if len(self.views) > 1 else None

    def forward(self, training: bool = False, epoch: int = 0, dropout_seed: int | None = None) -> ForwardResult:
        g, cfg = self.graph, self.cfg
        seed = self.seed if dropout_seed is None else dropout_seed
        hp = feature_transform(g, self.params, self._types)
        embeddings, view_embs, fusions = {}, {}, {}
        intra, inter, ortho = _zero(), _zero(), _zero()
        view_index = 0
        for t, plans in self.views.items():
            hs = []
            for p in plans:
                vi = view_index

                def rng_for_level(level, vi=vi):
                    return T.keyed_rng(seed, epoch, vi, level)

                hs.append(encode_view(g, p, hp, self.params, cfg, training, rng_for_level))
                view_index += 1
            res = fuse(hs, [p.name for p in plans], self.params, cfg, self.target_tag(t))
            embeddings[t], view_embs[t], fusions[t] = res.H, hs, res
            intra, inter, ortho = T.add(intra, res.intra), T.add(inter, res.inter), T.add(ortho, res.ortho)
        logits = None
        if self.num_classes is not None:
            (t,) = self.views
            logits = classify(embeddings[t], self.params["clf/W_C"])
        return ForwardResult(embeddings, view_embs, fusions, intra, inter, ortho, logits)

    def embed(self) -> dict[int, np.ndarray]:
        with T.no_grad():
            out = self.forward(training=False)
        return {t: h.data.copy() for t, h in out.embeddings.items()}

    # -------------------------------------------------------- checkpoints

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, arrays: Mapping[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise CheckpointShapeMismatch(
                f"checkpoint parameters differ: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in self.params.items():
            a = np.asarray(arrays[k], dtype=np.float64)
            if a.shape != p.shape:
                raise CheckpointShapeMismatch(f"{k}: checkpoint shape {a.shape}, model expects {p.shape}")
        for k, p in self.params.items():
            p.data = np.array(arrays[k], dtype=np.float64)


def save_checkpoint(path: str | Path, params: Mapping[str, np.ndarray | Tensor],
                    meta: Mapping | None = None) -> None:
    """JSON map name -> {shape, row-major data}; floats round-trip exactly."""
    body = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": dict(meta or {}),
        "params": {},
    }
    for k, v in params.items():
        a = v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)
        body["params"][k] = {"shape": list(a.shape), "data": [float(x) for x in a.reshape(-1)]}
    Path(path).write_text(json.dumps(body, indent=1, sort_keys=False) + "\n")


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    body = json.loads(Path(path).read_text())
    if body.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointShapeMismatch(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if body.get("version") != CHECKPOINT_VERSION:
        raise CheckpointShapeMismatch(f"unsupported checkpoint version {body.get('version')}")
    arrays = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
              for k, v in body["params"].items()}
    return arrays, body.get("meta", {})


def model_config_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)
