"""Dataset I/O (TSV + TOML manifest), planted-partition synthetic graphs,
and node / link split management.

On-disk layout (UTF-8, tab separated, ``#`` lines are comments)::

    manifest.toml
    <type>.tsv        id [feature columns...]
    <relation>.tsv    src_id  dst_id
    labels.tsv        id  class
    <bow>.tsv         id  feature_index  value     (bag-of-words encoding)
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyPositives, ManifestInvalid, ParseError, SpecInvalid
from .hetgraph import UNLABELED, Direction, HeteroGraph, Schema, build_graph

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ENCODINGS = ("dense", "onehot", "bow")


# -------------------------------------------------------------------- splits


@dataclass
class NodeSplit:
    """Sorted node indices of the target type per split."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def to_bytes(self) -> bytes:
        return b"|".join(a.astype(np.int64).tobytes() for a in (self.train, self.val, self.test))


SplitAssignment = NodeSplit


@dataclass
class LinkSplit:
    """Positive pairs are (row of ``src_type``, row of ``dst_type``)."""

    src_type: int
    dst_type: int
    train_pos: np.ndarray
    val_pos: np.ndarray
    val_neg: np.ndarray
    test_pos: np.ndarray
    test_neg: np.ndarray
    known: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))  # codes of all positives


def sample_negatives(num_src: int, num_dst: int, k: int, rng: np.random.Generator,
                     known: np.ndarray) -> np.ndarray:
    """k pairs drawn uniformly, with replacement, from pairs whose code
    (src * num_dst + dst) is not in the sorted array ``known``."""
    total = num_src * num_dst
    if k > 0 and total - known.size <= 0:
        raise EmptyPositives("every pair is observed; no negatives to sample")
    out = np.zeros(0, np.int64)
    while out.size < k:
        draw = rng.integers(0, total, size=2 * (k - out.size) + 8)
        pos = np.searchsorted(known, draw)
        hit = (pos < known.size) & (known[np.minimum(pos, known.size - 1)] == draw)
        out = np.concatenate([out, draw[~hit]])
    out = out[:k]
    return np.column_stack([out // num_dst, out % num_dst])


def pair_codes(pairs: np.ndarray, num_dst: int) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return np.unique(pairs[:, 0] * num_dst + pairs[:, 1])


# ------------------------------------------------------------------ manifest


@dataclass
class NodeFile:
    type: str
    file: str | None = None
    encoding: str = "dense"
    features_file: str | None = None
    dim: int | None = None


@dataclass
class RelationFile:
    name: str
    src: str
    dst: str
    file: str
    inverse: str | None = None
    symmetric: bool = False


@dataclass
class DatasetManifest:
    root: Path
    nodes: list[NodeFile]
    relations: list[RelationFile]
    label_type: str | None = None
    label_file: str | None = None
    split: dict = field(default_factory=lambda: {"train": 0.1, "val": 0.1, "test": 0.8})
    seed: int = 0
    name: str = "dataset"

    @classmethod
    def from_file(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ManifestInvalid(f"{path}: {exc}") from None
        return cls.from_dict(raw, path.parent)

    @classmethod
    def from_dict(cls, raw: Mapping, base: Path) -> "DatasetManifest":
        known = {"name", "seed", "root", "node_types", "relations", "labels", "split"}
        extra = set(raw) - known
        if extra:
            raise ManifestInvalid(f"unknown manifest keys: {sorted(extra)}")
        try:
            nodes = [NodeFile(type=t, **(spec or {})) for t, spec in raw.get("node_types", {}).items()]
            rels = [RelationFile(**r) for r in raw.get("relations", [])]
        except TypeError as exc:
            raise ManifestInvalid(str(exc)) from None
        labels = raw.get("labels", {})
        m = cls(root=(base / raw.get("root", ".")).resolve(), nodes=nodes, relations=rels,
                label_type=labels.get("type"), label_file=labels.get("file"),
                split=dict(raw.get("split", {"train": 0.1, "val": 0.1, "test": 0.8})),
                seed=int(raw.get("seed", 0)), name=str(raw.get("name", "dataset")))
        m.validate()
        return m

    def validate(self) -> None:
        types = [n.type for n in self.nodes]
        if len(set(types)) != len(types):
            raise ManifestInvalid("duplicate node types")
        for n in self.nodes:
            if n.encoding not in ENCODINGS:
                raise ManifestInvalid(f"node type {n.type!r}: unknown encoding {n.encoding!r}")
            if n.encoding == "dense" and not n.file:
                raise ManifestInvalid(f"node type {n.type!r}: dense features need a node file")
            if n.encoding == "bow" and (not n.features_file or not n.dim):
                raise ManifestInvalid(f"node type {n.type!r}: bow needs features_file and dim")
            for f in (n.file, n.features_file):
                if f and not (self.root / f).is_file():
                    raise ManifestInvalid(f"missing file {self.root / f}")
        for r in self.relations:
            if r.src not in types or r.dst not in types:
                raise ManifestInvalid(f"relation {r.name!r} references an undeclared type")
            if not (self.root / r.file).is_file():
                raise ManifestInvalid(f"missing file {self.root / r.file}")
        if self.label_file:
            if self.label_type not in types:
                raise ManifestInvalid(f"label type {self.label_type!r} is not declared")
            if not (self.root / self.label_file).is_file():
                raise ManifestInvalid(f"missing file {self.root / self.label_file}")
        s = self.split
        if {"train", "val", "test"} <= set(s):
            fr = [float(s[k]) for k in ("train", "val", "test")]
            if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
                raise ManifestInvalid(f"split fractions must be >= 0 and sum to 1, got {fr}")
        elif not {"train_ids", "val_ids", "test_ids"} <= set(s):
            raise ManifestInvalid("split needs train/val/test fractions or train_ids/val_ids/test_ids files")


def _rows(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            yield lineno, line.split("\t")


def _float(path, lineno, col, text) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(path, lineno, col, f"not a number: {text!r}") from None


def split_nodes(labels: np.ndarray, fractions: Sequence[float], seed: int) -> SplitAssignment:
    """Shuffle labeled nodes with ``seed`` and cut by fractions."""
    labeled = np.flatnonzero(np.asarray(labels) != UNLABELED)
    order = np.random.default_rng(seed).permutation(labeled)
    n = order.size
    n_tr = int(round(fractions[0] * n))
    n_va = min(int(round(fractions[1] * n)), n - n_tr)
    return SplitAssignment(np.sort(order[:n_tr]), np.sort(order[n_tr:n_tr + n_va]),
                           np.sort(order[n_tr + n_va:]))


def load_dataset(manifest: DatasetManifest | str | Path) -> tuple[HeteroGraph, SplitAssignment | None]:
    m = manifest if isinstance(manifest, DatasetManifest) else DatasetManifest.from_file(manifest)
    schema = Schema()
    for n in m.nodes:
        schema.add_node_type(n.type)
    ids: dict[str, dict[str, int]] = {n.type: {} for n in m.nodes}
    feats: dict[str, np.ndarray] = {}

    for n in m.nodes:
        if not n.file:
            continue
        path = m.root / n.file
        rows = []
        for lineno, cols in _rows(path):
            if cols[0] in ids[n.type]:
                raise ParseError(path, lineno, 1, f"duplicate id {cols[0]!r}")
            ids[n.type][cols[0]] = len(ids[n.type])
            if n.encoding == "dense":
                rows.append([_float(path, lineno, c, v) for c, v in enumerate(cols[1:], start=2)])
        if n.encoding == "dense":
            widths = {len(r) for r in rows}
            if len(widths) > 1:
                raise ParseError(path, 0, 0, f"ragged feature rows: widths {sorted(widths)}")
            feats[n.type] = np.array(rows, dtype=np.float64).reshape(len(rows), -1)

    for r in m.relations:
        if r.symmetric:
            schema.add_relation(r.name, r.src, r.dst, symmetric=True)
        else:
            schema.add_relation(r.name, r.src, r.dst, inverse=r.inverse)

    edges = {}
    for r in m.relations:
        path = m.root / r.file
        pairs = []
        for lineno, cols in _rows(path):
            if len(cols) < 2:
                raise ParseError(path, lineno, 2, "expected src_id<TAB>dst_id")
            idx = []
            for col, (t, key) in enumerate(((r.src, cols[0]), (r.dst, cols[1])), start=1):
                table = ids[t]
                if key not in table:
                    if next(nf for nf in m.nodes if nf.type == t).file:
                        raise ParseError(path, lineno, col, f"unknown {t} id {key!r}")
                    table[key] = len(table)
                idx.append(table[key])
            pairs.append(idx)
        edges[r.name] = np.array(pairs, dtype=np.int64).reshape(-1, 2)

    for n in m.nodes:
        if n.encoding == "bow":
            path = m.root / n.features_file
            x = np.zeros((len(ids[n.type]), int(n.dim)))
            for lineno, cols in _rows(path):
                if len(cols) < 3:
                    raise ParseError(path, lineno, len(cols) + 1, "expected id<TAB>index<TAB>value")
                if cols[0] not in ids[n.type]:
                    raise ParseError(path, lineno, 1, f"unknown {n.type} id {cols[0]!r}")
                j = int(_float(path, lineno, 2, cols[1]))
                if not 0 <= j < x.shape[1]:
                    raise ParseError(path, lineno, 2, f"feature index {j} outside [0, {x.shape[1]})")
                x[ids[n.type][cols[0]], j] = _float(path, lineno, 3, cols[2])
            feats[n.type] = x

    labels = {}
    split = None
    if m.label_file:
        path = m.root / m.label_file
        raw: dict[int, str] = {}
        for lineno, cols in _rows(path):
            if cols[0] not in ids[m.label_type]:
                raise ParseError(path, lineno, 1, f"unknown {m.label_type} id {cols[0]!r}")
            if len(cols) < 2:
                raise ParseError(path, lineno, 2, "expected id<TAB>class")
            raw[ids[m.label_type][cols[0]]] = cols[1]
        values = set(raw.values())
        numeric = all(c.isdigit() for c in values)
        classes = sorted(values, key=int) if numeric else sorted(values)
        cmap = {c: i for i, c in enumerate(classes)}
        y = np.full(len(ids[m.label_type]), UNLABELED, dtype=np.int64)
        for i, c in raw.items():
            y[i] = cmap[c]
        labels[m.label_type] = y

    counts = {t: len(ids[t]) for t in ids}
    node_ids = {t: list(ids[t]) for t in ids}
    g = build_graph(schema, counts, edges, feats, labels, node_ids)

    if m.label_file:
        s = m.split
        y = labels[m.label_type]
        if "train" in s:
            split = split_nodes(y, [float(s["train"]), float(s["val"]), float(s["test"])], m.seed)
        else:
            parts = []
            for key in ("train_ids", "val_ids", "test_ids"):
                path = m.root / s[key]
                got = []
                for lineno, cols in _rows(path):
                    if cols[0] not in ids[m.label_type]:
                        raise ParseError(path, lineno, 1, f"unknown id {cols[0]!r}")
                    got.append(ids[m.label_type][cols[0]])
                parts.append(np.array(sorted(got), dtype=np.int64))
            split = SplitAssignment(*parts)
    return g, split


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    raise TypeError(f"cannot write {type(v)} to TOML")


def write_dataset(g: HeteroGraph, root: str | Path, label_type: str | None = None,
                  split: Mapping | None = None, seed: int = 0, name: str = "dataset") -> Path:
    """Write ``g`` in the TSV layout; returns the manifest path.

    Dense features go into the node files; forward relations (and symmetric
    ones, upper triangle) go into edge files; inverses are rebuilt on load.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    schema = g.schema
    lines = [f"name = {_toml_value(name)}", f"seed = {int(seed)}", ""]
    split = dict(split or {"train": 0.1, "val": 0.1, "test": 0.8})
    lines.append("[split]")
    lines += [f"{k} = {_toml_value(v)}" for k, v in split.items()]
    lines.append("")
    if label_type is not None:
        lines += ["[labels]", f"type = {_toml_value(label_type)}", 'file = "labels.tsv"', ""]
    for t in schema.node_types:
        x = g.features[t.id]
        ids = g.node_ids[t.id]
        with open(root / f"{t.name}.tsv", "w", encoding="utf-8") as fh:
            fh.write("# id" + "".join(f"\tf{j}" for j in range(x.shape[1])) + "\n")
            for i, nid in enumerate(ids):
                fh.write(nid + "".join("\t" + repr(float(v)) for v in x[i]) + "\n")
        lines += [f"[node_types.{t.name}]", f'file = "{t.name}.tsv"', 'encoding = "dense"', ""]
    for rel in schema.relations:
        if rel.direction is not Direction.FORWARD:
            continue
        e = g.edges(rel.id)
        symmetric = rel.inverse_of == rel.id
        if symmetric:
            e = e[e[:, 0] <= e[:, 1]]
        sids, dids = g.node_ids[rel.src_type], g.node_ids[rel.dst_type]
        with open(root / f"{rel.name}.tsv", "w", encoding="utf-8") as fh:
            fh.write("# src\tdst\n")
            for u, v in e:
                fh.write(f"{sids[u]}\t{dids[v]}\n")
        lines += ["[[relations]]", f"name = {_toml_value(rel.name)}",
                  f"src = {_toml_value(schema.type_name(rel.src_type))}",
                  f"dst = {_toml_value(schema.type_name(rel.dst_type))}",
                  f'file = "{rel.name}.tsv"']
        if symmetric:
            lines.append("symmetric = true")
        else:
            lines.append(f"inverse = {_toml_value(schema.relations[rel.inverse_of].name)}")
        lines.append("")
    if label_type is not None:
        tid = schema.type_id(label_type)
        y = g.labels[tid]
        with open(root / "labels.tsv", "w", encoding="utf-8") as fh:
            fh.write("# id\tclass\n")
            for i, c in enumerate(y):
                if c != UNLABELED:
                    fh.write(f"{g.node_ids[tid][i]}\t{int(c)}\n")
    path = root / "manifest.toml"
    path.write_text("\n".join(lines), encoding="utf-8")
    return path


# ----------------------------------------------------------------- synthetic


@dataclass
class SyntheticRelation:
    name: str
    src: str
    dst: str
    inverse: str | None = None
    symmetric: bool = False
    p_intra: float | None = None  # per-relation overrides of the spec-wide probabilities
    p_inter: float | None = None


@dataclass
class SyntheticSpec:
    """Planted-partition heterogeneous graph.

    Every node of every type gets a class in [0, num_classes). A pair is
    linked with ``p_intra`` when classes agree, ``p_inter`` otherwise.
    Features are a class centroid plus Gaussian noise; a feature dim of 0
    means one-hot (identity) features.
    """

    node_counts: dict[str, int]
    relations: list[SyntheticRelation]
    num_classes: int = 3
    p_intra: float = 0.05
    p_inter: float = 0.005
    feature_dims: dict[str, int] = field(default_factory=dict)
    noise: float = 1.0
    centroid_scale: float = 1.0
    label_types: list[str] | None = None  # defaults to the first node type

    def validate(self) -> None:
        if self.num_classes < 2:
            raise SpecInvalid("num_classes must be >= 2")
        for p in (self.p_intra, self.p_inter):
            if not 0.0 <= p <= 1.0:
                raise SpecInvalid(f"edge probability {p} outside [0, 1]")
        if self.noise < 0:
            raise SpecInvalid("noise must be >= 0")
        if not self.node_counts or any(n < 1 for n in self.node_counts.values()):
            raise SpecInvalid("every node type needs a positive count")
        for r in self.relations:
            for p in (r.p_intra, r.p_inter):
                if p is not None and not 0.0 <= p <= 1.0:
                    raise SpecInvalid(f"relation {r.name!r}: edge probability {p} outside [0, 1]")
            if r.src not in self.node_counts or r.dst not in self.node_counts:
                raise SpecInvalid(f"relation {r.name!r} references an undeclared type")
            if r.symmetric and r.src != r.dst:
                raise SpecInvalid(f"symmetric relation {r.name!r} must join a type to itself")
        for t in list(self.feature_dims) + list(self.label_types or []):
            if t not in self.node_counts:
                raise SpecInvalid(f"unknown node type {t!r}")


def _sample_block_edges(cls_src: np.ndarray, cls_dst: np.ndarray, p_in: float, p_out: float,
                        C: int, rng: np.random.Generator) -> np.ndarray:
    out = []
    by_src = [np.flatnonzero(cls_src == c) for c in range(C)]
    by_dst = [np.flatnonzero(cls_dst == c) for c in range(C)]
    for a in range(C):
        for b in range(C):
            ns, nd = by_src[a].size, by_dst[b].size
            pairs = ns * nd
            if pairs == 0:
                continue
            k = rng.binomial(pairs, p_in if a == b else p_out)
            if k == 0:
                continue
            flat = rng.choice(pairs, size=k, replace=False)
            out.append(np.column_stack([by_src[a][flat // nd], by_dst[b][flat % nd]]))
    if not out:
        return np.zeros((0, 2), np.int64)
    e = np.vstack(out)
    return e[np.lexsort((e[:, 1], e[:, 0]))]


def generate_synthetic(spec: SyntheticSpec, seed: int) -> tuple[HeteroGraph, dict[str, np.ndarray]]:
    """Returns the graph and ground-truth classes for every node type."""
    spec.validate()
    rng = np.random.default_rng(seed)
    C = spec.num_classes
    schema = Schema()
    for t in spec.node_counts:
        schema.add_node_type(t)
    for r in spec.relations:
        schema.add_relation(r.name, r.src, r.dst, inverse=r.inverse, symmetric=r.symmetric)

    classes = {t: rng.permutation(np.arange(n) % C) for t, n in spec.node_counts.items()}
    feats = {}
    for t, n in spec.node_counts.items():
        d = int(spec.feature_dims.get(t, 0))
        if d <= 0:
            continue
        if d >= C:
            centroids = np.zeros((C, d))
            centroids[np.arange(C), np.arange(C)] = spec.centroid_scale
        else:
            centroids = spec.centroid_scale * rng.standard_normal((C, d))
        feats[t] = centroids[classes[t]] + spec.noise * rng.standard_normal((n, d))

    edges = {}
    for r in spec.relations:
        p_in = spec.p_intra if r.p_intra is None else r.p_intra
        p_out = spec.p_inter if r.p_inter is None else r.p_inter
        e = _sample_block_edges(classes[r.src], classes[r.dst], p_in, p_out, C, rng)
        if r.symmetric:
            e = e[e[:, 0] < e[:, 1]]
        edges[r.name] = e
    label_types = spec.label_types or [next(iter(spec.node_counts))]
    g = build_graph(schema, spec.node_counts, edges, feats, {t: classes[t] for t in label_types})
    return g, classes


def split_links(g: HeteroGraph, relation: str, fractions: Sequence[float] = (0.2, 0.1, 0.7),
                seed: int = 0) -> tuple[HeteroGraph, LinkSplit]:
    """Hold out edges of ``relation`` (and its inverse) for validation and
    test; each held-out set gets as many sampled unconnected pairs.

    Returns the graph restricted to training edges and the split.
    """
    rel = g.schema.relation(relation)
    if rel.direction is not Direction.FORWARD:
        raise SpecInvalid("hold out links on a forward relation")
    if fractions[0] <= 0 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise SpecInvalid(f"link fractions must be >= 0 and sum to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    pos = g.edges(rel.id)
    order = rng.permutation(pos.shape[0])
    n_tr = int(round(fractions[0] * pos.shape[0]))
    n_va = int(round(fractions[1] * pos.shape[0]))
    tr, va, te = (np.sort(order[:n_tr]), np.sort(order[n_tr:n_tr + n_va]), np.sort(order[n_tr + n_va:]))
    n_dst = g.num_nodes[rel.dst_type]
    known = pair_codes(pos, n_dst)
    neg = sample_negatives(g.num_nodes[rel.src_type], n_dst, va.size + te.size, rng, known)
    edges = {}
    for r in g.schema.relations:
        if r.direction is Direction.FORWARD and r.id != rel.id:
            edges[r.name] = g.edges(r.id)
    edges[rel.name] = pos[tr]
    features = {t.name: g.features[t.id] for t in g.schema.node_types}
    labels = {t.name: g.labels[t.id] for t in g.schema.node_types if g.labels[t.id] is not None}
    ids = {t.name: g.node_ids[t.id] for t in g.schema.node_types}
    train_graph = build_graph(g.schema, list(g.num_nodes), edges, features, labels, ids)
    split = LinkSplit(rel.src_type, rel.dst_type, pos[tr], pos[va], neg[:va.size], pos[te], neg[va.size:],
                      known=pair_codes(pos[tr], n_dst))
    return train_graph, split
