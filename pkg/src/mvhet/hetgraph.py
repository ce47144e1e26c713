"""Typed heterogeneous graph: node types with dense features, relation-typed
CSR adjacency with inverse pairing, optional per-type labels."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (EndpointOutOfRange, FeatureShapeMismatch, MissingInversePair,
                     UnknownType)

UNLABELED = -1


class Direction(enum.Enum):
    FORWARD = "forward"
    INVERSE = "inverse"


@dataclass(frozen=True)
class NodeType:
    id: int
    name: str


@dataclass(frozen=True)
class RelationSpec:
    id: int
    name: str
    src_type: int
    dst_type: int
    direction: Direction
    inverse_of: int


@dataclass
class Schema:
    """Registry of node types and relations.

    ``add_relation`` declares a forward relation together with its inverse;
    symmetric self-loop relations (e.g. user-user friendship) are their own
    inverse and are filed under the forward set.
    """

    node_types: list[NodeType] = field(default_factory=list)
    relations: list[RelationSpec] = field(default_factory=list)

    def add_node_type(self, name: str) -> int:
        if any(t.name == name for t in self.node_types):
            raise ValueError(f"duplicate node type {name!r}")
        self.node_types.append(NodeType(len(self.node_types), name))
        return len(self.node_types) - 1

    def add_relation(self, name: str, src: str | int, dst: str | int,
                     inverse: str | None = None, symmetric: bool = False) -> int:
        s, d = self.type_id(src), self.type_id(dst)
        names = {r.name for r in self.relations}
        if name in names:
            raise ValueError(f"duplicate relation {name!r}")
        rid = len(self.relations)
        if symmetric:
            if s != d:
                raise ValueError(f"symmetric relation {name!r} must join a type to itself")
            self.relations.append(RelationSpec(rid, name, s, d, Direction.FORWARD, rid))
            return rid
        inverse = inverse or f"rev_{name}"
        if inverse in names or inverse == name:
            raise ValueError(f"duplicate relation {inverse!r}")
        self.relations.append(RelationSpec(rid, name, s, d, Direction.FORWARD, rid + 1))
        self.relations.append(RelationSpec(rid + 1, inverse, d, s, Direction.INVERSE, rid))
        return rid

    def type_id(self, t: str | int) -> int:
        if isinstance(t, (int, np.integer)):
            if 0 <= t < len(self.node_types):
                return int(t)
            raise UnknownType(f"node type id {t}")
        for nt in self.node_types:
            if nt.name == t:
                return nt.id
        raise UnknownType(f"node type {t!r}")

    def relation_id(self, r: str | int) -> int:
        if isinstance(r, (int, np.integer)):
            if 0 <= r < len(self.relations):
                return int(r)
            raise UnknownType(f"relation id {r}")
        for rel in self.relations:
            if rel.name == r:
                return rel.id
        raise UnknownType(f"relation {r!r}")

    def relation(self, r: str | int) -> RelationSpec:
        return self.relations[self.relation_id(r)]

    def type_name(self, t: int) -> str:
        return self.node_types[t].name

    def inverse(self, r: str | int) -> RelationSpec:
        return self.relations[self.relation(r).inverse_of]


@dataclass(frozen=True, eq=False)
class HeteroGraph:
    schema: Schema
    num_nodes: tuple[int, ...]
    features: tuple[np.ndarray, ...]
    adjacency: tuple[sp.csr_matrix, ...]
    labels: tuple[np.ndarray | None, ...]
    node_ids: tuple[tuple[str, ...], ...]

    def type_id(self, t: str | int) -> int:
        return self.schema.type_id(t)

    def relation_id(self, r: str | int) -> int:
        return self.schema.relation_id(r)

    def count(self, t: str | int) -> int:
        return self.num_nodes[self.type_id(t)]

    def feature(self, t: str | int) -> np.ndarray:
        return self.features[self.type_id(t)]

    def label(self, t: str | int) -> np.ndarray | None:
        return self.labels[self.type_id(t)]

    def adj(self, r: str | int) -> sp.csr_matrix:
        """CSR from src-type rows to dst-type columns."""
        return self.adjacency[self.relation_id(r)]

    def edges(self, r: str | int) -> np.ndarray:
        """(n_edges, 2) array of (src, dst) index pairs in row-major order."""
        a = self.adj(r)
        src = np.repeat(np.arange(a.shape[0]), np.diff(a.indptr))
        return np.column_stack([src, a.indices]).astype(np.int64)

    def num_edges(self, r: str | int) -> int:
        return int(self.adj(r).nnz)


def _csr_from_pairs(pairs: np.ndarray, shape: tuple[int, int]) -> sp.csr_matrix:
    if pairs.size == 0:
        return sp.csr_matrix(shape, dtype=np.float64)
    m = sp.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=shape).tocsr()
    m.sum_duplicates()
    m.data[:] = 1.0  # duplicate edges collapse to one
    m.sort_indices()
    return m


def build_graph(schema: Schema,
                num_nodes: Mapping[str, int] | Sequence[int],
                edges: Mapping[str, object],
                features: Mapping[str, np.ndarray] | None = None,
                labels: Mapping[str, Sequence[int]] | None = None,
                node_ids: Mapping[str, Sequence[str]] | None = None,
                materialize_inverse: bool = True) -> HeteroGraph:
    """Validate declarations and assemble an immutable graph.

    ``edges`` maps relation names to (src, dst) pair lists. Inverse edges are
    filled in from the forward direction unless ``materialize_inverse`` is
    off, in which case every pair must already be present in both directions.
    Types without features get an identity (one-hot) matrix.
    """
    features = dict(features or {})
    labels = dict(labels or {})
    node_ids = dict(node_ids or {})
    ntypes = len(schema.node_types)

    if isinstance(num_nodes, Mapping):
        counts = [0] * ntypes
        for t, n in num_nodes.items():
            counts[schema.type_id(t)] = int(n)
    else:
        counts = [int(n) for n in num_nodes]
        if len(counts) != ntypes:
            raise UnknownType(f"{len(counts)} node counts for {ntypes} types")

    for key in list(features) + list(labels) + list(node_ids):
        schema.type_id(key)

    pairs: dict[int, np.ndarray] = {}
    for rname, plist in edges.items():
        rel = schema.relation(rname)
        arr = np.asarray(plist, dtype=np.int64).reshape(-1, 2)
        ns, nd = counts[rel.src_type], counts[rel.dst_type]
        bad = (arr[:, 0] < 0) | (arr[:, 0] >= ns) | (arr[:, 1] < 0) | (arr[:, 1] >= nd)
        if bad.any():
            u, v = arr[np.argmax(bad)]
            raise EndpointOutOfRange(
                f"edge ({u}, {v}) out of range for relation {rel.name!r} "
                f"({schema.type_name(rel.src_type)}:{ns} -> {schema.type_name(rel.dst_type)}:{nd})")
        pairs[rel.id] = np.vstack([pairs[rel.id], arr]) if rel.id in pairs else arr

    adjacency: list[sp.csr_matrix] = []
    for rel in schema.relations:
        shape = (counts[rel.src_type], counts[rel.dst_type])
        own = pairs.get(rel.id, np.zeros((0, 2), np.int64))
        mirrored = pairs.get(rel.inverse_of, np.zeros((0, 2), np.int64))[:, ::-1]
        if materialize_inverse:
            adjacency.append(_csr_from_pairs(np.vstack([own, mirrored]), shape))
        else:
            a, b = _csr_from_pairs(own, shape), _csr_from_pairs(mirrored, shape)
            if (a != b).nnz:
                raise MissingInversePair(
                    f"relation {rel.name!r} and its inverse "
                    f"{schema.relations[rel.inverse_of].name!r} disagree")
            adjacency.append(a)

    feats: list[np.ndarray] = []
    for t in schema.node_types:
        if t.name in features:
            x = np.asarray(features[t.name], dtype=np.float64)
            if x.ndim != 2 or x.shape[0] != counts[t.id]:
                raise FeatureShapeMismatch(
                    f"features of {t.name!r} have shape {x.shape}, expected ({counts[t.id]}, d)")
            feats.append(x)
        else:
            feats.append(np.eye(counts[t.id]))

    labs: list[np.ndarray | None] = []
    for t in schema.node_types:
        if t.name in labels:
            y = np.asarray(labels[t.name], dtype=np.int64).reshape(-1)
            if y.shape[0] != counts[t.id]:
                raise FeatureShapeMismatch(f"{y.shape[0]} labels for {counts[t.id]} {t.name!r} nodes")
            labs.append(y)
        else:
            labs.append(None)

    ids: list[tuple[str, ...]] = []
    for t in schema.node_types:
        if t.name in node_ids:
            got = tuple(str(s) for s in node_ids[t.name])
            if len(got) != counts[t.id]:
                raise FeatureShapeMismatch(f"{len(got)} ids for {counts[t.id]} {t.name!r} nodes")
            ids.append(got)
        else:
            ids.append(tuple(str(i) for i in range(counts[t.id])))

    for x in feats:
        x.setflags(write=False)
    return HeteroGraph(schema, tuple(counts), tuple(feats), tuple(adjacency), tuple(labs), tuple(ids))


def neighbors(g: HeteroGraph, r: str | int, node: int) -> list[int]:
    """Sorted destination indices of ``node`` under relation ``r``."""
    a = g.adj(r)
    if not 0 <= node < a.shape[0]:
        raise EndpointOutOfRange(f"node {node} out of range for relation {g.schema.relation(r).name!r}")
    return a.indices[a.indptr[node]:a.indptr[node + 1]].tolist()


def degree_matrixless_norms(g: HeteroGraph, r: str | int) -> np.ndarray:
    """In-degree of every destination node under ``r``."""
    a = g.adj(r)
    return np.bincount(a.indices, minlength=a.shape[1]).astype(np.float64)


def in_adjacency(g: HeteroGraph, r: str | int) -> sp.csr_matrix:
    """Rows are destination nodes of ``r``, columns their in-neighbors."""
    m = g.adj(r).T.tocsr()
    m.sort_indices()
    return m
