"""Metapaths, compiled level-wise propagation plans, and a per-node ego
graph extractor used as an independent reference."""

from __future__ import annotations

import enum
import hashlib
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import TypeChainBroken, TypeMismatch, UnknownRelation, UnknownType
from .hetgraph import Direction, HeteroGraph, Schema, degree_matrixless_norms, in_adjacency


@dataclass(frozen=True)
class Metapath:
    name: str
    node_types: tuple[int, ...]
    relations: tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.relations)

    @property
    def target_type(self) -> int:
        return self.node_types[-1]


def validate_metapath(schema: Schema, relations: Sequence[str | int],
                      node_types: Sequence[str | int] | None = None,
                      name: str | None = None) -> Metapath:
    """Check a relation chain (and optionally the declared type chain).

    Levels are 1-based node positions: a mismatch between relation ``i``'s
    source and the type reached at position ``i`` is reported as level ``i``.
    """
    if not relations:
        raise TypeChainBroken(1, "a metapath needs at least one relation")
    rels = []
    for r in relations:
        try:
            rels.append(schema.relation(r))
        except UnknownType as exc:
            raise UnknownRelation(str(exc)) from None
    types = [rels[0].src_type]
    for i, rel in enumerate(rels, start=1):
        if rel.src_type != types[-1]:
            raise TypeChainBroken(i, f"relation {rel.name!r} starts at "
                                     f"{schema.type_name(rel.src_type)!r}, path is at "
                                     f"{schema.type_name(types[-1])!r}")
        types.append(rel.dst_type)
    if node_types is not None:
        if len(node_types) != len(rels) + 1:
            raise TypeChainBroken(min(len(node_types), len(rels) + 1) + 1,
                                  f"{len(node_types)} types for {len(rels)} relations")
        for i, t in enumerate(node_types, start=1):
            if schema.type_id(t) != types[i - 1]:
                raise TypeChainBroken(i, f"declared {t!r}, relation chain gives "
                                         f"{schema.type_name(types[i - 1])!r}")
    if name is None:
        name = "".join(schema.type_name(t)[0].upper() for t in types)
    return Metapath(name, tuple(types), tuple(r.id for r in rels))


_ARROW = re.compile(r"-\s*([^\s>]+?)\s*->")


def parse_metapath(schema: Schema, text: str, name: str | None = None) -> Metapath:
    """Parse ``"A -write-> P -written_by-> A"`` style chains."""
    rels = _ARROW.findall(text)
    types = [t.strip() for t in _ARROW.split(text)[::2]]
    if not rels or any(not t for t in types):
        raise TypeChainBroken(1, f"cannot parse metapath {text!r}")
    return validate_metapath(schema, rels, types, name)


@dataclass(frozen=True, eq=False)
class PlanLevel:
    relation: int  # relation between this level and the one below
    direction: Direction
    src_type: int  # type at level l-1
    dst_type: int  # type at level l
    adjacency: sp.csr_matrix  # rows: level-l nodes, cols: level-(l-1) nodes
    norms: np.ndarray  # in-degree per level-l node


@dataclass(frozen=True, eq=False)
class ViewPlan:
    metapath: Metapath
    levels: tuple[PlanLevel, ...]  # levels 2..K

    @property
    def depth(self) -> int:
        return len(self.levels)

    @property
    def name(self) -> str:
        return self.metapath.name

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(repr((self.metapath.node_types, self.metapath.relations)).encode())
        for lv in self.levels:
            a = lv.adjacency
            for arr in (a.indptr, a.indices, a.data, lv.norms):
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def compile_view(g: HeteroGraph, p: Metapath) -> ViewPlan:
    levels = []
    for rid in p.relations:
        rel = g.schema.relations[rid]
        levels.append(PlanLevel(rid, rel.direction, rel.src_type, rel.dst_type,
                                in_adjacency(g, rid), degree_matrixless_norms(g, rid)))
    return ViewPlan(p, tuple(levels))


class Semantics(enum.Enum):
    RELAXED = "relaxed"
    STRICT = "strict"


@dataclass(frozen=True)
class EgoGraph:
    target: int
    levels: tuple[tuple[int, ...], ...]  # level 1 (bottom) .. K (= (target,))
    edges: tuple[tuple[tuple[int, int], ...], ...]  # edges[l-2]: (child at l-1, parent at l)

    @property
    def num_nodes(self) -> int:
        return sum(len(lv) for lv in self.levels)


def extract_ego_oracle(g: HeteroGraph, p: Metapath, v: int,
                       semantics: Semantics = Semantics.RELAXED) -> EgoGraph:
    """Build the metapath ego graph of ``v`` by explicit traversal."""
    if not 0 <= v < g.num_nodes[p.target_type]:
        raise TypeMismatch(f"node {v} is not a valid {g.schema.type_name(p.target_type)!r} index")
    K = len(p.node_types)
    levels: list[list[int]] = [[] for _ in range(K)]
    edges: list[list[tuple[int, int]]] = [[] for _ in range(K - 1)]
    levels[K - 1] = [v]
    for l in range(K - 1, 0, -1):  # 0-based level index of the parents
        rel = p.relations[l - 1]
        a = g.adj(rel)  # src (level l-1) -> dst (level l)
        parents = set(levels[l])
        below: set[int] = set()
        for child in range(a.shape[0]):
            for parent in a.indices[a.indptr[child]:a.indptr[child + 1]]:
                if parent in parents:
                    below.add(child)
                    edges[l - 1].append((child, int(parent)))
        levels[l - 1] = sorted(below)

    if semantics is Semantics.STRICT:
        # nodes completed by some full instance starting at level 1
        ok = [set(range(g.num_nodes[p.node_types[0]]))]
        for l in range(1, K):
            a = g.adj(p.relations[l - 1])
            reach = set()
            for child in ok[-1]:
                reach.update(int(x) for x in a.indices[a.indptr[child]:a.indptr[child + 1]])
            ok.append(reach)
        keep = [set(levels[l]) & ok[l] for l in range(K)]
        if v not in keep[K - 1]:
            keep = [set() for _ in range(K - 1)] + [{v}]
        # drop nodes that no longer reach the target going upward
        for l in range(K - 2, -1, -1):
            ups = {c for c, par in edges[l] if par in keep[l + 1]}
            keep[l] &= ups
        edges = [[(c, par) for c, par in edges[l] if c in keep[l] and par in keep[l + 1]]
                 for l in range(K - 1)]
        levels = [sorted(k) for k in keep]

    return EgoGraph(v, tuple(tuple(lv) for lv in levels),
                    tuple(tuple(sorted(e)) for e in edges))
