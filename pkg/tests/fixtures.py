"""Graph fixtures and numeric oracles shared by the test modules."""

from __future__ import annotations

import numpy as np

from mvhet.hetgraph import Schema, build_graph
from mvhet.ingest import SyntheticRelation, SyntheticSpec, generate_synthetic, split_links, split_nodes
from mvhet.model import ModelConfig
from mvhet.views import compile_view, parse_metapath

# bibliographic three-class fixture: 600 authors, three metapath views
DBLP_PATHS = {
    "APA": "author -write-> paper -written_by-> author",
    "APTPA": "author -write-> paper -has_term-> term -term_of-> paper -written_by-> author",
    "APVPA": "author -write-> paper -published_in-> venue -publishes-> paper -written_by-> author",
}
FIXTURE_MODEL = dict(d_feat=32, d_view=16, d_out=16)


def dblp_spec(noise: float = 1.0) -> SyntheticSpec:
    return SyntheticSpec(
        node_counts={"author": 600, "paper": 600, "term": 200, "venue": 60},
        relations=[SyntheticRelation("write", "author", "paper", "written_by"),
                   SyntheticRelation("has_term", "paper", "term", "term_of"),
                   SyntheticRelation("published_in", "paper", "venue", "publishes")],
        num_classes=3, p_intra=0.05, p_inter=0.005,
        feature_dims={"author": 16, "paper": 16, "term": 16, "venue": 16}, noise=noise)


def dblp_fixture(seed: int = 0, noise: float = 1.0):
    """(graph, author classes, plans, node split)."""
    g, cls = generate_synthetic(dblp_spec(noise), seed)
    plans = [compile_view(g, parse_metapath(g.schema, p, n)) for n, p in DBLP_PATHS.items()]
    y = cls["author"]
    return g, y, plans, split_nodes(y, [0.2, 0.1, 0.7], seed)


def fixture_model(**kw) -> ModelConfig:
    return ModelConfig(**{**FIXTURE_MODEL, **kw})


# user-artist listening fixture with planted blocks and user friendships
LASTFM_PATHS = {
    "UU": "user -friend-> user",
    "UAU": "user -listen-> artist -listened_by-> user",
    "AUA": "artist -listened_by-> user -listen-> artist",
    "AUUA": "artist -listened_by-> user -friend-> user -listen-> artist",
}


def lastfm_spec() -> SyntheticSpec:
    return SyntheticSpec(
        node_counts={"user": 300, "artist": 300},
        relations=[SyntheticRelation("listen", "user", "artist", "listened_by"),
                   SyntheticRelation("friend", "user", "user", symmetric=True, p_intra=0.2, p_inter=0.001)],
        num_classes=6, p_intra=0.4, p_inter=0.002, feature_dims={"user": 10, "artist": 10})


def lastfm_fixture(seed: int = 0):
    """(training graph, plans, link split) with 20% of listen edges for training."""
    g, _ = generate_synthetic(lastfm_spec(), seed)
    tg, split = split_links(g, "listen", (0.2, 0.1, 0.7), seed)
    plans = [compile_view(tg, parse_metapath(tg.schema, p, n)) for n, p in LASTFM_PATHS.items()]
    return tg, plans, split


def toy_schema() -> Schema:
    s = Schema()
    s.add_node_type("author")
    s.add_node_type("paper")
    s.add_relation("write", "author", "paper", inverse="written_by")
    return s


def toy_graph(features: bool = True):
    """3 authors, 2 papers: a0 wrote p0 and p1, a1 wrote p0, a2 wrote p1."""
    s = toy_schema()
    rng = np.random.default_rng(3)
    feats = {"author": rng.standard_normal((3, 4)), "paper": rng.standard_normal((2, 5))} if features else None
    return build_graph(s, {"author": 3, "paper": 2}, {"write": [(0, 0), (0, 1), (1, 0), (2, 1)]}, feats)


def random_hetgraph(rng: np.random.Generator, max_nodes: int = 30, n_types: int = 3,
                    density: float = 0.25, feat_dim: int = 3):
    """Random typed graph with at most ``max_nodes`` nodes; every ordered
    pair of types is joined by one forward relation (plus its inverse)."""
    s = Schema()
    names = [f"t{i}" for i in range(n_types)]
    for n in names:
        s.add_node_type(n)
    counts = rng.multinomial(max_nodes - n_types, np.ones(n_types) / n_types) + 1
    edges = {}
    for i in range(n_types):
        for j in range(n_types):
            if i == j:
                s.add_relation(f"r{i}{j}", names[i], names[j], symmetric=True)
            else:
                if j < i:
                    continue
                s.add_relation(f"r{i}{j}", names[i], names[j], inverse=f"r{j}{i}")
            mask = rng.random((counts[i], counts[j])) < density
            pairs = np.argwhere(mask)
            if i == j:
                pairs = pairs[pairs[:, 0] < pairs[:, 1]]
            edges[f"r{i}{j}"] = pairs
    feats = {n: rng.standard_normal((int(c), feat_dim)) for n, c in zip(names, counts)}
    return build_graph(s, dict(zip(names, counts.tolist())), edges, feats)


def random_relation_chain(rng: np.random.Generator, g, length: int) -> list[int]:
    t = int(rng.integers(len(g.schema.node_types)))
    chain = []
    for _ in range(length):
        options = [r.id for r in g.schema.relations if r.src_type == t]
        r = int(rng.choice(options))
        chain.append(r)
        t = g.schema.relations[r].dst_type
    return chain


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` w.r.t. every entry of ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


# brute-force metric oracles

def auc_bruteforce(scores, labels) -> float:
    s = np.asarray(scores, float)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def ap_bruteforce(scores, labels) -> float:
    """Mean over positives of precision at the positive's score threshold
    (all items scoring >= it are retrieved)."""
    s = np.asarray(scores, float)
    y = np.asarray(labels).astype(bool)
    total = 0.0
    for t in np.unique(s[y]):
        sel = s >= t
        prec = y[sel].sum() / sel.sum()
        total += prec * np.sum(y & (s == t))
    return total / y.sum()


def _contingency(a, b) -> np.ndarray:
    ua, ia = np.unique(a, return_inverse=True)
    ub, ib = np.unique(b, return_inverse=True)
    m = np.zeros((ua.size, ub.size))
    for x, y in zip(ia, ib):
        m[x, y] += 1
    return m


def nmi_bruteforce(a, b) -> float:
    m = _contingency(a, b)
    n = m.sum()
    pa, pb, pab = m.sum(1) / n, m.sum(0) / n, m / n
    mi = sum(pab[i, j] * np.log(pab[i, j] / (pa[i] * pb[j]))
             for i in range(m.shape[0]) for j in range(m.shape[1]) if pab[i, j] > 0)
    ha = -sum(p * np.log(p) for p in pa if p > 0)
    hb = -sum(p * np.log(p) for p in pb if p > 0)
    if ha == 0 and hb == 0:
        return 1.0
    return mi / ((ha + hb) / 2)


def ari_bruteforce(a, b) -> float:
    def c2(x):
        return x * (x - 1) / 2

    m = _contingency(a, b)
    n = m.sum()
    s_ij = sum(c2(v) for v in m.ravel())
    s_a = sum(c2(v) for v in m.sum(1))
    s_b = sum(c2(v) for v in m.sum(0))
    exp = s_a * s_b / c2(n)
    mx = (s_a + s_b) / 2
    if mx == exp:
        return 1.0
    return (s_ij - exp) / (mx - exp)
