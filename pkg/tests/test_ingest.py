import numpy as np
import pytest

from mvhet.errors import EmptyPositives, ManifestInvalid, ParseError, SpecInvalid
from mvhet.evalkit import LinearSVM
from mvhet.ingest import (DatasetManifest, SyntheticRelation, SyntheticSpec, generate_synthetic,
                          load_dataset, sample_negatives, pair_codes, split_links, split_nodes,
                          write_dataset)

from fixtures import lastfm_spec, nmi_bruteforce


def _spec(**kw):
    base = dict(node_counts={"a": 40, "b": 30},
                relations=[SyntheticRelation("ab", "a", "b", "ba"), SyntheticRelation("aa", "a", "a", symmetric=True)],
                num_classes=3, p_intra=0.3, p_inter=0.03, feature_dims={"a": 4, "b": 2})
    base.update(kw)
    return SyntheticSpec(**base)


def _edge_sets(root):
    out = {}
    for f in sorted(root.glob("*.tsv")):
        lines = [l for l in f.read_text().splitlines() if l and not l.startswith("#")]
        out[f.name] = set(lines)
    return out


def test_round_trip_reproduces_edge_sets(tmp_path):
    g, _ = generate_synthetic(_spec(), 0)
    m1 = write_dataset(g, tmp_path / "one", label_type="a")
    g2, split = load_dataset(m1)
    write_dataset(g2, tmp_path / "two", label_type="a")
    assert _edge_sets(tmp_path / "one") == _edge_sets(tmp_path / "two")
    assert g2.num_nodes == g.num_nodes
    for r in g.schema.relations:
        assert (g.adj(r.id) != g2.adj(r.id)).nnz == 0
    for t in range(2):
        np.testing.assert_array_equal(g.features[t], g2.features[t])
    np.testing.assert_array_equal(g.label("a"), g2.label("a"))
    assert split is not None


def _write(root, files):
    root.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (root / name).write_text(text, encoding="utf-8")
    return root / "manifest.toml"


MANIFEST = """
name = "toy"
seed = 7
[split]
train = 0.5
val = 0.25
test = 0.25
[labels]
type = "author"
file = "labels.tsv"
[node_types.author]
file = "author.tsv"
[node_types.paper]
encoding = "onehot"
[[relations]]
name = "write"
src = "author"
dst = "paper"
file = "write.tsv"
inverse = "written_by"
"""


def _toy_files(author="a1\t0.5\t1\na2\t2\t3\na3\t1\t1\na4\t0\t0\n", write="a1\tp1\na2\tp1\na3\tp2\na4\tp3\n"):
    return {"manifest.toml": MANIFEST, "author.tsv": author, "write.tsv": write,
            "labels.tsv": "a1\t0\na2\t1\na3\t0\na4\t1\n"}


def test_string_ids_get_first_seen_indices(tmp_path):
    g, split = load_dataset(_write(tmp_path, _toy_files()))
    assert g.node_ids[0] == ("a1", "a2", "a3", "a4") and g.node_ids[1] == ("p1", "p2", "p3")
    np.testing.assert_array_equal(g.feature("paper"), np.eye(3))
    np.testing.assert_array_equal(g.feature("author")[0], [0.5, 1.0])
    assert sorted(np.concatenate([split.train, split.val, split.test]).tolist()) == [0, 1, 2, 3]


def test_parse_error_reports_line_and_column(tmp_path):
    with pytest.raises(ParseError) as ei:
        load_dataset(_write(tmp_path / "x", _toy_files(author="a1\t0.5\t1\na2\t2\tthree\n")))
    assert (ei.value.line, ei.value.column) == (2, 3)
    with pytest.raises(ParseError) as ei:
        load_dataset(_write(tmp_path / "y", _toy_files(write="# header\na1\tp1\nzz\tp2\n")))
    assert (ei.value.line, ei.value.column) == (3, 1)
    assert "write.tsv:3:1" in str(ei.value)


def test_manifest_validation(tmp_path):
    files = _toy_files()
    files["manifest.toml"] = MANIFEST.replace("train = 0.5", "train = 0.6")
    with pytest.raises(ManifestInvalid):
        load_dataset(_write(tmp_path / "a", files))
    files = _toy_files()
    del files["write.tsv"]
    with pytest.raises(ManifestInvalid):
        load_dataset(_write(tmp_path / "b", files))
    files = _toy_files()
    files["manifest.toml"] = MANIFEST + "\nbogus = 1\n"
    with pytest.raises(ManifestInvalid):
        load_dataset(_write(tmp_path / "c", files))
    files = _toy_files()
    files["manifest.toml"] = MANIFEST.replace('encoding = "onehot"', 'encoding = "sparse"')
    with pytest.raises(ManifestInvalid):
        load_dataset(_write(tmp_path / "d", files))


def test_bag_of_words_features(tmp_path):
    files = _toy_files()
    files["manifest.toml"] = MANIFEST.replace('encoding = "onehot"',
                                              'encoding = "bow"\nfeatures_file = "bow.tsv"\ndim = 4\n'
                                              'file = "paper.tsv"')
    files["paper.tsv"] = "p1\np2\np3\n"
    files["bow.tsv"] = "p1\t0\t1\np1\t3\t2\np3\t1\t1\n"
    g, _ = load_dataset(_write(tmp_path, files))
    np.testing.assert_array_equal(g.feature("paper"), [[1, 0, 0, 2], [0, 0, 0, 0], [0, 1, 0, 0]])


def test_explicit_split_files(tmp_path):
    files = _toy_files()
    files["manifest.toml"] = MANIFEST.replace("train = 0.5\nval = 0.25\ntest = 0.25",
                                              'train_ids = "tr.tsv"\nval_ids = "va.tsv"\ntest_ids = "te.tsv"')
    files.update({"tr.tsv": "a3\na1\n", "va.tsv": "a2\n", "te.tsv": "a4\n"})
    _, split = load_dataset(_write(tmp_path, files))
    assert split.train.tolist() == [0, 2] and split.val.tolist() == [1] and split.test.tolist() == [3]


def test_fraction_one_puts_everything_in_train():
    y = np.array([0, 1, -1, 2, 0, 1])
    s = split_nodes(y, [1.0, 0.0, 0.0], 3)
    assert s.train.tolist() == [0, 1, 3, 4, 5] and s.val.size == 0 and s.test.size == 0


def test_split_is_deterministic_disjoint_and_covering():
    r = np.random.default_rng(0)
    y = r.integers(-1, 3, 101)
    a, b = split_nodes(y, [0.2, 0.1, 0.7], 7), split_nodes(y, [0.2, 0.1, 0.7], 7)
    assert a.to_bytes() == b.to_bytes()
    parts = [set(a.train), set(a.val), set(a.test)]
    assert not (parts[0] & parts[1]) and not (parts[0] & parts[2]) and not (parts[1] & parts[2])
    assert set().union(*parts) == set(np.flatnonzero(y >= 0))
    assert split_nodes(y, [0.2, 0.1, 0.7], 8).to_bytes() != a.to_bytes()


def test_equal_probabilities_carry_no_label_information():
    spec = SyntheticSpec(node_counts={"u": 300}, relations=[SyntheticRelation("uu", "u", "u", symmetric=True)],
                         num_classes=3, p_intra=0.02, p_inter=0.02)
    vals = []
    for seed in range(20):
        g, cls = generate_synthetic(spec, seed)
        e = g.edges("uu")
        vals.append(nmi_bruteforce(cls["u"][e[:, 0]], cls["u"][e[:, 1]]))
    assert abs(np.mean(vals)) < 0.05
    planted = SyntheticSpec(node_counts={"u": 300}, relations=[SyntheticRelation("uu", "u", "u", symmetric=True)],
                            num_classes=3, p_intra=0.04, p_inter=0.0)
    g, cls = generate_synthetic(planted, 0)
    e = g.edges("uu")
    assert nmi_bruteforce(cls["u"][e[:, 0]], cls["u"][e[:, 1]]) == pytest.approx(1.0)


def test_zero_noise_features_are_separable():
    g, cls = generate_synthetic(_spec(noise=0.0), 1)
    X, y = g.feature("a"), cls["a"]
    assert (LinearSVM().fit(X, y).predict(X) == y).mean() == 1.0
    # fewer dims than classes: random centroids
    g, cls = generate_synthetic(_spec(noise=0.0, feature_dims={"a": 2}), 1)
    assert (LinearSVM(iters=1000).fit(g.feature("a"), cls["a"]).predict(g.feature("a")) == cls["a"]).mean() == 1.0


def test_different_seeds_give_different_edges():
    same = 0
    for s in range(50):
        e1 = generate_synthetic(_spec(), s)[0].edges("ab")
        e2 = generate_synthetic(_spec(), s + 1000)[0].edges("ab")
        same += e1.shape == e2.shape and np.array_equal(e1, e2)
    assert same == 0
    a = generate_synthetic(_spec(), 5)[0]
    b = generate_synthetic(_spec(), 5)[0]
    assert np.array_equal(a.edges("ab"), b.edges("ab")) and np.array_equal(a.feature("a"), b.feature("a"))


def test_spec_validation():
    with pytest.raises(SpecInvalid):
        generate_synthetic(_spec(num_classes=1), 0)
    with pytest.raises(SpecInvalid):
        generate_synthetic(_spec(p_intra=1.5), 0)
    with pytest.raises(SpecInvalid):
        generate_synthetic(_spec(relations=[SyntheticRelation("ab", "a", "c")]), 0)
    with pytest.raises(SpecInvalid):
        generate_synthetic(_spec(relations=[SyntheticRelation("ab", "a", "b", p_inter=-0.1)]), 0)


def test_per_relation_probabilities():
    g, cls = generate_synthetic(lastfm_spec(), 0)
    e = g.edges("friend")
    u = cls["user"]
    assert np.mean(u[e[:, 0]] == u[e[:, 1]]) > 0.9
    assert np.all(e[:, 0] != e[:, 1])


def test_link_split_holds_out_edges():
    g, _ = generate_synthetic(lastfm_spec(), 0)
    tg, s = split_links(g, "listen", (0.2, 0.1, 0.7), 0)
    n = g.num_edges("listen")
    assert len(s.train_pos) == round(0.2 * n) and len(s.val_pos) == round(0.1 * n)
    assert len(s.train_pos) + len(s.val_pos) + len(s.test_pos) == n
    assert tg.num_edges("listen") == len(s.train_pos) == tg.num_edges("listened_by")
    assert tg.num_edges("friend") == g.num_edges("friend")
    n_art = g.count("artist")
    all_pos = set(pair_codes(g.edges("listen"), n_art).tolist())
    assert not set(pair_codes(np.vstack([s.val_neg, s.test_neg]), n_art).tolist()) & all_pos
    assert len(s.val_neg) == len(s.val_pos) and len(s.test_neg) == len(s.test_pos)
    with pytest.raises(SpecInvalid):
        split_links(g, "listened_by")


def test_sample_negatives_avoids_known_pairs():
    known = pair_codes(np.array([[0, 0], [1, 1], [2, 2]]), 3)
    neg = sample_negatives(3, 3, 200, np.random.default_rng(0), known)
    assert not set((neg[:, 0] * 3 + neg[:, 1]).tolist()) & set(known.tolist())
    assert neg.shape == (200, 2)
    with pytest.raises(EmptyPositives):
        sample_negatives(1, 2, 1, np.random.default_rng(0), pair_codes(np.array([[0, 0], [0, 1]]), 2))


def test_loader_accepts_dblp_scale_counts(tmp_path):
    """DBLP-sized graph: 4,057 authors, 14,328 papers (one conference
    each), 7,723 terms, 20 conferences, with the listed edge counts."""
    r = np.random.default_rng(0)
    counts = {"author": 4057, "paper": 14328, "term": 7723, "conference": 20}
    edge_counts = {"write": ("author", "paper", 19645), "has_term": ("paper", "term", 85810),
                   "published_in": ("paper", "conference", 14328)}
    lines = ['name = "dblp"', "[split]", "train = 0.1", "val = 0.1", "test = 0.8"]
    for t, n in counts.items():
        (tmp_path / f"{t}.tsv").write_text("".join(f"{t[0]}{i}\t{i % 7}\n" for i in range(n)))
        lines += [f"[node_types.{t}]", f'file = "{t}.tsv"']
    for name, (s, d, k) in edge_counts.items():
        if name == "published_in":
            pairs = np.column_stack([np.arange(k), r.integers(0, counts[d], k)])
        else:
            codes = r.choice(counts[s] * counts[d], size=k, replace=False)
            pairs = np.column_stack([codes // counts[d], codes % counts[d]])
        (tmp_path / f"{name}.tsv").write_text("".join(f"{s[0]}{u}\t{d[0]}{v}\n" for u, v in pairs))
        lines += ["[[relations]]", f'name = "{name}"', f'src = "{s}"', f'dst = "{d}"', f'file = "{name}.tsv"']
    (tmp_path / "manifest.toml").write_text("\n".join(lines) + "\n")
    g, split = load_dataset(DatasetManifest.from_file(tmp_path / "manifest.toml"))
    assert split is None
    assert {t: g.count(t) for t in counts} == counts
    assert g.num_edges("write") == 19645 and g.num_edges("has_term") == 85810
    assert g.num_edges("published_in") == 14328 == g.num_edges("rev_published_in")
