import json

import numpy as np
import pytest

from mvhet import cli
from mvhet.errors import ConfigError, NonFiniteLoss, UnknownVariant
from mvhet.experiment import parse_config, variant_config, variant_name
from mvhet.ingest import load_dataset
from mvhet.model import ModelConfig

SMALL = """
seed = 3
output = "run"
metapaths = [
  "author -write-> paper -written_by-> author",
  { name = "APTPA", path = "author -write-> paper -has_term-> term -term_of-> paper -written_by-> author" },
]

[data.synthetic]
node_counts = { author = 90, paper = 90, term = 30 }
relations = [
  { name = "write", src = "author", dst = "paper", inverse = "written_by" },
  { name = "has_term", src = "paper", dst = "term", inverse = "term_of" },
]
feature_dims = { author = 6, paper = 6, term = 6 }
p_intra = 0.1
p_inter = 0.01

[model]
d_feat = 8
d_view = 4
d_out = 4

[train]
epochs = 8

[eval]
proportions = [0.5]
repeats = 2
kmeans_restarts = 2
"""

LINK = """
seed = 1
output = "link"
metapaths = [
  { name = "UAU", path = "user -listen-> artist -listened_by-> user" },
  { name = "AUA", path = "artist -listened_by-> user -listen-> artist" },
]

[data.synthetic]
node_counts = { user = 30, artist = 25 }
relations = [{ name = "listen", src = "user", dst = "artist", inverse = "listened_by" }]
num_classes = 2
p_intra = 0.3
p_inter = 0.02
feature_dims = { user = 4, artist = 4 }

[model]
d_feat = 6
d_view = 4
d_out = 4

[train]
task = "link"
epochs = 5

[link]
relation = "listen"
"""


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "small.toml").write_text(SMALL)
    (tmp_path / "link.toml").write_text(LINK)
    return tmp_path


def test_train_evaluate_embed(work, capsys):
    assert cli.main(["train", "-c", "small.toml"]) == 0
    assert (work / "run" / "checkpoint.json").is_file()
    report = (work / "run" / "report.csv").read_text().splitlines()
    assert report[0].startswith("epoch,L_ds") and len(report) >= 2
    assert "trained" in capsys.readouterr().err

    assert cli.main(["evaluate", "-c", "small.toml"]) == 0
    out = capsys.readouterr().out
    assert "Macro-F1" in out and "NMI" in out
    metrics = (work / "run" / "metrics.csv").read_text().splitlines()
    assert metrics[0] == "metric,setting,value"
    assert {l.split(",")[0] for l in metrics[1:]} == {"Macro-F1", "Micro-F1", "NMI", "ARI"}

    assert cli.main(["embed", "-c", "small.toml"]) == 0
    rows = (work / "run" / "embeddings.tsv").read_text().splitlines()
    assert rows[0] == "node_id\tf0\tf1\tf2\tf3" and len(rows) == 91
    assert len(rows[1].split("\t")) == 5


def test_commands_are_byte_deterministic(work):
    for out in ("a", "b"):
        assert cli.main(["train", "-c", "small.toml", "--out", out]) == 0
        assert cli.main(["evaluate", "-c", "small.toml", "--out", out]) == 0
        assert cli.main(["embed", "-c", "small.toml", "--out", out]) == 0
    for f in ("checkpoint.json", "report.csv", "metrics.csv", "metrics.txt", "embeddings.tsv"):
        assert (work / "a" / f).read_bytes() == (work / "b" / f).read_bytes(), f


def test_seed_override_changes_results(work):
    assert cli.main(["train", "-c", "small.toml", "--out", "a"]) == 0
    assert cli.main(["train", "-c", "small.toml", "--out", "b", "--seed", "4"]) == 0
    assert (work / "a" / "checkpoint.json").read_bytes() != (work / "b" / "checkpoint.json").read_bytes()
    meta = json.loads((work / "b" / "checkpoint.json").read_text())["meta"]
    assert meta["seed"] == 4 and meta["views"] == ["APA", "APTPA"]


def test_link_task_round(work, capsys):
    assert cli.main(["train", "-c", "link.toml"]) == 0
    assert cli.main(["evaluate", "-c", "link.toml"]) == 0
    out = capsys.readouterr().out
    assert "AUC" in out and "AP" in out
    assert cli.main(["embed", "-c", "link.toml"]) == 0
    assert (work / "link" / "embeddings_user.tsv").read_text().count("\n") == 31
    assert (work / "link" / "embeddings_artist.tsv").read_text().count("\n") == 26


def test_ablate(work, capsys):
    assert cli.main(["ablate", "-c", "small.toml", "--variants", "auto,mean,w/o-ae"]) == 0
    rows = (work / "run" / "ablation.csv").read_text().splitlines()
    assert rows[0] == "variant,Macro-F1@50%,Micro-F1@50%,NMI,ARI"
    assert [r.split(",")[0] for r in rows[1:]] == ["auto", "mean", "wo_ae"]
    assert "wo_ae" in capsys.readouterr().out


def test_gen_synth_writes_a_loadable_dataset(work):
    assert cli.main(["gen-synth", "-c", "small.toml", "--out", "ds"]) == 0
    g, split = load_dataset(work / "ds" / "manifest.toml")
    assert g.num_nodes == (90, 90, 30)
    assert len(split.train) + len(split.val) + len(split.test) == 90


def test_config_errors_exit_one(work, capsys):
    (work / "bad.toml").write_text(SMALL.replace("d_feat = 8", "dfeat = 8"))
    assert cli.main(["train", "-c", "bad.toml"]) == 1
    assert "model.dfeat" in capsys.readouterr().err
    (work / "bad2.toml").write_text(SMALL.replace("epochs = 8", 'epochs = "x"'))
    assert cli.main(["train", "-c", "bad2.toml"]) == 1
    assert "train.epochs" in capsys.readouterr().err
    assert cli.main(["train", "-c", "missing.toml"]) == 1
    (work / "bad3.toml").write_text(SMALL.replace("[model]", "[model\n"))
    assert cli.main(["train", "-c", "bad3.toml"]) == 1
    (work / "bad4.toml").write_text(SMALL.replace("node_counts", "# node_counts"))
    assert cli.main(["train", "-c", "bad4.toml"]) == 1


def test_unknown_variant_exits_one(work, capsys):
    assert cli.main(["ablate", "-c", "small.toml", "--variants", "auto,sum"]) == 1
    assert "unknown variant" in capsys.readouterr().err


def test_mismatched_checkpoint_exits_one(work, capsys):
    assert cli.main(["train", "-c", "small.toml"]) == 0
    (work / "other.toml").write_text(SMALL.replace("d_out = 4", "d_out = 6"))
    assert cli.main(["evaluate", "-c", "other.toml", "--checkpoint", "run/checkpoint.json"]) == 1
    err = capsys.readouterr().err
    assert "checkpoint shape" in err and "sae/W1" in err
    assert cli.main(["evaluate", "-c", "small.toml", "--checkpoint", "nope.json"]) == 1


def test_non_finite_loss_exits_two(work, monkeypatch, capsys):
    def boom(exp, model_cfg=None):
        raise NonFiniteLoss(4, {"ds": float("nan")})
    monkeypatch.setattr(cli, "run_train", boom)
    assert cli.main(["train", "-c", "small.toml"]) == 2
    assert "epoch 4" in capsys.readouterr().err


def test_version_and_usage(capsys):
    with pytest.raises(SystemExit) as ei:
        cli.main(["--version"])
    assert ei.value.code == 0 and "mvhet" in capsys.readouterr().out
    with pytest.raises(SystemExit) as ei:
        cli.main([])
    assert ei.value.code == 2


def test_parse_config_rules(tmp_path):
    raw = {"data": {"manifest": "ds/manifest.toml"}, "metapaths": ["a -x-> b"]}
    cfg = parse_config(raw, tmp_path)
    assert cfg.data.manifest == tmp_path / "ds" / "manifest.toml"
    assert str(cfg.output) == "runs/default"
    with pytest.raises(ConfigError):
        parse_config({"data": {}, "metapaths": ["a -x-> b"]})
    with pytest.raises(ConfigError):
        parse_config({**raw, "train": {"task": "link"}})
    with pytest.raises(ConfigError):
        parse_config({**raw, "metapaths": []})
    with pytest.raises(ConfigError):
        parse_config({**raw, "data": {"manifest": "m", "split": [0.5, 0.5, 0.5]}})
    with pytest.raises(ConfigError):
        parse_config({**raw, "model": {"ae_layers": 3}}).model_cfg()


def test_variant_names_and_overrides():
    assert [variant_name(v) for v in ("Auto", "w/o AE", "wo-reg", "w/o TransE", "attention")] == \
        ["auto", "wo_ae", "wo_reg", "wo_transe", "attn"]
    with pytest.raises(UnknownVariant):
        variant_name("gat")
    base = ModelConfig(d_feat=8, dropout=0.1)
    v = variant_config(base, "concat")
    assert v.fusion == "concat" and v.d_feat == 8 and v.dropout == 0.1
    assert not variant_config(base, "wo_transe").use_transe


def test_shipped_configs_parse():
    from pathlib import Path
    from mvhet.experiment import load_config, prepare
    root = Path(__file__).resolve().parents[1] / "configs"
    for f in sorted(root.glob("*.toml")):
        exp = prepare(load_config(f))
        assert exp.plans and np.all(np.isfinite(exp.graph.features[0]))
