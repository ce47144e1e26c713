"""``mvhet`` command line: train, evaluate, embed, ablate, gen-synth.

Exit status: 0 on success, 2 when training hits a non-finite loss, 1 on
configuration, input or checkpoint errors. Diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, MVHetError, NonFiniteLoss
from .experiment import (ExperimentConfig, ablate, checkpoint_meta, embeddings_tsv, evaluate,
                         fresh_model, load_config, prepare, run_train)
from .ingest import generate_synthetic, write_dataset
from .model import load_checkpoint, save_checkpoint

log = logging.getLogger("mvhet")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output = Path(args.out)
    return cfg


def _outdir(cfg: ExperimentConfig) -> Path:
    cfg.output.mkdir(parents=True, exist_ok=True)
    return cfg.output


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


def _load_trained(args, cfg):
    exp = prepare(cfg)
    ckpt = Path(args.checkpoint) if args.checkpoint else cfg.output / "checkpoint.json"
    arrays, _ = load_checkpoint(ckpt)
    model = fresh_model(exp)
    model.load_state(arrays)
    return exp, model


def cmd_train(args) -> int:
    cfg = _config(args)
    exp = prepare(cfg)
    model, report = run_train(exp)
    out = _outdir(cfg)
    save_checkpoint(out / "checkpoint.json", model.params, checkpoint_meta(exp, model))
    _write(out / "report.csv", report.to_csv())
    last = report.epochs[-1]
    print(f"trained {len(report.epochs)} epochs, best epoch {report.best_epoch}, "
          f"val {report.epochs[report.best_epoch].val_metric:.4f}, final loss {last.total:.4f} "
          f"({report.wall_time:.1f}s)", file=sys.stderr)
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    exp, model = _load_trained(args, cfg)
    table = evaluate(exp, model)
    out = _outdir(cfg)
    _write(out / "metrics.csv", table.to_csv())
    _write(out / "metrics.txt", table.pretty())
    sys.stdout.write(table.pretty())
    return 0


def cmd_embed(args) -> int:
    cfg = _config(args)
    exp, model = _load_trained(args, cfg)
    emb = model.embed()
    out = _outdir(cfg)
    if len(emb) == 1:
        (t, H), = emb.items()
        _write(out / "embeddings.tsv", embeddings_tsv(exp.graph, H, t))
    else:
        for t, H in emb.items():
            _write(out / f"embeddings_{exp.graph.schema.type_name(t)}.tsv", embeddings_tsv(exp.graph, H, t))
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    variants = [v for v in (args.variants or "auto,mean,concat,attn").split(",") if v.strip()]
    exp = prepare(cfg)
    table = ablate(exp, variants)
    out = _outdir(cfg)
    _write(out / "ablation.csv", table.to_csv())
    _write(out / "ablation.txt", table.pretty())
    sys.stdout.write(table.pretty())
    return 0


def cmd_gensynth(args) -> int:
    cfg = _config(args)
    syn = cfg.data.synthetic
    if syn is None:
        raise ConfigError("data.synthetic: gen-synth needs a synthetic spec")
    seed = cfg.seed if syn.seed is None else syn.seed
    g, _ = generate_synthetic(syn.to_spec(list(syn.node_counts)), seed)
    target = cfg.data.target or next(iter(syn.node_counts))
    fr = cfg.data.split or [0.2, 0.1, 0.7]
    root = Path(args.out) if args.out else cfg.output / "dataset"
    path = write_dataset(g, root, label_type=target, split=dict(zip(("train", "val", "test"), fr)),
                         seed=seed, name="synthetic")
    print(f"wrote dataset manifest {path}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvhet", description="Multi-view heterogeneous graph embeddings.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoint=False):
        sp.add_argument("-c", "--config", required=True, help="experiment config (TOML)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="output directory (overrides the config)")
        if checkpoint:
            sp.add_argument("--checkpoint", help="checkpoint file (default: <out>/checkpoint.json)")
        return sp

    common(sub.add_parser("train", help="train and write checkpoint.json + report.csv")).set_defaults(fn=cmd_train)
    common(sub.add_parser("evaluate", help="evaluate a checkpoint"), True).set_defaults(fn=cmd_evaluate)
    common(sub.add_parser("embed", help="write node embeddings as TSV"), True).set_defaults(fn=cmd_embed)
    sp = common(sub.add_parser("ablate", help="train and evaluate fusion / ablation variants"))
    sp.add_argument("--variants", help="comma separated: auto,mean,concat,attn,wo_transe,wo_ae,wo_reg")
    sp.set_defaults(fn=cmd_ablate)
    common(sub.add_parser("gen-synth", help="write the config's synthetic graph as a dataset")).set_defaults(
        fn=cmd_gensynth)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.fn(args)
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (MVHetError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
