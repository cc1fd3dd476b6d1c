"""Command-line entry point: ``kgprompt <command> ...``.

Exit codes: 0 success, 1 I/O failure, 2 validation failure, 3 runtime failure.
Every file a command writes goes under its output directory.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, config_from_mapping, dump_config, load_config
from .data import encode_manifest, read_manifest
from .descriptions import LLMClient, generate_descriptions, load_cache, maskpad_descriptions, save_cache
from .encoder import load_image
from .errors import ConfigError, IOFailure, KGPromptError, ValidationError
from .kg_store import KGSourceClient, fetch_subgraph, load_kg, maskpad_kg, save_candidates, save_kg
from .metrics import eer_threshold
from .pipeline import (build_encoder, build_model, class_probabilities, label_indices, score_features,
                       to_scoreset, train_config)
from .plotting import plot_loss_history
from .protocols import run_cross_dataset, run_loocv, split_train_dev
from .report import format_summary, write_report
from .synthetic import make_two_cluster_dataset
from .trainer import fit, load_checkpoint, save_checkpoint

log = logging.getLogger("kgprompt")

CHECKPOINT_FILE = "checkpoint.json"
LOSS_LOG = "loss.csv"
LOSS_PLOT = "loss.png"
PREDICTIONS = "predictions.csv"


def _out_dir(args, cfg: RunConfig | None = None) -> Path:
    out = Path(args.out or (cfg.output_dir if cfg else "out"))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IOFailure(f"cannot create output directory {out}: {exc}") from exc
    return out


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    return cfg.with_overrides(seed=getattr(args, "seed", None), output_dir=getattr(args, "out", None))


# -- kg ----------------------------------------------------------------------

def cmd_kg_validate(args) -> int:
    g = load_kg(args.path)
    n_e, n_r, n_t = g.counts
    print(f"{args.path}: valid, {n_e} entities, {n_r} relations, {n_t} triples")
    for c in g.categories:
        print(f"  {c}: {sum(e.category == c for e in g.entities)} entities")
    return 0


def cmd_kg_fetch(args) -> int:
    cfg = _config(args)
    client = KGSourceClient(args.source_url or cfg.kg_source_url)
    out = _out_dir(args, cfg)
    cands = fetch_subgraph(client, args.category)
    path = out / f"candidates_{args.category.replace(' ', '_')}.json"
    save_candidates(cands, path)
    print(f"{len(cands)} candidate edges written to {path} (review before adding to the graph)")
    return 0


def cmd_kg_export(args) -> int:
    out = _out_dir(args)
    path = out / "maskpad_kg.json"
    save_kg(maskpad_kg(), path)
    print(path)
    return 0


# -- describe ----------------------------------------------------------------

def cmd_describe(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    g = load_kg(cfg.kg_path) if cfg.kg_path else maskpad_kg()
    cache = load_cache(cfg.cache_path) if cfg.cache_path else maskpad_descriptions()
    client = LLMClient(cfg.llm_url) if cfg.llm_url else None
    total = 0
    for c in (args.category or g.categories):
        total += len(generate_descriptions(g, c, client, cache, workers=args.workers))
    path = out / "descriptions.json"
    save_cache(cache, path)
    print(f"{total} descriptions, cache written to {path}")
    return 0


# -- synth -------------------------------------------------------------------

def cmd_synth(args) -> int:
    splits = {}
    for spec in args.split or []:
        split, _, subjects = spec.partition("=")
        for s in filter(None, subjects.split(",")):
            splits[s] = split
    path = make_two_cluster_dataset(
        args.out, n_subjects=args.subjects, per_class=args.per_class, size=args.size, seed=args.seed,
        shift=args.shift, noise=args.noise, contrast=args.contrast, splits=splits, prefix=args.prefix,
    )
    print(path)
    return 0


# -- train -------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _config(args)
    source = cfg.train_manifest or cfg.manifest
    if not source:
        raise ConfigError("train needs `train_manifest` (or `manifest`) in the config")
    out = _out_dir(args, cfg)
    manifest = read_manifest(source)
    dev_fraction = cfg.dev_subjects / (cfg.train_subjects + cfg.dev_subjects)
    train_s, dev_s = split_train_dev(manifest, cfg.seed, dev_fraction)
    encoder = build_encoder(cfg)
    cache: dict = {}
    train_fs = encode_manifest(manifest.select(subjects=train_s), encoder, cfg.image_size, cache)
    dev_fs = encode_manifest(manifest.select(subjects=dev_s), encoder, cfg.image_size, cache)

    model = build_model(cfg)
    real_i, mask_i = label_indices(model, cfg)
    model, history = fit(train_fs, model, train_config(cfg), real_i, mask_i)
    dev = to_scoreset(score_features(model, dev_fs, cfg.tau, real_i), dev_fs)
    threshold, dev_eer = eer_threshold(dev)

    checksum = encoder.checksum() if hasattr(encoder, "checksum") else None
    save_checkpoint(out / CHECKPOINT_FILE, model, cfg.to_dict(), cfg.seed, threshold.value, history, checksum)
    with open(out / LOSS_LOG, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "lr", "srd", "sce", "total"])
        for h in history:
            w.writerow([h.epoch, repr(h.lr), repr(h.srd), repr(h.sce), repr(h.total)])
    if history and not args.no_plot:
        plot_loss_history(history, out / LOSS_PLOT)
    print(f"trained {cfg.epochs} epochs on {len(train_fs)} samples ({len(train_s)} subjects); "
          f"dev EER {dev_eer:.2f}% at threshold {threshold.value:.6g}")
    print(f"checkpoint written to {out / CHECKPOINT_FILE}")
    return 0


# -- eval --------------------------------------------------------------------

def _checkpoint_config(args) -> tuple:
    model, meta = load_checkpoint(args.checkpoint)
    cfg = config_from_mapping(meta["config"] or {})
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    cfg = cfg.with_overrides(seed=args.seed, output_dir=args.out)
    return model, meta, cfg


def cmd_eval(args) -> int:
    _, _, cfg = _checkpoint_config(args)
    if args.rounds is not None:
        cfg = cfg.with_overrides(rounds=args.rounds)
    out = _out_dir(args, cfg)
    if args.protocol == "loocv":
        source = args.manifest or cfg.manifest
        if not source:
            raise ConfigError("loocv needs --manifest (or `manifest` in the config)")
        report = run_loocv(read_manifest(source), cfg, cfg.rounds)
    else:
        train_src = args.train_manifest or cfg.train_manifest
        test_src = args.test_manifest or cfg.test_manifest
        if not (train_src and test_src):
            raise ConfigError("cross needs --train-manifest and --test-manifest")
        report = run_cross_dataset(read_manifest(train_src), read_manifest(test_src), cfg)
    paths = write_report(report, out, plot=not args.no_plot)
    print(format_summary(report))
    print(f"report written to {paths['report']}")
    return 0


# -- infer -------------------------------------------------------------------

def cmd_infer(args) -> int:
    model, meta, cfg = _checkpoint_config(args)
    threshold = args.threshold if args.threshold is not None else meta.get("threshold")
    if threshold is None:
        raise ValidationError("checkpoint stores no threshold; pass --threshold")
    real_i, _ = label_indices(model, cfg)
    encoder = build_encoder(cfg)
    if args.manifest:
        manifest = read_manifest(args.manifest)
        fs = encode_manifest(manifest, encoder, cfg.image_size)
        p_real = class_probabilities(model, fs, cfg.tau)[:, real_i]
        paths = [r.path for r in manifest.rows]
    else:
        img = load_image(args.image, cfg.image_size)
        p_real = np.array([model.predict(encoder.encode(img), cfg.tau)[real_i]])
        paths = [args.image]
    # same acceptance rule as the metrics: a score equal to the threshold counts as genuine
    lines = [(path, float(p), "real" if p >= threshold else "mask") for path, p in zip(paths, p_real)]
    for path, p, decision in lines:
        print(f"{path}, {p!r}, {decision}")
    if args.out:
        out = _out_dir(args, cfg)
        with open(out / PREDICTIONS, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "p_real", "decision"])
            for path, p, decision in lines:
                w.writerow([path, repr(p), decision])
    return 0


def cmd_config(args) -> int:
    sys.stdout.write(dump_config(_config(args)))
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kgprompt", description="Knowledge-graph prompt learning for 3D mask PAD.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    kg = sub.add_parser("kg", help="knowledge graph tools").add_subparsers(dest="kg_command", required=True)
    v = kg.add_parser("validate", help="validate a graph file")
    v.add_argument("path")
    v.set_defaults(func=cmd_kg_validate)
    f = kg.add_parser("fetch", help="fetch candidate edges from a public graph for review")
    f.add_argument("category")
    f.add_argument("--source-url", default="")
    f.add_argument("--config")
    f.add_argument("--out")
    f.set_defaults(func=cmd_kg_fetch)
    e = kg.add_parser("export", help="write the bundled graph to the output dir")
    e.add_argument("--out")
    e.set_defaults(func=cmd_kg_export)

    d = sub.add_parser("describe", help="fill the description cache (LLM for cache misses)")
    d.add_argument("--config")
    d.add_argument("--out")
    d.add_argument("--category", action="append")
    d.add_argument("--workers", type=int, default=1)
    d.set_defaults(func=cmd_describe)

    s = sub.add_parser("synth", help="write a seeded synthetic two-cluster dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--subjects", type=int, default=6)
    s.add_argument("--per-class", type=int, default=10)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--shift", type=float, default=0.0)
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--contrast", type=float, default=0.35)
    s.add_argument("--prefix", default="")
    s.add_argument("--split", action="append", metavar="SPLIT=S1,S2",
                   help="assign subjects to a split (repeatable); others are 'auto'")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train prompts and store the dev-EER threshold")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--no-plot", action="store_true")
    t.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="run an evaluation protocol")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--protocol", choices=("loocv", "cross"), default="cross")
    ev.add_argument("--rounds", type=int)
    ev.add_argument("--config")
    ev.add_argument("--seed", type=int)
    ev.add_argument("--out")
    ev.add_argument("--manifest")
    ev.add_argument("--train-manifest")
    ev.add_argument("--test-manifest")
    ev.add_argument("--no-plot", action="store_true")
    ev.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="score images with a checkpoint")
    i.add_argument("--checkpoint", required=True)
    src = i.add_mutually_exclusive_group(required=True)
    src.add_argument("image", nargs="?")
    src.add_argument("--manifest")
    i.add_argument("--threshold", type=float)
    i.add_argument("--config")
    i.add_argument("--seed", type=int)
    i.add_argument("--out")
    i.set_defaults(func=cmd_infer)

    c = sub.add_parser("config", help="print the effective configuration")
    c.add_argument("--config")
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    c.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except KGPromptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ValidationError.exit_code


if __name__ == "__main__":
    sys.exit(main())
