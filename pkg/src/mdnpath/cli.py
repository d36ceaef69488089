"""Command line entry point: generate, train, evaluate, export-heatmap."""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import heatmap, metrics
from .data import (DataError, IngestReport, SnippetBank, entrance_index, load_labeled, snippet_at,
                   split_by_track, write_intersection)
from .multipac import MultiPacParams
from .pipeline import MODEL_NAMES, entrance_snippets, evaluate
from .seqnet import SeqNet, predict, to_sequences
from .synthetic import GeneratorConfig, generate_tracks, intersection_spec
from .trainer import NonFiniteLoss, TrainConfig, train
from .types import CLASSES, ModelConfig, Variant

log = logging.getLogger("mdnpath")

EXIT_OK, EXIT_CONFIG, EXIT_NONFINITE, EXIT_NO_ENTRANCE, EXIT_GRID = 0, 2, 3, 4, 5
NO_ENTRANCE_REASONS = ("NoEntrance", "NeverEntered")


class ConfigError(Exception):
    pass


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return cfg


def _section(cfg: dict, key: str, cls, **overrides):
    d = dict(cfg.get(key, {}))
    d.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad '{key}' config: {exc}") from exc


def class_table(counts: Counter, title: str = "Summary of collected data") -> str:
    total = sum(counts.values())
    lines = [title, f"{'Class':<10} {'Tracks':>8} {'Share':>8}"]
    for c in CLASSES:
        n = counts.get(c, 0)
        lines.append(f"{c.value:<10} {n:>8} {100.0 * n / max(total, 1):>7.1f}%")
    lines.append(f"{'Total':<10} {total:>8} {100.0 if total else 0.0:>7.1f}%")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    gen = _section(cfg, "generator", GeneratorConfig, seed=args.seed)
    n = args.n if args.n is not None else int(cfg.get("n_tracks", 500))
    if n < 1:
        raise ConfigError("the number of tracks must be at least 1")
    tracks = generate_tracks(gen, n)
    write_intersection(args.out, intersection_spec(gen, args.name), [t.track for t in tracks])
    sys.stdout.write(class_table(Counter(t.label for t in tracks)))
    return EXIT_OK


def _data_dirs(value) -> list:
    return [p for part in value for p in str(part).split(",") if p]


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    mc = _section(cfg, "model", ModelConfig)
    tc = _section(cfg, "train", TrainConfig, seed=args.seed, variant=args.variant and args.variant.upper())
    report = IngestReport()
    tracks = []
    for d in _data_dirs(args.data):
        tracks += load_labeled(d, mc, report)
    if report.rejected:
        log.warning("rejected tracks: %s", dict(report.rejected))
    tr, va = split_by_track(tracks, 0.2, tc.seed)
    tbank, vbank = SnippetBank(tr, mc), SnippetBank(va, mc)
    resume = ckpt.load(args.resume) if args.resume else None
    if resume is not None:
        net = resume.net.copy()
    else:
        net = SeqNet.init(mc, tbank.norm_stats(), tc.seed)
    log.info("%d training tracks (%d snippets), %d validation tracks (%d snippets)",
             len(tr), len(tbank), len(va), len(vbank))
    try:
        res = train(tbank, vbank, tc, net, args.out, resume)
    except NonFiniteLoss as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_NONFINITE
    sys.stdout.write(f"best step {res.best.step} validation loss {res.best_val_loss:.4f}\n")
    return EXIT_OK


def _load_models(paths):
    models = []
    for p in paths or ():
        ck = ckpt.load(p)
        name = MODEL_NAMES[ck.variant]
        if any(m[0] == name for m in models):
            name = f"{name}:{Path(p).stem}"
        models.append((name, ck.net, ck.variant))
    return models


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    models = _load_models(args.checkpoint)
    mc = models[0][1].cfg if models else _section(cfg, "model", ModelConfig)
    if args.variant:
        v = Variant.parse(args.variant.upper())
        models = [(MODEL_NAMES[v], net, v) for _, net, _ in models[:1]]
    params = _section(cfg, "multipac", MultiPacParams)
    report = IngestReport()
    tracks = []
    for d in _data_dirs(args.data):
        tracks += load_labeled(d, mc, report)
    snippets, skipped = entrance_snippets(tracks, mc)
    ev = evaluate(snippets, models, params, baselines=not args.no_baselines, seed=args.seed or 0,
                  rate_hz=mc.sample_rate)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    agg = ev.report
    (out / "scores.csv").write_text(metrics.scores_csv(ev.rows))
    (out / "report.csv").write_text(metrics.report_csv(agg))
    table = metrics.format_table(agg)
    (out / "report.txt").write_text(table)
    sys.stdout.write(table)
    missing = sorted(skipped)
    rejected = {k: v for k, v in report.rejected.items() if k in NO_ENTRANCE_REASONS}
    if missing or rejected:
        for tid in missing:
            sys.stderr.write(f"skipped {tid}: {skipped[tid]}\n")
        n = len(missing) + sum(rejected.values())
        sys.stderr.write(f"error: {n} track(s) without an entrance crossing were skipped\n")
        return EXIT_NO_ENTRANCE
    return EXIT_OK


def cmd_export_heatmap(args) -> int:
    cfg = load_config(args.config)
    ck = ckpt.load(args.checkpoint)
    net = ck.net
    mc = net.cfg
    tracks = []
    for d in _data_dirs(args.data):
        tracks += load_labeled(d, mc)
    match = [lt for lt in tracks if str(lt.track_id) == args.track]
    if not match:
        raise ConfigError(f"track {args.track!r} not found")
    lt = match[0]
    try:
        i = entrance_index(lt) if args.t_index is None else args.t_index
        snip = snippet_at(lt, i, mc)
    except DataError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_NO_ENTRANCE
    variant = Variant.parse(args.variant.upper()) if args.variant else ck.variant
    rng = np.random.default_rng([args.seed or 0, 11])
    raws = predict(snip.obs[None], net, variant, mc.p, rng)
    seq = to_sequences(raws, net.stats, mc.M, Variant.FF if variant is Variant.FL else variant)[0]
    params = _section(cfg, "multipac", MultiPacParams)
    try:
        paths = heatmap.export(seq, args.out, args.cell, params, origin=tuple(snip.obs[-1, :2]),
                               extra_points=np.vstack([snip.obs[:, :2], snip.future[: snip.n_valid]]))
    except heatmap.GridTooLarge as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_GRID
    sys.stdout.write(json.dumps(paths, indent=2) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--variant", choices=["ff", "zf", "fl", "FF", "ZF", "FL"], help="decoder variant")
    common.add_argument("--threads", type=int, help="cap on BLAS threads")
    common.add_argument("--deterministic", action="store_true", help="single-threaded numerics")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mdnpath", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic roundabout dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, help="number of tracks")
    g.add_argument("--name", default="synthetic")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--data", required=True, nargs="+", help="intersection directories")
    t.add_argument("--out", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", parents=[common], help="score models and baselines on entrance snippets")
    e.add_argument("--data", required=True, nargs="+")
    e.add_argument("--checkpoint", nargs="*", default=[], help="model checkpoints (none: baselines only)")
    e.add_argument("--out", required=True)
    e.add_argument("--no-baselines", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    h = sub.add_parser("export-heatmap", parents=[common], help="rasterise one prediction")
    h.add_argument("--checkpoint", required=True)
    h.add_argument("--data", required=True, nargs="+")
    h.add_argument("--track", required=True, help="track id")
    h.add_argument("--t-index", type=int, help="last observation index (default: entrance)")
    h.add_argument("--cell", type=float, default=0.25, help="cell size in metres")
    h.add_argument("--out", required=True, help="output path; .csv/.pgm/.json are written next to it")
    h.set_defaults(func=cmd_export_heatmap)
    return p


def _thread_limit(args):
    n = 1 if args.deterministic else args.threads
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        sys.stderr.write("error: --threads must be at least 1\n")
        return EXIT_CONFIG
    try:
        with _thread_limit(args):
            return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except (ckpt.CheckpointError, OSError, DataError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
