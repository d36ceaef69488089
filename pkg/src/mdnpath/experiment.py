"""Desk-scale ordering experiment on synthetic roundabouts.

Models are trained on tracks from several generator seeds and tested on
another seed whose ring is one metre wider, so the test intersection is
never seen in training.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

from . import metrics
from .data import SnippetBank, prepare_tracks, split_by_track
from .multipac import MultiPacParams
from .pipeline import MODEL_NAMES, Evaluation, entrance_snippets, evaluate
from .seqnet import SeqNet
from .synthetic import GeneratorConfig, generate_tracks, intersection_spec
from .trainer import TrainConfig, train
from .types import CLASSES, ManeuverClass, ModelConfig, Variant, _ConfigMixin

log = logging.getLogger(__name__)

BASELINES = ("CV", "CTRV", "CTRA")


@dataclass(frozen=True)
class ExperimentConfig(_ConfigMixin):
    train_seeds: tuple = (1, 2, 3, 4)
    tracks_per_seed: int = 500
    test_seed: int = 5
    test_tracks: int = 300
    test_ring_shift: float = 1.0
    variants: tuple = ("FF", "ZF", "FL")
    lstm_width: int = 32
    lstm_layers: int = 2
    M: int = 3
    steps: int = 6000
    fl_steps: int = 6000
    batch_size: int = 64
    lr_start: float = 3e-3
    lr_end: float = 3e-4
    checkpoint_every: int = 500
    val_max: int = 500
    seed: int = 0

    def __post_init__(self):
        for name in ("train_seeds", "variants"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def model_config(self) -> ModelConfig:
        return ModelConfig(M=self.M, lstm_width=self.lstm_width, lstm_layers=self.lstm_layers)

    def train_config(self, variant: Variant) -> TrainConfig:
        steps = self.fl_steps if variant is Variant.FL else self.steps
        return TrainConfig(lr_start=self.lr_start, lr_end=self.lr_end, decay_steps=max(steps, 1),
                           batch_size=self.batch_size, max_steps=steps, seed=self.seed,
                           checkpoint_every=self.checkpoint_every, variant=variant.value, val_max=self.val_max)


@dataclass
class ExperimentResult:
    evaluation: Evaluation
    report: list
    checks: dict
    timings: dict


def build_datasets(cfg: ExperimentConfig, mc: ModelConfig):
    base = GeneratorConfig()
    train_tracks = []
    for s in cfg.train_seeds:
        g = dataclasses.replace(base, seed=s)
        train_tracks += prepare_tracks(intersection_spec(g), [t.track for t in generate_tracks(g, cfg.tracks_per_seed)], mc)
    tg = dataclasses.replace(base, seed=cfg.test_seed, ring_radius=base.ring_radius + cfg.test_ring_shift)
    test_tracks = prepare_tracks(intersection_spec(tg), [t.track for t in generate_tracks(tg, cfg.test_tracks)], mc)
    return train_tracks, test_tracks


def ordering_checks(report) -> dict:
    """Relative orderings between the learned models and the baselines."""
    checks = {}

    def get(c, p, m):
        return metrics.lookup(report, c, p, m)

    predictors = {r.predictor for r in report}
    for name in ("RNN-FF", "RNN-ZF"):
        if name not in predictors:
            continue
        for c in (ManeuverClass.LEFT, ManeuverClass.RIGHT):
            mine = get(c, name, "horizon_2.8")
            for b in BASELINES:
                checks[f"{name} < {b} horizon_2.8 {c.value}"] = (mine < get(c, b, "horizon_2.8"), mine, get(c, b, "horizon_2.8"))
    if {"RNN-FL", "RNN-ZF"} <= predictors:
        for c in CLASSES:
            fl, zf = get(c, "RNN-FL", "euclid_sum"), get(c, "RNN-ZF", "euclid_sum")
            checks[f"RNN-FL >= RNN-ZF euclid_sum {c.value}"] = (fl >= zf, fl, zf)
    if {"RNN-FF", "RNN-ZF"} <= predictors:
        for c in CLASSES:
            ff, zf = get(c, "RNN-FF", "horizon_2.8"), get(c, "RNN-ZF", "horizon_2.8")
            checks[f"|RNN-FF - RNN-ZF| <= 25% horizon_2.8 {c.value}"] = (abs(ff - zf) <= 0.25 * zf, ff, zf)
    return checks


def run(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    mc = cfg.model_config()
    t0 = time.perf_counter()
    train_tracks, test_tracks = build_datasets(cfg, mc)
    tr, va = split_by_track(train_tracks, 0.2, cfg.seed)
    tbank, vbank = SnippetBank(tr, mc), SnippetBank(va, mc)
    stats = tbank.norm_stats()
    timings = {"data": time.perf_counter() - t0}
    log.info("train snippets %d, validation snippets %d, test tracks %d", len(tbank), len(vbank), len(test_tracks))
    models = []
    out = Path(out_dir) if out_dir is not None else None
    for v in cfg.variants:
        variant = Variant.parse(v)
        t1 = time.perf_counter()
        net = SeqNet.init(mc, stats, cfg.seed)
        res = train(tbank, vbank, cfg.train_config(variant), net,
                    out / variant.value.lower() if out is not None else None)
        timings[variant.value] = time.perf_counter() - t1
        models.append((MODEL_NAMES[variant], res.best.net, variant))
    snippets, skipped = entrance_snippets(test_tracks, mc)
    t2 = time.perf_counter()
    ev = evaluate(snippets, models, MultiPacParams(), seed=cfg.seed, rate_hz=mc.sample_rate)
    ev.skipped.update(skipped)
    timings["evaluate"] = time.perf_counter() - t2
    timings["total"] = time.perf_counter() - t0
    report = ev.report
    checks = ordering_checks(report)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "scores.csv").write_text(metrics.scores_csv(ev.rows))
        (out / "report.csv").write_text(metrics.report_csv(report))
        (out / "report.txt").write_text(metrics.format_table(report))
        summary = {"config": cfg.to_dict(), "timings": timings, "skipped": ev.skipped,
                   "checks": {k: {"ok": bool(ok), "lhs": a, "rhs": b} for k, (ok, a, b) in checks.items()}}
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return ExperimentResult(ev, report, checks, timings)
