"""Evaluation harness: entrance snippets, model rollouts, consolidation and scoring."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import metrics
from .baselines import TooFewObservations, predict_baselines
from .data import DataError, LabeledTrack, entrance_snippet
from .multipac import MultiPacParams, consolidate
from .seqnet import SeqNet, predict, to_sequences
from .types import ModelConfig, PathProposal, TrackSnippet, Variant

log = logging.getLogger(__name__)

MODEL_NAMES = {Variant.FF: "RNN-FF", Variant.ZF: "RNN-ZF", Variant.FL: "RNN-FL"}


@dataclass
class Evaluation:
    rows: list
    skipped: dict = field(default_factory=dict)  # track_id -> reason
    proposals: dict = field(default_factory=dict)  # (predictor, track_id) -> proposals

    @property
    def report(self) -> list:
        return metrics.aggregate(self.rows)


def entrance_snippets(tracks: Sequence[LabeledTrack], cfg: ModelConfig):
    """Test snippets, one per track, plus the tracks that had none."""
    snippets, skipped = [], {}
    for lt in sorted(tracks, key=lambda t: str(t.track_id)):
        try:
            snippets.append(entrance_snippet(lt, None, cfg))
        except DataError as exc:
            skipped[str(lt.track_id)] = f"{type(exc).__name__}: {exc}"
    return snippets, skipped


def model_proposals(net: SeqNet, variant, snippets: Sequence[TrackSnippet], params: MultiPacParams,
                    seed=0, batch: int = 256) -> list[list[PathProposal]]:
    """Rollout and consolidation for each snippet, in the given order."""
    variant = Variant.parse(variant)
    rng = np.random.default_rng([seed, 11])
    out = []
    for k in range(0, len(snippets), batch):
        chunk = snippets[k:k + batch]
        obs = np.stack([s.obs for s in chunk])
        raws = predict(obs, net, variant, net.cfg.p, rng)
        run_as = Variant.FF if variant is Variant.FL else variant
        for s, seq in zip(chunk, to_sequences(raws, net.stats, net.cfg.M, run_as)):
            last = s.obs[-1, :2]
            out.append(consolidate(seq, params, origin=(float(last[0]), float(last[1]))))
    return out


def truth_of(s: TrackSnippet) -> np.ndarray:
    return s.future[: s.n_valid]


def evaluate(snippets: Sequence[TrackSnippet], models: Sequence[tuple[str, SeqNet, Variant]] = (),
             params: MultiPacParams = MultiPacParams(), baselines: bool = True, seed=0,
             rate_hz: float = 12.5, keep_proposals: bool = False) -> Evaluation:
    """Score every model and the kinematic baselines on the same snippets."""
    rows = []
    ev = Evaluation(rows)
    scored = [s for s in snippets if s.n_valid > 0]
    for name, net, variant in models:
        props = model_proposals(net, variant, scored, params, seed)
        for s, pr in zip(scored, props):
            rows += metrics.score_model(pr, truth_of(s), track_id=s.track_id, class_label=s.class_label,
                                        predictor=name, rate_hz=rate_hz)
            if keep_proposals:
                ev.proposals[(name, s.track_id)] = pr
    if baselines:
        dt = 1.0 / rate_hz
        for s in scored:
            try:
                base = predict_baselines(s.obs, len(s.future), dt)
            except TooFewObservations as exc:
                ev.skipped[str(s.track_id)] = str(exc)
                continue
            for name, prop in base.items():
                rows += metrics.score_model([prop], truth_of(s), track_id=s.track_id, class_label=s.class_label,
                                            predictor=name, rate_hz=rate_hz, modes=("most_likely",))
                if keep_proposals:
                    ev.proposals[(name, s.track_id)] = [prop]
    return ev
