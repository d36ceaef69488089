"""Path scores and per-class aggregation."""
from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .types import CLASSES, ManeuverClass, PathProposal

HORIZONS = (1.2, 2.8)
WORST = (5, 1)
METRICS = ("euclid_sum", "horizon_1.2", "horizon_2.8", "mhd")
STATS = ("mean", "worst5", "worst1")


class EmptyTruth(ValueError):
    pass


class EmptyPolyline(ValueError):
    pass


class NoProposals(ValueError):
    pass


def _held(pred: np.ndarray, n: int) -> np.ndarray:
    """First n points of pred; a short prediction holds its last point."""
    pred = np.asarray(pred, dtype=float).reshape(-1, 2)
    if len(pred) >= n:
        return pred[:n]
    return np.vstack([pred, np.repeat(pred[-1:], n - len(pred), axis=0)])


def euclid_sum(pred, truth) -> float:
    truth = np.asarray(truth, dtype=float).reshape(-1, 2)
    if len(truth) == 0:
        raise EmptyTruth("no ground-truth points")
    if len(pred) == 0:
        raise EmptyPolyline("empty prediction")
    d = _held(pred, len(truth)) - truth
    return float(np.hypot(d[:, 0], d[:, 1]).sum())


def horizon_index(horizon_s: float, rate_hz: float) -> int:
    """1-based future step of a lookahead time."""
    return int(round(horizon_s * rate_hz))


def horizon_error(pred, truth, horizon_s: float, rate_hz: float) -> Optional[float]:
    """Distance at the horizon step, or None when the truth ends before it."""
    truth = np.asarray(truth, dtype=float).reshape(-1, 2)
    k = horizon_index(horizon_s, rate_hz)
    if k < 1 or k > len(truth):
        return None
    p = _held(pred, k)[k - 1]
    return float(math.hypot(*(p - truth[k - 1])))


def mhd(a, b) -> float:
    """Modified Hausdorff distance between two point sets."""
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        raise EmptyPolyline("mhd needs two non-empty polylines")
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    return float(max(d.min(axis=1).mean(), d.min(axis=0).mean()))


@dataclass
class ScoreRow:
    track_id: str
    class_label: ManeuverClass
    predictor: str
    mode: str  # most_likely | best_of_all
    euclid_sum: float
    horizon_err: dict  # seconds -> meters or None
    mhd: float

    def value(self, metric: str) -> Optional[float]:
        if metric == "euclid_sum":
            return self.euclid_sum
        if metric == "mhd":
            return self.mhd
        if metric.startswith("horizon_"):
            return self.horizon_err.get(float(metric.split("_", 1)[1]))
        raise KeyError(metric)

    @property
    def label(self) -> str:
        return self.predictor if self.mode == "most_likely" else f"{self.predictor} (best)"


def score_path(pred: np.ndarray, truth: np.ndarray, rate_hz: float, horizons=HORIZONS) -> dict:
    """All metrics for one polyline; pred is cut to the truth length for MHD."""
    pred = np.asarray(pred, dtype=float).reshape(-1, 2)
    truth = np.asarray(truth, dtype=float).reshape(-1, 2)
    return {
        "euclid_sum": euclid_sum(pred, truth),
        "horizon": {h: horizon_error(pred, truth, h, rate_hz) for h in horizons},
        "mhd": mhd(pred[: len(truth)], truth),
    }


def score_model(proposals: Sequence[PathProposal], truth, *, track_id, class_label, predictor: str,
                rate_hz: float, modes=("most_likely", "best_of_all"), horizons=HORIZONS) -> list[ScoreRow]:
    """Score the top-ranked proposal and/or the per-metric best of all proposals."""
    if not proposals:
        raise NoProposals(f"{predictor}: no proposals for track {track_id}")
    scores = [score_path(p.xy, truth, rate_hz, horizons) for p in proposals]
    rows = []
    for mode in modes:
        if mode == "most_likely":
            s = scores[0]
            rows.append(ScoreRow(str(track_id), ManeuverClass(class_label), predictor, mode,
                                 s["euclid_sum"], dict(s["horizon"]), s["mhd"]))
        elif mode == "best_of_all":
            hz = {}
            for h in horizons:
                vals = [s["horizon"][h] for s in scores if s["horizon"][h] is not None]
                hz[h] = min(vals) if vals else None
            rows.append(ScoreRow(str(track_id), ManeuverClass(class_label), predictor, mode,
                                 min(s["euclid_sum"] for s in scores), hz, min(s["mhd"] for s in scores)))
        else:
            raise ValueError(f"unknown mode {mode!r}")
    return rows


def worst_mean(values: Sequence[float], q: float) -> float:
    """Mean of the ceil(q n / 100) largest values."""
    v = np.sort(np.asarray(values, dtype=float))[::-1]
    k = max(1, math.ceil(q * len(v) / 100 - 1e-9))
    return float(v[:k].mean())


@dataclass(frozen=True)
class AggRow:
    class_label: str
    predictor: str
    metric: str
    statistic: str
    value: float
    n: int


def aggregate(rows: Sequence[ScoreRow], metrics=METRICS) -> list[AggRow]:
    if not rows:
        raise ValueError("nothing to aggregate")
    groups = defaultdict(list)
    for r in sorted(rows, key=lambda r: (r.track_id, r.label)):
        groups[(r.class_label.value, r.label)].append(r)
    predictors = list(dict.fromkeys(r.label for r in rows))
    out = []
    for c in CLASSES:
        for pred in predictors:
            members = groups.get((c.value, pred), [])
            for m in metrics:
                vals = [r.value(m) for r in members if r.value(m) is not None]
                for st in STATS:
                    if not vals:
                        val = float("nan")
                    elif st == "mean":
                        val = float(np.mean(vals))
                    else:
                        val = worst_mean(vals, int(st[5:]))
                    out.append(AggRow(c.value, pred, m, st, val, len(vals)))
    return out


def lookup(agg: Sequence[AggRow], class_label, predictor, metric, statistic="mean") -> float:
    c = ManeuverClass(class_label).value
    for r in agg:
        if (r.class_label, r.predictor, r.metric, r.statistic) == (c, predictor, metric, statistic):
            return r.value
    raise KeyError((c, predictor, metric, statistic))


def scores_csv(rows: Sequence[ScoreRow], horizons=HORIZONS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["track_id", "class", "predictor", "mode", "euclid_sum"] + [f"horizon_{h}" for h in horizons] + ["mhd"])
    for r in sorted(rows, key=lambda r: (r.track_id, r.predictor, r.mode)):
        hz = ["" if r.horizon_err.get(h) is None else repr(r.horizon_err[h]) for h in horizons]
        w.writerow([r.track_id, r.class_label.value, r.predictor, r.mode, repr(r.euclid_sum)] + hz + [repr(r.mhd)])
    return buf.getvalue()


def report_csv(agg: Sequence[AggRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "predictor", "metric", "statistic", "value", "n"])
    for r in agg:
        w.writerow([r.class_label, r.predictor, r.metric, r.statistic, f"{r.value:.6f}", r.n])
    return buf.getvalue()


def format_table(agg: Sequence[AggRow], metrics=METRICS) -> str:
    """Text table: one row per class and predictor, mean / worst 5% / worst 1% per metric."""
    keys = list(dict.fromkeys((r.class_label, r.predictor) for r in agg))
    vals = {(r.class_label, r.predictor, r.metric, r.statistic): r.value for r in agg}
    ns = {(r.class_label, r.predictor): r.n for r in agg if r.metric == "euclid_sum"}
    head1 = f"{'Class':<9} {'Predictor':<18} {'n':>5}"
    head2 = " " * len(head1)
    for m in metrics:
        head1 += f" | {m:^26}"
        head2 += f" | {'mean':>8} {'5%':>8} {'1%':>8}"
    lines = [head1, head2, "-" * len(head1)]
    for c, p in keys:
        line = f"{c:<9} {p:<18} {ns.get((c, p), 0):>5}"
        for m in metrics:
            line += " | " + " ".join(f"{vals[(c, p, m, st)]:>8.2f}" for st in STATS)
        lines.append(line)
    return "\n".join(lines) + "\n"
