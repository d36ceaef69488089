"""Track ingestion: frame transforms, maneuver labelling, snippet extraction,
normalisation statistics and class balancing.

On-disk layout of one intersection directory::

    tracks.csv         track_id,timestamp,x,y,v,heading   (world frame)
    intersection.json  approach frames, arms and gates (see IntersectionSpec)
"""
from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence, TypeVar

import numpy as np
import pandas as pd

from .types import (
    CLASSES,
    STDEV_FLOOR,
    ManeuverClass,
    ModelConfig,
    NormStats,
    TrackSnippet,
    wrap_angle,
)

MAX_GAP_S = 0.5
CSV_COLUMNS = ("track_id", "timestamp", "x", "y", "v", "heading")
TRACKS_FILE = "tracks.csv"
SIDECAR_FILE = "intersection.json"


class DataError(Exception):
    """Base class for ingestion failures."""


class TrackGapError(DataError):
    pass


class NoEntrance(DataError):
    pass


class NoExit(DataError):
    pass


class AmbiguousGates(DataError):
    pass


class UTurn(DataError):
    pass


class TrackTooShort(DataError):
    pass


class NeverEntered(DataError):
    pass


class EmptyTrainingSet(DataError):
    pass


class MissingClass(DataError):
    pass


# ---------------------------------------------------------------- tracks


@dataclass(frozen=True)
class RawTrack:
    """Time-ordered samples of one vehicle; arrays all share one length."""

    track_id: Any
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    heading: np.ndarray

    def __len__(self):
        return len(self.t)

    def validate(self, max_gap: float = MAX_GAP_S) -> None:
        n = len(self.t)
        for name in ("x", "y", "v", "heading"):
            if len(getattr(self, name)) != n:
                raise DataError(f"track {self.track_id}: column {name} length mismatch")
        if n == 0:
            raise DataError(f"track {self.track_id}: empty")
        dt = np.diff(self.t)
        if np.any(dt <= 0):
            raise DataError(f"track {self.track_id}: timestamps not strictly increasing")
        if np.any(dt > max_gap):
            raise TrackGapError(f"track {self.track_id}: gap of {dt.max():.3f} s exceeds {max_gap} s")

    @property
    def xy(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    def features(self) -> np.ndarray:
        """(n, 4) array of x, y, v, theta."""
        return np.column_stack([self.x, self.y, self.v, self.heading])

    def subsample(self, factor: int = 2) -> "RawTrack":
        s = slice(None, None, factor)
        return RawTrack(self.track_id, self.t[s], self.x[s], self.y[s], self.v[s], self.heading[s])


@dataclass(frozen=True)
class ApproachFrame:
    """Rigid map from world coordinates into one approach's intersection frame.

    frame = R(rotation) @ (world - origin); headings gain ``rotation``.
    """

    origin_world: tuple[float, float]
    rotation: float
    entrance_line: float = 0.0

    def _rot(self, angle):
        c, s = math.cos(angle), math.sin(angle)
        return np.array([[c, -s], [s, c]])

    def to_frame_xy(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return (xy - np.asarray(self.origin_world)) @ self._rot(self.rotation).T

    def to_world_xy(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return xy @ self._rot(-self.rotation).T + np.asarray(self.origin_world)

    def to_dict(self) -> dict:
        return {"origin": list(self.origin_world), "rotation": self.rotation, "entrance_line": self.entrance_line}

    @classmethod
    def from_dict(cls, d: dict) -> "ApproachFrame":
        return cls(tuple(map(float, d["origin"])), float(d["rotation"]), float(d.get("entrance_line", 0.0)))


def to_intersection_frame(t: RawTrack, f: ApproachFrame) -> RawTrack:
    xy = f.to_frame_xy(t.xy)
    return RawTrack(t.track_id, t.t.copy(), xy[:, 0], xy[:, 1], t.v.copy(), wrap_angle(t.heading + f.rotation))


def from_intersection_frame(t: RawTrack, f: ApproachFrame) -> RawTrack:
    xy = f.to_world_xy(t.xy)
    return RawTrack(t.track_id, t.t.copy(), xy[:, 0], xy[:, 1], t.v.copy(), wrap_angle(t.heading - f.rotation))


# ---------------------------------------------------------------- gates


@dataclass(frozen=True)
class Gate:
    """Rectangle tagged with an arm and a kind ('entrance' or 'exit').

    Stored as centre, half extents and orientation so that it survives rigid
    frame changes; world-frame gates in the sidecar are axis aligned.
    """

    arm: str
    kind: str
    center: tuple[float, float]
    half: tuple[float, float]
    angle: float = 0.0

    def contains(self, xy: np.ndarray) -> np.ndarray:
        d = np.asarray(xy, dtype=float) - np.asarray(self.center)
        c, s = math.cos(self.angle), math.sin(self.angle)
        u = d[..., 0] * c + d[..., 1] * s
        w = -d[..., 0] * s + d[..., 1] * c
        return (np.abs(u) <= self.half[0]) & (np.abs(w) <= self.half[1])

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        hx, hy = self.half
        local = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
        return local @ np.array([[c, -s], [s, c]]).T + np.asarray(self.center)

    def to_dict(self) -> dict:
        if abs(self.angle) > 1e-12:
            return {"arm": self.arm, "kind": self.kind, "center": list(self.center),
                    "half": list(self.half), "angle": self.angle}
        cx, cy = self.center
        hx, hy = self.half
        return {"arm": self.arm, "kind": self.kind,
                "xmin": cx - hx, "xmax": cx + hx, "ymin": cy - hy, "ymax": cy + hy}

    @classmethod
    def from_dict(cls, d: dict) -> "Gate":
        if "xmin" in d:
            cx = 0.5 * (d["xmin"] + d["xmax"])
            cy = 0.5 * (d["ymin"] + d["ymax"])
            return cls(str(d["arm"]), d["kind"], (cx, cy), (0.5 * (d["xmax"] - d["xmin"]), 0.5 * (d["ymax"] - d["ymin"])))
        return cls(str(d["arm"]), d["kind"], tuple(d["center"]), tuple(d["half"]), float(d.get("angle", 0.0)))


@dataclass(frozen=True)
class GateSet:
    gates: tuple[Gate, ...]
    # outward direction (radians) of each arm, used to turn an arm pair into a maneuver
    arm_directions: dict

    def __post_init__(self):
        for g in self.gates:
            if g.kind not in ("entrance", "exit"):
                raise ValueError(f"gate kind must be 'entrance' or 'exit', got {g.kind!r}")
        ent = [g for g in self.gates if g.kind == "entrance"]
        ext = [g for g in self.gates if g.kind == "exit"]
        for a in ent:
            for b in ext:
                if _boxes_overlap(a, b):
                    raise ValueError(f"entrance gate {a.arm} overlaps exit gate {b.arm}")

    def to_frame(self, f: ApproachFrame) -> "GateSet":
        gates = tuple(
            replace(g, center=tuple(f.to_frame_xy(np.array(g.center))), angle=g.angle + f.rotation)
            for g in self.gates
        )
        dirs = {k: wrap_angle(v + f.rotation) for k, v in self.arm_directions.items()}
        return GateSet(gates, dirs)


def _boxes_overlap(a: Gate, b: Gate) -> bool:
    # separating axis test over both boxes' edge normals
    ca, cb = a.corners(), b.corners()
    for ang in (a.angle, a.angle + math.pi / 2, b.angle, b.angle + math.pi / 2):
        axis = np.array([math.cos(ang), math.sin(ang)])
        pa, pb = ca @ axis, cb @ axis
        if pa.max() < pb.min() or pb.max() < pa.min():
            return False
    return True


def maneuver_from_arms(entry_dir: float, exit_dir: float) -> Optional[ManeuverClass]:
    """Classify by relative direction of the exit arm; None means u-turn."""
    rel = wrap_angle(exit_dir - entry_dir)
    # exits: -pi/2 left, pi straight, +pi/2 right, 0 back out the same arm
    candidates = {ManeuverClass.LEFT: -math.pi / 2, ManeuverClass.RIGHT: math.pi / 2,
                  ManeuverClass.STRAIGHT: math.pi, None: 0.0}
    return min(candidates, key=lambda k: abs(wrap_angle(rel - candidates[k])))


@dataclass(frozen=True)
class GateLabel:
    entrance_arm: str
    exit_arm: str
    label: ManeuverClass


def label_maneuver(t: RawTrack, g: GateSet) -> GateLabel:
    """Label a track by the entrance and exit gates it passes through.

    ``t`` and ``g`` must be in the same coordinate frame. U-turns raise
    :class:`UTurn`; they are dropped at ingestion.
    """
    xy = t.xy
    entered = {}
    for gate in g.gates:
        if gate.kind != "entrance":
            continue
        hit = np.flatnonzero(gate.contains(xy))
        if hit.size:
            entered[gate.arm] = min(entered.get(gate.arm, hit[0]), hit[0])
    if not entered:
        raise NoEntrance(f"track {t.track_id}: no entrance gate crossed")
    if len(entered) > 1:
        raise AmbiguousGates(f"track {t.track_id}: crosses entrance gates {sorted(entered)}")
    (entrance_arm, first_in), = entered.items()
    exit_hits = []
    for gate in g.gates:
        if gate.kind != "exit":
            continue
        hit = np.flatnonzero(gate.contains(xy[first_in:]))
        if hit.size:
            exit_hits.append((hit[0], gate.arm))
    if not exit_hits:
        raise NoExit(f"track {t.track_id}: never reaches an exit gate")
    exit_arm = min(exit_hits)[1]
    label = maneuver_from_arms(g.arm_directions[entrance_arm], g.arm_directions[exit_arm])
    if label is None:
        raise UTurn(f"track {t.track_id}: u-turn via arm {exit_arm}")
    return GateLabel(entrance_arm, exit_arm, label)


# ---------------------------------------------------------------- intersection files


@dataclass(frozen=True)
class IntersectionSpec:
    """Sidecar description of one intersection."""

    name: str
    approaches: dict  # arm -> ApproachFrame
    gates: GateSet
    sample_rate_hz: float = 25.0
    columns: dict = field(default_factory=dict)  # canonical name -> column name in the CSV

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "sample_rate_hz": self.sample_rate_hz,
            "arms": {k: v for k, v in self.gates.arm_directions.items()},
            "approaches": {k: f.to_dict() for k, f in self.approaches.items()},
            "gates": [gt.to_dict() for gt in self.gates.gates],
        }
        if self.columns:
            out["columns"] = dict(self.columns)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "IntersectionSpec":
        gates = GateSet(tuple(Gate.from_dict(x) for x in d["gates"]),
                        {str(k): float(v) for k, v in d["arms"].items()})
        approaches = {str(k): ApproachFrame.from_dict(v) for k, v in d["approaches"].items()}
        return cls(d.get("name", "intersection"), approaches, gates,
                   float(d.get("sample_rate_hz", 25.0)), dict(d.get("columns", {})))


def write_intersection(out_dir, spec: IntersectionSpec, tracks: Sequence[RawTrack]) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / TRACKS_FILE, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for tr in tracks:
            for row in zip(tr.t, tr.x, tr.y, tr.v, tr.heading):
                fh.write(f"{tr.track_id}," + ",".join(repr(float(v)) for v in row) + "\n")
    with open(out_dir / SIDECAR_FILE, "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_intersection(path) -> tuple[IntersectionSpec, list[RawTrack]]:
    """Load an intersection directory (tracks CSV + sidecar JSON)."""
    path = Path(path)
    with open(path / SIDECAR_FILE, encoding="utf-8") as fh:
        spec = IntersectionSpec.from_dict(json.load(fh))
    csv_name = spec.columns.get("file", TRACKS_FILE)
    df = pd.read_csv(path / csv_name, encoding="utf-8", float_precision="round_trip")
    rename = {v: k for k, v in spec.columns.items() if k in CSV_COLUMNS}
    df = df.rename(columns=rename)
    missing = [c for c in CSV_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    tracks = []
    for tid, grp in df.groupby("track_id", sort=True):
        grp = grp.sort_values("timestamp", kind="stable")
        tracks.append(RawTrack(tid, *(grp[c].to_numpy(dtype=float) for c in CSV_COLUMNS[1:])))
    return spec, tracks


# ---------------------------------------------------------------- labelled tracks


@dataclass(frozen=True)
class LabeledTrack:
    """Frame-local, subsampled track with its maneuver label."""

    track: RawTrack
    label: ManeuverClass
    arm: str
    frame: ApproachFrame

    @property
    def track_id(self):
        return self.track.track_id


@dataclass
class IngestReport:
    kept: int = 0
    rejected: Counter = field(default_factory=Counter)


def prepare_tracks(spec: IntersectionSpec, tracks: Iterable[RawTrack], cfg: ModelConfig,
                   report: Optional[IngestReport] = None) -> list[LabeledTrack]:
    """Validate, label, move into the approach frame and resample each track."""
    factor = max(1, int(round(spec.sample_rate_hz / cfg.sample_rate)))
    if report is None:
        report = IngestReport()
    out = []
    for tr in sorted(tracks, key=lambda t: str(t.track_id)):
        try:
            tr.validate()
            lab = label_maneuver(tr, spec.gates)
            frame = spec.approaches.get(lab.entrance_arm)
            if frame is None:
                raise NoEntrance(f"track {tr.track_id}: no approach frame for arm {lab.entrance_arm}")
        except DataError as exc:
            report.rejected[type(exc).__name__] += 1
            continue
        local = to_intersection_frame(tr, frame).subsample(factor)
        out.append(LabeledTrack(local, lab.label, lab.entrance_arm, frame))
        report.kept += 1
    return out


def load_labeled(path, cfg: ModelConfig, report: Optional[IngestReport] = None) -> list[LabeledTrack]:
    spec, tracks = read_intersection(path)
    return prepare_tracks(spec, tracks, cfg, report)


# ---------------------------------------------------------------- snippets


def _window(feats: np.ndarray, i: int, cfg: ModelConfig):
    n = len(feats)
    obs = feats[i - cfg.h + 1: i + 1]
    fut = feats[i + 1: i + 1 + cfg.p, :2]
    n_valid = len(fut)
    pad = np.zeros(cfg.p, dtype=bool)
    if n_valid < cfg.p:
        last = feats[n - 1, :2]
        fut = np.vstack([fut, np.repeat(last[None, :], cfg.p - n_valid, axis=0)])
        pad[n_valid:] = True
    return obs.copy(), fut.copy(), pad


def snippet_at(lt: LabeledTrack, i: int, cfg: ModelConfig) -> TrackSnippet:
    feats = lt.track.features()
    if not cfg.h - 1 <= i <= len(feats) - 2:
        raise TrackTooShort(f"track {lt.track_id}: no snippet ending at index {i}")
    obs, fut, pad = _window(feats, i, cfg)
    return TrackSnippet(obs, fut, pad, lt.label, lt.track_id, int(i))


def snippet_indices(n: int, cfg: ModelConfig) -> range:
    return range(cfg.h - 1, n - 1)


def extract_snippets(lt: LabeledTrack, cfg: ModelConfig) -> list[TrackSnippet]:
    """All snippets of a track; futures running past the end are padded."""
    n = len(lt.track)
    if n < cfg.h + 1:
        raise TrackTooShort(f"track {lt.track_id}: {n} samples, need at least {cfg.h + 1}")
    feats = lt.track.features()
    out = []
    for i in snippet_indices(n, cfg):
        obs, fut, pad = _window(feats, i, cfg)
        out.append(TrackSnippet(obs, fut, pad, lt.label, lt.track_id, i))
    return out


def entrance_index(lt: LabeledTrack, f: Optional[ApproachFrame] = None) -> int:
    frame = f or lt.frame
    y = lt.track.y
    crossed = np.flatnonzero(y >= frame.entrance_line)
    if crossed.size == 0:
        raise NeverEntered(f"track {lt.track_id}: never crosses the entrance line")
    return int(crossed[0])


def entrance_snippet(lt: LabeledTrack, f: Optional[ApproachFrame], cfg: ModelConfig) -> TrackSnippet:
    """The test-time snippet whose last observation is the first sample on or past the entrance line."""
    i = entrance_index(lt, f)
    if i < cfg.h - 1 or i > len(lt.track) - 2:
        raise TrackTooShort(f"track {lt.track_id}: entrance at index {i} leaves no full window")
    return snippet_at(lt, i, cfg)


# ---------------------------------------------------------------- statistics


def compute_norm_stats(train: Sequence[TrackSnippet]) -> NormStats:
    """Population mean / stdev per channel over every observation point."""
    if len(train) == 0:
        raise EmptyTrainingSet("cannot compute normalisation statistics of an empty set")
    obs = np.concatenate([np.asarray(s.obs, dtype=float) for s in train], axis=0)
    return NormStats(obs.mean(axis=0), np.maximum(obs.std(axis=0), STDEV_FLOOR))


T = TypeVar("T")


def balance_classes(train: Sequence[T], seed, label: Callable[[T], Any] = lambda s: s.class_label) -> list[T]:
    """Oversample every class up to the largest class count.

    The input order is kept; extra draws for each class (in class order) are
    appended. Every returned item is one of the inputs.
    """
    by_class = defaultdict(list)
    for item in train:
        by_class[ManeuverClass(label(item))].append(item)
    missing = [c.value for c in CLASSES if not by_class[c]]
    if missing:
        raise MissingClass(f"no training snippets for class(es) {missing}")
    target = max(len(v) for v in by_class.values())
    rng = np.random.default_rng(seed)
    out = list(train)
    for c in CLASSES:
        items = by_class[c]
        extra = target - len(items)
        if extra:
            picks = rng.integers(0, len(items), size=extra)
            out.extend(items[k] for k in picks)
    return out


# ---------------------------------------------------------------- snippet bank


class SnippetBank:
    """Index over every snippet of a set of tracks, materialised lazily as arrays.

    Holding every overlapping window explicitly is wasteful at dataset scale,
    so the bank keeps one feature array per track plus (track, t_index) pairs.
    """

    def __init__(self, tracks: Sequence[LabeledTrack], cfg: ModelConfig):
        self.cfg = cfg
        self.tracks = [lt for lt in tracks if len(lt.track) >= cfg.h + 1]
        self.feats = [lt.track.features() for lt in self.tracks]
        idx = []
        for k, f in enumerate(self.feats):
            for i in snippet_indices(len(f), cfg):
                idx.append((k, i))
        self.index = np.array(idx, dtype=np.int64).reshape(-1, 2)
        self.labels = np.array([self.tracks[k].label.value for k, _ in idx], dtype=object)

    def __len__(self):
        return len(self.index)

    def label_of(self, j: int) -> ManeuverClass:
        return self.tracks[int(self.index[j, 0])].label

    def snippet(self, j: int) -> TrackSnippet:
        k, i = self.index[j]
        return snippet_at(self.tracks[int(k)], int(i), self.cfg)

    def batch(self, rows: Sequence[int], p: Optional[int] = None):
        """Arrays (obs (B,h,4), future (B,p,2), pad (B,p), ids) for bank rows."""
        cfg = self.cfg
        p = cfg.p if p is None else p
        B = len(rows)
        obs = np.empty((B, cfg.h, 4))
        fut = np.empty((B, p, 2))
        pad = np.zeros((B, p), dtype=bool)
        ids = []
        for b, j in enumerate(rows):
            k, i = self.index[j]
            f = self.feats[int(k)]
            n = len(f)
            obs[b] = f[i - cfg.h + 1: i + 1]
            seg = f[i + 1: i + 1 + p, :2]
            m = len(seg)
            fut[b, :m] = seg
            if m < p:
                fut[b, m:] = f[n - 1, :2]
                pad[b, m:] = True
            ids.append((self.tracks[int(k)].track_id, int(i)))
        return obs, fut, pad, ids

    def norm_stats(self) -> NormStats:
        """Same result as compute_norm_stats over every snippet, without materialising them."""
        if len(self.index) == 0:
            raise EmptyTrainingSet("cannot compute normalisation statistics of an empty set")
        h = self.cfg.h
        total = np.zeros(4)
        count = 0
        weights = []
        for f in self.feats:
            n = len(f)
            # sample j appears in windows ending at i in [max(h-1, j), min(j+h-1, n-2)]
            j = np.arange(n)
            lo = np.maximum(h - 1, j)
            hi = np.minimum(j + h - 1, n - 2)
            w = np.clip(hi - lo + 1, 0, None).astype(float)
            weights.append(w)
            total += w @ f
            count += w.sum()
        mean = total / count
        var = sum(w @ (f - mean) ** 2 for w, f in zip(weights, self.feats)) / count
        return NormStats(mean, np.maximum(np.sqrt(var), STDEV_FLOOR))


def split_by_track(tracks: Sequence[LabeledTrack], val_fraction: float = 0.2, seed=0):
    """Random train/validation split over whole tracks (never over snippets)."""
    ids = sorted({str(t.track_id) for t in tracks})
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_val = int(round(len(ids) * val_fraction))
    val_ids = {ids[k] for k in order[:n_val]}
    train = [t for t in tracks if str(t.track_id) not in val_ids]
    val = [t for t in tracks if str(t.track_id) in val_ids]
    return train, val
