"""Domain types shared across the prediction pipeline.

All positions are in meters in the intersection frame (approach travelling
towards +y, origin at the centre of the approach road on the entrance line).
Angles are radians in the principal range (-pi, pi].
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields
from typing import Any, Optional

import numpy as np

WEIGHT_TOL = 1e-6
STDEV_FLOOR = 1e-6
CHANNELS = ("x", "y", "v", "theta")


class ManeuverClass(str, enum.Enum):
    LEFT = "Left"
    STRAIGHT = "Straight"
    RIGHT = "Right"


CLASSES = (ManeuverClass.LEFT, ManeuverClass.STRAIGHT, ManeuverClass.RIGHT)


class Variant(str, enum.Enum):
    """Decoder feedback regime."""

    FF = "FF"  # sampled feedback
    ZF = "ZF"  # zero feedback
    FL = "FL"  # first-step loss only

    @classmethod
    def parse(cls, value: "str | Variant") -> "Variant":
        if isinstance(value, Variant):
            return value
        return cls(str(value).upper())


def wrap_angle(theta):
    """Wrap angles into (-pi, pi]. Works on scalars and arrays."""
    wrapped = math.pi - np.mod(math.pi - np.asarray(theta, dtype=float), 2 * math.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class ObsPoint:
    x: float
    y: float
    v: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("ObsPoint position must be finite")
        if not self.v >= 0:
            raise ValueError(f"ObsPoint speed must be non-negative, got {self.v}")
        if not -math.pi < self.theta <= math.pi:
            raise ValueError(f"ObsPoint theta outside (-pi, pi]: {self.theta}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.v, self.theta])


@dataclass(frozen=True)
class FuturePoint:
    x: float
    y: float
    is_pad: bool = False


@dataclass(frozen=True)
class TrackSnippet:
    """Observation window plus padded future ground truth.

    ``obs`` has shape (h, 4) with columns (x, y, v, theta); ``future`` has shape
    (p, 2); ``is_pad`` has shape (p,). ``t_index`` is the index of the last
    observation in the source (subsampled) track.
    """

    obs: np.ndarray
    future: np.ndarray
    is_pad: np.ndarray
    class_label: ManeuverClass
    track_id: Any
    t_index: int

    @property
    def obs_points(self) -> list[ObsPoint]:
        return [ObsPoint(*map(float, row)) for row in self.obs]

    @property
    def future_points(self) -> list[FuturePoint]:
        return [FuturePoint(float(x), float(y), bool(g)) for (x, y), g in zip(self.future, self.is_pad)]

    @property
    def n_valid(self) -> int:
        """Number of non-pad future steps."""
        return int(len(self.is_pad) - np.count_nonzero(self.is_pad))


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    mean: tuple[float, float]
    stdev: tuple[float, float]
    corr: float


@dataclass(frozen=True)
class MdnStep:
    pad_prob: float
    components: tuple[MixtureComponent, ...]

    def __post_init__(self):
        if not 0.0 < self.pad_prob < 1.0:
            raise ValueError(f"pad_prob must lie in (0, 1), got {self.pad_prob}")
        if not self.components:
            raise ValueError("MdnStep needs at least one component")
        total = math.fsum(c.weight for c in self.components)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"mixture weights sum to {total}, expected 1")
        for c in self.components:
            if not (c.stdev[0] > 0 and c.stdev[1] > 0):
                raise ValueError("component stdev must be strictly positive")
            if not abs(c.corr) < 1:
                raise ValueError("component correlation must lie in (-1, 1)")
            if c.weight < 0:
                raise ValueError("component weight must be non-negative")

    @property
    def n_components(self) -> int:
        return len(self.components)

    @classmethod
    def from_arrays(cls, pad_prob, weights, means, stdevs, corrs) -> "MdnStep":
        comps = tuple(
            MixtureComponent(float(w), (float(m[0]), float(m[1])), (float(s[0]), float(s[1])), float(r))
            for w, m, s, r in zip(weights, means, stdevs, corrs)
        )
        return cls(float(pad_prob), comps)

    def arrays(self):
        """Return (weights (M,), means (M,2), stdevs (M,2), corrs (M,))."""
        w = np.array([c.weight for c in self.components])
        mu = np.array([c.mean for c in self.components], dtype=float)
        sd = np.array([c.stdev for c in self.components], dtype=float)
        rho = np.array([c.corr for c in self.components])
        return w, mu, sd, rho


@dataclass(frozen=True)
class PredictionSequence:
    steps: tuple[MdnStep, ...]
    source_variant: Variant

    def __len__(self):
        return len(self.steps)


@dataclass(frozen=True)
class PathProposal:
    """One consolidated mode: centroids ordered by increasing future step."""

    points: tuple[tuple[float, float, int], ...]
    weight: float

    def __post_init__(self):
        if not self.points:
            raise ValueError("PathProposal polyline must be non-empty")
        t = [p[2] for p in self.points]
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("PathProposal t_index must be strictly increasing")
        if self.weight < 0:
            raise ValueError("PathProposal weight must be non-negative")

    @property
    def xy(self) -> np.ndarray:
        return np.array([[p[0], p[1]] for p in self.points], dtype=float)

    def to_json(self, rank: int) -> dict:
        return {"rank": rank, "weight": self.weight, "points": [[x, y, t] for x, y, t in self.points]}


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    stdev: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(4)
        stdev = np.maximum(np.asarray(self.stdev, dtype=float).reshape(4), STDEV_FLOOR)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "stdev", stdev)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "stdev": self.stdev.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.array(d["mean"], dtype=float), np.array(d["stdev"], dtype=float))

    @classmethod
    def identity(cls) -> "NormStats":
        return cls(np.zeros(4), np.ones(4))


class _ConfigMixin:
    @classmethod
    def from_dict(cls, d: Optional[dict]):
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.value if isinstance(value, enum.Enum) else value
        return out


@dataclass(frozen=True)
class ModelConfig(_ConfigMixin):
    """Network hyperparameters. Defaults are the full-size model; desk() is a laptop-sized one."""

    M: int = 6
    h: int = 7
    p: int = 60
    lstm_width: int = 256
    lstm_layers: int = 3
    alpha: float = 1.0
    beta: float = 10.0
    sample_rate: float = 12.5

    def __post_init__(self):
        for name in ("M", "h", "p", "lstm_width", "lstm_layers"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"ModelConfig.{name} must be positive")
        if self.sample_rate <= 0:
            raise ValueError("ModelConfig.sample_rate must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be non-negative")

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def n_outputs(self) -> int:
        return 1 + 6 * self.M

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """Small configuration that trains on one CPU core in minutes."""
        base = dict(M=3, lstm_width=32, lstm_layers=2)
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    message: str = ""
    field: str = ""

    def __bool__(self):
        return self.ok


def validate_snippet(s: TrackSnippet, cfg: ModelConfig) -> ValidationResult:
    """Check the snippet invariants; report the first violation."""
    obs = np.asarray(s.obs)
    fut = np.asarray(s.future)
    pad = np.asarray(s.is_pad, dtype=bool)
    if obs.ndim != 2 or obs.shape[1] != 4:
        return ValidationResult(False, "obs must have shape (h, 4)", "obs")
    if obs.shape[0] != cfg.h:
        return ValidationResult(False, "obs length mismatch", "obs")
    if fut.shape != (cfg.p, 2):
        return ValidationResult(False, "future length mismatch", "future")
    if pad.shape != (cfg.p,):
        return ValidationResult(False, "pad flag length mismatch", "is_pad")
    for i, row in enumerate(obs):
        if not np.all(np.isfinite(row)):
            return ValidationResult(False, "non-finite observation", f"obs[{i}]")
        if row[2] < 0:
            return ValidationResult(False, "negative speed", f"obs[{i}].v")
        if not -math.pi < row[3] <= math.pi:
            return ValidationResult(False, "theta outside principal range", f"obs[{i}].theta")
    if not np.all(np.isfinite(fut)):
        return ValidationResult(False, "non-finite future point", "future")
    seen_pad = False
    last_valid = None
    for i, g in enumerate(pad):
        if g:
            seen_pad = True
            if last_valid is not None and not np.array_equal(fut[i], last_valid):
                return ValidationResult(False, "pad point differs from last valid point", f"future[{i}]")
        else:
            if seen_pad:
                return ValidationResult(False, "pad suffix violated", f"future[{i}].is_pad")
            last_valid = fut[i]
    try:
        ManeuverClass(s.class_label)
    except ValueError:
        return ValidationResult(False, "unknown class label", "class_label")
    return ValidationResult(True)
