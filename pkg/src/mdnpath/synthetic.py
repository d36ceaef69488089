"""Synthetic single-lane roundabout traversals.

Geometry (approach frame of the south arm, vehicle driving towards +y):

* ring centre at (0, ring_y); the circulating path has radius ``ring_radius``
  and is driven clockwise (left-hand traffic);
* the approach lane sits ``lane_offset`` to the left of the arm axis; an
  anticlockwise fillet of radius ``fillet_radius`` joins it tangentially to the
  ring, and a mirrored fillet leaves the ring onto the exit arm.

Left turns leave at the first arm (shortest ring arc), right turns at the
third. ``ring_y`` is chosen so that a vehicle on the nominal lane starts its
entry fillet exactly on the entrance line y = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import ApproachFrame, Gate, GateSet, IntersectionSpec, RawTrack
from .types import CLASSES, ManeuverClass, _ConfigMixin, wrap_angle

SAMPLE_RATE_HZ = 25.0
# outward arm directions in the south-approach frame
LOCAL_ARMS = {"S": -math.pi / 2, "W": math.pi, "N": math.pi / 2, "E": 0.0}
EXIT_ARM = {ManeuverClass.LEFT: "W", ManeuverClass.STRAIGHT: "N", ManeuverClass.RIGHT: "E"}
ARM_ORDER = ("S", "W", "N", "E")


@dataclass(frozen=True)
class GeneratorConfig(_ConfigMixin):
    ring_radius: float = 8.0
    approach_length: float = 30.0
    departure_length: float = 20.0
    speed_mean: float = 6.0
    speed_jitter: float = 0.1
    noise_sigma: float = 0.15
    class_mix: tuple = (0.2, 0.6, 0.2)  # Left, Straight, Right
    stop_prob: float = 0.1
    seed: int = 0
    fillet_radius: Optional[float] = None  # defaults to ring_radius
    lane_offset: float = 2.5
    # per-class lane offsets and speed factors: drivers position and pace for their exit
    class_lane_offset: tuple = (3.0, 2.5, 2.0)
    lane_jitter: float = 0.25
    class_speed_factor: tuple = (0.85, 1.0, 0.9)
    stop_distance: float = 1.0
    decel: float = 2.0
    accel: float = 1.5
    entry_arms: tuple = ("S", "N")
    world_center: tuple = (200.0, 100.0)
    world_quarter_turns: int = 1
    right_hand_traffic: bool = False

    def __post_init__(self):
        for name in ("class_mix", "class_lane_offset", "class_speed_factor", "entry_arms", "world_center"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if len(self.class_mix) != 3 or min(self.class_mix) < 0 or abs(sum(self.class_mix) - 1.0) > 1e-9:
            raise ValueError("class_mix must be three non-negative probabilities summing to 1")
        for name in ("ring_radius", "approach_length", "departure_length", "speed_mean", "lane_offset"):
            if not getattr(self, name) > 0:
                raise ValueError(f"GeneratorConfig.{name} must be positive")
        if self.noise_sigma < 0 or self.speed_jitter < 0 or self.lane_jitter < 0:
            raise ValueError("noise and jitter must be non-negative")
        if not 0 <= self.stop_prob <= 1:
            raise ValueError("stop_prob must be a probability")
        if self.fillet_radius is not None and self.fillet_radius < self.ring_radius:
            raise ValueError("fillet_radius must be at least ring_radius")
        if any(a not in LOCAL_ARMS for a in self.entry_arms) or not self.entry_arms:
            raise ValueError(f"entry_arms must be drawn from {sorted(LOCAL_ARMS)}")

    @property
    def rf(self) -> float:
        return self.ring_radius if self.fillet_radius is None else self.fillet_radius

    @property
    def max_lane_offset(self) -> float:
        # keep the left turn's ring arc positive
        lim = (self.ring_radius + self.rf) * math.sin(math.pi / 2 - self._delta(self.lane_offset)) - self.rf
        return min(lim - 0.05, self.ring_radius - 0.5)

    def _delta(self, a: float) -> float:
        return math.asin((a + self.rf) / (self.ring_radius + self.rf))

    @property
    def ring_y(self) -> float:
        R, rf, a = self.ring_radius, self.rf, self.lane_offset
        return math.sqrt((R + rf) ** 2 - (a + rf) ** 2)


# ---------------------------------------------------------------- geometry


@dataclass(frozen=True)
class Segment:
    length: float
    curvature: float


def path_segments(cfg: GeneratorConfig, label: ManeuverClass, a_in: float, a_out: float):
    """Constant-curvature pieces of one noiseless traversal and its start pose."""
    R, rf, yc = cfg.ring_radius, cfg.rf, cfg.ring_y
    y_f = yc - math.sqrt((R + rf) ** 2 - (a_in + rf) ** 2)
    phi_in = math.atan2(y_f - yc, -a_in - rf)
    theta_in = (phi_in - math.pi) % (2 * math.pi)
    delta_out = cfg._delta(a_out)
    theta_out = math.pi / 2 - delta_out  # mirror of the entry fillet
    psi = LOCAL_ARMS[EXIT_ARM[label]]
    phi_out = psi + delta_out
    arc = (phi_in - phi_out) % (2 * math.pi)
    start = (-a_in, -cfg.approach_length, math.pi / 2)
    segs = [
        Segment(y_f + cfg.approach_length, 0.0),
        Segment(rf * theta_in, 1.0 / rf),
        Segment(R * arc, -1.0 / R),
        Segment(rf * theta_out, 1.0 / rf),
        Segment(cfg.departure_length, 0.0),
    ]
    return start, segs


def trace(start, segs, s: np.ndarray):
    """Pose (x, y, heading) at arc lengths ``s`` along the segment chain."""
    s = np.asarray(s, dtype=float)
    x = np.empty_like(s)
    y = np.empty_like(s)
    h = np.empty_like(s)
    x0, y0, h0 = start
    s0 = 0.0
    remaining = np.ones(s.shape, dtype=bool)
    for k, seg in enumerate(segs):
        last = k == len(segs) - 1
        mask = remaining & ((s <= s0 + seg.length) | last)
        u = s[mask] - s0
        if seg.curvature == 0.0:
            x[mask] = x0 + u * math.cos(h0)
            y[mask] = y0 + u * math.sin(h0)
            h[mask] = h0
        else:
            kap = seg.curvature
            x[mask] = x0 + (np.sin(h0 + kap * u) - math.sin(h0)) / kap
            y[mask] = y0 - (np.cos(h0 + kap * u) - math.cos(h0)) / kap
            h[mask] = h0 + kap * u
        remaining &= ~mask
        L = seg.length
        if seg.curvature == 0.0:
            x0, y0 = x0 + L * math.cos(h0), y0 + L * math.sin(h0)
        else:
            kap = seg.curvature
            x0, y0 = x0 + (math.sin(h0 + kap * L) - math.sin(h0)) / kap, y0 - (math.cos(h0 + kap * L) - math.cos(h0)) / kap
            h0 = h0 + kap * L
        s0 += L
    return x, y, wrap_angle(h)


def speed_profile(total: float, v: float, stop: Optional[tuple], cfg: GeneratorConfig, rate: float):
    """Sample arc length and speed at ``rate`` Hz until ``total`` metres are covered.

    ``stop`` is (arc length of the stop point, stop duration) or None.
    """
    dt = 1.0 / rate
    if stop is None:
        n = int(math.floor(total / (v * dt))) + 1
        t = np.arange(n) * dt
        return t, v * t, np.full(n, v)
    s_stop, dur = stop
    s_dec = max(0.0, s_stop - v * v / (2 * cfg.decel))
    # too close to stop from full speed: the track starts already braking
    v_dec = v if s_dec > 0 else math.sqrt(2 * cfg.decel * s_stop)
    t1 = s_dec / v
    t2 = t1 + v_dec / cfg.decel
    t3 = t2 + dur
    t4 = t3 + v / cfg.accel
    s4 = s_stop + v * v / (2 * cfg.accel)
    t_end = t4 + max(total - s4, 0.0) / v
    t = np.arange(int(math.floor(t_end / dt)) + 1) * dt
    s = np.empty_like(t)
    sp = np.empty_like(t)
    a = t < t1
    s[a], sp[a] = v * t[a], v
    b = (t >= t1) & (t < t2)
    u = t[b] - t1
    s[b], sp[b] = s_dec + v_dec * u - 0.5 * cfg.decel * u * u, v_dec - cfg.decel * u
    c = (t >= t2) & (t < t3)
    s[c], sp[c] = s_stop, 0.0
    d = (t >= t3) & (t < t4)
    u = t[d] - t3
    s[d], sp[d] = s_stop + 0.5 * cfg.accel * u * u, cfg.accel * u
    e = t >= t4
    s[e], sp[e] = s4 + v * (t[e] - t4), v
    keep = s <= total
    return t[keep], s[keep], np.maximum(sp[keep], 0.0)


# ---------------------------------------------------------------- intersection layout


def arm_frame(cfg: GeneratorConfig, arm: str) -> ApproachFrame:
    """Approach frame of one arm, in world coordinates."""
    base = cfg.world_quarter_turns * math.pi / 2
    psi = LOCAL_ARMS[arm] + base
    cx, cy = cfg.world_center
    yc = cfg.ring_y
    origin = (cx + yc * math.cos(psi), cy + yc * math.sin(psi))
    return ApproachFrame(origin, wrap_angle(-math.pi / 2 - psi), 0.0)


def gate_set(cfg: GeneratorConfig) -> GateSet:
    """Entrance gate on the incoming lane and exit gate on the outgoing lane of every arm."""
    gates = []
    lat_lo, lat_hi = 0.2, 6.0
    along = (-9.0, -1.5)
    for arm in ARM_ORDER:
        f = arm_frame(cfg, arm)
        for kind, sign in (("entrance", -1.0), ("exit", 1.0)):
            if cfg.right_hand_traffic:
                sign = -sign
            xs = sorted((sign * lat_lo, sign * lat_hi))
            corners = np.array([[xs[0], along[0]], [xs[1], along[1]]])
            w = f.to_world_xy(corners)
            lo, hi = w.min(axis=0), w.max(axis=0)
            gates.append(Gate(arm, kind, tuple((lo + hi) / 2), tuple((hi - lo) / 2)))
    base = cfg.world_quarter_turns * math.pi / 2
    dirs = {arm: wrap_angle(LOCAL_ARMS[arm] + base) for arm in ARM_ORDER}
    return GateSet(tuple(gates), dirs)


def intersection_spec(cfg: GeneratorConfig, name: str = "synthetic") -> IntersectionSpec:
    approaches = {arm: arm_frame(cfg, arm) for arm in cfg.entry_arms}
    return IntersectionSpec(name, approaches, gate_set(cfg), SAMPLE_RATE_HZ)


# ---------------------------------------------------------------- tracks


@dataclass(frozen=True)
class GeneratedTrack:
    track: RawTrack  # world frame
    label: ManeuverClass
    arm: str
    stopped: bool


def _local_track(cfg: GeneratorConfig, label: ManeuverClass, rng: np.random.Generator):
    ci = CLASSES.index(label)
    geom_label = label
    if cfg.right_hand_traffic:
        # mirrored geometry: the short arc becomes the right turn
        geom_label = {ManeuverClass.LEFT: ManeuverClass.RIGHT, ManeuverClass.RIGHT: ManeuverClass.LEFT}.get(label, label)
    a_in = cfg.class_lane_offset[CLASSES.index(geom_label)] + cfg.lane_jitter * rng.standard_normal()
    a_in = float(np.clip(a_in, 0.5, cfg.max_lane_offset))
    a_out = cfg.lane_offset
    start, segs = path_segments(cfg, geom_label, a_in, a_out)
    total = sum(sg.length for sg in segs)
    v = cfg.speed_mean * cfg.class_speed_factor[ci] * (1.0 + cfg.speed_jitter * rng.standard_normal())
    v = max(v, 0.3 * cfg.speed_mean)
    stop = None
    if rng.random() < cfg.stop_prob:
        stop = (cfg.approach_length - cfg.stop_distance, float(rng.uniform(1.0, 4.0)))
    t, s, speed = speed_profile(total, v, stop, cfg, SAMPLE_RATE_HZ)
    x, y, h = trace(start, segs, s)
    if cfg.right_hand_traffic:
        x, h = -x, wrap_angle(math.pi - h)
    if cfg.noise_sigma > 0:
        x = x + cfg.noise_sigma * rng.standard_normal(x.shape)
        y = y + cfg.noise_sigma * rng.standard_normal(y.shape)
    return t, x, y, speed, h, stop is not None


def generate_track(cfg: GeneratorConfig, index: int, label: Optional[ManeuverClass] = None) -> GeneratedTrack:
    """One traversal; deterministic in (cfg.seed, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    drawn = CLASSES[int(rng.choice(3, p=np.asarray(cfg.class_mix)))]
    label = drawn if label is None else ManeuverClass(label)
    arm = cfg.entry_arms[int(rng.integers(len(cfg.entry_arms)))]
    t, x, y, v, h, stopped = _local_track(cfg, label, rng)
    frame = arm_frame(cfg, arm)
    w = frame.to_world_xy(np.column_stack([x, y]))
    track = RawTrack(f"{cfg.seed}-{index:05d}", t, w[:, 0], w[:, 1], v, wrap_angle(h - frame.rotation))
    return GeneratedTrack(track, label, arm, stopped)


def generate_tracks(cfg: GeneratorConfig, n: int) -> list[GeneratedTrack]:
    if n < 1:
        raise ValueError("need at least one track")
    return [generate_track(cfg, k) for k in range(n)]
