"""Kinematic baselines: constant velocity, constant turn rate and velocity,
constant turn rate and acceleration."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .types import ObsPoint, PathProposal, wrap_angle

OMEGA_EPS = 1e-4  # rad/s; below this the arc chord uses its Taylor expansion
WINDOW = 5


class TooFewObservations(ValueError):
    pass


@dataclass(frozen=True)
class KinematicState:
    pos: tuple
    speed: float
    heading: float
    yaw_rate: float = 0.0
    accel: float = 0.0


def estimate_state(obs, dt: float, window: int = WINDOW) -> KinematicState:
    """Average the most recent displacements of the observation window.

    Velocity is the mean of the last ``window`` displacements over dt; yaw rate
    and acceleration average the differences of displacement heading and
    displacement speed over the same span.
    """
    arr = np.array([o.as_array() if isinstance(o, ObsPoint) else o for o in obs], dtype=float)
    if len(arr) < 5:
        raise TooFewObservations(f"need at least 5 observations, got {len(arr)}")
    xy = arr[:, :2]
    disp = np.diff(xy, axis=0)
    recent = disp[-window:]
    vel = recent.mean(axis=0) / dt
    speed = float(np.hypot(*vel))
    heading = float(math.atan2(vel[1], vel[0])) if speed > 1e-9 else float(arr[-1, 3])
    seg = disp[-(window + 1):]
    hd = np.arctan2(seg[:, 1], seg[:, 0])
    sp = np.hypot(seg[:, 0], seg[:, 1]) / dt
    yaw_rate = float(np.mean(wrap_angle(np.diff(hd)))) / dt
    accel = float(np.mean(np.diff(sp))) / dt
    return KinematicState((float(xy[-1, 0]), float(xy[-1, 1])), speed, wrap_angle(heading), yaw_rate, accel)


def _integrate(pos, heading: float, speeds: np.ndarray, omega: float, dt: float) -> np.ndarray:
    """Advance along arcs of turn rate ``omega``; speeds[k] is used during step k."""
    out = np.empty((len(speeds), 2))
    x, y = pos
    th = heading
    half = 0.5 * omega * dt
    for k, v in enumerate(speeds):
        if abs(omega) >= OMEGA_EPS:
            x += v / omega * (math.sin(th + omega * dt) - math.sin(th))
            y -= v / omega * (math.cos(th + omega * dt) - math.cos(th))
        else:
            chord = v * dt * (1.0 - half * half / 6.0)
            x += chord * math.cos(th + half)
            y += chord * math.sin(th + half)
        th += omega * dt
        out[k] = (x, y)
    return out


def rollout_cv(state: KinematicState, p: int, dt: float) -> np.ndarray:
    return _integrate(state.pos, state.heading, np.full(p, state.speed), 0.0, dt)


def rollout_ctrv(state: KinematicState, p: int, dt: float) -> np.ndarray:
    return _integrate(state.pos, state.heading, np.full(p, state.speed), state.yaw_rate, dt)


def rollout_ctra(state: KinematicState, p: int, dt: float) -> np.ndarray:
    """Speed follows v0 + a t (floored at zero), sampled at each step's midpoint."""
    if state.accel == 0.0:
        speeds = np.full(p, state.speed)
    else:
        speeds = np.maximum(state.speed + state.accel * (np.arange(p) + 0.5) * dt, 0.0)
    return _integrate(state.pos, state.heading, speeds, state.yaw_rate, dt)


ROLLOUTS = {"CV": rollout_cv, "CTRV": rollout_ctrv, "CTRA": rollout_ctra}


def as_proposal(poly: np.ndarray) -> PathProposal:
    return PathProposal(tuple((float(x), float(y), k + 1) for k, (x, y) in enumerate(poly)), 1.0)


def predict_baselines(obs, p: int, dt: float) -> dict:
    state = estimate_state(obs, dt)
    return {name: as_proposal(fn(state, p, dt)) for name, fn in ROLLOUTS.items()}
