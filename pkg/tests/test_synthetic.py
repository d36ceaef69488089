import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdnpath.data import label_maneuver, write_intersection
from mdnpath.synthetic import (GeneratorConfig, gate_set, generate_track, generate_tracks, intersection_spec,
                               path_segments)
from mdnpath.types import ManeuverClass

QUIET = dict(noise_sigma=0.0, stop_prob=0.0, speed_jitter=0.0, lane_jitter=0.0)


def menger_curvature(xy):
    a, b, c = xy[:-2], xy[1:-1], xy[2:]
    ab = np.linalg.norm(b - a, axis=1)
    bc = np.linalg.norm(c - b, axis=1)
    ca = np.linalg.norm(a - c, axis=1)
    cross = (b - a)[:, 0] * (c - a)[:, 1] - (b - a)[:, 1] * (c - a)[:, 0]
    return 2 * np.abs(cross) / np.maximum(ab * bc * ca, 1e-12)


def test_noiseless_straight_geometry():
    g = GeneratorConfig(seed=3, **QUIET)
    _, segs = path_segments(g, ManeuverClass.STRAIGHT, g.lane_offset, g.lane_offset)
    assert segs[0].curvature == 0 and segs[-1].curvature == 0
    assert max(abs(s.curvature) for s in segs) == pytest.approx(1 / g.ring_radius)
    tr = generate_track(g, 0, label=ManeuverClass.STRAIGHT).track
    k = menger_curvature(tr.xy)
    assert k.max() <= 1 / g.ring_radius * 1.01
    assert k.max() >= 1 / g.ring_radius * 0.99
    # straight approach and departure
    assert k[:50].max() < 1e-6 and k[-50:].max() < 1e-6


def test_degenerate_mix_all_left():
    g = GeneratorConfig(class_mix=(1.0, 0.0, 0.0), seed=11)
    assert {t.label for t in generate_tracks(g, 40)} == {ManeuverClass.LEFT}


def test_same_seed_same_files(tmp_path):
    g = GeneratorConfig(seed=21)
    for d in ("a", "b"):
        write_intersection(tmp_path / d, intersection_spec(g), [t.track for t in generate_tracks(g, 10)])
    for name in ("tracks.csv", "intersection.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_zero_tracks_rejected():
    with pytest.raises(ValueError):
        generate_tracks(GeneratorConfig(), 0)


def test_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig(class_mix=(0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        GeneratorConfig(ring_radius=0)


@given(st.integers(0, 10_000))
@settings(max_examples=20)
def test_left_is_shorter_than_right(seed):
    g = GeneratorConfig(seed=seed, class_speed_factor=(1.0, 1.0, 1.0), **QUIET)
    left = generate_track(g, 0, label=ManeuverClass.LEFT).track
    right = generate_track(g, 0, label=ManeuverClass.RIGHT).track
    assert left.t[-1] < right.t[-1]


@pytest.mark.parametrize("rht", [False, True])
def test_labels_survive_heavy_noise(rht):
    g = GeneratorConfig(seed=9, noise_sigma=0.5, right_hand_traffic=rht, class_mix=(1 / 3, 1 / 3, 1 / 3))
    gates = gate_set(g)
    for k in range(90):
        gt = generate_track(g, k)
        assert label_maneuver(gt.track, gates).label == gt.label


def test_stop_segment_duration():
    g = GeneratorConfig(seed=2, noise_sigma=0.0, stop_prob=1.0)
    gt = generate_track(g, 0)
    assert gt.stopped
    still = gt.track.v < 1e-9
    assert 1.0 - 1e-9 <= still.sum() / 25.0 <= 4.0 + 0.05
