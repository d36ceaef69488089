import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mdnpath.types import (CLASSES, ManeuverClass, MdnStep, MixtureComponent, ModelConfig, NormStats,
                           ObsPoint, PathProposal, TrackSnippet, Variant, validate_snippet, wrap_angle)


def make_snippet(h=7, p=60, n_pad=0, label="Left"):
    obs = np.column_stack([np.zeros(h), np.linspace(-5, 0, h), np.full(h, 5.0), np.full(h, math.pi / 2)])
    fut = np.column_stack([np.zeros(p), np.linspace(0.4, 24, p)])
    pad = np.zeros(p, dtype=bool)
    if n_pad:
        pad[p - n_pad:] = True
        fut[p - n_pad:] = fut[p - n_pad - 1]
    return TrackSnippet(obs, fut, pad, ManeuverClass(label), "t1", 10)


def test_full_size_defaults():
    c = ModelConfig()
    assert (c.M, c.h, c.p, c.lstm_width, c.lstm_layers) == (6, 7, 60, 256, 3)
    assert (c.alpha, c.beta, c.sample_rate) == (1.0, 10.0, 12.5)
    assert c.n_outputs == 37
    assert c.dt == pytest.approx(0.08)


def test_config_roundtrip_and_unknown_keys():
    c = ModelConfig.desk()
    assert ModelConfig.from_dict(c.to_dict()) == c
    with pytest.raises(ValueError, match="unknown"):
        ModelConfig.from_dict({"width": 3})
    with pytest.raises(ValueError):
        ModelConfig(M=0)


def test_validate_well_formed():
    assert validate_snippet(make_snippet(), ModelConfig()).ok
    assert validate_snippet(make_snippet(n_pad=20), ModelConfig()).ok


def test_validate_pad_suffix_violated():
    s = make_snippet()
    pad = s.is_pad.copy()
    pad[10] = True
    fut = s.future.copy()
    fut[10] = fut[9]
    bad = TrackSnippet(s.obs, fut, pad, s.class_label, s.track_id, s.t_index)
    r = validate_snippet(bad, ModelConfig())
    assert not r.ok and r.message == "pad suffix violated"
    assert r.field == "future[11].is_pad"


def test_validate_obs_length():
    r = validate_snippet(make_snippet(h=6), ModelConfig())
    assert not r.ok and r.message == "obs length mismatch"


def test_validate_negative_speed():
    s = make_snippet()
    obs = s.obs.copy()
    obs[3, 2] = -1
    r = validate_snippet(TrackSnippet(obs, s.future, s.is_pad, s.class_label, "t", 0), ModelConfig())
    assert r.field == "obs[3].v"


def test_obs_point_checks():
    ObsPoint(1.0, 2.0, 0.0, math.pi)
    with pytest.raises(ValueError):
        ObsPoint(0.0, 0.0, -0.1, 0.0)
    with pytest.raises(ValueError):
        ObsPoint(0.0, 0.0, 1.0, -math.pi)


@given(st.floats(-100, 100))
def test_wrap_angle_range(theta):
    w = wrap_angle(theta)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(theta), abs_tol=1e-9)
    assert math.isclose(math.sin(w), math.sin(theta), abs_tol=1e-9)


def test_wrap_angle_boundary():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)


def test_mdnstep_invariants():
    c = MixtureComponent(0.5, (0.0, 0.0), (1.0, 1.0), 0.0)
    MdnStep(0.5, (c, c))
    with pytest.raises(ValueError):
        MdnStep(0.5, (c,))
    with pytest.raises(ValueError):
        MdnStep(0.5, (MixtureComponent(1.0, (0, 0), (0.0, 1.0), 0.0),))
    with pytest.raises(ValueError):
        MdnStep(0.5, (MixtureComponent(1.0, (0, 0), (1.0, 1.0), 1.0),))
    with pytest.raises(ValueError):
        MdnStep(1.0, (MixtureComponent(1.0, (0, 0), (1.0, 1.0), 0.0),))


def test_path_proposal_checks():
    p = PathProposal(((0.0, 1.0, 1), (0.0, 2.0, 2)), 1.5)
    assert p.xy.shape == (2, 2)
    assert p.to_json(1) == {"rank": 1, "weight": 1.5, "points": [[0.0, 1.0, 1], [0.0, 2.0, 2]]}
    with pytest.raises(ValueError):
        PathProposal((), 1.0)
    with pytest.raises(ValueError):
        PathProposal(((0.0, 1.0, 2), (0.0, 2.0, 2)), 1.0)


def test_norm_stats_floor_and_roundtrip():
    s = NormStats(np.zeros(4), np.zeros(4))
    assert np.all(s.stdev == 1e-6)
    s2 = NormStats.from_dict(NormStats([1, 2, 3, 4], [5, 6, 7, 8]).to_dict())
    assert np.array_equal(s2.mean, [1, 2, 3, 4]) and np.array_equal(s2.stdev, [5, 6, 7, 8])


def test_variant_parse():
    assert Variant.parse("ff") is Variant.FF
    assert Variant.parse(Variant.ZF) is Variant.ZF
    with pytest.raises(ValueError):
        Variant.parse("xx")
    assert [c.value for c in CLASSES] == ["Left", "Straight", "Right"]
