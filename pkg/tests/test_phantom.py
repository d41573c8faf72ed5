import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from octnav.phantom import (
    EyePhantom,
    PhantomConfig,
    ToolPose,
    inserted_depth,
    load_phantom_config,
    make_phantom,
    save_phantom_config,
)


def test_flat_phantom_is_base_height_everywhere():
    cfg = PhantomConfig(bump_amplitude_um=0.0, base_height_um=120.0)
    ph = make_phantom(seed=3, config=cfg)
    pts = np.random.default_rng(0).uniform(-2000, 2000, size=(50, 2))
    h = ph.ilm_height(pts)
    assert np.allclose(h, 120.0)


def test_rpe_is_ilm_minus_thickness_exactly():
    ph = make_phantom(seed=11)
    pts = np.random.default_rng(1).uniform(-2000, 2000, size=(200, 2))
    assert np.array_equal(ph.ilm_height(pts) - ph.thickness_um, ph.rpe_height(pts))


def test_single_bump_peak_value():
    # one Gaussian bump: height at its own center is base + amplitude
    cfg = PhantomConfig(n_bumps=1, bump_amplitude_um=40.0)
    ph = make_phantom(seed=5, config=cfg)
    center = ph.bump_centers_um[0]
    expected = cfg.base_height_um + ph.bump_amps_um[0]
    assert ph.ilm_height(center) == pytest.approx(expected, abs=1e-9)


def test_base_gradient_gives_linear_plane():
    cfg = PhantomConfig(bump_amplitude_um=0.0, base_gradient=(0.05, -0.02))
    ph = make_phantom(seed=7, config=cfg)
    # finite differences recover the plane slopes exactly
    h0 = ph.ilm_height(np.array([0.0, 0.0]))
    hx = ph.ilm_height(np.array([1000.0, 0.0]))
    hy = ph.ilm_height(np.array([0.0, 1000.0]))
    assert hx - h0 == pytest.approx(50.0, abs=1e-9)
    assert hy - h0 == pytest.approx(-20.0, abs=1e-9)


def test_query_outside_domain_raises():
    ph = make_phantom(seed=2)
    with pytest.raises(ValueError, match="outside phantom domain"):
        ph.ilm_height(np.array([ph.config.radius_um * 1.01, 0.0]))


def test_same_seed_same_surface():
    a = make_phantom(seed=42)
    b = make_phantom(seed=42)
    pts = np.random.default_rng(2).uniform(-2000, 2000, size=(64, 2))
    assert np.array_equal(a.ilm_height(pts), b.ilm_height(pts))
    assert np.array_equal(a.bump_centers_um, b.bump_centers_um)


def test_different_seed_different_surface():
    a = make_phantom(seed=1)
    b = make_phantom(seed=2)
    assert not np.array_equal(a.bump_centers_um, b.bump_centers_um)


def test_rcm_point_must_clear_surface():
    cfg = PhantomConfig(rcm_point_um=(0.0, 0.0, 10.0))
    with pytest.raises(ValueError):
        make_phantom(seed=0, config=cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        PhantomConfig(radius_um=-1)
    with pytest.raises(ValueError):
        PhantomConfig(thickness_um=0)
    with pytest.raises(ValueError):
        PhantomConfig(n_bumps=99)
    with pytest.raises(ValueError):
        PhantomConfig(bump_sigma_um=(1200, 600))


def test_config_file_round_trip(tmp_path):
    cfg = PhantomConfig(bump_amplitude_um=25.0, n_bumps=4, base_gradient=(0.01, 0.0))
    path = tmp_path / "phantom.yaml"
    save_phantom_config(path, 99, cfg)
    seed, loaded = load_phantom_config(path)
    assert seed == 99
    assert loaded == cfg


@given(seed=st.integers(0, 2**31 - 1), x=st.floats(-2000, 2000), y=st.floats(-2000, 2000))
@settings(max_examples=40, deadline=None)
def test_thickness_invariant(seed, x, y):
    ph = make_phantom(seed=seed)
    p = np.array([x, y])
    assert ph.ilm_height(p) - ph.rpe_height(p) == pytest.approx(ph.thickness_um, abs=1e-12)


@given(seed=st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_bump_centers_inside_disc(seed):
    ph = make_phantom(seed=seed)
    r = np.linalg.norm(ph.bump_centers_um, axis=1)
    assert np.all(r <= 0.7 * ph.config.radius_um + 1e-9)


def test_tool_pose_normalizes_nothing():
    with pytest.raises(ValueError):
        ToolPose(tip_position_um=np.zeros(3), axis_direction=np.array([0.0, 0.0, 2.0]))
    pose = ToolPose(tip_position_um=np.zeros(3), axis_direction=np.array([0.0, 0.0, 1.0]))
    assert pose.frame_id == 0


def test_inserted_depth_sign_convention():
    ph = make_phantom(seed=3, config=PhantomConfig(bump_amplitude_um=0.0))
    above = np.array([0.0, 0.0, 50.0])
    below = np.array([0.0, 0.0, -10.0])
    assert inserted_depth(ph, above) == 0.0
    assert inserted_depth(ph, below) == pytest.approx(10.0)
