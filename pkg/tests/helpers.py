"""Shared invariant checks run on finished trial records."""

import numpy as np

from octnav.imaging import PerceptionResult
from octnav.phantom import make_phantom
from octnav.trial import config_from_dict

_PLANAR_PHASES = ("BOOTSTRAP", "ALIGN_XY")


def fake_perception(
    tip_rgb=(320.0, 240.0),
    tip_oct=(255.5, 480.0),
    ilm_row=500.0,
    rgb_valid=True,
    oct_valid=True,
    ilm_valid=True,
    t=0.0,
):
    """Hand-built perception sample for driving the workflow directly."""
    tip_rgb = np.asarray(tip_rgb, dtype=float)
    tip_oct = np.asarray(tip_oct, dtype=float)
    return PerceptionResult(
        tip_rgb_px=tip_rgb,
        base_rgb_px=tip_rgb + np.array([0.0, -50.0]),
        tip_rgb_valid=rgb_valid,
        base_rgb_valid=rgb_valid,
        rgb_time_s=t,
        tip_oct_px=tip_oct,
        base_oct_px=tip_oct + np.array([0.0, -100.0]),
        tip_oct_valid=oct_valid,
        base_oct_valid=oct_valid,
        ilm_profile_rows=np.full(512, float(ilm_row)),
        rpe_profile_rows=np.full(512, float(ilm_row) + 200.0 / 2.6),
        ilm_valid=ilm_valid,
        rpe_valid=ilm_valid,
        oct_time_s=t,
    )


def phase_runs(phases):
    """Contiguous (phase, start, stop) runs over the tick trace."""
    runs = []
    start = 0
    for i in range(1, len(phases) + 1):
        if i == len(phases) or phases[i] != phases[start]:
            runs.append((phases[start], start, i))
            start = i
    return runs


def check_phase_motion(record):
    """ALIGN/bootstrap ticks never move Z; LOWER ticks never move XY."""
    tips = np.asarray(record.tick_trace["tips_um"], dtype=float)
    phases = list(record.tick_trace["phases"])
    for phase, a, b in phase_runs(phases):
        if b - a < 2:
            continue
        seg = tips[a:b]
        if phase in _PLANAR_PHASES:
            dz = np.abs(np.diff(seg[:, 2]))
            assert dz.max() <= 1e-9, f"z moved {dz.max():.3g} um during {phase}"
        if phase == "LOWER_Z":
            dxy = np.linalg.norm(np.diff(seg[:, :2], axis=0), axis=1)
            assert dxy.max() <= 1e-9, f"xy moved {dxy.max():.3g} um during LOWER_Z"


def check_safety_offset(record, min_offset_um=30.0, tol_um=1e-6):
    """Tip keeps the safety offset above the ILM until insertion begins."""
    cfg = config_from_dict(record.config)
    phantom = make_phantom(record.phantom_seed, cfg.phantom)
    tips = np.asarray(record.tick_trace["tips_um"], dtype=float)
    phases = list(record.tick_trace["phases"])
    worst = np.inf
    for tip, phase in zip(tips, phases):
        if phase in ("INSERT", "DONE"):
            break
        ilm = float(phantom.ilm_height(tip[:2]))
        worst = min(worst, tip[2] - ilm)
    assert worst >= min_offset_um - tol_um, f"clearance dropped to {worst:.3f} um"
    return worst
