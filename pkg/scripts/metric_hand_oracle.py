#!/usr/bin/env python3
"""Independent metric check: recompute every outcome metric of a trial
record from its raw annotations using only stdlib math.

Usage: metric_hand_oracle.py RECORD_JSON

Prints a JSON object of metric values to stdout. Deliberately imports
nothing from the simulator package so the arithmetic here cannot share a
bug with it: conversion factors are retyped from the hardware table and
every norm is spelled out by hand.
"""

import json
import math
import sys

MICROSCOPE_UM_PER_PX = 13.6
BSCAN_UM_PER_ROW = 2.6
BSCAN_UM_PER_COL = 5.3
UM_PER_SLICE = 13.6

TOTAL_PHASES = ("ALIGN_XY", "LOWER_Z", "AT_SURFACE", "INSERT", "HOLD")


def nav_error_2d(rec):
    gx, gy = rec["goal_ilm_px"]
    tx, ty = rec["arrival"]["tip_rgb_px"]
    return math.hypot(gx - tx, gy - ty) * MICROSCOPE_UM_PER_PX


def depth_error(rec):
    ilm_row = rec["arrival"]["ilm_px"][1]
    tip_row = rec["arrival"]["tip_oct_px"][1]
    return abs(ilm_row - tip_row) * BSCAN_UM_PER_ROW


def insertion_error(rec):
    ins = rec["insertion"]
    d_col = (ins["goal_oct_px"][0] - ins["landed_oct_px"][0]) * BSCAN_UM_PER_COL
    d_row = (ins["goal_oct_px"][1] - ins["landed_oct_px"][1]) * BSCAN_UM_PER_ROW
    d_slice = (ins["gt_slice"] - ins["actual_slice"]) * UM_PER_SLICE
    return math.sqrt(d_col * d_col + d_row * d_row + d_slice * d_slice)


def insertion_depth_error(rec):
    ins = rec["insertion"]
    return abs(ins["goal_oct_px"][1] - ins["landed_oct_px"][1]) * BSCAN_UM_PER_ROW


def ade_fde(rec):
    ins = rec["insertion"]
    px, py, pz = ins["axis_point_um"]
    dx, dy, dz = ins["axis_direction"]
    norm = math.sqrt(dx * dx + dy * dy + dz * dz)
    dx, dy, dz = dx / norm, dy / norm, dz / norm
    devs = []
    for tx, ty, tz in ins["trace_tips_um"]:
        rx, ry, rz = tx - px, ty - py, tz - pz
        cx = ry * dz - rz * dy
        cy = rz * dx - rx * dz
        cz = rx * dy - ry * dx
        devs.append(math.sqrt(cx * cx + cy * cy + cz * cz))
    return sum(devs) / len(devs), devs[-1]


def rcm_stats(rec):
    errs = rec["tick_trace"]["rcm_error_um"]
    return sum(errs) / len(errs), max(errs)


def durations(rec):
    entries = list(rec["phase_trace"]) + [[rec["end_time_s"], "_end"]]
    out = {}
    for (t0, name), (t1, _) in zip(entries[:-1], entries[1:]):
        out[name] = out.get(name, 0.0) + (t1 - t0)
    out["total_s"] = sum(out.get(p, 0.0) for p in TOTAL_PHASES)
    return out


def main():
    with open(sys.argv[1]) as f:
        rec = json.load(f)
    out = {}
    if rec.get("arrival"):
        nav = nav_error_2d(rec)
        dep = depth_error(rec)
        out["nav_error_2d_um"] = nav
        out["depth_error_um"] = dep
        out["nav_error_l2_um"] = math.hypot(nav, dep)
    if rec.get("insertion"):
        out["insertion_error_um"] = insertion_error(rec)
        out["insertion_depth_error_um"] = insertion_depth_error(rec)
        ade, fde = ade_fde(rec)
        out["insertion_ade_um"] = ade
        out["insertion_fde_um"] = fde
    if rec.get("tick_trace", {}).get("rcm_error_um"):
        mean_rcm, max_rcm = rcm_stats(rec)
        out["rcm_error_mean_um"] = mean_rcm
        out["rcm_error_max_um"] = max_rcm
    if rec.get("phase_trace"):
        for name, value in durations(rec).items():
            key = "total_duration_s" if name == "total_s" else f"duration_{name}_s"
            out[key] = value
    json.dump(out, sys.stdout, sort_keys=True)
    print()


if __name__ == "__main__":
    main()
