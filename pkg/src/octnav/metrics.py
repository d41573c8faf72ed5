"""Trial records and outcome metrics.

All metrics are reported in micrometers (durations in seconds) and are
computed from ground-truth annotations the simulator attaches to the trial
record, converted through the fixed pixel scales of the two imaging chains:
13.6 um per microscope pixel, 2.6 um per B-scan row, 5.3 um per B-scan
column, 13.6 um per C-scan slice.

  * navigation error (2D): distance between the clicked microscope goal and
    the true tip detection at surface arrival, in the microscope plane
  * depth error: row distance between the true tip and the ILM directly
    below it at surface arrival
  * insertion error: 3D distance between the clicked subretinal goal and
    the landed tip, combining in-plane column/row error with the slice
    offset found by the verification C-scan
  * ADE / FDE: average and final deviation of the executed insertion
    trajectory from the commanded straight axis line
  * phase durations: wall time of each phase on the simulation clock,
    excluding time spent waiting for the user to click
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from octnav.imaging import (
    BSCAN_UM_PER_COL,
    BSCAN_UM_PER_ROW,
    CSCAN_UM_PER_SLICE,
    MICROSCOPE_UM_PER_PX,
)

FORMAT_VERSION = 1

# reference outcomes from the hardware experiments this system models
HARDWARE_REFERENCE_UM = {
    "nav_error_2d_um": (19.0, 6.0),
    "nav_error_l2_um": (20.0, 6.0),
    "insertion_error_um": (26.0, 12.0),
    "insertion_depth_error_um": (7.0, 11.0),
    "rcm_error_mean_um": (6.0, 4.0),
    "total_duration_s": (55.0, 10.8),
}

# phases whose time is the procedure's own; waiting-for-user phases and the
# one-time bootstrap probes are excluded from the total
_TOTAL_PHASES = ("ALIGN_XY", "LOWER_Z", "AT_SURFACE", "INSERT", "HOLD")


@dataclass(frozen=True)
class ConversionTable:
    """Pixel-to-micrometer factors of the imaging chains."""

    microscope_um_per_px: float = MICROSCOPE_UM_PER_PX
    bscan_um_per_row: float = BSCAN_UM_PER_ROW
    bscan_um_per_col: float = BSCAN_UM_PER_COL
    um_per_slice: float = CSCAN_UM_PER_SLICE

    def __post_init__(self):
        for name in (
            "microscope_um_per_px",
            "bscan_um_per_row",
            "bscan_um_per_col",
            "um_per_slice",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class ArrivalAnnotation:
    """Ground truth captured at the LOWER_Z -> AT_SURFACE transition."""

    sim_time_s: float
    tip_rgb_px: np.ndarray  # (2,) true tip projection
    tip_oct_px: np.ndarray  # (col, row) true tip in the scan
    ilm_px: np.ndarray  # (col, row) true ILM point below the tip
    height_above_ilm_um: float


@dataclass
class InsertionOutcome:
    """Commanded insertion line, executed trace, and landing, all recorded
    in the scan geometry frozen at INSERT entry."""

    start_time_s: float
    end_time_s: float
    axis_point_um: np.ndarray  # (3,)
    axis_direction: np.ndarray  # (3,) unit, tip -> pivot
    commanded_distance_um: float
    goal_oct_px: np.ndarray  # (2,)
    trace_times_s: np.ndarray  # (m,)
    trace_tips_um: np.ndarray  # (m, 3)
    landed_tip_um: np.ndarray  # (3,)
    landed_oct_px: np.ndarray  # (col, row) in the landing slice
    gt_slice: int
    actual_slice: int


@dataclass
class TrialRecord:
    """Everything needed to score and replay one trial."""

    master_seed: int
    eye_index: int
    trial_index: int
    config: dict
    phantom_seed: int
    galvo_truth: list
    galvo_fitted: list
    goal_ilm_px: np.ndarray
    status: str = "running"
    abort_cause: str | None = None
    goal_subretinal_px: np.ndarray | None = None
    end_time_s: float = 0.0
    arrival: ArrivalAnnotation | None = None
    insertion: InsertionOutcome | None = None
    phase_trace: list = field(default_factory=list)  # [(time_s, phase_str)]
    tick_trace: dict = field(default_factory=dict)  # arrays, see write_trace_csv
    frame_events: list = field(default_factory=list)
    metrics: dict | None = None
    format_version: int = FORMAT_VERSION


# --- individual metrics -----------------------------------------------------


def nav_error_2d_um(rec: TrialRecord, conv: ConversionTable = ConversionTable()) -> float:
    """Goal-to-tip distance in the microscope plane at surface arrival."""
    if rec.arrival is None:
        raise ValueError("trial has no surface arrival annotation")
    d = np.asarray(rec.goal_ilm_px, dtype=float) - np.asarray(rec.arrival.tip_rgb_px, dtype=float)
    return float(np.linalg.norm(d)) * conv.microscope_um_per_px


def depth_error_um(rec: TrialRecord, conv: ConversionTable = ConversionTable()) -> float:
    """Tip-to-ILM row distance at surface arrival."""
    if rec.arrival is None:
        raise ValueError("trial has no surface arrival annotation")
    d_row = float(rec.arrival.ilm_px[1]) - float(rec.arrival.tip_oct_px[1])
    return abs(d_row) * conv.bscan_um_per_row


def nav_error_l2_um(rec: TrialRecord, conv: ConversionTable = ConversionTable()) -> float:
    """Planar and depth navigation error combined with an L2 norm."""
    return float(np.hypot(nav_error_2d_um(rec, conv), depth_error_um(rec, conv)))


def insertion_error_um(rec: TrialRecord, conv: ConversionTable = ConversionTable()) -> float:
    """3D goal-to-landing distance from in-plane pixels plus slice offset."""
    ins = rec.insertion
    if ins is None:
        raise ValueError("trial has no insertion outcome")
    d_col = (float(ins.goal_oct_px[0]) - float(ins.landed_oct_px[0])) * conv.bscan_um_per_col
    d_row = (float(ins.goal_oct_px[1]) - float(ins.landed_oct_px[1])) * conv.bscan_um_per_row
    d_slice = (ins.gt_slice - ins.actual_slice) * conv.um_per_slice
    return float(np.linalg.norm([d_col, d_row, d_slice]))


def insertion_depth_error_um(rec: TrialRecord, conv: ConversionTable = ConversionTable()) -> float:
    """Depth-axis component of the insertion error."""
    ins = rec.insertion
    if ins is None:
        raise ValueError("trial has no insertion outcome")
    return abs(float(ins.goal_oct_px[1]) - float(ins.landed_oct_px[1])) * conv.bscan_um_per_row


def ade_fde_um(trace_tips_um, axis_point_um, axis_direction) -> tuple[float, float]:
    """Average and final perpendicular deviation of a trace from a line."""
    tips = np.asarray(trace_tips_um, dtype=float).reshape(-1, 3)
    if tips.shape[0] == 0:
        raise ValueError("empty trace")
    point = np.asarray(axis_point_um, dtype=float)
    direction = np.asarray(axis_direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    rel = tips - point[None, :]
    dev = np.linalg.norm(np.cross(rel, direction[None, :]), axis=1)
    return float(dev.mean()), float(dev[-1])


def rcm_error_stats_um(rec: TrialRecord) -> tuple[float, float]:
    """Mean and max RCM error over the full tick trace."""
    err = np.asarray(rec.tick_trace["rcm_error_um"], dtype=float)
    if err.size == 0:
        raise ValueError("empty tick trace")
    return float(err.mean()), float(err.max())


def phase_durations_s(rec: TrialRecord) -> dict:
    """Seconds spent in each phase plus a user-wait-free total."""
    if not rec.phase_trace:
        raise ValueError("trial has no phase trace")
    durations: dict[str, float] = {}
    entries = list(rec.phase_trace) + [(rec.end_time_s, "_end")]
    for (t0, name), (t1, _) in zip(entries[:-1], entries[1:]):
        if t1 < t0:
            raise ValueError("phase trace is not time-ordered")
        durations[name] = durations.get(name, 0.0) + (t1 - t0)
    durations["total_s"] = sum(durations.get(p, 0.0) for p in _TOTAL_PHASES)
    return durations


def compute_all_metrics(rec: TrialRecord) -> dict:
    """The full per-trial metric set, computed where inputs exist."""
    conv = ConversionTable()
    out: dict[str, float] = {}
    if rec.arrival is not None:
        out["nav_error_2d_um"] = nav_error_2d_um(rec, conv)
        out["depth_error_um"] = depth_error_um(rec, conv)
        out["nav_error_l2_um"] = nav_error_l2_um(rec, conv)
        out["height_above_ilm_at_surface_um"] = rec.arrival.height_above_ilm_um
    if rec.insertion is not None:
        out["insertion_error_um"] = insertion_error_um(rec, conv)
        out["insertion_depth_error_um"] = insertion_depth_error_um(rec, conv)
        ade, fde = ade_fde_um(
            rec.insertion.trace_tips_um,
            rec.insertion.axis_point_um,
            rec.insertion.axis_direction,
        )
        out["insertion_ade_um"] = ade
        out["insertion_fde_um"] = fde
    if rec.tick_trace:
        mean_rcm, max_rcm = rcm_error_stats_um(rec)
        out["rcm_error_mean_um"] = mean_rcm
        out["rcm_error_max_um"] = max_rcm
    if rec.phase_trace:
        durations = phase_durations_s(rec)
        for name, value in durations.items():
            key = "total_duration_s" if name == "total_s" else f"duration_{name}_s"
            out[key] = value
    return out


def aggregate_metrics(records: list[TrialRecord]) -> dict:
    """Mean/std/n per metric over completed trials."""
    pools: dict[str, list[float]] = {}
    for rec in records:
        if rec.status != "done" or not rec.metrics:
            continue
        for name, value in rec.metrics.items():
            pools.setdefault(name, []).append(float(value))
    out = {}
    for name, values in sorted(pools.items()):
        arr = np.asarray(values)
        out[name] = {
            "mean": float(arr.mean()),
            "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
            "n": int(arr.size),
        }
    return out


def write_aggregate_csv(path, aggregate: dict) -> None:
    """Aggregate table with the desk-scale reference column attached."""
    import csv

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "mean", "std", "n", "reference_mean", "reference_std"])
        for name, stats in aggregate.items():
            ref = HARDWARE_REFERENCE_UM.get(name, ("", ""))
            w.writerow([name, stats["mean"], stats["std"], stats["n"], ref[0], ref[1]])


def write_trace_csv(rec: TrialRecord, path) -> None:
    import csv

    tr = rec.tick_trace
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            [
                "tick",
                "time_s",
                "tip_x_um",
                "tip_y_um",
                "tip_z_um",
                "axis_x",
                "axis_y",
                "axis_z",
                "rcm_error_um",
                "phase",
            ]
        )
        tips = np.asarray(tr["tips_um"])
        axes = np.asarray(tr["axes"])
        for i in range(len(tr["ticks"])):
            w.writerow(
                [
                    tr["ticks"][i],
                    tr["times_s"][i],
                    tips[i][0],
                    tips[i][1],
                    tips[i][2],
                    axes[i][0],
                    axes[i][1],
                    axes[i][2],
                    tr["rcm_error_um"][i],
                    tr["phases"][i],
                ]
            )


# --- serialization ----------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def record_to_dict(rec: TrialRecord) -> dict:
    out = {
        "format_version": rec.format_version,
        "master_seed": rec.master_seed,
        "eye_index": rec.eye_index,
        "trial_index": rec.trial_index,
        "config": _jsonable(rec.config),
        "phantom_seed": rec.phantom_seed,
        "galvo_truth": _jsonable(rec.galvo_truth),
        "galvo_fitted": _jsonable(rec.galvo_fitted),
        "goal_ilm_px": _jsonable(rec.goal_ilm_px),
        "goal_subretinal_px": _jsonable(rec.goal_subretinal_px),
        "status": rec.status,
        "abort_cause": rec.abort_cause,
        "end_time_s": rec.end_time_s,
        "phase_trace": _jsonable(rec.phase_trace),
        "tick_trace": _jsonable(rec.tick_trace),
        "frame_events": _jsonable(rec.frame_events),
        "metrics": _jsonable(rec.metrics),
        "arrival": None,
        "insertion": None,
    }
    if rec.arrival is not None:
        out["arrival"] = _jsonable(vars(rec.arrival))
    if rec.insertion is not None:
        out["insertion"] = _jsonable(vars(rec.insertion))
    return out


def record_from_dict(doc: dict) -> TrialRecord:
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(
            f"record format version {doc.get('format_version')} not supported "
            f"(expected {FORMAT_VERSION})"
        )
    arrival = None
    if doc.get("arrival") is not None:
        a = doc["arrival"]
        arrival = ArrivalAnnotation(
            sim_time_s=a["sim_time_s"],
            tip_rgb_px=np.asarray(a["tip_rgb_px"]),
            tip_oct_px=np.asarray(a["tip_oct_px"]),
            ilm_px=np.asarray(a["ilm_px"]),
            height_above_ilm_um=a["height_above_ilm_um"],
        )
    insertion = None
    if doc.get("insertion") is not None:
        i = doc["insertion"]
        insertion = InsertionOutcome(
            start_time_s=i["start_time_s"],
            end_time_s=i["end_time_s"],
            axis_point_um=np.asarray(i["axis_point_um"]),
            axis_direction=np.asarray(i["axis_direction"]),
            commanded_distance_um=i["commanded_distance_um"],
            goal_oct_px=np.asarray(i["goal_oct_px"]),
            trace_times_s=np.asarray(i["trace_times_s"]),
            trace_tips_um=np.asarray(i["trace_tips_um"]),
            landed_tip_um=np.asarray(i["landed_tip_um"]),
            landed_oct_px=np.asarray(i["landed_oct_px"]),
            gt_slice=int(i["gt_slice"]),
            actual_slice=int(i["actual_slice"]),
        )
    return TrialRecord(
        master_seed=doc["master_seed"],
        eye_index=doc["eye_index"],
        trial_index=doc["trial_index"],
        config=doc["config"],
        phantom_seed=doc["phantom_seed"],
        galvo_truth=doc["galvo_truth"],
        galvo_fitted=doc["galvo_fitted"],
        goal_ilm_px=np.asarray(doc["goal_ilm_px"]),
        status=doc["status"],
        abort_cause=doc.get("abort_cause"),
        goal_subretinal_px=(
            np.asarray(doc["goal_subretinal_px"])
            if doc.get("goal_subretinal_px") is not None
            else None
        ),
        end_time_s=doc["end_time_s"],
        arrival=arrival,
        insertion=insertion,
        phase_trace=[tuple(e) for e in doc.get("phase_trace", [])],
        tick_trace=doc.get("tick_trace", {}),
        frame_events=doc.get("frame_events", []),
        metrics=doc.get("metrics"),
        format_version=doc["format_version"],
    )


def record_to_json(rec: TrialRecord) -> str:
    """Canonical JSON used both on disk and for determinism hashing."""
    return json.dumps(record_to_dict(rec), sort_keys=True, separators=(",", ":"))


def record_from_json(text: str) -> TrialRecord:
    return record_from_dict(json.loads(text))
