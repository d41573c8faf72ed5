"""Visual servoing and the injection workflow state machine.

The planar servo drives the tool tip toward a clicked microscope goal using
an estimated 2x2 image Jacobian (pixels per micrometer of planar tool
motion). The Jacobian starts at identity and is refined online by damped
Broyden rank-1 updates

    J <- J + beta * (di - J dp) dp^T / (dp^T dp)

whenever the accumulated image motion di and planar tool motion dp since the
last update are both large enough to be trusted (strictly more than 8 px and
20 um). With beta = 1 the updated Jacobian reproduces the observed pair
exactly (the secant property); beta = 0.5 trades that for robustness to
noisy detections.

The workflow phases mirror the procedure: servo in XY above the goal, lower
along Z to a fixed safety offset above the ILM, wait for the subretinal
goal, insert along the needle axis, done. Any phase missing a perception
field it needs holds in place until the field returns.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from octnav.imaging import BSCAN_UM_PER_COL, BSCAN_UM_PER_ROW, PerceptionResult, project_tip_to_ilm


class SingularJacobianError(ValueError):
    """Raised when the Jacobian estimate cannot be inverted."""


class Phase(enum.Enum):
    ALIGN_XY = "ALIGN_XY"
    LOWER_Z = "LOWER_Z"
    AT_SURFACE = "AT_SURFACE"
    AWAIT_SUBRETINAL_GOAL = "AWAIT_SUBRETINAL_GOAL"
    INSERT = "INSERT"
    DONE = "DONE"
    HOLD = "HOLD"


@dataclass(frozen=True)
class ServoTuning:
    """Controller step sizes and Broyden gate settings."""

    beta: float = 0.5
    pixel_update_threshold_px: float = 8.0
    motion_update_threshold_um: float = 20.0
    planar_step_cap_um: float = 50.0
    z_step_coarse_um: float = 50.0
    z_step_fine_um: float = 10.0
    fine_approach_band_um: float = 100.0
    surface_guard_um: float = 2.0
    # None inserts the full remaining distance as one commanded motion
    insert_step_cap_um: float | None = None
    bootstrap_probe_um: float = 30.0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must be in [0, 1]")
        for name in (
            "pixel_update_threshold_px",
            "motion_update_threshold_um",
            "planar_step_cap_um",
            "z_step_coarse_um",
            "z_step_fine_um",
            "fine_approach_band_um",
            "bootstrap_probe_um",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.surface_guard_um < 0:
            raise ValueError("surface guard cannot be negative")
        if self.insert_step_cap_um is not None and self.insert_step_cap_um <= 0:
            raise ValueError("insert step cap must be positive when set")


@dataclass(frozen=True)
class ServoState:
    """Jacobian estimate plus the reference pair deltas accumulate from."""

    jacobian: np.ndarray  # (2, 2) px per um
    beta: float = 0.5
    pixel_update_threshold_px: float = 8.0
    motion_update_threshold_um: float = 20.0
    last_tip_rgb_px: np.ndarray | None = None
    last_planar_um: np.ndarray | None = None

    def __post_init__(self):
        j = np.asarray(self.jacobian, dtype=float).reshape(2, 2).copy()
        if not np.all(np.isfinite(j)):
            raise ValueError("jacobian must be finite")
        j.setflags(write=False)
        object.__setattr__(self, "jacobian", j)
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must be in [0, 1]")


def initial_servo_state(tuning: ServoTuning = ServoTuning()) -> ServoState:
    return ServoState(
        jacobian=np.eye(2),
        beta=tuning.beta,
        pixel_update_threshold_px=tuning.pixel_update_threshold_px,
        motion_update_threshold_um=tuning.motion_update_threshold_um,
    )


def broyden_update(state: ServoState, delta_i_px, delta_p_um) -> ServoState:
    """Damped rank-1 update toward the observed (dp -> di) pair."""
    di = np.asarray(delta_i_px, dtype=float).reshape(2)
    dp = np.asarray(delta_p_um, dtype=float).reshape(2)
    denom = float(dp @ dp)
    if denom <= 0.0:
        raise ValueError("zero planar motion; update undefined")
    j = state.jacobian + state.beta * np.outer(di - state.jacobian @ dp, dp) / denom
    return replace(state, jacobian=j)


def should_update(state: ServoState, delta_i_px, delta_p_um) -> bool:
    """Gate: both accumulated motions must strictly exceed their thresholds."""
    di = float(np.linalg.norm(np.asarray(delta_i_px, dtype=float)))
    dp = float(np.linalg.norm(np.asarray(delta_p_um, dtype=float)))
    return di > state.pixel_update_threshold_px and dp > state.motion_update_threshold_um


def desired_planar_motion(state: ServoState, goal_px, tip_px) -> np.ndarray:
    """Planar tool motion (um) the Jacobian maps onto the pixel error."""
    err = np.asarray(goal_px, dtype=float) - np.asarray(tip_px, dtype=float)
    j = state.jacobian
    if abs(float(np.linalg.det(j))) <= 1e-12:
        raise SingularJacobianError("jacobian estimate is singular")
    return np.linalg.solve(j, err)


def compute_insertion_distance(goal_oct_px, tip_oct_px) -> float:
    """Euclidean tip-to-goal distance in the B-scan plane, micrometers.

    Columns and rows scale differently, so the pixel deltas are converted
    per axis before taking the norm. The goal must not sit above the tip;
    that would be an extraction, not an insertion.
    """
    goal = np.asarray(goal_oct_px, dtype=float)
    tip = np.asarray(tip_oct_px, dtype=float)
    d_col = goal[0] - tip[0]
    d_row = goal[1] - tip[1]
    if d_row < 0:
        raise ValueError("goal sits above the tip; refusing to plan an extraction")
    return float(np.hypot(d_col * BSCAN_UM_PER_COL, d_row * BSCAN_UM_PER_ROW))


@dataclass(frozen=True)
class MotionCommand:
    """One controller decision: a bounded relative motion or a hold.

    kind 'planar' carries a world XY delta with zero Z, 'lower' a world Z
    delta with zero XY, 'insert' an advance distance along the needle axis,
    'hold' nothing.
    """

    kind: str
    delta_um: np.ndarray = None  # (3,)
    advance_um: float = 0.0

    def __post_init__(self):
        if self.kind not in ("planar", "lower", "insert", "hold"):
            raise ValueError(f"unknown command kind {self.kind!r}")
        delta = np.zeros(3) if self.delta_um is None else np.asarray(self.delta_um, dtype=float).reshape(3)
        delta = delta.copy()
        delta.setflags(write=False)
        object.__setattr__(self, "delta_um", delta)
        if self.kind == "planar" and abs(self.delta_um[2]) > 1e-12:
            raise ValueError("planar command must have zero z")
        if self.kind == "lower" and np.any(np.abs(self.delta_um[:2]) > 1e-12):
            raise ValueError("lower command must have zero xy")
        if self.kind == "insert" and self.advance_um <= 0:
            raise ValueError("insert command must advance")


HOLD_COMMAND = MotionCommand(kind="hold")


@dataclass(frozen=True)
class WorkflowState:
    """Injection procedure state; phase plus goals and progress."""

    phase: Phase
    goal_ilm_px: np.ndarray  # (2,) microscope pixels
    goal_subretinal_px: np.ndarray | None = None
    insertion_remaining_um: float = 0.0
    safety_offset_um: float = 30.0
    realign_threshold_px: float = 1.0
    resume_phase: Phase | None = None

    def __post_init__(self):
        goal = np.asarray(self.goal_ilm_px, dtype=float).reshape(2).copy()
        goal.setflags(write=False)
        object.__setattr__(self, "goal_ilm_px", goal)
        if self.goal_subretinal_px is not None:
            sub = np.asarray(self.goal_subretinal_px, dtype=float).reshape(2).copy()
            sub.setflags(write=False)
            object.__setattr__(self, "goal_subretinal_px", sub)
        if self.insertion_remaining_um < 0:
            raise ValueError("insertion remaining cannot be negative")
        if self.safety_offset_um <= 0:
            raise ValueError("safety offset must be positive")
        if self.phase is Phase.INSERT and self.goal_subretinal_px is None:
            raise ValueError("INSERT requires a subretinal goal")


_REQUIRED_FIELDS = {
    Phase.ALIGN_XY: ("rgb",),
    Phase.LOWER_Z: ("rgb", "oct", "ilm"),
    Phase.AT_SURFACE: (),
    Phase.AWAIT_SUBRETINAL_GOAL: ("oct",),
    Phase.INSERT: ("oct",),
    Phase.DONE: (),
}


def _inputs_valid(phase: Phase, p: PerceptionResult) -> bool:
    for field in _REQUIRED_FIELDS.get(phase, ()):
        if field == "rgb" and not p.rgb_valid:
            return False
        if field == "oct" and not p.tip_oct_valid:
            return False
        if field == "ilm" and not p.ilm_valid:
            return False
    return True


def step_workflow(
    wf: WorkflowState,
    servo: ServoState,
    perception: PerceptionResult,
    tuning: ServoTuning = ServoTuning(),
) -> tuple[WorkflowState, MotionCommand]:
    """One controller decision. Returns the next state and the command.

    Phase transitions emit a hold; the first command of the new phase is
    issued on the following decision, so every motion is attributable to
    exactly one phase.
    """
    phase = wf.phase

    if phase is Phase.HOLD:
        target = wf.resume_phase if wf.resume_phase is not None else Phase.ALIGN_XY
        if _inputs_valid(target, perception):
            return replace(wf, phase=target, resume_phase=None), HOLD_COMMAND
        return wf, HOLD_COMMAND

    if not _inputs_valid(phase, perception):
        return replace(wf, phase=Phase.HOLD, resume_phase=phase), HOLD_COMMAND

    if phase is Phase.ALIGN_XY:
        err = wf.goal_ilm_px - perception.tip_rgb_px
        if float(np.linalg.norm(err)) <= wf.realign_threshold_px:
            return replace(wf, phase=Phase.LOWER_Z), HOLD_COMMAND
        step = desired_planar_motion(servo, wf.goal_ilm_px, perception.tip_rgb_px)
        n = float(np.linalg.norm(step))
        if n > tuning.planar_step_cap_um:
            step = step * (tuning.planar_step_cap_um / n)
        return wf, MotionCommand(kind="planar", delta_um=np.array([step[0], step[1], 0.0]))

    if phase is Phase.LOWER_Z:
        err = wf.goal_ilm_px - perception.tip_rgb_px
        if float(np.linalg.norm(err)) > wf.realign_threshold_px:
            return replace(wf, phase=Phase.ALIGN_XY), HOLD_COMMAND
        ilm_px = project_tip_to_ilm(perception)
        target_row = ilm_px[1] - (wf.safety_offset_um + tuning.surface_guard_um) / BSCAN_UM_PER_ROW
        remaining_um = (target_row - float(perception.tip_oct_px[1])) * BSCAN_UM_PER_ROW
        if remaining_um <= 1e-9:
            return replace(wf, phase=Phase.AT_SURFACE), HOLD_COMMAND
        step = (
            tuning.z_step_coarse_um
            if remaining_um > tuning.fine_approach_band_um
            else tuning.z_step_fine_um
        )
        dz = min(step, remaining_um)
        return wf, MotionCommand(kind="lower", delta_um=np.array([0.0, 0.0, -dz]))

    if phase is Phase.AT_SURFACE:
        return replace(wf, phase=Phase.AWAIT_SUBRETINAL_GOAL), HOLD_COMMAND

    if phase is Phase.AWAIT_SUBRETINAL_GOAL:
        if wf.goal_subretinal_px is None:
            return wf, HOLD_COMMAND
        distance = compute_insertion_distance(wf.goal_subretinal_px, perception.tip_oct_px)
        return (
            replace(wf, phase=Phase.INSERT, insertion_remaining_um=distance),
            HOLD_COMMAND,
        )

    if phase is Phase.INSERT:
        if wf.insertion_remaining_um <= 1e-9:
            return replace(wf, phase=Phase.DONE, insertion_remaining_um=0.0), HOLD_COMMAND
        advance = wf.insertion_remaining_um
        if tuning.insert_step_cap_um is not None:
            advance = min(advance, tuning.insert_step_cap_um)
        return (
            replace(wf, insertion_remaining_um=wf.insertion_remaining_um - advance),
            MotionCommand(kind="insert", advance_um=advance),
        )

    return wf, HOLD_COMMAND  # DONE
