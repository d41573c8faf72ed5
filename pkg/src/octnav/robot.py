"""Robot-side kinematics: RCM-constrained poses, trapezoidal tip
trajectories, and a simulated actuator with bounded execution noise.

The needle passes through a fixed scleral pivot, so commanding a tip
position fully determines the pose: the axis is the unit vector from the
tip to the pivot. Trajectories move the tip on a straight segment with a
trapezoidal (or triangular) speed profile sampled at the control rate; the
axis follows the tip through the pivot constraint, which keeps the ideal
RCM error at zero along the whole path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from octnav.phantom import ToolPose


@dataclass(frozen=True)
class RcmConstraint:
    """Scleral pivot the needle shaft must keep passing through."""

    pivot_um: np.ndarray  # (3,)
    tolerance_um: float = 10.0

    def __post_init__(self):
        pivot = np.asarray(self.pivot_um, dtype=float).reshape(3).copy()
        pivot.setflags(write=False)
        if self.tolerance_um <= 0:
            raise ValueError("rcm tolerance must be positive")
        object.__setattr__(self, "pivot_um", pivot)


@dataclass(frozen=True)
class MotionLimits:
    speed_um_s: float = 500.0
    accel_um_s2: float = 5000.0
    control_hz: float = 100.0
    min_pivot_clearance_um: float = 200.0

    def __post_init__(self):
        if min(self.speed_um_s, self.accel_um_s2, self.control_hz) <= 0:
            raise ValueError("motion limits must be positive")


def pose_for_tip(tip_um, rcm: RcmConstraint, frame_id: int = 0) -> ToolPose:
    """Pose whose axis passes through the pivot for the given tip."""
    tip = np.asarray(tip_um, dtype=float)
    shaft = rcm.pivot_um - tip
    n = float(np.linalg.norm(shaft))
    if n <= 1e-9:
        raise ValueError("tip coincides with the rcm pivot")
    return ToolPose(tip_position_um=tip, axis_direction=shaft / n, frame_id=frame_id)


def rcm_error(pose: ToolPose, rcm: RcmConstraint) -> float:
    """Perpendicular distance (um) from the pivot to the needle axis line."""
    rel = rcm.pivot_um - pose.tip_position_um
    return float(np.linalg.norm(np.cross(rel, pose.axis_direction)))


@dataclass(frozen=True)
class TrajectorySegment:
    """Tip waypoints at control-period spacing; final waypoint is exact."""

    times_s: np.ndarray  # (m,), offsets from segment start
    tips_um: np.ndarray  # (m, 3)
    rcm: RcmConstraint

    def __post_init__(self):
        times = np.asarray(self.times_s, dtype=float)
        tips = np.asarray(self.tips_um, dtype=float)
        if tips.shape != (times.shape[0], 3):
            raise ValueError("waypoint arrays must align")
        times = times.copy()
        tips = tips.copy()
        times.setflags(write=False)
        tips.setflags(write=False)
        object.__setattr__(self, "times_s", times)
        object.__setattr__(self, "tips_um", tips)

    @property
    def duration_s(self) -> float:
        return float(self.times_s[-1])

    def __len__(self) -> int:
        return int(self.times_s.shape[0])

    def pose(self, i: int, frame_id: int = 0) -> ToolPose:
        return pose_for_tip(self.tips_um[i], self.rcm, frame_id=frame_id)


def _profile_distance(t, v, a, t_acc, t_cruise):
    """Distance covered at time t of a trapezoid with accel phase t_acc and
    cruise phase t_cruise (possibly zero)."""
    t = np.asarray(t, dtype=float)
    d_acc = 0.5 * a * t_acc**2
    t1 = t_acc
    t2 = t_acc + t_cruise
    s = np.where(
        t <= t1,
        0.5 * a * t**2,
        np.where(
            t <= t2,
            d_acc + v * (t - t1),
            d_acc + v * t_cruise + v * (t - t2) - 0.5 * a * (t - t2) ** 2,
        ),
    )
    return s


def plan_trajectory(
    current: ToolPose,
    target_tip_um,
    rcm: RcmConstraint,
    limits: MotionLimits = MotionLimits(),
) -> TrajectorySegment:
    """Straight-line tip trajectory with a trapezoidal speed profile.

    Endpoints are hit exactly; consecutive waypoints are one control period
    apart, so the per-tick step never exceeds speed limit / control rate.
    """
    start = np.asarray(current.tip_position_um, dtype=float)
    target = np.asarray(target_tip_um, dtype=float)
    if np.linalg.norm(target - rcm.pivot_um) < limits.min_pivot_clearance_um:
        raise ValueError("target tip too close to the rcm pivot")

    d = float(np.linalg.norm(target - start))
    if d <= 1e-12:
        return TrajectorySegment(
            times_s=np.array([0.0]), tips_um=start[None, :].copy(), rcm=rcm
        )

    v = limits.speed_um_s
    a = limits.accel_um_s2
    t_acc = v / a
    d_acc = 0.5 * a * t_acc**2
    if d < 2.0 * d_acc:
        t_acc = float(np.sqrt(d / a))
        v = a * t_acc
        t_cruise = 0.0
    else:
        t_cruise = (d - 2.0 * d_acc) / v
    duration = 2.0 * t_acc + t_cruise

    dt = 1.0 / limits.control_hz
    n_steps = int(np.ceil(duration / dt - 1e-9))
    times = np.arange(n_steps + 1) * dt
    times[-1] = duration  # land exactly
    if n_steps >= 1 and times[-1] - times[-2] < 1e-12:
        times = times[:-1]
        times[-1] = duration
    s = _profile_distance(times, v, a, t_acc, t_cruise)
    s = np.clip(s, 0.0, d)
    s[-1] = d
    direction = (target - start) / d
    tips = start[None, :] + s[:, None] * direction[None, :]
    tips[-1] = target
    return TrajectorySegment(times_s=times, tips_um=tips, rcm=rcm)


class ToolActuator:
    """Executes trajectory segments one control tick at a time.

    Optional actuation noise perturbs each realized tip by an isotropic
    Gaussian whose norm is clipped at max_noise_sigmas * sigma, standing in
    for bounded servo jitter. The commanded axis (through the pivot from the
    planned tip) is reported alongside the noisy tip, so the instantaneous
    RCM error reflects exactly the injected noise.
    """

    def __init__(
        self,
        pose: ToolPose,
        rcm: RcmConstraint,
        noise_sigma_um: float = 0.0,
        rng: np.random.Generator | None = None,
        max_noise_sigmas: float = 3.0,
    ):
        if noise_sigma_um > 0 and rng is None:
            raise ValueError("actuation noise needs an rng")
        self.pose = pose
        self.rcm = rcm
        self.noise_sigma_um = float(noise_sigma_um)
        self.rng = rng
        self.max_noise_sigmas = float(max_noise_sigmas)
        self._segment: TrajectorySegment | None = None
        self._index = 0

    @property
    def busy(self) -> bool:
        return self._segment is not None

    def start(self, segment: TrajectorySegment) -> None:
        """Begin (or preempt with) a new segment from the next tick on."""
        if len(segment) <= 1:
            # zero-length move: land immediately
            self._apply(segment.tips_um[-1], frame_id=self.pose.frame_id)
            self._segment = None
            return
        self._segment = segment
        self._index = 0

    def _noise(self) -> np.ndarray:
        if self.noise_sigma_um <= 0:
            return np.zeros(3)
        eps = self.rng.normal(0.0, self.noise_sigma_um, size=3)
        n = float(np.linalg.norm(eps))
        cap = self.max_noise_sigmas * self.noise_sigma_um
        if n > cap:
            eps *= cap / n
        return eps

    def _apply(self, planned_tip: np.ndarray, frame_id: int) -> None:
        planned_axis = pose_for_tip(planned_tip, self.rcm).axis_direction
        tip = planned_tip + self._noise()
        self.pose = ToolPose(
            tip_position_um=tip, axis_direction=planned_axis, frame_id=frame_id
        )

    def step(self, frame_id: int = 0) -> ToolPose:
        """Advance one control tick; pose holds still when idle."""
        if self._segment is None:
            return self.pose
        self._index += 1
        seg = self._segment
        if self._index >= len(seg) - 1:
            self._apply(seg.tips_um[-1], frame_id)
            self._segment = None
        else:
            self._apply(seg.tips_um[self._index], frame_id)
        return self.pose

    def execute(self, segment: TrajectorySegment) -> list[ToolPose]:
        """Run a segment to completion, returning the per-tick poses."""
        self.start(segment)
        out = [self.pose]
        while self.busy:
            out.append(self.step())
        return out
