"""Trial orchestration: configuration, seeded randomness, the closed-loop
session, batch runs, and frame replay.

A trial plays the full procedure on the simulation clock: calibrate the
galvo map from a voltage grid, probe the Jacobian with two short planar
moves, servo over the clicked microscope goal, lower to the safety offset
above the ILM, wait for the subretinal B-scan goal, insert along the needle
axis, then sweep a verification C-scan around the landing.

Randomness fans out of one master seed through named substreams (phantom,
galvo, goals, perception, actuation), so toggling one noise source never
shifts what another stream draws. Every event lives on the 100 Hz control
grid; microscope frames land on the first tick at or after each 30 Hz
period, B-scans likewise at 11 Hz, and the controller only acts on frames
captured at or after the end of its previous motion.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from octnav.galvo import (
    GalvoCalibration,
    ScanLine,
    collect_samples,
    fit_calibration,
    voltage_grid,
)
from octnav.imaging import (
    BSCAN_WIDTH_PX,
    DEFAULT_SCAN_LENGTH_PX,
    BScanGeometry,
    CameraModel,
    NoiseConfig,
    make_bscan_frame,
    make_microscope_frame,
    merge_perception,
    perceive_bscan,
    perceive_microscope,
    project_tip_to_ilm,
)
from octnav.metrics import (
    ArrivalAnnotation,
    InsertionOutcome,
    TrialRecord,
    compute_all_metrics,
    record_to_json,
    write_aggregate_csv,
    write_trace_csv,
    aggregate_metrics,
)
from octnav.phantom import PhantomConfig, SceneSnapshot, ToolPose, inserted_depth, make_phantom
from octnav.robot import (
    MotionLimits,
    RcmConstraint,
    ToolActuator,
    plan_trajectory,
    pose_for_tip,
    rcm_error,
)
from octnav.servo import (
    Phase,
    ServoTuning,
    SingularJacobianError,
    WorkflowState,
    broyden_update,
    compute_insertion_distance,
    initial_servo_state,
    should_update,
    step_workflow,
)

# substream labels; the fan-out is SeedSequence([master, stream, eye(, trial)])
STREAM_PHANTOM = 11
STREAM_GALVO = 22
STREAM_GOALS = 33
STREAM_PERCEPTION = 44
STREAM_ACTUATION = 55


def stream_rng(master_seed: int, *key: int) -> np.random.Generator:
    if master_seed < 0 or any(k < 0 for k in key):
        raise ValueError("seed components must be non-negative")
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *map(int, key)]))


@dataclass(frozen=True)
class GoalRanges:
    """Scenario randomization for scripted (surgeon-free) trials."""

    ilm_goal_radius_px: float = 60.0
    start_radius_px: tuple[float, float] = (40.0, 90.0)
    start_height_um: float = 900.0
    insertion_depth_um: tuple[float, float] = (100.0, 180.0)


@dataclass(frozen=True)
class TrialConfig:
    master_seed: int = 0
    n_eyes: int = 3
    trials_per_eye: int = 10
    phantom: PhantomConfig = PhantomConfig(
        radius_um=3500.0, bump_amplitude_um=30.0, bump_sigma_um=(600.0, 1200.0)
    )
    camera: CameraModel = CameraModel(tilt_x_rad=0.015, tilt_y_rad=0.02)
    bscan: BScanGeometry = BScanGeometry()
    noise: NoiseConfig = NoiseConfig()
    actuation_noise_um: float = 0.0
    tuning: ServoTuning = ServoTuning()
    limits: MotionLimits = MotionLimits()
    goals: GoalRanges = GoalRanges()
    safety_offset_um: float = 30.0
    realign_threshold_px: float = 1.0
    scan_length_px: float = DEFAULT_SCAN_LENGTH_PX
    rgb_rate_hz: float = 30.0
    oct_rate_hz: float = 11.0
    galvo_grid_n: int = 5
    galvo_span_v: float = 2.0
    galvo_noise_px: float = 0.0
    hold_timeout_s: float = 5.0
    max_trial_time_s: float = 120.0
    cscan_n_slices: int = 32

    def __post_init__(self):
        if self.master_seed < 0:
            raise ValueError("master seed must be non-negative")
        if self.n_eyes < 1 or self.trials_per_eye < 1:
            raise ValueError("need at least one eye and one trial")
        if self.rgb_rate_hz <= 0 or self.oct_rate_hz <= 0:
            raise ValueError("frame rates must be positive")


# --- config file ------------------------------------------------------------

_TUPLE_FIELDS = {
    "phantom": ("bump_sigma_um", "base_gradient", "rcm_point_um"),
    "camera": ("principal_point_px", "view_center_um"),
    "goals": ("start_radius_px", "insertion_depth_um"),
}

_NESTED_TYPES = {
    "phantom": PhantomConfig,
    "camera": CameraModel,
    "bscan": BScanGeometry,
    "noise": NoiseConfig,
    "tuning": ServoTuning,
    "limits": MotionLimits,
    "goals": GoalRanges,
}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def config_to_dict(cfg: TrialConfig) -> dict:
    return _plain(dataclasses.asdict(cfg))


def config_from_dict(doc: dict) -> TrialConfig:
    d = dict(doc)
    for key, cls in _NESTED_TYPES.items():
        if key in d and isinstance(d[key], dict):
            sub = dict(d[key])
            for tf in _TUPLE_FIELDS.get(key, ()):
                if tf in sub and sub[tf] is not None:
                    sub[tf] = tuple(sub[tf])
            d[key] = cls(**sub)
    return TrialConfig(**d)


def save_config(cfg: TrialConfig, path) -> None:
    import yaml

    with open(path, "w") as f:
        yaml.safe_dump(config_to_dict(cfg), f, sort_keys=False)


def load_config(path) -> TrialConfig:
    import yaml

    with open(path) as f:
        return config_from_dict(yaml.safe_load(f))


# --- goal providers ---------------------------------------------------------


class ScriptedGoals:
    """Stands in for the surgeon: a microscope goal near the frame center,
    a start offset in an annulus around it, and a subretinal goal a fixed
    distance down the imaged needle axis."""

    def __init__(self, rng: np.random.Generator, ranges: GoalRanges, camera: CameraModel):
        self._camera = camera
        self._ranges = ranges
        pp = np.asarray(camera.principal_point_px)
        ang = rng.uniform(0.0, 2.0 * np.pi)
        rad = ranges.ilm_goal_radius_px * float(np.sqrt(rng.uniform()))
        self._ilm_goal = np.rint(pp + rad * np.array([np.cos(ang), np.sin(ang)])).astype(int)
        ang2 = rng.uniform(0.0, 2.0 * np.pi)
        r0, r1 = ranges.start_radius_px
        rad2 = float(np.sqrt(rng.uniform(r0**2, r1**2)))
        start_px = self._ilm_goal + rad2 * np.array([np.cos(ang2), np.sin(ang2)])
        ground = camera.ground_position(start_px)
        self._start_tip = np.array([ground[0], ground[1], ranges.start_height_um])
        self._depth_um = float(rng.uniform(*ranges.insertion_depth_um))

    def start_tip_um(self) -> np.ndarray:
        return self._start_tip.copy()

    def ilm_goal_px(self) -> np.ndarray | None:
        return self._ilm_goal.copy()

    def subretinal_goal_px(self, perception) -> np.ndarray | None:
        """Click a point depth_um down the needle axis as imaged in the scan.

        Pixel axes scale differently, so the unit pixel direction (p, q) is
        rescaled by M = 1 / hypot(col_um * p, row_um * q), which converts a
        micrometer distance along the axis into the matching pixel offset.
        """
        from octnav.imaging import BSCAN_UM_PER_COL, BSCAN_UM_PER_ROW

        if not perception.oct_valid:
            return None
        forward = perception.tip_oct_px - perception.base_oct_px
        n = float(np.linalg.norm(forward))
        if n <= 1e-9:
            return None
        p, q = forward / n
        m = 1.0 / float(np.hypot(BSCAN_UM_PER_COL * p, BSCAN_UM_PER_ROW * q))
        goal = perception.tip_oct_px + self._depth_um * m * np.array([p, q])
        return np.rint(goal).astype(int)


class InteractiveGoals:
    """Click slots filled by a UI; the session polls them each decision."""

    def __init__(self, camera: CameraModel, start_tip_um=None, start_height_um: float = 900.0):
        self._camera = camera
        if start_tip_um is None:
            ground = camera.ground_position(np.array([380.0, 300.0]))
            start_tip_um = np.array([ground[0], ground[1], start_height_um])
        self._start_tip = np.asarray(start_tip_um, dtype=float)
        self._ilm = None
        self._sub = None

    def start_tip_um(self) -> np.ndarray:
        return self._start_tip.copy()

    def set_ilm_goal(self, px) -> None:
        px = np.asarray(px, dtype=float)
        cam = self._camera
        if not (0 <= px[0] < cam.width_px and 0 <= px[1] < cam.height_px):
            raise ValueError("goal outside the microscope frame")
        self._ilm = np.rint(px).astype(int)

    def set_subretinal_goal(self, px) -> None:
        px = np.asarray(px, dtype=float)
        if not (0 <= px[0] < BSCAN_WIDTH_PX and 0 <= px[1] < BScanGeometry().n_rows):
            raise ValueError("goal outside the b-scan frame")
        self._sub = np.rint(px).astype(int)

    def ilm_goal_px(self) -> np.ndarray | None:
        return None if self._ilm is None else self._ilm.copy()

    def subretinal_goal_px(self, perception) -> np.ndarray | None:
        return None if self._sub is None else self._sub.copy()


def _random_galvo(rng: np.random.Generator, camera: CameraModel) -> GalvoCalibration:
    """Hidden mirror map: strong diagonal with mild cross-coupling, centered
    near the principal point. Never close to singular by construction."""
    s1 = rng.choice([-1.0, 1.0])
    s2 = rng.choice([-1.0, 1.0])
    gain = np.array(
        [
            [s1 * rng.uniform(70.0, 130.0), rng.uniform(-20.0, 20.0)],
            [rng.uniform(-20.0, 20.0), s2 * rng.uniform(70.0, 130.0)],
        ]
    )
    offset = np.asarray(camera.principal_point_px) + rng.uniform(-30.0, 30.0, size=2)
    return GalvoCalibration(gain=gain, offset=offset)


def _calib_numbers(c: GalvoCalibration) -> list:
    return [
        float(c.gain[0, 0]),
        float(c.gain[0, 1]),
        float(c.gain[1, 0]),
        float(c.gain[1, 1]),
        float(c.offset[0]),
        float(c.offset[1]),
    ]


def calib_from_numbers(vals) -> GalvoCalibration:
    return GalvoCalibration(
        gain=np.array([[vals[0], vals[1]], [vals[2], vals[3]]]),
        offset=np.array([vals[4], vals[5]]),
    )


# --- the closed-loop session -------------------------------------------------


class TrialSession:
    """One procedure on the simulation clock, advanced tick by tick.

    tick() returns the events of that tick: ("microscope_frame", frame, obs),
    ("bscan_frame", frame, obs), ("phase", time, name), ("done", record).
    """

    def __init__(
        self,
        cfg: TrialConfig,
        eye_index: int = 0,
        trial_index: int = 0,
        goals=None,
    ):
        self.cfg = cfg
        self.eye_index = eye_index
        self.trial_index = trial_index

        phantom_seed = int(stream_rng(cfg.master_seed, STREAM_PHANTOM, eye_index).integers(2**31))
        self.phantom = make_phantom(phantom_seed, cfg.phantom)
        rng_galvo = stream_rng(cfg.master_seed, STREAM_GALVO, eye_index)
        self.galvo_truth = _random_galvo(rng_galvo, cfg.camera)
        samples = collect_samples(
            self.galvo_truth,
            voltage_grid(cfg.galvo_grid_n, cfg.galvo_span_v),
            cfg.galvo_noise_px,
            rng_galvo,
        )
        self.galvo_fitted = fit_calibration(samples)

        if goals is None:
            goals = ScriptedGoals(
                stream_rng(cfg.master_seed, STREAM_GOALS, eye_index, trial_index),
                cfg.goals,
                cfg.camera,
            )
        self.goals = goals
        self.rng_percept = stream_rng(cfg.master_seed, STREAM_PERCEPTION, eye_index, trial_index)
        rng_act = stream_rng(cfg.master_seed, STREAM_ACTUATION, eye_index, trial_index)

        self.rcm = RcmConstraint(self.phantom.rcm_point_um)
        start_pose = pose_for_tip(goals.start_tip_um(), self.rcm)
        self.actuator = ToolActuator(
            start_pose, self.rcm, cfg.actuation_noise_um, rng_act
        )
        self.servo = initial_servo_state(cfg.tuning)
        self.wf: WorkflowState | None = None

        self.dt = 1.0 / cfg.limits.control_hz
        self.sim_time = 0.0
        self.tick_index = 0
        self.next_rgb_t = 0.0
        self.next_oct_t = 0.0
        self.motion_done_time = 0.0
        self.rgb_obs = None
        self.oct_obs = None
        self.scanline: ScanLine | None = None
        self._last_bscan_frame = None
        self._bootstrap_stage = 0
        self._probe_ref = None
        self._stalled = False
        self._stall_s = 0.0
        self._await_ilm_marked = False
        self._insert_points = None
        self._insert_times = None
        self._insert_info = None
        self._goal_scanline = None

        self.record = TrialRecord(
            master_seed=cfg.master_seed,
            eye_index=eye_index,
            trial_index=trial_index,
            config=config_to_dict(cfg),
            phantom_seed=phantom_seed,
            galvo_truth=_calib_numbers(self.galvo_truth),
            galvo_fitted=_calib_numbers(self.galvo_fitted),
            goal_ilm_px=np.zeros(2),
        )
        self._trace = {
            "ticks": [],
            "times_s": [],
            "tips_um": [],
            "axes": [],
            "rcm_error_um": [],
            "phases": [],
        }
        self._mark_phase("BOOTSTRAP")

    # -- bookkeeping ----------------------------------------------------

    @property
    def finished(self) -> bool:
        return self.record.status in ("done", "aborted")

    def phase_name(self) -> str:
        if self.finished:
            return self.record.status.upper()
        if self.wf is None:
            return "BOOTSTRAP" if self._bootstrap_stage < 2 else "AWAIT_ILM_GOAL"
        return self.wf.phase.value

    def _mark_phase(self, name: str, events: list | None = None) -> None:
        self.record.phase_trace.append((self.sim_time, name))
        if events is not None:
            events.append(("phase", self.sim_time, name))

    def _scene(self) -> SceneSnapshot:
        tip = self.actuator.pose.tip_position_um
        return SceneSnapshot(
            tool=self.actuator.pose,
            phantom=self.phantom,
            sim_time_s=self.sim_time,
            inserted_depth_um=inserted_depth(self.phantom, tip),
        )

    def _abort(self, cause: str, events: list) -> None:
        self.record.status = "aborted"
        self.record.abort_cause = cause
        self._finalize(events)

    def _finalize(self, events: list) -> None:
        if not self._trace["ticks"] or self._trace["ticks"][-1] != self.tick_index:
            self._append_trace_row()
        self.record.end_time_s = self.sim_time
        self.record.tick_trace = {k: list(v) for k, v in self._trace.items()}
        self.record.metrics = compute_all_metrics(self.record)
        events.append(("done", self.record))

    def _append_trace_row(self) -> None:
        self._trace["ticks"].append(self.tick_index)
        self._trace["times_s"].append(self.sim_time)
        self._trace["tips_um"].append(self.actuator.pose.tip_position_um.tolist())
        self._trace["axes"].append(self.actuator.pose.axis_direction.tolist())
        self._trace["rcm_error_um"].append(rcm_error(self.actuator.pose, self.rcm))
        self._trace["phases"].append(self.phase_name())

    # -- per-tick advance -------------------------------------------------

    def tick(self) -> list:
        if self.finished:
            return []
        events: list = []
        self.tick_index += 1
        self.sim_time += self.dt

        moved = False
        if self.actuator.busy:
            self.actuator.step(frame_id=self.tick_index)
            moved = True
            if not self.actuator.busy:
                self.motion_done_time = self.sim_time

        scene = self._scene()

        if self.sim_time + 1e-12 >= self.next_rgb_t:
            frame = make_microscope_frame(scene, self.cfg.camera, self.sim_time)
            self.rgb_obs = perceive_microscope(frame, self.cfg.noise, self.rng_percept)
            self.next_rgb_t += 1.0 / self.cfg.rgb_rate_hz
            self.record.frame_events.append(
                {"kind": "microscope", "tick": self.tick_index, "time_s": self.sim_time}
            )
            events.append(("microscope_frame", frame, self.rgb_obs))

        if self.sim_time + 1e-12 >= self.next_oct_t:
            self.next_oct_t += 1.0 / self.cfg.oct_rate_hz
            if self.rgb_obs is not None and self.rgb_obs.valid:
                d = self.rgb_obs.tip_px - self.rgb_obs.base_px
                n = float(np.linalg.norm(d))
                if n > 1e-9:
                    self.scanline = ScanLine(
                        center_px=self.rgb_obs.tip_px,
                        tangent_px=d / n * (self.cfg.scan_length_px / 2.0),
                    )
            if self.scanline is not None:
                try:
                    bframe = make_bscan_frame(
                        scene,
                        self.scanline,
                        self.cfg.camera,
                        self.cfg.bscan,
                        self.galvo_fitted,
                        self.galvo_truth,
                        self.sim_time,
                    )
                except ValueError:
                    self._abort("scan_out_of_domain", events)
                    return events
                self.oct_obs = perceive_bscan(bframe, self.cfg.noise, self.rng_percept)
                self._last_bscan_frame = bframe
                self.record.frame_events.append(
                    {
                        "kind": "bscan",
                        "tick": self.tick_index,
                        "time_s": self.sim_time,
                        "line_center_px": self.scanline.center_px.tolist(),
                        "line_tangent_px": self.scanline.tangent_px.tolist(),
                    }
                )
                events.append(("bscan_frame", bframe, self.oct_obs))

        if self._insert_points is not None and moved:
            self._insert_points.append(self.actuator.pose.tip_position_um.copy())
            self._insert_times.append(self.sim_time)

        self._stalled = False
        if not self.actuator.busy:
            self._decide(events)
            if self.finished:
                return events

        self._append_trace_row()

        if self._stalled or (self.wf is not None and self.wf.phase is Phase.HOLD):
            self._stall_s += self.dt
        else:
            self._stall_s = 0.0
        if self._stall_s > self.cfg.hold_timeout_s:
            self._abort("perception", events)
        elif self.sim_time > self.cfg.max_trial_time_s:
            self._abort("timeout", events)
        return events

    # -- controller decisions ---------------------------------------------

    def _fresh(self, obs) -> bool:
        return obs is not None and obs.time_s >= self.motion_done_time - 1e-12

    def _decide(self, events: list) -> None:
        if not (self._fresh(self.rgb_obs) and self._fresh(self.oct_obs)):
            # idle with nothing fresh to act on; brief between frames, but
            # unbounded when a stream is gone, so it feeds the stall timer
            self._stalled = True
            return
        perception = merge_perception(self.rgb_obs, self.oct_obs)
        pose = self.actuator.pose

        if self._bootstrap_stage < 2:
            if not perception.rgb_valid:
                self._stalled = True
                return
            if self._probe_ref is not None:
                di = perception.tip_rgb_px - self._probe_ref[0]
                dp = pose.tip_position_um[:2] - self._probe_ref[1]
                self.servo = broyden_update(self.servo, di, dp)
                self._probe_ref = None
                self._bootstrap_stage += 1
                if self._bootstrap_stage == 2:
                    self.servo = replace(
                        self.servo,
                        last_tip_rgb_px=perception.tip_rgb_px,
                        last_planar_um=pose.tip_position_um[:2].copy(),
                    )
                return
            probe = np.zeros(3)
            probe[self._bootstrap_stage] = self.cfg.tuning.bootstrap_probe_um
            self._probe_ref = (
                perception.tip_rgb_px.copy(),
                pose.tip_position_um[:2].copy(),
            )
            self._dispatch_delta(probe)
            return

        if self.wf is None:
            goal = self.goals.ilm_goal_px()
            if goal is None:
                if not self._await_ilm_marked:
                    self._mark_phase("AWAIT_ILM_GOAL", events)
                    self._await_ilm_marked = True
                return
            self.wf = WorkflowState(
                phase=Phase.ALIGN_XY,
                goal_ilm_px=np.asarray(goal, dtype=float),
                safety_offset_um=self.cfg.safety_offset_um,
                realign_threshold_px=self.cfg.realign_threshold_px,
            )
            self.record.goal_ilm_px = np.asarray(goal, dtype=float)
            self._mark_phase(Phase.ALIGN_XY.value, events)
            return

        # Broyden maintenance on the accumulated (image, planar) deltas
        if perception.rgb_valid and self.servo.last_tip_rgb_px is not None:
            di = perception.tip_rgb_px - self.servo.last_tip_rgb_px
            dp = pose.tip_position_um[:2] - self.servo.last_planar_um
            if should_update(self.servo, di, dp):
                self.servo = broyden_update(self.servo, di, dp)
                self.servo = replace(
                    self.servo,
                    last_tip_rgb_px=perception.tip_rgb_px,
                    last_planar_um=pose.tip_position_um[:2].copy(),
                )

        if (
            self.wf.phase is Phase.AWAIT_SUBRETINAL_GOAL
            and self.wf.goal_subretinal_px is None
            and perception.oct_valid
        ):
            goal = self.goals.subretinal_goal_px(perception)
            if goal is not None:
                self.wf = replace(self.wf, goal_subretinal_px=np.asarray(goal, dtype=float))
                self.record.goal_subretinal_px = np.asarray(goal, dtype=float)
                self._goal_scanline = (
                    self._last_bscan_frame.scan_line
                    if self._last_bscan_frame is not None
                    else self.scanline
                )

        prev_phase = self.wf.phase
        try:
            wf2, cmd = step_workflow(self.wf, self.servo, perception, self.cfg.tuning)
        except SingularJacobianError:
            self.servo = initial_servo_state(self.cfg.tuning)
            self._bootstrap_stage = 0
            self._probe_ref = None
            return
        except ValueError:
            self._abort("bad_goal", events)
            return
        self.wf = wf2

        if wf2.phase is not prev_phase:
            self._mark_phase(wf2.phase.value, events)
            if prev_phase is Phase.LOWER_Z and wf2.phase is Phase.AT_SURFACE:
                self._annotate_arrival()
            if wf2.phase is Phase.DONE:
                self._close_insertion()
                self.record.status = "done"
                self._finalize(events)
                return

        if cmd.kind == "hold":
            return
        if cmd.kind == "insert":
            target = pose.tip_position_um - cmd.advance_um * pose.axis_direction
            if self._insert_points is None:
                self._insert_points = [pose.tip_position_um.copy()]
                self._insert_times = [self.sim_time]
                self._insert_info = {
                    "start_time_s": self.sim_time,
                    "axis_point_um": pose.tip_position_um.copy(),
                    "axis_direction": pose.axis_direction.copy(),
                    "commanded_distance_um": float(
                        self.wf.insertion_remaining_um + cmd.advance_um
                    ),
                }
            self._dispatch_target(target)
            return
        self._dispatch_delta(cmd.delta_um)

    def _dispatch_delta(self, delta_um: np.ndarray) -> None:
        self._dispatch_target(self.actuator.pose.tip_position_um + delta_um)

    def _dispatch_target(self, target_um: np.ndarray) -> None:
        seg = plan_trajectory(self.actuator.pose, target_um, self.rcm, self.cfg.limits)
        self.actuator.start(seg)
        if not self.actuator.busy:
            self.motion_done_time = self.sim_time

    # -- annotations -------------------------------------------------------

    def _truth_perception(self, scanline: ScanLine):
        scene = self._scene()
        mframe = make_microscope_frame(scene, self.cfg.camera, self.sim_time)
        mo = perceive_microscope(mframe)
        bframe = make_bscan_frame(
            scene,
            scanline,
            self.cfg.camera,
            self.cfg.bscan,
            self.galvo_fitted,
            self.galvo_truth,
            self.sim_time,
        )
        bo = perceive_bscan(bframe)
        return merge_perception(mo, bo), bframe

    def _annotate_arrival(self) -> None:
        truth, _ = self._truth_perception(self.scanline)
        ilm_px = project_tip_to_ilm(truth)
        tip = self.actuator.pose.tip_position_um
        surface = float(self.phantom.ilm_height(tip[:2]))
        self.record.arrival = ArrivalAnnotation(
            sim_time_s=self.sim_time,
            tip_rgb_px=truth.tip_rgb_px.copy(),
            tip_oct_px=truth.tip_oct_px.copy(),
            ilm_px=ilm_px,
            height_above_ilm_um=float(tip[2] - surface),
        )

    def _close_insertion(self) -> None:
        if self._insert_info is None or self.wf.goal_subretinal_px is None:
            return
        line = self._goal_scanline if self._goal_scanline is not None else self.scanline
        truth, bframe = self._truth_perception(line)
        landed = self.actuator.pose.tip_position_um.copy()

        # slice the verification volume perpendicular to the frozen scan plane
        from octnav.imaging import CSCAN_UM_PER_SLICE

        g0 = bframe.ground_xy[0]
        g1 = bframe.ground_xy[-1]
        gdir = (g1 - g0) / np.linalg.norm(g1 - g0)
        normal = np.array([-gdir[1], gdir[0]])
        center_xy = (g0 + g1) / 2.0
        off_um = float((landed[:2] - center_xy) @ normal)
        gt_slice = self.cfg.cscan_n_slices // 2
        actual_slice = gt_slice + int(np.rint(off_um / CSCAN_UM_PER_SLICE))

        self.record.insertion = InsertionOutcome(
            start_time_s=self._insert_info["start_time_s"],
            end_time_s=self.motion_done_time,
            axis_point_um=self._insert_info["axis_point_um"],
            axis_direction=self._insert_info["axis_direction"],
            commanded_distance_um=self._insert_info["commanded_distance_um"],
            goal_oct_px=self.wf.goal_subretinal_px.copy(),
            trace_times_s=np.asarray(self._insert_times),
            trace_tips_um=np.asarray(self._insert_points),
            landed_tip_um=landed,
            landed_oct_px=truth.tip_oct_px.copy(),
            gt_slice=gt_slice,
            actual_slice=actual_slice,
        )


# --- batch and replay --------------------------------------------------------


def run_trial(
    cfg: TrialConfig, eye_index: int = 0, trial_index: int = 0, goals=None
) -> TrialRecord:
    session = TrialSession(cfg, eye_index, trial_index, goals=goals)
    while not session.finished:
        session.tick()
    return session.record


@dataclass
class BatchResult:
    records: list
    aggregate: dict
    determinism_hash: str

    @property
    def n_done(self) -> int:
        return sum(1 for r in self.records if r.status == "done")


def run_batch(cfg: TrialConfig, out_dir=None, verbose: bool = False) -> BatchResult:
    records = []
    digest = hashlib.sha256()
    for eye in range(cfg.n_eyes):
        for trial in range(cfg.trials_per_eye):
            rec = run_trial(cfg, eye, trial)
            records.append(rec)
            digest.update(record_to_json(rec).encode())
            if verbose:
                print(
                    f"eye {eye} trial {trial}: {rec.status}"
                    + (f" ({rec.abort_cause})" if rec.abort_cause else "")
                )
    result = BatchResult(
        records=records,
        aggregate=aggregate_metrics(records),
        determinism_hash=digest.hexdigest(),
    )
    if out_dir is not None:
        write_batch_outputs(result, cfg, out_dir)
    return result


def write_batch_outputs(result: BatchResult, cfg: TrialConfig, out_dir) -> None:
    import os

    rec_dir = os.path.join(out_dir, "records")
    os.makedirs(rec_dir, exist_ok=True)
    for rec in result.records:
        stem = f"trial_{rec.eye_index:02d}_{rec.trial_index:02d}"
        with open(os.path.join(rec_dir, stem + ".json"), "w") as f:
            f.write(record_to_json(rec))
        write_trace_csv(rec, os.path.join(rec_dir, stem + "_trace.csv"))
    write_aggregate_csv(os.path.join(out_dir, "aggregate.csv"), result.aggregate)
    summary = {
        "config": config_to_dict(cfg),
        "n_trials": len(result.records),
        "n_done": result.n_done,
        "determinism_hash": result.determinism_hash,
        "aborts": [
            {"eye": r.eye_index, "trial": r.trial_index, "cause": r.abort_cause}
            for r in result.records
            if r.status != "done"
        ],
    }
    with open(os.path.join(out_dir, "batch.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)


def replay(record: TrialRecord, out_dir, kinds=("microscope", "bscan")) -> list:
    """Re-render the recorded frames to PNG plus JSON sidecars.

    Rendering is a pure function of the recorded state, so files are
    bit-identical across runs. A truncated tick trace yields a partial
    replay with a warning rather than an error.
    """
    import os

    from PIL import Image

    cfg = config_from_dict(record.config)
    phantom = make_phantom(record.phantom_seed, cfg.phantom)
    truth = calib_from_numbers(record.galvo_truth)
    fitted = calib_from_numbers(record.galvo_fitted)
    ticks = list(record.tick_trace.get("ticks", []))
    index_of = {t: i for i, t in enumerate(ticks)}
    tips = record.tick_trace.get("tips_um", [])
    axes = record.tick_trace.get("axes", [])
    times = record.tick_trace.get("times_s", [])

    os.makedirs(out_dir, exist_ok=True)
    written = []
    for event in record.frame_events:
        if event["kind"] not in kinds:
            continue
        idx = index_of.get(event["tick"])
        if idx is None:
            warnings.warn(
                f"record truncated at tick {event['tick']}; replay is partial"
            )
            break
        pose = ToolPose(
            tip_position_um=np.asarray(tips[idx]),
            axis_direction=np.asarray(axes[idx]),
            frame_id=event["tick"],
        )
        scene = SceneSnapshot(
            tool=pose,
            phantom=phantom,
            sim_time_s=times[idx],
            inserted_depth_um=inserted_depth(phantom, np.asarray(tips[idx])),
        )
        stem = f"{event['kind']}_{event['tick']:06d}"
        sidecar = {"kind": event["kind"], "tick": event["tick"], "sim_time_s": times[idx]}
        if event["kind"] == "microscope":
            frame = make_microscope_frame(scene, cfg.camera, times[idx])
            img = frame.render()
            mo = perceive_microscope(frame)
            sidecar["annotations"] = {
                "tip_px": mo.tip_px.tolist(),
                "base_px": mo.base_px.tolist(),
                "tool_visible": frame.tool_visible,
            }
        else:
            line = ScanLine(
                center_px=np.asarray(event["line_center_px"]),
                tangent_px=np.asarray(event["line_tangent_px"]),
            )
            frame = make_bscan_frame(
                scene, line, cfg.camera, cfg.bscan, fitted, truth, times[idx]
            )
            img = frame.render()
            bo = perceive_bscan(frame)
            sidecar["annotations"] = {
                "tip_px": bo.tip_px.tolist(),
                "base_px": bo.base_px.tolist(),
                "ilm_rows": bo.ilm_rows.tolist(),
                "rpe_rows": bo.rpe_rows.tolist(),
                "line_center_px": event["line_center_px"],
                "line_tangent_px": event["line_tangent_px"],
            }
        png_path = os.path.join(out_dir, stem + ".png")
        Image.fromarray(img, mode="L").save(png_path)
        with open(os.path.join(out_dir, stem + ".json"), "w") as f:
            json.dump(sidecar, f, sort_keys=True)
        written.append(png_path)
    return written
