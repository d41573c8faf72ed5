"""Imaging chain: microscope camera model, galvo-steered B-scan sampling,
rasterization of both views, and the perception oracle that stands in for
the tool-tracking and layer-segmentation networks.

Pixel conventions:

  * microscope frame: 640 x 480, px = (x, y), x grows to the right and y
    grows downward; 13.6 um per pixel at the retina plane
  * B-scan frame: 512 columns x 1024 rows, px = (col, row); columns walk
    along the scan line (5.3 um each at the default scan length), rows walk
    down the depth axis (2.6 um each); row 0 sits at a fixed reference
    height above the retina
  * C-scan slices are 13.6 um apart perpendicular to the scan plane

The camera is a scaled orthographic projection with a small optional rig
tilt and radial distortion. The OCT beam itself is modeled as vertical and
undistorted: the ground position of a scan column is the nominal inverse of
its pixel position. The tilt and distortion therefore show up only in what
the microscope (and hence the tracker) reports, which is exactly the kind
of mild miscalibration the Broyden update has to absorb.

Perception is analytic: detections and layer profiles are computed from
scene geometry, with optional Gaussian pixel noise and per-field dropout,
rather than run through a network. The tip-to-base pixel spacing of the
detections is held at exactly 50 px (microscope) and 100 px (B-scan) the
way the trackers are trained to report them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from octnav.galvo import GalvoCalibration, ScanLine, scan_line_voltages
from octnav.phantom import SceneSnapshot

MICROSCOPE_WIDTH_PX = 640
MICROSCOPE_HEIGHT_PX = 480
MICROSCOPE_UM_PER_PX = 13.6
BSCAN_WIDTH_PX = 512
BSCAN_HEIGHT_PX = 1024
BSCAN_UM_PER_ROW = 2.6
BSCAN_UM_PER_COL = 5.3
CSCAN_UM_PER_SLICE = 13.6
DEFAULT_SCAN_LENGTH_PX = BSCAN_WIDTH_PX * BSCAN_UM_PER_COL / MICROSCOPE_UM_PER_PX
TIP_BASE_SPACING_RGB_PX = 50.0
TIP_BASE_SPACING_OCT_PX = 100.0
# radial distortion is normalized by the half-width; |k1| below this bound
# keeps the pixel map injective over the full frame
DISTORTION_NORM_PX = 320.0
MAX_ABS_K1 = 0.2


def _readonly(a, shape=None) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if shape is not None:
        a = a.reshape(shape)
    a = a.copy()
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CameraModel:
    """Scaled orthographic microscope camera with tilt and radial distortion.

    A world point p maps to pixels as

        q = Rx(tilt_x) Ry(tilt_y) (p - view_center)
        n = q_xy / um_per_px
        px = principal_point + n * (1 + k1 * |n / 320|^2)

    With zero tilt and k1 = 0 this is a pure scale about the principal
    point, 13.6 um per pixel.
    """

    um_per_px: float = MICROSCOPE_UM_PER_PX
    principal_point_px: tuple[float, float] = (320.0, 240.0)
    tilt_x_rad: float = 0.0
    tilt_y_rad: float = 0.0
    k1: float = 0.0
    view_center_um: tuple[float, float, float] = (0.0, 0.0, 0.0)
    width_px: int = MICROSCOPE_WIDTH_PX
    height_px: int = MICROSCOPE_HEIGHT_PX

    def __post_init__(self):
        if self.um_per_px <= 0:
            raise ValueError("um_per_px must be positive")
        if abs(self.k1) > MAX_ABS_K1:
            raise ValueError(f"|k1| above injectivity bound {MAX_ABS_K1}")

    def _rotation(self) -> np.ndarray:
        cx, sx = np.cos(self.tilt_x_rad), np.sin(self.tilt_x_rad)
        cy, sy = np.cos(self.tilt_y_rad), np.sin(self.tilt_y_rad)
        rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
        ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
        return rx @ ry

    def project(self, points_um) -> np.ndarray:
        """World (..., 3) um -> microscope pixels (..., 2)."""
        p = np.asarray(points_um, dtype=float)
        q = (p - np.asarray(self.view_center_um)) @ self._rotation().T
        n = q[..., :2] / self.um_per_px
        r2 = (n**2).sum(axis=-1, keepdims=True) / DISTORTION_NORM_PX**2
        return np.asarray(self.principal_point_px) + n * (1.0 + self.k1 * r2)

    def ground_position(self, px) -> np.ndarray:
        """Nominal beam landing position (um, XY) for pixels (..., 2).

        This is the undistorted, untilted inverse used for OCT sampling; the
        beam is treated as vertical.
        """
        px = np.asarray(px, dtype=float)
        pp = np.asarray(self.principal_point_px)
        return (px - pp) * self.um_per_px + np.asarray(self.view_center_um[:2])

    def in_frame(self, px) -> bool:
        px = np.asarray(px, dtype=float)
        return bool(
            0 <= px[0] < self.width_px and 0 <= px[1] < self.height_px
        )


@dataclass(frozen=True)
class BScanGeometry:
    """Depth axis of the B-scan image."""

    top_height_um: float = 1300.0
    um_per_row: float = BSCAN_UM_PER_ROW
    n_rows: int = BSCAN_HEIGHT_PX

    def row_for_height(self, z_um) -> np.ndarray | float:
        return (self.top_height_um - np.asarray(z_um, dtype=float)) / self.um_per_row

    def height_for_row(self, row) -> np.ndarray | float:
        return self.top_height_um - np.asarray(row, dtype=float) * self.um_per_row


@dataclass(frozen=True)
class NoiseConfig:
    """Perception noise: detection/profile pixel jitter and field dropout."""

    pixel_sigma_px: float = 0.0
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.pixel_sigma_px < 0:
            raise ValueError("pixel sigma cannot be negative")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ValueError("dropout rate must be a probability")

    @property
    def active(self) -> bool:
        return self.pixel_sigma_px > 0 or self.dropout_rate > 0


# --- frames -----------------------------------------------------------------


@dataclass(frozen=True)
class MicroscopeFrame:
    """One microscope frame; pixels are rasterized on demand."""

    scene: SceneSnapshot
    camera: CameraModel
    timestamp_s: float
    tool_visible: bool

    def render(self) -> np.ndarray:
        return _rasterize_microscope(self)


@dataclass(frozen=True)
class BScanFrame:
    """One B-scan; column geometry is resolved at construction time.

    sample_px holds where each column actually landed in microscope pixels
    (after the voltage round trip when calibrations are supplied), and
    ground_xy the matching world positions sampled by the beam.
    """

    scene: SceneSnapshot
    scan_line: ScanLine
    camera: CameraModel
    geometry: BScanGeometry
    timestamp_s: float
    sample_px: np.ndarray  # (n, 2)
    ground_xy: np.ndarray  # (n, 2)

    def render(self) -> np.ndarray:
        return _rasterize_bscan(self)


def make_microscope_frame(
    scene: SceneSnapshot, camera: CameraModel, timestamp_s: float = 0.0
) -> MicroscopeFrame:
    tip_px = camera.project(scene.tool.tip_position_um)
    return MicroscopeFrame(
        scene=scene,
        camera=camera,
        timestamp_s=timestamp_s,
        tool_visible=camera.in_frame(tip_px),
    )


def render_microscope(
    scene: SceneSnapshot, camera: CameraModel, timestamp_s: float = 0.0
) -> MicroscopeFrame:
    return make_microscope_frame(scene, camera, timestamp_s)


def make_bscan_frame(
    scene: SceneSnapshot,
    line: ScanLine,
    camera: CameraModel,
    geometry: BScanGeometry = BScanGeometry(),
    calib: GalvoCalibration | None = None,
    hardware_calib: GalvoCalibration | None = None,
    timestamp_s: float = 0.0,
) -> BScanFrame:
    """Resolve the scan columns to world positions.

    With a calibration the requested line is converted to voltages with it
    and played through hardware_calib (the true mirror map; defaults to the
    same calibration), reproducing the fit-then-drive round trip of the real
    scanner. Without one the requested pixel positions are used directly.
    """
    if calib is not None:
        volts = scan_line_voltages(calib, line)
        hw = hardware_calib if hardware_calib is not None else calib
        sample_px = hw.to_position(volts)
    else:
        sample_px = line.column_positions_px()
    ground = camera.ground_position(sample_px)
    try:
        scene.phantom._check_domain(ground)
    except ValueError:
        raise ValueError("scan line outside phantom domain") from None
    return BScanFrame(
        scene=scene,
        scan_line=line,
        camera=camera,
        geometry=geometry,
        timestamp_s=timestamp_s,
        sample_px=_readonly(sample_px),
        ground_xy=_readonly(ground),
    )


def render_bscan(
    scene: SceneSnapshot,
    line: ScanLine,
    calib: GalvoCalibration | None = None,
    camera: CameraModel = CameraModel(),
    geometry: BScanGeometry = BScanGeometry(),
    hardware_calib: GalvoCalibration | None = None,
    timestamp_s: float = 0.0,
) -> BScanFrame:
    return make_bscan_frame(
        scene, line, camera, geometry, calib, hardware_calib, timestamp_s
    )


# --- rasterization ----------------------------------------------------------

_BG_OUTSIDE = 20
_ILM_LEVEL = 200
_RPE_LEVEL = 160
_NEEDLE_LEVEL = 255


def _stamp(img: np.ndarray, cols: np.ndarray, rows: np.ndarray, value: int) -> None:
    """Paint integer (col, row) samples with a 3x3 footprint, clipped."""
    h, w = img.shape
    for dc in (-1, 0, 1):
        for dr in (-1, 0, 1):
            c = cols + dc
            r = rows + dr
            m = (c >= 0) & (c < w) & (r >= 0) & (r < h)
            img[r[m], c[m]] = value


def _rasterize_microscope(frame: MicroscopeFrame) -> np.ndarray:
    cam = frame.camera
    phantom = frame.scene.phantom
    xs = np.arange(cam.width_px)
    ys = np.arange(cam.height_px)
    px = np.stack(np.meshgrid(xs, ys), axis=-1).astype(float)  # (h, w, 2)
    ground = cam.ground_position(px.reshape(-1, 2))
    r = np.hypot(ground[:, 0], ground[:, 1])
    inside = r <= phantom.config.radius_um
    img = np.full(cam.height_px * cam.width_px, _BG_OUTSIDE, dtype=np.uint8)
    if inside.any():
        z = np.zeros(inside.sum())
        pts = ground[inside]
        gx, gy = phantom.config.base_gradient
        z = phantom.config.base_height_um + gx * pts[:, 0] + gy * pts[:, 1]
        if len(phantom.bump_amps_um):
            d2 = ((pts[:, None, :] - phantom.bump_centers_um[None, :, :]) ** 2).sum(axis=2)
            z = z + (
                phantom.bump_amps_um * np.exp(-d2 / (2.0 * phantom.bump_sigmas_um**2))
            ).sum(axis=1)
        amp = max(phantom.config.bump_amplitude_um, 1.0)
        shade = 90 + 40 * np.clip((z - phantom.config.base_height_um) / amp, -1.0, 1.0)
        img[inside] = shade.astype(np.uint8)
    img = img.reshape(cam.height_px, cam.width_px)

    if frame.tool_visible:
        tool = frame.scene.tool
        tip_px = cam.project(tool.tip_position_um)
        # walk up the shaft in world space so foreshortening is honest
        u = np.arange(0.0, 4000.0, 6.0)
        shaft = tool.tip_position_um[None, :] + u[:, None] * tool.axis_direction[None, :]
        spx = cam.project(shaft)
        cols = np.rint(spx[:, 0]).astype(int)
        rows = np.rint(spx[:, 1]).astype(int)
        _stamp(img, cols, rows, _NEEDLE_LEVEL)
        img[int(round(tip_px[1])) % cam.height_px, int(round(tip_px[0])) % cam.width_px] = _NEEDLE_LEVEL
    return img


def _rasterize_bscan(frame: BScanFrame) -> np.ndarray:
    geom = frame.geometry
    n = frame.scan_line.n_columns
    img = np.zeros((geom.n_rows, n), dtype=np.uint8)
    phantom = frame.scene.phantom
    ilm_z = np.atleast_1d(phantom.ilm_height(frame.ground_xy))
    rpe_z = ilm_z - phantom.thickness_um
    cols = np.arange(n)
    for z, level in ((ilm_z, _ILM_LEVEL), (rpe_z, _RPE_LEVEL)):
        rows = np.rint(geom.row_for_height(z)).astype(int)
        for dr in (-1, 0, 1):
            rr = rows + dr
            m = (rr >= 0) & (rr < geom.n_rows)
            img[rr[m], cols[m]] = level

    # needle: walk up the shaft, keep samples close to the scan plane
    tool = frame.scene.tool
    g0 = frame.ground_xy[0]
    g1 = frame.ground_xy[-1]
    span = g1 - g0
    length = float(np.linalg.norm(span))
    if length > 1e-9:
        gdir = span / length
        col_um = length / (n - 1)
        normal = np.array([-gdir[1], gdir[0]])
        u = np.arange(0.0, 4000.0, 1.0)
        shaft = tool.tip_position_um[None, :] + u[:, None] * tool.axis_direction[None, :]
        off_plane = np.abs((shaft[:, :2] - g0[None, :]) @ normal)
        keep = off_plane <= 25.0
        if keep.any():
            pts = shaft[keep]
            c = np.rint((pts[:, :2] - g0[None, :]) @ gdir / col_um).astype(int)
            r = np.rint(geom.row_for_height(pts[:, 2])).astype(int)
            _stamp(img, c, r, _NEEDLE_LEVEL)
    return img


def add_speckle(img: np.ndarray, rng: np.random.Generator, sigma: float = 8.0) -> np.ndarray:
    """Optional deterministic speckle for exported frames."""
    noisy = img.astype(float) + rng.normal(0.0, sigma, size=img.shape)
    return np.clip(noisy, 0, 255).astype(np.uint8)


# --- perception oracle ------------------------------------------------------


@dataclass(frozen=True)
class MicroscopeObservation:
    tip_px: np.ndarray  # (2,)
    base_px: np.ndarray  # (2,)
    tip_valid: bool
    base_valid: bool
    time_s: float

    @property
    def valid(self) -> bool:
        return self.tip_valid and self.base_valid


@dataclass(frozen=True)
class BScanObservation:
    tip_px: np.ndarray  # (col, row)
    base_px: np.ndarray
    ilm_rows: np.ndarray  # (n,)
    rpe_rows: np.ndarray
    tip_valid: bool
    base_valid: bool
    ilm_valid: bool
    rpe_valid: bool
    time_s: float

    @property
    def valid(self) -> bool:
        return self.tip_valid and self.base_valid


@dataclass(frozen=True)
class PerceptionResult:
    """Latest detections of both trackers plus layer profiles.

    Values are always populated; consumers must honor the validity flags,
    which encode both dropout and out-of-view conditions.
    """

    tip_rgb_px: np.ndarray
    base_rgb_px: np.ndarray
    tip_rgb_valid: bool
    base_rgb_valid: bool
    rgb_time_s: float
    tip_oct_px: np.ndarray
    base_oct_px: np.ndarray
    tip_oct_valid: bool
    base_oct_valid: bool
    ilm_profile_rows: np.ndarray
    rpe_profile_rows: np.ndarray
    ilm_valid: bool
    rpe_valid: bool
    oct_time_s: float

    @property
    def rgb_valid(self) -> bool:
        return self.tip_rgb_valid and self.base_rgb_valid

    @property
    def oct_valid(self) -> bool:
        return self.tip_oct_valid and self.base_oct_valid


def _rotate2(v: np.ndarray, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def perceive_microscope(
    frame: MicroscopeFrame,
    noise: NoiseConfig = NoiseConfig(),
    rng: np.random.Generator | None = None,
) -> MicroscopeObservation:
    """Tool tip/base detections in microscope pixels.

    The base detection is placed exactly 50 px up the imaged shaft from the
    tip; noise jitters the tip and the shaft angle but preserves that
    spacing, matching how the tracker is constrained to report.
    """
    if noise.active and rng is None:
        raise ValueError("noisy perception needs an rng")
    cam = frame.camera
    tool = frame.scene.tool
    tip = cam.project(tool.tip_position_um)
    up_shaft = cam.project(tool.tip_position_um + 500.0 * tool.axis_direction) - tip
    nrm = float(np.linalg.norm(up_shaft))
    direction = up_shaft / nrm if nrm > 1e-12 else np.array([0.0, -1.0])

    if noise.pixel_sigma_px > 0:
        tip = tip + rng.normal(0.0, noise.pixel_sigma_px, size=2)
        direction = _rotate2(
            direction, rng.normal(0.0, noise.pixel_sigma_px / TIP_BASE_SPACING_RGB_PX)
        )
    base = tip + TIP_BASE_SPACING_RGB_PX * direction

    visible = frame.tool_visible
    tip_valid = visible
    base_valid = visible
    if noise.dropout_rate > 0:
        tip_valid = tip_valid and rng.random() >= noise.dropout_rate
        base_valid = base_valid and rng.random() >= noise.dropout_rate
    return MicroscopeObservation(
        tip_px=_readonly(tip),
        base_px=_readonly(base),
        tip_valid=bool(tip_valid),
        base_valid=bool(base_valid),
        time_s=frame.timestamp_s,
    )


def perceive_bscan(
    frame: BScanFrame,
    noise: NoiseConfig = NoiseConfig(),
    rng: np.random.Generator | None = None,
) -> BScanObservation:
    """Tip/base detections in B-scan pixels plus ILM/RPE row profiles.

    The base detection sits exactly 100 px up the imaged shaft. Column and
    row scales differ, so the shaft direction is formed in pixel units
    before normalizing.
    """
    if noise.active and rng is None:
        raise ValueError("noisy perception needs an rng")
    geom = frame.geometry
    tool = frame.scene.tool
    phantom = frame.scene.phantom
    n = frame.scan_line.n_columns

    g0 = frame.ground_xy[0]
    g1 = frame.ground_xy[-1]
    span = g1 - g0
    length = float(np.linalg.norm(span))
    gdir = span / length
    col_um = length / (n - 1)

    tip3 = tool.tip_position_um
    tip_col = float((tip3[:2] - g0) @ gdir / col_um)
    tip_row = float(geom.row_for_height(tip3[2]))
    tip = np.array([tip_col, tip_row])

    dcol = float(tool.axis_direction[:2] @ gdir) / col_um
    drow = -tool.axis_direction[2] / geom.um_per_row
    shaft = np.array([dcol, drow])
    nrm = float(np.linalg.norm(shaft))
    direction = shaft / nrm if nrm > 1e-12 else np.array([0.0, -1.0])

    ilm_z = np.atleast_1d(phantom.ilm_height(frame.ground_xy))
    ilm_rows = np.asarray(geom.row_for_height(ilm_z), dtype=float)
    rpe_rows = np.asarray(geom.row_for_height(ilm_z - phantom.thickness_um), dtype=float)

    if noise.pixel_sigma_px > 0:
        tip = tip + rng.normal(0.0, noise.pixel_sigma_px, size=2)
        direction = _rotate2(
            direction, rng.normal(0.0, noise.pixel_sigma_px / TIP_BASE_SPACING_OCT_PX)
        )
        ilm_rows = ilm_rows + rng.normal(0.0, noise.pixel_sigma_px, size=n)
        rpe_rows = rpe_rows + rng.normal(0.0, noise.pixel_sigma_px, size=n)
    base = tip + TIP_BASE_SPACING_OCT_PX * direction

    in_scan = 0.0 <= tip[0] < n and 0.0 <= tip[1] < geom.n_rows
    tip_valid = in_scan
    base_valid = in_scan
    ilm_valid = True
    rpe_valid = True
    if noise.dropout_rate > 0:
        tip_valid = tip_valid and rng.random() >= noise.dropout_rate
        base_valid = base_valid and rng.random() >= noise.dropout_rate
        ilm_valid = rng.random() >= noise.dropout_rate
        rpe_valid = rng.random() >= noise.dropout_rate
    return BScanObservation(
        tip_px=_readonly(tip),
        base_px=_readonly(base),
        ilm_rows=_readonly(ilm_rows),
        rpe_rows=_readonly(rpe_rows),
        tip_valid=bool(tip_valid),
        base_valid=bool(base_valid),
        ilm_valid=bool(ilm_valid),
        rpe_valid=bool(rpe_valid),
        time_s=frame.timestamp_s,
    )


def merge_perception(
    mo: MicroscopeObservation, bo: BScanObservation
) -> PerceptionResult:
    """Combine the latest observation of each stream for the controller."""
    return PerceptionResult(
        tip_rgb_px=mo.tip_px,
        base_rgb_px=mo.base_px,
        tip_rgb_valid=mo.tip_valid,
        base_rgb_valid=mo.base_valid,
        rgb_time_s=mo.time_s,
        tip_oct_px=bo.tip_px,
        base_oct_px=bo.base_px,
        tip_oct_valid=bo.tip_valid,
        base_oct_valid=bo.base_valid,
        ilm_profile_rows=bo.ilm_rows,
        rpe_profile_rows=bo.rpe_rows,
        ilm_valid=bo.ilm_valid,
        rpe_valid=bo.rpe_valid,
        oct_time_s=bo.time_s,
    )


def perceive(
    ms: MicroscopeFrame,
    bs: BScanFrame,
    noise: NoiseConfig = NoiseConfig(),
    rng: np.random.Generator | None = None,
) -> PerceptionResult:
    """Synchronized perception of a frame pair from the same scene tick."""
    if abs(ms.scene.sim_time_s - bs.scene.sim_time_s) > 1e-9:
        raise ValueError("frames must come from the same scene tick")
    mo = perceive_microscope(ms, noise, rng)
    bo = perceive_bscan(bs, noise, rng)
    return merge_perception(mo, bo)


def track_tool_scanline(
    perception: PerceptionResult,
    scan_length_px: float = DEFAULT_SCAN_LENGTH_PX,
    n_columns: int = BSCAN_WIDTH_PX,
) -> ScanLine:
    """Scan line through the detected tip, aligned with the imaged shaft.

    The tangent points from base through tip and onward, so the tip sits at
    the line center and insertion progress walks toward +t.
    """
    if not perception.rgb_valid:
        raise ValueError("tool detections invalid; cannot place scan line")
    d = perception.tip_rgb_px - perception.base_rgb_px
    n = float(np.linalg.norm(d))
    if n <= 1e-9:
        raise ValueError("tip and base detections coincide")
    tangent = d / n * (scan_length_px / 2.0)
    return ScanLine(
        center_px=perception.tip_rgb_px, tangent_px=tangent, n_columns=n_columns
    )


def project_tip_to_ilm(perception: PerceptionResult) -> np.ndarray:
    """ILM point (col, row) directly below the detected B-scan tip."""
    if not (perception.tip_oct_valid and perception.ilm_valid):
        raise ValueError("need valid tip and ilm profile")
    n = perception.ilm_profile_rows.shape[0]
    col = int(round(float(perception.tip_oct_px[0])))
    if not 0 <= col < n:
        raise ValueError("tip column outside the scan")
    return np.array([float(col), float(perception.ilm_profile_rows[col])])
