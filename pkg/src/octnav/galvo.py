"""Galvo scanner model: voltage-to-pixel map, closed-form calibration fit,
and voltage generation for a needle-aligned B-scan line.

The steering mirrors are modeled as an affine map from a 2-vector of drive
voltages to a 2-vector of microscope pixel coordinates,

    position_px = gain @ volts + offset

with gain a 2x2 matrix in px/V and offset in px. Calibration recovers both
from point correspondences by ordinary least squares on mean-centered data,
which is exact for noise-free samples and optimal in the usual LS sense
otherwise. A scan line is then realized by interpolating voltages between
the line's two endpoints, one cell-centered sample per B-scan column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class CalibrationError(ValueError):
    """Raised when the voltage-to-pixel map is not identifiable."""


def _readonly(a, shape) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(shape)
    a = a.copy()
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GalvoCalibration:
    """Affine voltage->pixel map. gain is px/V, offset is px."""

    gain: np.ndarray  # (2, 2)
    offset: np.ndarray  # (2,)

    def __post_init__(self):
        gain = _readonly(self.gain, (2, 2))
        offset = _readonly(self.offset, (2,))
        if not (np.all(np.isfinite(gain)) and np.all(np.isfinite(offset))):
            raise CalibrationError("calibration must be finite")
        if abs(float(np.linalg.det(gain))) <= 1e-12:
            raise CalibrationError("gain matrix is singular")
        object.__setattr__(self, "gain", gain)
        object.__setattr__(self, "offset", offset)

    def to_position(self, volts) -> np.ndarray:
        """Forward map, volts (..., 2) -> pixels (..., 2)."""
        v = np.asarray(volts, dtype=float)
        return v @ self.gain.T + self.offset


@dataclass(frozen=True)
class CalibrationSampleSet:
    """Matched voltage/pixel samples from the simulated viewing card."""

    volts: np.ndarray  # (n, 2)
    positions_px: np.ndarray  # (n, 2)

    def __post_init__(self):
        volts = _readonly(self.volts, (-1, 2))
        pos = _readonly(self.positions_px, (-1, 2))
        if volts.shape != pos.shape:
            raise ValueError("volts and positions must have matching shapes")
        if volts.shape[0] < 3:
            raise ValueError("need at least 3 samples to fit an affine map")
        object.__setattr__(self, "volts", volts)
        object.__setattr__(self, "positions_px", pos)


def fit_calibration(samples: CalibrationSampleSet) -> GalvoCalibration:
    """Least-squares fit of the affine map.

    On mean-centered stacks V (2xn) and X (2xn) the estimate is
    gain^T = (V V^T)^-1 V X^T and offset = x_mean - gain v_mean. For
    noise-free samples from an affine map this is exact.
    """
    v = samples.volts
    x = samples.positions_px
    v_mean = v.mean(axis=0)
    x_mean = x.mean(axis=0)
    vc = (v - v_mean).T  # (2, n)
    xc = (x - x_mean).T
    m = vc @ vc.T
    sv = np.linalg.svd(m, compute_uv=False)
    if sv[-1] <= 1e-12 * max(1.0, sv[0]):
        raise CalibrationError("voltage samples are collinear; map not identifiable")
    gain = np.linalg.solve(m, vc @ xc.T).T
    offset = x_mean - gain @ v_mean
    return GalvoCalibration(gain=gain, offset=offset)


def voltage_for_position(calib: GalvoCalibration, position_px) -> np.ndarray:
    """Voltages that steer the beam to the requested pixel position."""
    p = np.asarray(position_px, dtype=float)
    return np.linalg.solve(calib.gain, (p - calib.offset).T).T


def voltage_tangent(calib: GalvoCalibration, delta_px) -> np.ndarray:
    """Voltage change realizing a pixel displacement (no offset term)."""
    d = np.asarray(delta_px, dtype=float)
    return np.linalg.solve(calib.gain, d.T).T


@dataclass(frozen=True)
class ScanLine:
    """B-scan line in microscope pixels: center, half-length tangent vector."""

    center_px: np.ndarray  # (2,)
    tangent_px: np.ndarray  # (2,), points to the t=+1 end
    n_columns: int = 512

    def __post_init__(self):
        center = _readonly(self.center_px, (2,))
        tangent = _readonly(self.tangent_px, (2,))
        if self.n_columns < 2:
            raise ValueError("scan line needs at least 2 columns")
        if np.linalg.norm(tangent) <= 1e-12:
            raise ValueError("scan line tangent must be nonzero")
        object.__setattr__(self, "center_px", center)
        object.__setattr__(self, "tangent_px", tangent)

    @property
    def half_length_px(self) -> float:
        return float(np.linalg.norm(self.tangent_px))

    @property
    def direction(self) -> np.ndarray:
        return self.tangent_px / self.half_length_px

    def column_params(self) -> np.ndarray:
        """Cell-centered positions t_k in (-1, 1), one per column."""
        k = np.arange(self.n_columns)
        return -1.0 + 2.0 * (k + 0.5) / self.n_columns

    def column_positions_px(self) -> np.ndarray:
        """Requested pixel position of every column, (n, 2)."""
        t = self.column_params()
        return self.center_px[None, :] + t[:, None] * self.tangent_px[None, :]


def scan_line_voltages(calib: GalvoCalibration, line: ScanLine) -> np.ndarray:
    """Per-column drive voltages for a scan line, (n, 2).

    Voltages are interpolated between the endpoint voltages, so columns are
    uniformly spaced in voltage and, through the affine map, in pixels.
    """
    v0 = voltage_for_position(calib, line.center_px)
    dv = voltage_tangent(calib, line.tangent_px)
    t = line.column_params()
    return v0[None, :] + t[:, None] * dv[None, :]


def voltage_grid(n: int = 5, span_v: float = 2.0) -> np.ndarray:
    """n x n calibration grid over [-span, span]^2 volts, (n*n, 2)."""
    axis = np.linspace(-span_v, span_v, n)
    vx, vy = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([vx.ravel(), vy.ravel()], axis=1)


def collect_samples(
    truth: GalvoCalibration,
    volts: np.ndarray | None = None,
    noise_sigma_px: float = 0.0,
    rng: np.random.Generator | None = None,
) -> CalibrationSampleSet:
    """Simulated acquisition: drive the commanded voltages through the true
    map and read the landing position off the viewing card, optionally with
    Gaussian pixel noise."""
    if volts is None:
        volts = voltage_grid()
    volts = np.asarray(volts, dtype=float)
    pos = truth.to_position(volts)
    if noise_sigma_px > 0:
        if rng is None:
            raise ValueError("noisy sampling needs an rng")
        pos = pos + rng.normal(0.0, noise_sigma_px, size=pos.shape)
    return CalibrationSampleSet(volts=volts, positions_px=pos)


# --- calibration file: 6 numbers, r11 r12 r21 r22 t1 t2 --------------------

def save_calibration(calib: GalvoCalibration, path) -> None:
    vals = [
        calib.gain[0, 0],
        calib.gain[0, 1],
        calib.gain[1, 0],
        calib.gain[1, 1],
        calib.offset[0],
        calib.offset[1],
    ]
    with open(path, "w") as f:
        f.write("# galvo calibration: gain px/V row-major (r11 r12 r21 r22), offset px (t1 t2)\n")
        for v in vals:
            f.write(repr(float(v)) + "\n")


def load_calibration(path) -> GalvoCalibration:
    vals = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals.append(float(line))
    if len(vals) != 6:
        raise CalibrationError(f"expected 6 numbers in calibration file, got {len(vals)}")
    gain = np.array([[vals[0], vals[1]], [vals[2], vals[3]]])
    offset = np.array([vals[4], vals[5]])
    return GalvoCalibration(gain=gain, offset=offset)
