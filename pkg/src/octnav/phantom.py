"""Simulated surgical scene: retina phantom, tool pose, scene snapshots.

World frame conventions used throughout the package:

  * right-handed robot spatial frame, Z up, all lengths in micrometers
  * the retina phantom is a height-field disc centered on the XY origin;
    the inner limiting membrane (ILM) is the top surface, the retinal
    pigment epithelium (RPE) sits a constant tissue thickness below it
  * the needle enters from above through a fixed remote-center-of-motion
    point (the scleral pivot), so its axis always points from the tip up
    toward that pivot

The ILM is a base plane (optionally gently sloped) plus a small number of
smooth Gaussian bumps, which is enough surface variation to exercise
surface tracking without ever folding over itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_BUMPS = 8


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PhantomConfig:
    """Parameters of the retina phantom surface (micrometers)."""

    radius_um: float = 3000.0
    thickness_um: float = 200.0
    base_height_um: float = 0.0
    bump_amplitude_um: float = 40.0
    n_bumps: int = 6
    bump_sigma_um: tuple[float, float] = (500.0, 1200.0)
    # slope of the base plane, dz per unit xy; (0, 0) gives a level retina
    base_gradient: tuple[float, float] = (0.0, 0.0)
    rcm_point_um: tuple[float, float, float] = (2500.0, 1800.0, 9000.0)

    def __post_init__(self):
        if self.radius_um <= 0:
            raise ValueError("phantom radius must be positive")
        if self.thickness_um <= 0:
            raise ValueError("retina thickness must be positive")
        if not 0 <= self.n_bumps <= MAX_BUMPS:
            raise ValueError(f"n_bumps must be in [0, {MAX_BUMPS}]")
        if self.bump_sigma_um[0] <= 0 or self.bump_sigma_um[1] < self.bump_sigma_um[0]:
            raise ValueError("bump sigma range must be positive and ordered")


@dataclass(frozen=True)
class EyePhantom:
    """Frozen surface realization, a pure function of (seed, config)."""

    config: PhantomConfig
    seed: int
    bump_centers_um: np.ndarray  # (n, 2)
    bump_amps_um: np.ndarray  # (n,)
    bump_sigmas_um: np.ndarray  # (n,)
    rcm_point_um: np.ndarray  # (3,)

    @property
    def thickness_um(self) -> float:
        return self.config.thickness_um

    def _check_domain(self, xy: np.ndarray) -> None:
        r = np.hypot(xy[..., 0], xy[..., 1])
        if np.any(r > self.config.radius_um + 1e-9):
            raise ValueError("query point outside phantom domain")

    def ilm_height(self, xy) -> np.ndarray | float:
        """Height of the ILM surface at xy, shape (..., 2) -> (...)."""
        xy = np.asarray(xy, dtype=float)
        scalar = xy.ndim == 1
        pts = np.atleast_2d(xy)
        self._check_domain(pts)
        gx, gy = self.config.base_gradient
        z = self.config.base_height_um + gx * pts[:, 0] + gy * pts[:, 1]
        if len(self.bump_amps_um):
            d2 = ((pts[:, None, :] - self.bump_centers_um[None, :, :]) ** 2).sum(axis=2)
            z = z + (self.bump_amps_um * np.exp(-d2 / (2.0 * self.bump_sigmas_um**2))).sum(axis=1)
        return float(z[0]) if scalar else z

    def rpe_height(self, xy) -> np.ndarray | float:
        """RPE surface, exactly thickness_um below the ILM everywhere."""
        ilm = self.ilm_height(xy)
        return ilm - self.config.thickness_um


def make_phantom(seed: int, config: PhantomConfig = PhantomConfig()) -> EyePhantom:
    """Draw a surface realization; same seed and config give identical fields."""
    rng = np.random.default_rng(seed)
    n = config.n_bumps
    # centers stay inside 0.7 R so bumps taper off before the domain edge
    ang = rng.uniform(0.0, 2.0 * np.pi, size=n)
    rad = 0.7 * config.radius_um * np.sqrt(rng.uniform(0.0, 1.0, size=n))
    centers = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
    amps = rng.uniform(-config.bump_amplitude_um, config.bump_amplitude_um, size=n)
    sigmas = rng.uniform(*config.bump_sigma_um, size=n)

    rcm = np.asarray(config.rcm_point_um, dtype=float)
    gx, gy = config.base_gradient
    ilm_bound = (
        config.base_height_um
        + np.hypot(gx, gy) * config.radius_um
        + float(np.abs(amps).sum())
    )
    if rcm[2] <= ilm_bound:
        raise ValueError("rcm point must sit strictly above the ILM surface")

    return EyePhantom(
        config=config,
        seed=int(seed),
        bump_centers_um=_readonly(centers),
        bump_amps_um=_readonly(amps),
        bump_sigmas_um=_readonly(sigmas),
        rcm_point_um=_readonly(rcm),
    )


def ilm_height_at(phantom: EyePhantom, xy) -> np.ndarray | float:
    return phantom.ilm_height(xy)


@dataclass(frozen=True)
class ToolPose:
    """Needle state: tip position (um) and unit axis pointing tip -> pivot."""

    tip_position_um: np.ndarray  # (3,)
    axis_direction: np.ndarray  # (3,) unit
    frame_id: int = 0

    def __post_init__(self):
        tip = _readonly(self.tip_position_um)
        ax = _readonly(self.axis_direction)
        if tip.shape != (3,) or ax.shape != (3,):
            raise ValueError("tip and axis must be 3-vectors")
        if not (np.all(np.isfinite(tip)) and np.all(np.isfinite(ax))):
            raise ValueError("tool pose must be finite")
        if abs(np.linalg.norm(ax) - 1.0) > 1e-9:
            raise ValueError("axis_direction must be unit length")
        object.__setattr__(self, "tip_position_um", tip)
        object.__setattr__(self, "axis_direction", ax)


@dataclass(frozen=True)
class SceneSnapshot:
    """Immutable state of the scene at one simulation tick."""

    tool: ToolPose
    phantom: EyePhantom
    sim_time_s: float
    inserted_depth_um: float = 0.0

    def __post_init__(self):
        if self.inserted_depth_um < 0:
            raise ValueError("inserted depth cannot be negative")


def inserted_depth(phantom: EyePhantom, tip_um: np.ndarray) -> float:
    """How far the tip sits below the ILM, 0 if above or outside the domain."""
    tip = np.asarray(tip_um, dtype=float)
    r = np.hypot(tip[0], tip[1])
    if r > phantom.config.radius_um:
        return 0.0
    surf = phantom.ilm_height(tip[:2])
    return float(max(0.0, surf - tip[2]))


# --- phantom config file (plain key: value text) ---------------------------

def save_phantom_config(path, seed: int, config: PhantomConfig) -> None:
    import yaml

    doc = {
        "seed": int(seed),
        "radius_um": config.radius_um,
        "thickness_um": config.thickness_um,
        "base_height_um": config.base_height_um,
        "bump_amplitude_um": config.bump_amplitude_um,
        "n_bumps": config.n_bumps,
        "bump_sigma_um": list(config.bump_sigma_um),
        "base_gradient": list(config.base_gradient),
        "rcm_point_um": list(config.rcm_point_um),
    }
    with open(path, "w") as f:
        yaml.safe_dump(doc, f, sort_keys=False)


def load_phantom_config(path) -> tuple[int, PhantomConfig]:
    import yaml

    with open(path) as f:
        doc = yaml.safe_load(f)
    seed = int(doc.pop("seed"))
    for key in ("bump_sigma_um", "base_gradient", "rcm_point_um"):
        if key in doc:
            doc[key] = tuple(doc[key])
    return seed, PhantomConfig(**doc)
