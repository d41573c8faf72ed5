"""Desk-scale simulator and controller for OCT-guided subretinal injection.

The package models the full closed loop at micrometer scale: an eye phantom
with an ILM/RPE height field, a galvo-steered B-scan whose line tracks the
needle seen in the surgical microscope, a Broyden-updated visual servo that
drives the needle tip to a clicked microscope goal, an RCM-constrained
descent to a fixed offset above the retina surface, and an axis-aligned
insertion to a clicked B-scan goal, followed by a verification C-scan.

Everything is deterministic given a master seed; noise sources draw from
named substreams so that toggling one leaves the others untouched.
"""

from octnav.phantom import EyePhantom, PhantomConfig, SceneSnapshot, ToolPose, make_phantom
from octnav.galvo import CalibrationError, GalvoCalibration, ScanLine, fit_calibration
from octnav.servo import Phase, ServoState, WorkflowState
from octnav.trial import TrialConfig, run_batch, run_trial

__all__ = [
    "CalibrationError",
    "EyePhantom",
    "GalvoCalibration",
    "Phase",
    "PhantomConfig",
    "ScanLine",
    "SceneSnapshot",
    "ServoState",
    "ToolPose",
    "TrialConfig",
    "WorkflowState",
    "fit_calibration",
    "make_phantom",
    "run_batch",
    "run_trial",
]
