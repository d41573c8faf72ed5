import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from octnav.galvo import (
    CalibrationError,
    CalibrationSampleSet,
    GalvoCalibration,
    ScanLine,
    collect_samples,
    fit_calibration,
    load_calibration,
    save_calibration,
    scan_line_voltages,
    voltage_for_position,
    voltage_grid,
    voltage_tangent,
)

TRUTH = GalvoCalibration(
    gain=np.array([[100.0, 10.0], [-5.0, 120.0]]),
    offset=np.array([300.0, 220.0]),
)


def test_forward_map_hand_example():
    # volts (1, 2) -> gain @ v + offset = (100+20+300, -5+240+220)
    px = TRUTH.to_position(np.array([1.0, 2.0]))
    assert np.allclose(px, [420.0, 455.0], atol=1e-12)


def test_noise_free_fit_recovers_truth_exactly():
    samples = collect_samples(TRUTH, voltage_grid(n=3, span_v=1.0))
    fit = fit_calibration(samples)
    assert np.allclose(fit.gain, TRUTH.gain, rtol=1e-9, atol=1e-9)
    assert np.allclose(fit.offset, TRUTH.offset, rtol=1e-9, atol=1e-9)


def test_fit_minimum_sample_count():
    volts = np.array([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(ValueError):
        CalibrationSampleSet(volts, TRUTH.to_position(volts))


def test_collinear_voltages_rejected():
    volts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    samples = CalibrationSampleSet(volts, TRUTH.to_position(volts))
    with pytest.raises(CalibrationError, match="collinear"):
        fit_calibration(samples)


def test_noisy_fit_rms_under_one_pixel(rng):
    # 100 samples at 0.5 px detection noise keep held-out residuals small
    volts = rng.uniform(-2, 2, size=(100, 2))
    samples = collect_samples(TRUTH, volts, noise_sigma_px=0.5, rng=rng)
    fit = fit_calibration(samples)
    eval_volts = voltage_grid(n=7, span_v=2.0)
    resid = fit.to_position(eval_volts) - TRUTH.to_position(eval_volts)
    rms = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
    assert rms <= 1.0


def test_noise_averages_out_with_more_samples(rng):
    errs = []
    for n in (25, 400):
        trials = []
        for _ in range(20):
            volts = rng.uniform(-2, 2, size=(n, 2))
            fit = fit_calibration(collect_samples(TRUTH, volts, noise_sigma_px=0.5, rng=rng))
            trials.append(np.linalg.norm(fit.gain - TRUTH.gain))
        errs.append(np.mean(trials))
    assert errs[1] < errs[0]


def test_voltage_for_position_round_trip():
    px = np.array([123.4, 456.7])
    v = voltage_for_position(TRUTH, px)
    assert np.allclose(TRUTH.to_position(v), px, atol=1e-9)


def test_voltage_tangent_is_linear():
    a = np.array([10.0, 0.0])
    b = np.array([0.0, -4.0])
    va = voltage_tangent(TRUTH, a)
    vb = voltage_tangent(TRUTH, b)
    vab = voltage_tangent(TRUTH, a + b)
    assert np.allclose(vab, va + vb, atol=1e-12)


def test_singular_gain_rejected():
    with pytest.raises(CalibrationError):
        GalvoCalibration(gain=np.array([[1.0, 2.0], [2.0, 4.0]]), offset=np.zeros(2))


def test_scan_line_cell_centered_params():
    line = ScanLine(center_px=np.array([100.0, 100.0]), tangent_px=np.array([50.0, 0.0]), n_columns=4)
    t = line.column_params()
    assert np.allclose(t, [-0.75, -0.25, 0.25, 0.75], atol=1e-12)


def test_scan_line_positions_uniformly_spaced():
    line = ScanLine(
        center_px=np.array([320.0, 240.0]),
        tangent_px=np.array([60.0, 30.0]),
        n_columns=512,
    )
    pos = line.column_positions_px()
    steps = np.diff(pos, axis=0)
    assert np.allclose(steps, steps[0], atol=1e-9)
    # column pair symmetric about the center
    assert np.allclose((pos[0] + pos[-1]) / 2, line.center_px, atol=1e-9)


def test_scan_line_voltages_map_back_to_line():
    line = ScanLine(center_px=np.array([350.0, 200.0]), tangent_px=np.array([40.0, -10.0]))
    volts = scan_line_voltages(TRUTH, line)
    assert np.allclose(TRUTH.to_position(volts), line.column_positions_px(), atol=1e-9)


def test_calibration_file_round_trip(tmp_path):
    path = tmp_path / "galvo.txt"
    save_calibration(TRUTH, path)
    back = load_calibration(path)
    assert np.array_equal(back.gain, TRUTH.gain)
    assert np.array_equal(back.offset, TRUTH.offset)


def test_calibration_file_malformed(tmp_path):
    path = tmp_path / "galvo.txt"
    path.write_text("# header\n1.0\n2.0\n")
    with pytest.raises(ValueError):
        load_calibration(path)


@st.composite
def calibrations(draw):
    # keep the map well conditioned so round trips stay tight
    d1 = draw(st.floats(50, 150)) * draw(st.sampled_from([-1.0, 1.0]))
    d2 = draw(st.floats(50, 150)) * draw(st.sampled_from([-1.0, 1.0]))
    o1 = draw(st.floats(-20, 20))
    o2 = draw(st.floats(-20, 20))
    off = np.array([draw(st.floats(250, 390)), draw(st.floats(180, 300))])
    return GalvoCalibration(gain=np.array([[d1, o1], [o2, d2]]), offset=off)


@given(calib=calibrations())
@settings(max_examples=30, deadline=None)
def test_fit_recovery_property(calib):
    fit = fit_calibration(collect_samples(calib, voltage_grid(n=5, span_v=2.0)))
    assert np.allclose(fit.gain, calib.gain, rtol=1e-9, atol=1e-7)
    assert np.allclose(fit.offset, calib.offset, rtol=1e-9, atol=1e-7)


@given(calib=calibrations(), x=st.floats(0, 640), y=st.floats(0, 480))
@settings(max_examples=30, deadline=None)
def test_inverse_property(calib, x, y):
    px = np.array([x, y])
    assert np.allclose(calib.to_position(voltage_for_position(calib, px)), px, atol=1e-7)
