import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capascan import ConverterState, EncoderModel, measure, tick_distance
from capascan.sensor import SATURATION_LIMIT_PF, circumference


def test_default_encoder_revolution_distance():
    assert circumference(EncoderModel()) == pytest.approx(183.78, abs=0.005)


def test_default_encoder_tick_distance():
    # 183.78 / 16; the write-up rounds this to 11.5
    assert tick_distance(EncoderModel()) == pytest.approx(11.486, abs=0.001)


def test_single_pulse_encoder_full_circumference():
    enc = EncoderModel(pulses_per_rev=1)
    assert tick_distance(enc) == pytest.approx(circumference(enc))


def test_encoder_validation():
    with pytest.raises(ValueError):
        EncoderModel(pulses_per_rev=0)
    with pytest.raises(ValueError):
        EncoderModel(wheel_diameter_mm=-1)


def test_measure_recalibration_snaps_to_step():
    state = ConverterState()
    sample, state = measure(40.0, state)
    assert sample.recalibrated
    assert state.capdac_offset_pf == pytest.approx(40.625)  # 13 * 3.125
    assert sample.raw_pf == pytest.approx(-0.625)
    assert sample.calibrated_pf == pytest.approx(40.0)


def test_measure_identity_path():
    state = ConverterState()
    sample, _ = measure(2.3456, state)
    assert not sample.recalibrated and not sample.saturated
    assert sample.capdac_pf == 0.0
    assert sample.calibrated_pf == pytest.approx(2.3456, abs=state.resolution_pf / 2)


def test_measure_quantizes_to_resolution():
    state = ConverterState(resolution_pf=0.001)
    sample, _ = measure(1.00042, state)
    assert sample.raw_pf == pytest.approx(1.000)
    assert sample.calibrated_pf * 1000 == pytest.approx(round(sample.calibrated_pf * 1000))


def test_measure_saturation_beyond_range():
    state = ConverterState()
    sample, _ = measure(130.0, state)
    assert sample.saturated
    assert sample.capdac_pf == 100.0
    assert sample.raw_pf == 15.0
    assert sample.calibrated_pf == SATURATION_LIMIT_PF


def test_measure_negative_input_rejected():
    with pytest.raises(ValueError):
        measure(-1.0, ConverterState())


def test_measure_deterministic_given_seed():
    def run():
        state = ConverterState(noise_sigma_pf=0.05, rng_seed=99)
        return [measure(5.0, state, along_track_mm=i * 11.5, tick=i)[0] for i in range(20)]

    assert run() == run()


def test_calibrated_continuous_across_recalibration():
    # drive the true value up to force a recalibration; noise off, the
    # calibrated trace should follow the input up to quantization
    state = ConverterState()
    values = np.linspace(10.0, 20.0, 21)  # crosses the 15 pF window edge
    calibrated = []
    recals = 0
    for i, v in enumerate(values):
        s, state = measure(float(v), state, tick=i)
        calibrated.append(s.calibrated_pf)
        recals += s.recalibrated
    assert recals == 1
    err = np.abs(np.array(calibrated) - values)
    assert err.max() <= state.resolution_pf


def test_noise_mean_converges():
    state = ConverterState(noise_sigma_pf=0.05, rng_seed=7)
    n = 4000
    vals = [measure(5.0, state)[0].calibrated_pf for _ in range(n)]
    assert abs(np.mean(vals) - 5.0) <= 3 * 0.05 / math.sqrt(n)


def test_drift_accumulates_with_distance():
    state = ConverterState(drift_pf_per_m=0.5)
    s0, state = measure(5.0, state, along_track_mm=0.0)
    s1, state = measure(5.0, state, along_track_mm=2000.0)
    assert s1.calibrated_pf - s0.calibrated_pf == pytest.approx(1.0, abs=0.001)


def test_converter_state_validation():
    with pytest.raises(ValueError):
        ConverterState(capdac_offset_pf=5.0)  # not a step multiple
    with pytest.raises(ValueError):
        ConverterState(capdac_offset_pf=-3.125)
    with pytest.raises(ValueError):
        ConverterState(noise_sigma_pf=-0.1)


@settings(max_examples=60, deadline=None)
@given(true_pf=st.floats(min_value=0.0, max_value=114.0))
def test_calibrated_equals_raw_plus_capdac_exactly(true_pf):
    sample, _ = measure(true_pf, ConverterState())
    assert sample.calibrated_pf == sample.raw_pf + sample.capdac_pf
    assert abs(sample.raw_pf) <= 15.0


@settings(max_examples=60, deadline=None)
@given(true_pf=st.floats(min_value=0.0, max_value=114.0))
def test_noise_free_calibrated_tracks_input(true_pf):
    state = ConverterState()
    sample, _ = measure(true_pf, state)
    assert sample.calibrated_pf == pytest.approx(true_pf, abs=state.resolution_pf)
