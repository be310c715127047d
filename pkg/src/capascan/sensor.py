"""Acquisition-chain emulation: converter, CAPDAC auto-calibration, encoder.

The converter reads a +/-15 pF window re-centered by a programmable
offset (CAPDAC) of up to 100 pF in fixed steps.  When the true value
leaves the window the offset snaps to the step multiple nearest the true
value and the sample is flagged recalibrated.  Noise is seeded Gaussian
plus a linear drift per meter traveled; readings quantize to the
converter resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

RANGE_PF = 15.0  # one-sided readable range
MAX_OFFSET_PF = 100.0
SATURATION_LIMIT_PF = RANGE_PF + MAX_OFFSET_PF  # 115 pF


@dataclass
class ConverterState:
    """Mutable converter state; one per scan line, never shared."""

    capdac_offset_pf: float = 0.0
    capdac_step_pf: float = 3.125
    resolution_pf: float = 0.0005
    noise_sigma_pf: float = 0.0
    drift_pf_per_m: float = 0.0
    rng_seed: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.capdac_step_pf <= 0:
            raise ValueError("capdac_step_pf must be > 0")
        if not 0.0 <= self.capdac_offset_pf <= MAX_OFFSET_PF:
            raise ValueError("capdac_offset_pf must be in [0, 100]")
        steps = self.capdac_offset_pf / self.capdac_step_pf
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("capdac_offset_pf must be a multiple of capdac_step_pf")
        if self.noise_sigma_pf < 0:
            raise ValueError("noise_sigma_pf must be >= 0")
        if self.resolution_pf <= 0:
            raise ValueError("resolution_pf must be > 0")
        self.rng = np.random.default_rng(self.rng_seed)

    def copy(self, rng_seed=None) -> "ConverterState":
        return ConverterState(
            capdac_offset_pf=self.capdac_offset_pf,
            capdac_step_pf=self.capdac_step_pf,
            resolution_pf=self.resolution_pf,
            noise_sigma_pf=self.noise_sigma_pf,
            drift_pf_per_m=self.drift_pf_per_m,
            rng_seed=self.rng_seed if rng_seed is None else rng_seed,
        )

    @property
    def capdac_index(self) -> int:
        return int(round(self.capdac_offset_pf / self.capdac_step_pf))


@dataclass(frozen=True)
class EncoderModel:
    pulses_per_rev: int = 16
    wheel_diameter_mm: float = 58.5

    def __post_init__(self):
        if self.pulses_per_rev < 1:
            raise ValueError("pulses_per_rev must be >= 1")
        if self.wheel_diameter_mm <= 0:
            raise ValueError("wheel_diameter_mm must be > 0")


def circumference(encoder: EncoderModel) -> float:
    """Travel per wheel revolution, mm (183.78 for the default wheel)."""
    return math.pi * encoder.wheel_diameter_mm


def tick_distance(encoder: EncoderModel) -> float:
    """Travel per encoder pulse, mm (11.486 for the default encoder)."""
    return circumference(encoder) / encoder.pulses_per_rev


@dataclass(frozen=True)
class ScanSample:
    """One encoder-triggered reading."""

    tick: int
    along_track_mm: float
    raw_pf: float
    capdac_pf: float
    calibrated_pf: float
    recalibrated: bool = False
    saturated: bool = False

    @property
    def flags(self) -> int:
        return (1 if self.recalibrated else 0) | (2 if self.saturated else 0)

    @staticmethod
    def from_flags(tick, along_track_mm, raw_pf, capdac_pf, calibrated_pf, flags):
        return ScanSample(
            tick=tick,
            along_track_mm=along_track_mm,
            raw_pf=raw_pf,
            capdac_pf=capdac_pf,
            calibrated_pf=calibrated_pf,
            recalibrated=bool(flags & 1),
            saturated=bool(flags & 2),
        )


def _quantize(value, step):
    return round(value / step) * step


def measure(
    true_capacitance_pf: float,
    state: ConverterState,
    along_track_mm: float = 0.0,
    tick: int = 0,
) -> tuple[ScanSample, ConverterState]:
    """Convert one true capacitance into a reading, mutating the state.

    Recalibration is decided on the true value (the device's own settled
    reading): when it leaves the +/-15 pF window around the current
    offset, the offset snaps to the nearest step multiple in [0, 100].
    """
    if true_capacitance_pf < 0:
        raise ValueError("true capacitance must be >= 0")

    recalibrated = False
    if abs(true_capacitance_pf - state.capdac_offset_pf) > RANGE_PF:
        steps = round(true_capacitance_pf / state.capdac_step_pf)
        nsteps_max = int(MAX_OFFSET_PF / state.capdac_step_pf)
        steps = min(max(steps, 0), nsteps_max)
        state.capdac_offset_pf = steps * state.capdac_step_pf
        recalibrated = True

    noisy = true_capacitance_pf
    if state.noise_sigma_pf > 0:
        noisy += state.rng.normal(0.0, state.noise_sigma_pf)
    noisy += state.drift_pf_per_m * (along_track_mm * 1e-3)

    raw = _quantize(noisy - state.capdac_offset_pf, state.resolution_pf)
    saturated = abs(raw) > RANGE_PF
    if saturated:
        raw = math.copysign(RANGE_PF, raw)

    sample = ScanSample(
        tick=tick,
        along_track_mm=along_track_mm,
        raw_pf=raw,
        capdac_pf=state.capdac_offset_pf,
        calibrated_pf=raw + state.capdac_offset_pf,
        recalibrated=recalibrated,
        saturated=saturated,
    )
    return sample, state
