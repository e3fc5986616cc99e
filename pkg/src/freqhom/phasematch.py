"""Phase matching of Bragg-scattering FWM from a Taylor dispersion model.

All frequencies are angular and measured from the expansion point ``w0``.
The target process moves a photon from ``R`` to ``B = R + Omega`` while
annihilating ``P1`` and creating ``P2 = P1 - Omega``. Placing the photon
band at ``-D`` and the pump band at ``+D`` about a zero-dispersion ``w0``
cancels every odd Taylor term of the target mismatch, while the first-order
sidebands still see the cubic term.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .errors import InvalidParameterError
from .fbs import conversion_efficiency
from .spectral import DEFAULT_FSR_HZ, DEFAULT_PUMP_WAVELENGTH, TWO_PI

# Illustrative dispersion-shifted fibre: zero dispersion midway (in
# frequency) between the O-band photons and C-band pumps near 1550 nm.
ILLUSTRATIVE_PUMP_WAVELENGTH = 1550e-9
ILLUSTRATIVE_BETA3 = 1e-40  # s^3/m, 0.1 ps^3/km
ILLUSTRATIVE_LENGTH = 1000.0  # m


@dataclass(frozen=True)
class DispersionProfile:
    """``beta(w0 + x) - beta(w0) - beta1 x = b2 x^2/2 + b3 x^3/6 + b4 x^4/24``.

    The constant and linear terms cancel in any energy-conserving four-wave
    mismatch and are omitted.
    """

    reference_frequency: float
    beta2: float = 0.0
    beta3: float = 0.0
    beta4: float = 0.0
    illustrative: bool = False

    def __post_init__(self):
        vals = (self.reference_frequency, self.beta2, self.beta3, self.beta4)
        if not all(np.isfinite(v) for v in vals):
            raise InvalidParameterError("dispersion coefficients must be finite")
        if not self.reference_frequency > 0:
            raise InvalidParameterError("reference_frequency must be > 0")

    def beta(self, x):
        x = np.asarray(x, dtype=float)
        return x * x * (self.beta2 / 2 + x * (self.beta3 / 6 + x * self.beta4 / 24))

    @classmethod
    def illustrative_default(cls) -> "DispersionProfile":
        f_q = SPEED_OF_LIGHT / DEFAULT_PUMP_WAVELENGTH
        f_p = SPEED_OF_LIGHT / ILLUSTRATIVE_PUMP_WAVELENGTH
        return cls(TWO_PI * 0.5 * (f_q + f_p), 0.0, ILLUSTRATIVE_BETA3, 0.0, illustrative=True)


@dataclass(frozen=True)
class ProcessPlacement:
    """Photon band centre, pump band centre (both relative to ``w0``), separation.

    ``gamma_p`` is the nonlinearity-power product in 1/m. Energy conservation
    ``w_R + w_P1 = w_B + w_P2`` holds by construction. ``separation = 0`` is
    accepted as the degenerate limit.
    """

    quantum_center: float
    pump_center: float
    separation: float
    length: float = ILLUSTRATIVE_LENGTH
    gamma_p: float = np.pi / 8 / ILLUSTRATIVE_LENGTH

    def __post_init__(self):
        if self.separation < 0:
            raise InvalidParameterError("separation must be >= 0")
        if not self.length > 0 or self.gamma_p < 0:
            raise InvalidParameterError("length must be > 0 and gamma_p >= 0")
        if self.separation > 0:
            freqs = [self.red, self.blue, self.pump1, self.pump2]
            if len(set(freqs)) < 4:
                raise InvalidParameterError("the four frequencies must be distinct")

    @classmethod
    def symmetric(cls, offset, separation, **kw) -> "ProcessPlacement":
        """Photons centred at ``-offset``, pumps at ``+offset``."""
        return cls(-offset, offset, separation, **kw)

    @property
    def red(self):
        return self.quantum_center - self.separation / 2

    @property
    def blue(self):
        return self.quantum_center + self.separation / 2

    @property
    def pump1(self):
        return self.pump_center + self.separation / 2

    @property
    def pump2(self):
        return self.pump_center - self.separation / 2


def four_wave_mismatch(profile: DispersionProfile, w_in, p_in, w_out, p_out):
    """``beta(in) + beta(p_in) - beta(out) - beta(p_out)`` for ``in + p_in = out + p_out``."""
    b = profile.beta
    return float(b(w_in) + b(p_in) - b(w_out) - b(p_out))


def delta_beta(profile: DispersionProfile, placement: ProcessPlacement) -> float:
    """Target mismatch ``beta_R + beta_P1 - beta_B - beta_P2`` in rad/m."""
    pl = placement
    return four_wave_mismatch(profile, pl.red, pl.pump1, pl.blue, pl.pump2)


def mirrored_delta_beta(profile: DispersionProfile, placement: ProcessPlacement) -> float:
    """Target mismatch with every frequency reflected about ``w0``, labels kept."""
    pl = placement
    return four_wave_mismatch(profile, -pl.red, -pl.pump1, -pl.blue, -pl.pump2)


@dataclass(frozen=True)
class ProcessReport:
    name: str
    w_in: float
    p_in: float
    w_out: float
    p_out: float
    delta_beta: float
    efficiency: float
    suppression: float
    matched: bool


def _processes(pl: ProcessPlacement):
    om = pl.separation
    r, b, p1, p2 = pl.red, pl.blue, pl.pump1, pl.pump2
    # (name, photon in, field annihilated, photon out, field created)
    return [
        ("target R->B", r, p1, b, p2),
        ("sideband R->R-Omega", r, p2, r - om, p1),
        ("sideband B->B+Omega", b, p1, b + om, p2),
        ("conjugate R via P1+P2", p1, p2, r, p1 + p2 - r),
        ("conjugate B via P1+P2", p1, p2, b, p1 + p2 - b),
        ("conjugate R via 2*P1", p1, p1, r, 2 * p1 - r),
        ("conjugate B via 2*P2", p2, p2, b, 2 * p2 - b),
    ]


def sideband_suppression(profile: DispersionProfile, placement: ProcessPlacement,
                         match_tolerance: float = 1e-9) -> list[ProcessReport]:
    """Mismatch and peak conversion of the target and first-order spurious processes.

    The spurious list holds the two Bragg-scattering sidebands plus the
    phase-conjugation processes in which the pumps trade roles and create a
    photon together with a conjugate idler. Every efficiency uses the
    mismatched two-mode formula; ``suppression`` is the ratio to the target
    efficiency, so 1 means no selectivity. A process is ``matched`` when its
    mismatch phase over the length is below ``match_tolerance`` rad.
    """
    rows = []
    target_eff = None
    for name, w_in, p_in, w_out, p_out in _processes(placement):
        db = four_wave_mismatch(profile, w_in, p_in, w_out, p_out)
        eff = float(conversion_efficiency(placement.gamma_p, placement.length, db))
        if target_eff is None:
            target_eff = eff
        supp = eff / target_eff if target_eff > 0 else float("nan")
        rows.append(ProcessReport(name, w_in, p_in, w_out, p_out, db, eff, supp,
                                  abs(db) * placement.length < match_tolerance))
    return rows


def pump_separation_from_fsr(fsr, resonance_offset) -> float:
    """``2 pi * 2 m * FSR``: pump separation matching pairs ``m`` FSRs either side of the pump."""
    if not fsr > 0:
        raise InvalidParameterError(f"fsr must be > 0, got {fsr}")
    if int(resonance_offset) != resonance_offset or resonance_offset < 1:
        raise InvalidParameterError(f"resonance offset must be an integer >= 1, got {resonance_offset}")
    return TWO_PI * 2 * int(resonance_offset) * fsr


def placement_for_source(profile: DispersionProfile, fsr=DEFAULT_FSR_HZ, resonance_offset=2,
                         pair_center=None, band_offset=0.0, detuning=0.0,
                         length=ILLUSTRATIVE_LENGTH, gamma_p=None) -> ProcessPlacement:
    """Pumps mirrored about ``w0`` from the photon pair, optionally shifted.

    ``band_offset`` (rad/s) moves the pump band away from the mirror point;
    ``detuning`` (rad/s) is added to the pump separation.
    """
    if pair_center is None:
        pair_center = TWO_PI * SPEED_OF_LIGHT / DEFAULT_PUMP_WAVELENGTH
    q = pair_center - profile.reference_frequency
    om = pump_separation_from_fsr(fsr, resonance_offset) + detuning
    if gamma_p is None:
        gamma_p = np.pi / 8 / length
    return ProcessPlacement(q, -q + band_offset, om, length, gamma_p)


def write_design_csv(profile, placement, rows, path, manifest_hash=None) -> None:
    w0 = profile.reference_frequency
    with Path(path).open("w", newline="") as fh:
        if manifest_hash:
            fh.write(f"# manifest_sha256={manifest_hash}\n")
        if profile.illustrative:
            fh.write("# dispersion profile is illustrative, not measured fibre data\n")
        writer = csv.writer(fh)
        writer.writerow(["process", "photon_in_hz", "field_in_hz", "photon_out_hz", "field_out_hz",
                         "delta_beta_rad_m", "efficiency", "suppression", "matched",
                         "pump_separation_hz"])
        for r in rows:
            writer.writerow([r.name] + [repr((w0 + w) / TWO_PI)
                                        for w in (r.w_in, r.p_in, r.w_out, r.p_out)]
                            + [repr(r.delta_beta), repr(r.efficiency), repr(r.suppression),
                               int(r.matched), repr(placement.separation / TWO_PI)])
