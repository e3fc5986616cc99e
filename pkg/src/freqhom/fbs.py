"""Bragg-scattering frequency beam splitter acting on frequency-bin photons.

Creation operators transform as::

    a_R^+(x) -> v a_R^+(x) - mu a_B^+(x + D)
    a_B^+(y) -> mu* a_R^+(y - D) + v* a_B^+(y)

with ``x``/``y`` the detunings from the red/blue resonance centres and ``D``
the mismatch between pump separation and pair separation. Frequency shifts by
``D`` are applied as Fourier phase ramps, mirror images by index reflection,
so no interpolation enters the interference terms.

Two-photon sectors of :class:`TwoPhotonState` use these coordinates:

* ``jsa_rb[x]``: red photon at ``x``, blue photon at ``-x``.
* ``jsa_rr[x]``: symmetric amplitude, photons at ``x`` and ``-D - x``.
* ``jsa_bb[y]``: symmetric amplitude, photons at ``y`` and ``D - y``.

With these conventions the state norm is ``sum(|rb|^2 + |rr|^2 + |bb|^2) dnu``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InvalidParameterError, ResolutionError, UnsupportedInputError
from .spectral import FrequencyGrid, JointSpectralAmplitude, _read_header

SQRT2 = np.sqrt(2.0)
SECTORS = ("rb", "rr", "bb")


@dataclass(frozen=True)
class FbsParams:
    """Splitter settings.

    strength:
        Dimensionless ``gamma * P * L``; ``pi/8`` is the 50:50 point.
    pump_phase:
        Relative pump phase in radians.
    pump_separation:
        ``w_P1 - w_P2`` in rad/s. ``None`` means matched to the pair.
    mismatch:
        Phase mismatch in rad/m.
    length:
        Interaction length in m; only used together with ``mismatch``.
    """

    strength: float = np.pi / 8
    pump_phase: float = 0.0
    pump_separation: float | None = None
    mismatch: float = 0.0
    length: float = 1.0

    def __post_init__(self):
        if not self.strength >= 0:
            raise InvalidParameterError(f"strength must be >= 0, got {self.strength}")
        if not self.length > 0:
            raise InvalidParameterError(f"length must be > 0, got {self.length}")


FIFTY_FIFTY = FbsParams(strength=np.pi / 8)


def splitter_amplitudes(params: FbsParams) -> tuple[complex, complex]:
    """Return ``(v, mu)`` for the splitter.

    Phase matched: ``v = cos(2 gPL)``, ``mu = exp(i phi) sin(2 gPL)``.
    Otherwise the two-mode coupled equations give a detuned Rabi oscillation
    with ``|mu|^2 = (2gP/g)^2 sin^2(g L)``, ``g = sqrt((2gP)^2 + (dbeta/2)^2)``.
    """
    coupling = 2.0 * params.strength
    half_mismatch = 0.5 * params.mismatch * params.length
    gl = np.hypot(coupling, half_mismatch)
    if gl == 0:
        return complex(1.0), complex(0.0)
    if half_mismatch == 0:
        v = complex(np.cos(coupling))
        mu = np.exp(1j * params.pump_phase) * np.sin(coupling)
        return v, complex(mu)
    v = np.cos(gl) + 1j * (half_mismatch / gl) * np.sin(gl)
    mu = np.exp(1j * params.pump_phase) * (coupling / gl) * np.sin(gl)
    return complex(v), complex(mu)


def conversion_efficiency(gamma_p, length, mismatch):
    """Peak conversion ``|mu|^2`` for coupling ``gamma_p`` (1/m) and mismatch (rad/m)."""
    coupling = 2.0 * np.asarray(gamma_p, dtype=float)
    g = np.hypot(coupling, 0.5 * np.asarray(mismatch, dtype=float))
    with np.errstate(invalid="ignore", divide="ignore"):
        eff = np.where(g > 0, (coupling / g) ** 2 * np.sin(g * length) ** 2, 0.0)
    return eff


def incoherent_probabilities(params: FbsParams) -> dict:
    """Outcome probabilities for distinguishable photons (no two-photon interference)."""
    v, mu = splitter_amplitudes(params)
    t, r = abs(v) ** 2, abs(mu) ** 2
    return {"rb": t * t + r * r, "rr": t * r, "bb": t * r}


def outcome_probabilities(params: FbsParams, tau, detuning, visibility=1.0):
    """Per-pair sector probabilities conditioned on the intra-pair delay ``tau``.

    The cross term ``2 |v mu|^2 cos(D tau)`` is scaled by ``visibility``; the
    bunched sectors share the complement equally. Returns ``(p_rb, p_rr, p_bb)``.
    """
    if not 0.0 <= visibility <= 1.0:
        raise InvalidParameterError(f"visibility must lie in [0, 1], got {visibility}")
    v, mu = splitter_amplitudes(params)
    t, r = abs(v) ** 2, abs(mu) ** 2
    p_rb = t * t + r * r - 2.0 * visibility * t * r * np.cos(detuning * np.asarray(tau))
    p_rb = np.clip(p_rb, 0.0, 1.0)
    p_bunch = 0.5 * (1.0 - p_rb)
    return p_rb, p_bunch, p_bunch


def _check_centered(grid: FrequencyGrid):
    if grid.center != 0:
        raise ResolutionError("splitter bookkeeping needs a grid centred on zero detuning")


def fourier_shift(arr, shift, spacing):
    """Return samples of ``f(nu - shift)`` given samples of ``f`` on a uniform grid."""
    arr = np.asarray(arr, dtype=complex)
    if shift == 0:
        return arr.copy()
    n = arr.size
    ramp = np.exp(-2j * np.pi * np.fft.fftfreq(n) * (shift / spacing))
    return np.fft.ifft(np.fft.fft(arr) * ramp)


def reflect(arr):
    """Samples of ``f(-nu)`` on an FFT-layout grid centred on zero."""
    return np.roll(np.asarray(arr)[::-1], 1)


def _mirror(arr, about, spacing):
    # f(about - nu)
    return fourier_shift(reflect(arr), about, spacing)


@dataclass(frozen=True, eq=False)
class TwoPhotonState:
    grid: FrequencyGrid
    jsa_rb: np.ndarray
    jsa_rr: np.ndarray
    jsa_bb: np.ndarray
    envelope_offset: float = 0.0
    pair_separation: float | None = None
    reference_peak: float = 1.0

    def __post_init__(self):
        for name in ("jsa_rb", "jsa_rr", "jsa_bb"):
            arr = np.array(getattr(self, name), dtype=complex)
            if arr.shape != (self.grid.n_points,):
                raise InvalidParameterError(f"{name} has shape {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_jsa(cls, jsa: JointSpectralAmplitude) -> "TwoPhotonState":
        """Pair entering the splitter: only the (R, B) sector populated."""
        _check_centered(jsa.grid)
        amp = np.asarray(jsa.amplitude)
        zeros = np.zeros_like(amp)
        # pumps-off coincidence peak |sum phi dnu|^2 fixes the G2 unit
        peak = abs(np.sum(amp) * jsa.grid.spacing) ** 2
        return cls(jsa.grid, amp, zeros, zeros, jsa.envelope_offset,
                   jsa.pair_separation, float(peak))

    def sector(self, name) -> np.ndarray:
        if name not in SECTORS:
            raise InvalidParameterError(f"unknown sector {name!r}")
        return getattr(self, "jsa_" + name)

    def sector_norm(self, name) -> float:
        return float(np.sum(np.abs(self.sector(name)) ** 2) * self.grid.spacing)

    @property
    def norm(self) -> float:
        return sum(self.sector_norm(s) for s in SECTORS)


def apply_fbs_single(jsa: JointSpectralAmplitude, arm: str, params: FbsParams):
    """Send a single photon with amplitude ``jsa.amplitude`` through the splitter.

    ``arm`` is ``"R"`` or ``"B"``; the amplitude is indexed by detuning from
    that arm's centre. Returns ``(red_amplitude, blue_amplitude)`` in the
    output arms' detuning coordinates.
    """
    _check_centered(jsa.grid)
    v, mu = splitter_amplitudes(params)
    d = jsa.envelope_offset
    a = np.asarray(jsa.amplitude)
    dx = jsa.grid.spacing
    if arm == "R":
        return v * a, -mu * fourier_shift(a, d, dx)
    if arm == "B":
        return np.conj(mu) * fourier_shift(a, -d, dx), np.conj(v) * a
    raise InvalidParameterError(f"arm must be 'R' or 'B', got {arm!r}")


def _pass_detuning(state: TwoPhotonState, params: FbsParams) -> float:
    d = state.envelope_offset
    if params.pump_separation is not None and state.pair_separation is not None:
        d = d + (params.pump_separation - state.pair_separation)
    return d


def apply_fbs_two_photon(state: TwoPhotonState, params: FbsParams) -> TwoPhotonState:
    """One splitter pass on a two-photon state.

    All three sectors are propagated, so repeated passes compose. Bunched
    sectors carry energy offsets tied to the detuning, so a state that already
    holds bunched population must see the same detuning again.
    """
    _check_centered(state.grid)
    d = _pass_detuning(state, params)
    bunched = state.sector_norm("rr") + state.sector_norm("bb")
    if bunched > 0 and d != state.envelope_offset:
        raise UnsupportedInputError(
            "bunched sectors were produced at a different detuning; cannot re-apply"
        )
    v, mu = splitter_amplitudes(params)
    dx = state.grid.spacing
    rb, rr, bb = state.jsa_rb, state.jsa_rr, state.jsa_bb

    rb_swap = _mirror(rb, -d, dx)  # rb(-D - x)
    new_rb = abs(v) ** 2 * rb - abs(mu) ** 2 * rb_swap
    new_rr = v * np.conj(mu) * (rb + rb_swap) / SQRT2
    new_bb = -mu * np.conj(v) * (fourier_shift(rb, d, dx) + reflect(rb)) / SQRT2

    if np.any(rr):
        new_rb = new_rb - SQRT2 * v * mu * rr
        new_rr = new_rr + v * v * rr
        new_bb = new_bb + mu * mu * fourier_shift(rr, d, dx)
    if np.any(bb):
        bb_back = fourier_shift(bb, -d, dx)  # bb(x + D)
        new_rb = new_rb + SQRT2 * np.conj(mu) * np.conj(v) * bb_back
        new_rr = new_rr + np.conj(mu) ** 2 * bb_back
        new_bb = new_bb + np.conj(v) ** 2 * bb

    return replace(state, jsa_rb=new_rb, jsa_rr=new_rr, jsa_bb=new_bb, envelope_offset=d)


def write_state(state: TwoPhotonState, path) -> None:
    path = Path(path)
    nu = state.grid.nu
    with path.open("w") as fh:
        fh.write(f"# center_rad_s {state.grid.center!r}\n")
        fh.write(f"# span_rad_s {state.grid.span!r}\n")
        fh.write(f"# n_points {state.grid.n_points}\n")
        fh.write(f"# envelope_offset_rad_s {state.envelope_offset!r}\n")
        fh.write(f"# reference_peak {state.reference_peak!r}\n")
        for name in SECTORS:
            amp = state.sector(name)
            fh.write(f"# sector {name}\n")
            np.savetxt(fh, np.column_stack([nu, amp.real, amp.imag]), fmt="%.17g")


def read_state(path) -> TwoPhotonState:
    path = Path(path)
    with path.open() as fh:
        lines = fh.read().splitlines()
    header = _read_header(lines)
    grid = FrequencyGrid(float(header["center_rad_s"]), float(header["span_rad_s"]),
                         int(header["n_points"]))
    blocks, current = {}, None
    for line in lines:
        if line.startswith("# sector"):
            current = line.split()[-1]
            blocks[current] = []
        elif current is not None and line and not line.startswith("#"):
            blocks[current].append(line)
    sectors = {}
    for name in SECTORS:
        data = np.loadtxt(blocks[name], ndmin=2)
        sectors[name] = data[:, 1] + 1j * data[:, 2]
    return TwoPhotonState(
        grid, sectors["rb"], sectors["rr"], sectors["bb"],
        envelope_offset=float(header["envelope_offset_rad_s"]),
        reference_peak=float(header["reference_peak"]),
    )
