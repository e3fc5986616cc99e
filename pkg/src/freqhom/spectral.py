"""Biphoton joint spectral amplitude of a CW-pumped microring pair source.

Under CW pumping the two photons obey ``w_R + w_B = 2 w_P`` exactly, so the
amplitude is stored as a 1-D function of the red detuning ``nu = w_R - w_R0``
with the blue photon pinned to ``w_B = 2 w_P - w_R``.

Grids follow the FFT layout: ``nu_k = center + (k - n/2) * spacing`` with
``spacing = span / n``. The point ``nu = center`` is on the grid and index
``k`` mirrors to ``(n - k) mod n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .errors import InvalidParameterError, ResolutionError

TWO_PI = 2.0 * np.pi

DEFAULT_FSR_HZ = 201.275e9
DEFAULT_LINEWIDTH = TWO_PI * 270e6
DEFAULT_PUMP_WAVELENGTH = 1282.8e-9

# default grid, in units of the resonance linewidth
DEFAULT_SPAN_LINEWIDTHS = 2.0**15
DEFAULT_N_POINTS = 2**20

MIN_LINEWIDTHS_PER_SPAN = 80.0
MIN_POINTS_PER_LINEWIDTH = 16.0


@dataclass(frozen=True)
class ResonatorSpec:
    """SFWM source: pump frequency, ring FSR, resonance width and mode offsets.

    ``signal_index`` and ``idler_index`` count FSRs from the pump resonance to
    the red and blue resonances; energy conservation forces them equal.
    """

    pump_frequency: float = TWO_PI * SPEED_OF_LIGHT / DEFAULT_PUMP_WAVELENGTH
    fsr: float = DEFAULT_FSR_HZ
    linewidth: float = DEFAULT_LINEWIDTH
    signal_index: int = 2
    idler_index: int = 2

    def __post_init__(self):
        if not self.linewidth > 0:
            raise InvalidParameterError(f"linewidth must be > 0, got {self.linewidth}")
        if not self.fsr > 0:
            raise InvalidParameterError(f"fsr must be > 0, got {self.fsr}")
        if self.signal_index != self.idler_index or self.signal_index < 1:
            raise InvalidParameterError(
                "signal_index and idler_index must be equal and >= 1 "
                f"(got {self.signal_index}, {self.idler_index})"
            )

    @property
    def red_center(self) -> float:
        return self.pump_frequency - self.signal_index * TWO_PI * self.fsr

    @property
    def blue_center(self) -> float:
        return self.pump_frequency + self.idler_index * TWO_PI * self.fsr

    @property
    def pair_separation(self) -> float:
        """``w_B0 - w_R0`` in rad/s."""
        return 2 * self.signal_index * TWO_PI * self.fsr


@dataclass(frozen=True)
class FrequencyGrid:
    center: float
    span: float
    n_points: int

    def __post_init__(self):
        n = int(self.n_points)
        if n < 2 or n & (n - 1):
            raise InvalidParameterError(f"n_points must be a power of two >= 2, got {n}")
        if not self.span > 0:
            raise InvalidParameterError(f"span must be > 0, got {self.span}")

    @classmethod
    def for_linewidth(cls, linewidth, span_linewidths=DEFAULT_SPAN_LINEWIDTHS,
                      n_points=DEFAULT_N_POINTS, center=0.0):
        return cls(center=center, span=span_linewidths * linewidth, n_points=n_points)

    @property
    def spacing(self) -> float:
        return self.span / self.n_points

    @property
    def nu(self) -> np.ndarray:
        k = np.arange(self.n_points, dtype=float) - self.n_points // 2
        return self.center + k * self.spacing

    @property
    def nyquist_time(self) -> float:
        """Largest |tau| a transform over this grid represents without aliasing."""
        return np.pi / self.spacing

    def check_resolution(self, linewidth):
        """Raise ResolutionError if the grid under-resolves or truncates a resonance."""
        if self.spacing > linewidth / MIN_POINTS_PER_LINEWIDTH:
            raise ResolutionError(
                f"grid spacing {self.spacing:.4g} rad/s exceeds linewidth/16 "
                f"= {linewidth / MIN_POINTS_PER_LINEWIDTH:.4g} rad/s"
            )
        if self.span < MIN_LINEWIDTHS_PER_SPAN * linewidth:
            raise ResolutionError(
                f"grid span {self.span:.4g} rad/s covers fewer than 80 linewidths"
            )


@dataclass(frozen=True, eq=False)
class JointSpectralAmplitude:
    """Complex biphoton amplitude ``phi(nu)`` on a frequency grid.

    ``envelope_offset`` is the mismatch between the splitter pump separation
    and the photon-pair separation that a downstream frequency beam splitter
    will see.
    """

    grid: FrequencyGrid
    amplitude: np.ndarray
    envelope_offset: float = 0.0
    constraint: str = "w_B = 2 w_P - w_R"
    linewidth: float | None = None
    pair_separation: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        amp = np.array(self.amplitude, dtype=complex)
        if amp.shape != (self.grid.n_points,):
            raise InvalidParameterError(
                f"amplitude shape {amp.shape} does not match grid size {self.grid.n_points}"
            )
        amp.setflags(write=False)
        object.__setattr__(self, "amplitude", amp)

    @property
    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitude) ** 2) * self.grid.spacing)

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.amplitude) ** 2

    def normalize(self) -> "JointSpectralAmplitude":
        norm = self.norm
        if norm == 0:
            raise InvalidParameterError("cannot normalize an all-zero amplitude")
        return replace(self, amplitude=self.amplitude / np.sqrt(norm))


def lorentzian_lineshape(nu, linewidth):
    """Ring-resonance field response ``sqrt(dw/2) / (-i nu + dw/2)``.

    ``|l|^2`` is a Lorentzian of FWHM ``linewidth`` with peak ``2/linewidth``.
    """
    if not np.all(np.asarray(linewidth) > 0):
        raise InvalidParameterError(f"linewidth must be > 0, got {linewidth}")
    half = 0.5 * linewidth
    return np.sqrt(half) / (-1j * np.asarray(nu) + half)


def build_ring_jsa(spec: ResonatorSpec, grid: FrequencyGrid | None = None) -> JointSpectralAmplitude:
    """Normalized CW ring JSA ``l(nu) * l(-nu)`` on ``grid``.

    The blue factor is the blue resonance evaluated on the energy-conservation
    line, where its detuning is ``-nu``.
    """
    if grid is None:
        grid = FrequencyGrid.for_linewidth(spec.linewidth)
    grid.check_resolution(spec.linewidth)
    nu = grid.nu
    amp = lorentzian_lineshape(nu, spec.linewidth) * lorentzian_lineshape(-nu, spec.linewidth)
    jsa = JointSpectralAmplitude(
        grid=grid,
        amplitude=amp,
        linewidth=spec.linewidth,
        pair_separation=spec.pair_separation,
        metadata={"source": "ring", "fsr_hz": spec.fsr, "m": spec.signal_index},
    )
    return jsa.normalize()


def apply_envelope_offset(jsa: JointSpectralAmplitude, offset: float) -> JointSpectralAmplitude:
    """Relabel the pair so a downstream splitter sees a separation mismatch ``offset``.

    The amplitude is untouched; offsets accumulate.
    """
    if abs(offset) >= jsa.grid.span / 4:
        raise ResolutionError(
            f"offset {offset:.4g} rad/s exceeds a quarter of the grid span {jsa.grid.span:.4g}"
        )
    if offset == 0:
        return jsa
    return replace(jsa, envelope_offset=jsa.envelope_offset + offset)


def write_jsa(jsa: JointSpectralAmplitude, path) -> None:
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# center_rad_s {jsa.grid.center!r}\n")
        fh.write(f"# span_rad_s {jsa.grid.span!r}\n")
        fh.write(f"# n_points {jsa.grid.n_points}\n")
        fh.write(f"# envelope_offset_rad_s {jsa.envelope_offset!r}\n")
        cols = np.column_stack([jsa.grid.nu, jsa.amplitude.real, jsa.amplitude.imag])
        np.savetxt(fh, cols, fmt="%.17g")


def _read_header(lines):
    header = {}
    for line in lines:
        if not line.startswith("#"):
            break
        key, _, value = line[1:].strip().partition(" ")
        header[key] = value.strip()
    return header


def read_jsa(path) -> JointSpectralAmplitude:
    path = Path(path)
    with path.open() as fh:
        header = _read_header(fh)
    grid = FrequencyGrid(
        center=float(header["center_rad_s"]),
        span=float(header["span_rad_s"]),
        n_points=int(header["n_points"]),
    )
    data = np.loadtxt(path, comments="#", ndmin=2)
    amp = data[:, 1] + 1j * data[:, 2]
    return JointSpectralAmplitude(
        grid=grid,
        amplitude=amp,
        envelope_offset=float(header.get("envelope_offset_rad_s", 0.0)),
    )
