"""Second-order correlation functions: closed forms, numerical transforms of
two-photon states, and detector-jitter convolution.

All curves are in units where the pumps-off coincidence peak equals 1.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import fft as sp_fft
from scipy.special import erfcx

from .errors import AliasingError, BoundaryError, InvalidParameterError
from .fbs import TwoPhotonState
from .spectral import TWO_PI

DEFAULT_TAU_HALF_RANGE = 8e-9
DEFAULT_TAU_STEP = 20e-12
DEFAULT_JITTER = 40e-12

KINDS = ("cross_RB", "auto_BB", "auto_RR")
_SECTOR_OF_KIND = {"cross_RB": "rb", "auto_BB": "bb", "auto_RR": "rr"}


def default_tau_axis(half_range=DEFAULT_TAU_HALF_RANGE, step=DEFAULT_TAU_STEP):
    n = int(round(half_range / step))
    return np.arange(-n, n + 1) * step


@dataclass
class G2Curve:
    tau: np.ndarray
    values: np.ndarray
    kind: str = "cross_RB"
    source: str = "analytic"
    params: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown curve kind {self.kind!r}")

    @property
    def step(self) -> float:
        return _uniform_step(self.tau)

    def integral(self) -> float:
        return float(np.sum(self.values) * self.step)


def _uniform_step(tau):
    tau = np.asarray(tau, dtype=float)
    if tau.size < 2:
        raise InvalidParameterError("tau axis needs at least two points")
    steps = np.diff(tau)
    step = (tau[-1] - tau[0]) / (tau.size - 1)
    if not np.allclose(steps, step, rtol=1e-9, atol=0):
        raise InvalidParameterError("tau axis must be uniform")
    return step


def _check_linewidth(linewidth):
    if not linewidth > 0:
        raise InvalidParameterError(f"linewidth must be > 0, got {linewidth}")


def _check_alpha(alpha):
    if not 0.0 <= alpha <= 1.0:
        raise InvalidParameterError(f"visibility must lie in [0, 1], got {alpha}")


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

def _one_side(t, rate, sigma):
    """``int_{-inf}^{t} g(s) exp(-rate (t - s)) ds`` for a unit Gaussian ``g``."""
    s2 = sigma * sigma
    z = (rate * s2 - t) / (sigma * np.sqrt(2.0))
    gauss = np.exp(-t * t / (2 * s2))
    out = np.empty(t.shape, dtype=complex)
    pos = z.real >= 0
    out[pos] = 0.5 * erfcx(z[pos]) * gauss[pos]
    neg = ~pos
    # erfc(z) = 2 - erfc(-z) keeps erfcx away from overflow
    out[neg] = (np.exp(rate * rate * s2 / 2 - rate * t[neg])
                - 0.5 * erfcx(-z[neg]) * gauss[neg])
    return out


def _two_sided_exp(t, rate, sigma):
    """``exp(-rate |t|)`` convolved with a unit Gaussian of width ``sigma``.

    ``rate = a - i b`` gives ``exp(-a|t|) exp(i b t)``, so the real part is
    the damped cosine. The t < 0 half is the mirror image of the t > 0 half
    of the conjugate-rate function.
    """
    t = np.asarray(t, dtype=float)
    p = complex(rate)
    if sigma == 0:
        return np.where(t >= 0, np.exp(-p * t), np.exp(np.conj(p) * t))
    # f(t) = e^{-p t} (t > 0) + e^{conj(p) t} (t < 0); the second half is
    # h(-t) with h(u) = e^{-conj(p) u} for u > 0, and Gaussians are even.
    return _one_side(t, p, sigma) + np.conj(_one_side(-t, p, sigma))


def double_exponential(t, linewidth, jitter=0.0):
    """``exp(-linewidth |t|)``, optionally convolved with Gaussian jitter."""
    return _two_sided_exp(t, linewidth, jitter).real


def damped_cosine(t, linewidth, detuning, jitter=0.0):
    """``exp(-linewidth |t|) cos(detuning t)``, optionally jitter-convolved."""
    return _two_sided_exp(t, complex(linewidth, -detuning), jitter).real


@dataclass(frozen=True)
class BeatModel:
    """``A exp(-lw |t|) (1/2 - alpha/2 cos(D t)) + B`` with ``t = tau - t0``."""

    linewidth: float
    detuning: float = 0.0
    visibility: float = 1.0
    amplitude: float = 1.0
    t0: float = 0.0
    background: float = 0.0

    def __post_init__(self):
        _check_linewidth(self.linewidth)
        _check_alpha(self.visibility)
        if self.background < 0:
            raise InvalidParameterError("background must be >= 0")

    def evaluate(self, tau, jitter=0.0, bin_width=None):
        return beat_curve(tau, self.amplitude, self.linewidth, self.detuning,
                          self.visibility, self.t0, self.background,
                          jitter=jitter, bin_width=bin_width)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _point_beat(t, amplitude, linewidth, detuning, alpha, jitter):
    env = double_exponential(t, linewidth, jitter)
    osc = damped_cosine(t, linewidth, detuning, jitter) if alpha != 0 else 0.0
    return amplitude * (0.5 * env - 0.5 * alpha * osc)


def bin_average(func, centers, width, cusp=0.0):
    """Average ``func`` over bins of ``width`` centred on ``centers``.

    Gauss-Legendre quadrature on each bin; the bin holding ``cusp`` is split
    there so a kink does not spoil convergence.
    """
    centers = np.asarray(centers, dtype=float)
    lo = centers - 0.5 * width
    hi = centers + 0.5 * width
    cut = np.clip(cusp, lo, hi)
    total = np.zeros_like(centers)
    for a, b in ((lo, cut), (cut, hi)):
        half = 0.5 * (b - a)
        pts = (0.5 * (a + b))[:, None] + half[:, None] * _GL_NODES[None, :]
        total += half * (func(pts) @ _GL_WEIGHTS)
    return total / width


def beat_curve(tau, amplitude, linewidth, detuning, alpha, t0=0.0, background=0.0,
               jitter=0.0, bin_width=None):
    """Beating model at points, or averaged over bins of ``bin_width`` centred on ``tau``."""
    tau = np.asarray(tau, dtype=float)
    if bin_width is None:
        return _point_beat(tau - t0, amplitude, linewidth, detuning, alpha, jitter) + background
    func = lambda t: _point_beat(t - t0, amplitude, linewidth, detuning, alpha, jitter)  # noqa: E731
    return bin_average(func, tau, bin_width, cusp=t0) + background


def g2_cross_analytic(linewidth, detuning, alpha, tau, amplitude=1.0, jitter=0.0) -> G2Curve:
    """Cross-arm coincidences behind a 50:50 splitter with visibility ``alpha``."""
    _check_linewidth(linewidth)
    _check_alpha(alpha)
    values = beat_curve(tau, amplitude, linewidth, detuning, alpha, jitter=jitter)
    params = {"linewidth": linewidth, "detuning": detuning, "alpha": alpha,
              "amplitude": amplitude, "jitter": jitter}
    return G2Curve(tau, np.maximum(values, 0.0), "cross_RB", "analytic", params)


def g2_pumps_off_analytic(linewidth, tau, amplitude=1.0, jitter=0.0) -> G2Curve:
    _check_linewidth(linewidth)
    values = amplitude * double_exponential(tau, linewidth, jitter)
    params = {"linewidth": linewidth, "amplitude": amplitude, "jitter": jitter}
    return G2Curve(tau, values, "cross_RB", "analytic", params)


def g2_auto_analytic(linewidth, detuning, alpha, tau, bunching_weight=0.25,
                     amplitude=1.0, jitter=0.0, kind="auto_BB") -> G2Curve:
    """Same-arm coincidences ``|v mu|^2 exp(-lw|t|) (1 + alpha cos(D t))``."""
    _check_linewidth(linewidth)
    _check_alpha(alpha)
    env = double_exponential(tau, linewidth, jitter)
    osc = damped_cosine(tau, linewidth, detuning, jitter)
    values = amplitude * bunching_weight * (env + alpha * osc)
    params = {"linewidth": linewidth, "detuning": detuning, "alpha": alpha,
              "bunching_weight": bunching_weight, "jitter": jitter}
    return G2Curve(tau, np.maximum(values, 0.0), kind, "analytic", params)


# ---------------------------------------------------------------------------
# numerical path
# ---------------------------------------------------------------------------

def chirp_transform(x, theta, phi0, m):
    """``X_j = sum_k x_k exp(-i k (phi0 + j theta))`` for ``j = 0..m-1`` (Bluestein).

    With ``jk = (j^2 + k^2 - (j - k)^2) / 2`` the sum becomes a linear
    convolution against ``exp(i theta l^2 / 2)``, evaluated with FFTs.
    """
    x = np.asarray(x, dtype=complex)
    n = x.size
    k = np.arange(n, dtype=float)
    j = np.arange(m, dtype=float)
    u = x * np.exp(-1j * (phi0 * k + 0.5 * theta * k * k))
    size, h_hat = _chirp_kernel(n, m, float(theta))
    # circular length n + m - 1 leaves outputs n-1 .. n+m-2 free of wrap-around
    conv = sp_fft.ifft(sp_fft.fft(u, size) * h_hat)
    return np.exp(-0.5j * theta * j * j) * conv[n - 1: n - 1 + m]


@lru_cache(maxsize=8)
def _chirp_kernel(n, m, theta):
    lag = np.arange(-(n - 1), m, dtype=float)
    size = sp_fft.next_fast_len(n + m - 1)
    h_hat = sp_fft.fft(np.exp(0.5j * theta * lag * lag), size)
    h_hat.setflags(write=False)
    return size, h_hat


def _transform_sector(amplitude, grid, tau):
    """``|sum_k psi_k exp(-i nu_k tau_j) dnu|^2`` on a uniform tau axis."""
    step = _uniform_step(tau)
    if np.max(np.abs(tau)) >= grid.nyquist_time:
        raise AliasingError(
            f"|tau| up to {np.max(np.abs(tau)):.3g} s exceeds the grid Nyquist "
            f"limit {grid.nyquist_time:.3g} s"
        )
    dnu = grid.spacing
    # nu_k = nu_0 + k dnu; the nu_0 phase drops out of the modulus
    spectrum = chirp_transform(amplitude, dnu * step, dnu * tau[0], tau.size)
    return np.abs(spectrum * dnu) ** 2


def g2_numeric(state: TwoPhotonState, tau, kind="cross_RB") -> G2Curve:
    """Correlation of one sector of ``state`` by direct Fourier transform.

    The result is divided by the pumps-off peak stored on the state, so it is
    directly comparable with the closed forms.
    """
    tau = np.asarray(tau, dtype=float)
    if kind not in KINDS:
        raise InvalidParameterError(f"unknown curve kind {kind!r}")
    amp = state.sector(_SECTOR_OF_KIND[kind])
    flags = []
    if not np.any(amp):
        flags.append("empty_sector")
        warnings.warn(f"sector for {kind} is empty; returning zeros", RuntimeWarning, stacklevel=2)
        values = np.zeros_like(tau)
    else:
        values = _transform_sector(amp, state.grid, tau) / state.reference_peak
    params = {"envelope_offset": state.envelope_offset, "n_points": state.grid.n_points,
              "span": state.grid.span}
    return G2Curve(tau, values, kind, "numeric", params, flags)


def g2_auto_bunched(state: TwoPhotonState, tau, arm="B") -> G2Curve:
    """Same-arm correlation of the both-blue (``arm="B"``) or both-red sector.

    Its integral over tau is ``2 pi`` times the sector weight in pumps-off units.
    """
    kind = "auto_BB" if arm == "B" else "auto_RR"
    curve = g2_numeric(state, tau, kind)
    curve.params["sector_weight"] = state.sector_norm(_SECTOR_OF_KIND[kind])
    return curve


def convolve_jitter(curve: G2Curve, sigma, pad=False, leak_tolerance=1e-3) -> G2Curve:
    """Gaussian timing-jitter convolution with standard deviation ``sigma``.

    With ``pad=True`` the axis is extended so no weight is lost; otherwise a
    BoundaryError is raised when more than ``leak_tolerance`` of the integral
    would leave the axis.
    """
    if sigma < 0:
        raise InvalidParameterError("sigma must be >= 0")
    step = curve.step
    params = dict(curve.params, jitter_sigma=sigma)
    if sigma == 0:
        return G2Curve(curve.tau.copy(), curve.values.copy(), curve.kind, curve.source,
                       params, list(curve.flags))
    half = int(np.ceil(8 * sigma / step))
    k = np.arange(-half, half + 1) * step
    kernel = np.exp(-0.5 * (k / sigma) ** 2)
    kernel /= kernel.sum()
    if pad:
        tau = np.concatenate([curve.tau[0] + np.arange(-half, 0) * step,
                              curve.tau,
                              curve.tau[-1] + np.arange(1, half + 1) * step])
        values = np.convolve(curve.values, kernel, mode="full")
    else:
        tau = curve.tau.copy()
        full = np.convolve(curve.values, kernel, mode="full")
        values = full[half: half + curve.values.size]
        total = np.sum(curve.values)
        if total != 0:
            leak = abs(1.0 - np.sum(values) / total)
            if leak > leak_tolerance:
                raise BoundaryError(
                    f"jitter convolution leaks {leak:.2e} of the integral past the axis; "
                    "pass pad=True"
                )
    return G2Curve(tau, values, curve.kind, curve.source, params, list(curve.flags))


def _detuning_label(curve) -> str:
    p = curve.params
    if "detuning_hz" in p:
        return repr(float(p["detuning_hz"]))
    for key in ("detuning", "envelope_offset"):
        if key in p:
            return repr(float(p[key]) / TWO_PI)
    return ""


def write_curves_csv(curves, path, manifest_hash=None) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        if manifest_hash:
            fh.write(f"# manifest_sha256={manifest_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["tau_s", "value", "kind", "source", "detuning_hz"])
        for curve in curves:
            label = _detuning_label(curve)
            for t, v in zip(curve.tau, curve.values):
                writer.writerow([repr(float(t)), repr(float(v)), curve.kind, curve.source, label])


def read_curves_csv(path):
    """Read curves back, grouped by (kind, source, detuning) in file order."""
    groups = {}
    with Path(path).open() as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in rows:
            key = (row["kind"], row["source"], row.get("detuning_hz", ""))
            groups.setdefault(key, ([], []))
            groups[key][0].append(float(row["tau_s"]))
            groups[key][1].append(float(row["value"]))
    curves = []
    for (kind, source, det), (t, v) in groups.items():
        params = {"detuning_hz": float(det)} if det else {}
        curves.append(G2Curve(np.array(t), np.array(v), kind, source, params))
    return curves
