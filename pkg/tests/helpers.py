"""Shared oracles and frozen reference values for the test suite.

Frozen numbers were produced once with mpmath at 30 digits, using direct
quadrature of the Lorentzian Fourier integral rather than any package code.
"""

import numpy as np
from scipy import integrate

from freqhom.fbs import FIFTY_FIFTY, TwoPhotonState, apply_fbs_two_photon
from freqhom.spectral import TWO_PI, apply_envelope_offset

LINEWIDTH = TWO_PI * 270e6

# (detuning_hz, tau_s) -> exp(-lw|tau|) sin^2(D tau / 2), lw = 2 pi 270 MHz
FROZEN_BEATING = {
    (300e6, 0.25e-9): 0.035659865357688474,
    (300e6, 1e-9): 0.11999193534231702,
    (300e6, -2e-9): 0.030400882368237552,
    (600e6, 0.25e-9): 0.13486607608613534,
    (600e6, 1e-9): 0.16582477626720234,
    (600e6, -2e-9): 0.011612103776679356,
}

# fringe contrast left by Gaussian jitter at 5 GHz beating
FROZEN_JITTER_CONTRAST = {100e-12: 0.00719188335582636302, 40e-12: 0.454040738727245089}

FROZEN_PAIR_SEPARATION_HZ = 805.1e9


def split_state(jsa, detuning_hz, params=FIFTY_FIFTY):
    shifted = apply_envelope_offset(jsa, TWO_PI * detuning_hz)
    return apply_fbs_two_photon(TwoPhotonState.from_jsa(shifted), params)


def lorentzian_ft_oracle(linewidth, tau):
    """``|int phi(nu) exp(-i nu tau) dnu|^2 / |int phi dnu|^2`` by adaptive quadrature."""
    a = linewidth / 2
    if tau == 0:
        return 1.0
    val, _ = integrate.quad(lambda v: a / (a * a + v * v), 0, np.inf, weight="cos", wvar=abs(tau))
    return (2 * val / np.pi) ** 2


def jittered_cos_oracle(t, rate, detuning, sigma):
    """``exp(-rate|s|) cos(D s)`` convolved with a Gaussian, by direct quadrature."""
    f = lambda s: (np.exp(-rate * abs(s)) * np.cos(detuning * s)  # noqa: E731
                   * np.exp(-0.5 * ((t - s) / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi)))
    lo, hi = t - 12 * sigma, t + 12 * sigma
    pts = [0.0] if lo < 0 < hi else None
    val, _ = integrate.quad(f, lo, hi, points=pts, limit=400, epsabs=1e-14, epsrel=1e-12)
    return val


def direct_dft(x, theta, phi0, m):
    k = np.arange(x.size)
    j = np.arange(m)[:, None]
    return (x[None, :] * np.exp(-1j * k[None, :] * (phi0 + j * theta))).sum(axis=1)


def brute_delta_beta(b2, b3, b4, freqs):
    """Taylor beta summed term by term in exact rational arithmetic."""
    from fractions import Fraction
    r, p1, b, p2 = (Fraction(f) for f in freqs)
    coef = (Fraction(b2) / 2, Fraction(b3) / 6, Fraction(b4) / 24)

    def beta(x):
        return coef[0] * x**2 + coef[1] * x**3 + coef[2] * x**4

    return float(beta(r) + beta(p1) - beta(b) - beta(p2))
