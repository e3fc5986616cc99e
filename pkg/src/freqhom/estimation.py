"""Normalization, raw visibility and weighted beating-model fits.

Counts are Poisson; every least-squares fit here weights bin ``k`` by
``1 / max(n_k, 1)``, which keeps empty bins in the objective without a
zero variance. Fits use a small bounded Levenberg-Marquardt loop so the
iteration history, damping and best iterate are available for diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .correlation import (BeatModel, G2Curve, beat_curve, bin_average, damped_cosine,
                          double_exponential)
from .errors import FitError, InvalidParameterError, NormalizationError

BEAT_PARAMS = ("amplitude", "linewidth", "detuning", "visibility", "t0", "background")
DEXP_PARAMS = ("amplitude", "linewidth", "t0", "background")

# chi-square improvement a nonzero detuning must buy before it is believed
DETUNING_DELTA_CHI2 = 25.0
MIN_FIT_BINS = 50


# ---------------------------------------------------------------------------
# damped least squares
# ---------------------------------------------------------------------------

@dataclass
class LMResult:
    params: np.ndarray
    covariance: np.ndarray
    chi2: float
    iterations: int
    damping: float
    grad_norm: float
    converged: bool
    history: list = field(default_factory=list)


def _jacobian(fun, p, r0, steps):
    jac = np.empty((r0.size, p.size))
    for j in range(p.size):
        h = steps[j]
        up, dn = p.copy(), p.copy()
        up[j] += h
        dn[j] -= h
        jac[:, j] = (fun(up) - fun(dn)) / (2 * h)
    return jac


def levenberg_marquardt(fun, p0, lower, upper, scale, max_iter=200, xtol=1e-8,
                        damping=1e-3):
    """Minimize ``sum(fun(p)**2)`` within box bounds.

    ``fun`` returns weighted residuals. Parameters are handled in units of
    ``scale``; trial points are projected onto the bounds and a step is only
    accepted if the objective drops, so the accepted chi-square sequence is
    non-increasing. A parameter sitting on a bound whose gradient points
    outward is held fixed for that iteration. Converges when the relative parameter change of an
    accepted step falls below ``xtol``.
    """
    scale = np.asarray(scale, dtype=float)
    lo = np.asarray(lower, dtype=float) / scale
    hi = np.asarray(upper, dtype=float) / scale
    x = np.clip(np.asarray(p0, dtype=float) / scale, lo, hi)
    f = lambda y: np.asarray(fun(y * scale), dtype=float)  # noqa: E731
    r = f(x)
    chi2 = float(r @ r)
    history = [chi2]
    lam = damping
    converged = False
    it = 0
    grad = np.zeros_like(x)
    for it in range(1, max_iter + 1):
        steps = 1e-6 * np.maximum(np.abs(x), 1.0)
        jac = _jacobian(f, x, r, steps)
        jtj = jac.T @ jac
        grad = jac.T @ r
        diag = np.diag(jtj).copy()
        diag[diag == 0] = 1.0
        # parameters pinned at a bound by the gradient stay out of the solve
        active = ~(((x <= lo) & (grad > 0)) | ((x >= hi) & (grad < 0)))
        sub = np.ix_(active, active)
        accepted = False
        while lam < 1e16:
            dx = np.zeros_like(x)
            dx[active] = np.linalg.solve(jtj[sub] + lam * np.diag(diag[active]), -grad[active])
            x_new = np.clip(x + dx, lo, hi)
            r_new = f(x_new)
            chi2_new = float(r_new @ r_new)
            if np.isfinite(chi2_new) and chi2_new <= chi2:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # no descent direction left at working precision
            converged = True
            break
        change = np.linalg.norm(x_new - x) / max(np.linalg.norm(x), 1e-300)
        x, r, chi2 = x_new, r_new, chi2_new
        history.append(chi2)
        lam = max(lam / 10.0, 1e-12)
        if change < xtol:
            converged = True
            break
    cov = covariance(fun, x * scale, scale)
    return LMResult(x * scale, cov, chi2, it, lam, float(np.linalg.norm(grad)), converged, history)


def covariance(fun, p, scale):
    """``inv(J^T J)`` for the residual function ``fun`` at ``p``."""
    scale = np.asarray(scale, dtype=float)
    x = np.asarray(p, dtype=float) / scale
    f = lambda y: np.asarray(fun(y * scale), dtype=float)  # noqa: E731
    r = f(x)
    jac = _jacobian(f, x, r, 1e-6 * np.maximum(np.abs(x), 1.0)) / scale[None, :]
    try:
        return np.linalg.inv(jac.T @ jac)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(jac.T @ jac)


WEIGHTINGS = ("poisson", "neyman")


def _objective(model, counts, count_scale, weighting):
    """Residual function and Fisher-information residuals for count data.

    ``model(p) * count_scale`` is the expected count per bin. ``neyman``
    weights by the observed ``max(n, 1)``; ``poisson`` uses signed deviance
    residuals, whose squared sum is the Poisson likelihood-ratio statistic.
    """
    n = np.asarray(counts, dtype=float)
    if weighting == "neyman":
        sig = np.sqrt(np.maximum(n, 1.0))
        resid = lambda p: (model(p) * count_scale - n) / sig  # noqa: E731
        return resid, lambda p_hat: resid
    if weighting != "poisson":
        raise InvalidParameterError(f"weighting must be one of {WEIGHTINGS}, got {weighting!r}")
    nlogn = np.where(n > 0, n * np.log(np.where(n > 0, n, 1.0)), 0.0)

    def resid(p):
        m = np.maximum(model(p) * count_scale, 1e-300)
        dev = 2.0 * (m - n - n * np.log(m)) + 2.0 * nlogn
        return np.sign(m - n) * np.sqrt(np.maximum(dev, 0.0))

    def fisher(p_hat):
        sd = np.sqrt(np.maximum(model(p_hat) * count_scale, 1e-12))
        return lambda p: model(p) * count_scale / sd

    return resid, fisher


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass
class FitResult:
    """Parameter estimates with 1-sigma errors and convergence diagnostics."""

    params: dict
    errors: dict
    chi2: float
    dof: int
    iterations: int
    damping: float
    grad_norm: float
    converged: bool
    fixed: tuple = ()
    flags: list = field(default_factory=list)
    correlations: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    @property
    def chi2_red(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")

    @property
    def model(self) -> BeatModel:
        p = self.params
        return BeatModel(linewidth=p["linewidth"], detuning=p.get("detuning", 0.0),
                         visibility=p.get("visibility", 0.0), amplitude=p["amplitude"],
                         t0=p.get("t0", 0.0), background=max(p.get("background", 0.0), 0.0))

    def _flat(self) -> dict:
        out = {}
        for k, v in self.params.items():
            out[k] = v
            out[k + "_err"] = self.errors.get(k, 0.0)
        out.update(chi2=self.chi2, dof=self.dof, chi2_red=self.chi2_red,
                   iterations=self.iterations, damping=self.damping,
                   grad_norm=self.grad_norm, converged=self.converged,
                   fixed=";".join(self.fixed), flags=";".join(self.flags))
        for k, v in self.correlations.items():
            out["corr_" + k] = v
        for k, v in self.provenance.items():
            out[k] = v
        return out

    def to_kv(self) -> str:
        return "".join(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n"
                       for k, v in self._flat().items())

    def csv_header(self) -> str:
        return ",".join(self._flat())

    def csv_row(self) -> str:
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in self._flat().values())


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

@dataclass
class NormalizedCurve:
    """In-sync counts scaled by the peak of the fitted unsynchronized shape.

    ``on`` and ``off`` are both in units of that peak; ``off`` is averaged
    over the unsynchronized windows. ``errors`` are bin-wise Poisson errors
    ``sqrt(max(n, 1)) / scale``; ``total_errors`` add the normalization scale
    uncertainty in quadrature.
    """

    tau: np.ndarray
    on: np.ndarray
    off: np.ndarray
    errors: np.ndarray
    off_errors: np.ndarray
    counts_on: np.ndarray
    counts_off: np.ndarray
    scale: float
    scale_error: float
    tau_bin: float
    offsync_windows: int = 1
    reference: FitResult | None = None
    meta: dict = field(default_factory=dict)

    @property
    def total_errors(self) -> np.ndarray:
        return np.hypot(self.errors, self.on * self.scale_error / self.scale)

    def as_g2(self, kind="cross_RB") -> G2Curve:
        return G2Curve(self.tau, self.on, kind, "normalized",
                       {"scale": self.scale, "scale_error": self.scale_error},
                       ["poisson_floor_variance"])


def _poisson_sigma(counts):
    return np.sqrt(np.maximum(np.asarray(counts, dtype=float), 1.0))


def fit_double_exponential(tau, counts, count_scale=1.0, bin_width=None, jitter=0.0,
                           initial=None, weighting="poisson", max_iter=200) -> FitResult:
    """Fit ``A exp(-lw |tau - t0|) + B`` to binned counts.

    The model is in units of ``counts / count_scale``. Bin averaging and a
    Gaussian jitter convolution are optional.
    """
    tau = np.asarray(tau, dtype=float)
    counts = np.asarray(counts, dtype=float)
    y = counts / count_scale
    step = bin_width or abs(tau[1] - tau[0])
    if initial is None:
        initial = _initial_envelope(tau, y, step)

    def model(p):
        a, lw, t0, b = p
        func = lambda t: double_exponential(t - t0, lw, jitter)  # noqa: E731
        if bin_width is None:
            return a * func(tau) + b
        return a * bin_average(func, tau, bin_width, cusp=t0) + b

    resid, fisher = _objective(model, counts, count_scale, weighting)
    amp = max(abs(initial[0]), 1e-300)
    scale = [amp, initial[1], step, amp]
    res = levenberg_marquardt(
        resid, initial, lower=[0.0, 1e-3 / step, tau[0], 0.0],
        upper=[np.inf, 10.0 / step, tau[-1], np.inf], scale=scale, max_iter=max_iter)
    res.covariance = covariance(fisher(res.params), res.params, scale)
    out = _package(res, DEXP_PARAMS, (), y.size, {"weighting": weighting})
    if not res.converged:
        raise FitError(f"double-exponential fit did not converge in {max_iter} iterations",
                       best=out)
    return out


def _initial_envelope(tau, y, step):
    """Peak, tail log-slope and centroid of a single-peaked curve."""
    peak = float(np.max(y))
    if peak <= 0:
        raise InvalidParameterError("curve has no positive counts")
    w = np.clip(y, 0, None)
    t0 = float(np.sum(w * tau) / np.sum(w))
    sel = (y > 0.05 * peak) & (y < 0.7 * peak)
    x = np.abs(tau[sel] - t0)
    if sel.sum() >= 3 and np.ptp(x) > 0:
        slope = np.polyfit(x, np.log(y[sel]), 1, w=np.sqrt(y[sel]))[0]
        lw = -slope if slope < 0 else 1.0 / (10 * step)
    else:
        lw = 1.0 / (10 * step)
    edge = np.abs(tau - t0) > 0.8 * np.max(np.abs(tau))
    floor = max(float(np.median(y[edge])), 0.0) if edge.any() else 0.0
    return np.array([peak, lw, t0, floor])


def normalize_histogram(hist, partition="in_sync", reference="off_sync", jitter=0.0,
                        reference_factor=1.0, weighting="poisson") -> NormalizedCurve:
    """Scale ``partition`` by the fitted peak of the ``reference`` partition.

    The reference counts are averaged over the unsynchronized windows and fit
    with a bin-averaged double exponential; its amplitude times
    ``reference_factor`` is the normalization scale.
    """
    off_counts = np.asarray(hist.counts.get(reference, []))
    if off_counts.size == 0 or off_counts.sum() == 0:
        raise NormalizationError(f"reference partition {reference!r} is empty")
    k = hist.offsync_windows
    on_counts = np.asarray(hist.counts[partition])
    off_avg = off_counts / k
    off_sigma = _poisson_sigma(off_counts) / k
    ref = fit_double_exponential(hist.tau, off_counts, k, bin_width=hist.tau_bin,
                                 jitter=jitter, weighting=weighting)
    scale = ref.params["amplitude"] * reference_factor
    scale_err = ref.errors["amplitude"] * reference_factor
    if not scale > 0:
        raise NormalizationError("normalization scale is not positive")
    meta = dict(getattr(hist, "meta", {}))
    meta.update(partition=partition, reference=reference, reference_factor=reference_factor,
                weighting=weighting)
    return NormalizedCurve(
        tau=np.asarray(hist.tau, dtype=float), on=on_counts / scale, off=off_avg / scale,
        errors=_poisson_sigma(on_counts) / scale, off_errors=off_sigma / scale,
        counts_on=on_counts, counts_off=off_counts, scale=scale, scale_error=scale_err,
        tau_bin=hist.tau_bin, offsync_windows=k, reference=ref, meta=meta)


def raw_visibility(curve: NormalizedCurve, half_window: int = 1):
    """``1 - 2 C_on(0) / C_off(0)`` from the bins within ``half_window`` bins of zero.

    Returns ``(alpha_r, sigma, info)`` with Poisson propagation of both sums.
    """
    centre = np.abs(curve.tau) <= (half_window + 0.5) * curve.tau_bin
    n_on = float(np.sum(curve.counts_on[centre]))
    n_off = float(np.sum(curve.counts_off[centre]))
    if n_off == 0:
        raise NormalizationError("no reference counts near tau = 0; visibility undefined")
    k = curve.offsync_windows
    ratio = k * n_on / n_off
    alpha = 1.0 - 2.0 * ratio
    var_rel = (1.0 / n_on if n_on > 0 else 0.0) + 1.0 / n_off
    if n_on == 0:
        # one expected count sets the resolution of an empty numerator
        sigma = 2.0 * k / n_off
    else:
        sigma = 2.0 * ratio * np.sqrt(var_rel)
    info = {"estimator": "1-2*K*N_on/N_off", "window_bins": int(centre.sum()),
            "n_on": n_on, "n_off": n_off}
    return alpha, float(sigma), info


# ---------------------------------------------------------------------------
# beating fit
# ---------------------------------------------------------------------------

def _beat_basis(tau, lw, det, t0, jitter, bin_width):
    env = lambda t: double_exponential(t - t0, lw, jitter)  # noqa: E731
    osc = lambda t: damped_cosine(t - t0, lw, det, jitter)  # noqa: E731
    if bin_width is None:
        return env(tau), osc(tau)
    return (bin_average(env, tau, bin_width, cusp=t0),
            bin_average(osc, tau, bin_width, cusp=t0))


def detuning_scan(tau, y, sigma, lw, t0, background=0.0, jitter=0.0, bin_width=None,
                  freqs=None):
    """Least-squares periodogram of ``y`` against ``a E + b C(D)``.

    For each trial beat frequency ``D`` the linear coefficients are solved
    exactly; returns ``(freqs, chi2, coefs)`` with ``freqs[0] = 0`` the
    no-beating reference.
    """
    step = bin_width or abs(tau[1] - tau[0])
    if freqs is None:
        freqs = np.concatenate([[0.0], np.linspace(0.25 * lw, np.pi / step, 400)])
    w = 1.0 / sigma
    yb = (y - background) * w
    chi2 = np.empty(freqs.size)
    coefs = np.zeros((freqs.size, 2))
    env, _ = _beat_basis(tau, lw, 0.0, t0, jitter, bin_width)
    for i, d in enumerate(freqs):
        if d == 0:
            a = (env * w) @ yb / ((env * w) @ (env * w))
            coefs[i] = (a, 0.0)
            res = yb - a * env * w
        else:
            _, osc = _beat_basis(tau, lw, d, t0, jitter, bin_width)
            basis = np.column_stack([env * w, osc * w])
            sol, *_ = np.linalg.lstsq(basis, yb, rcond=None)
            coefs[i] = sol
            res = yb - basis @ sol
        chi2[i] = res @ res
    return freqs, chi2, coefs


def fit_beating(curve: NormalizedCurve, initial: BeatModel | None = None, jitter: float = 0.0,
                bin_averaged: bool = True, weighting: str = "poisson",
                max_iter: int = 200) -> FitResult:
    """Fit ``A exp(-lw|t|)(1/2 - alpha/2 cos(D t)) + B`` with ``t = tau - t0``.

    Without ``initial`` the start point comes from the normalization fit
    (linewidth, t0, background), a least-squares periodogram (detuning) and
    the raw visibility. If no nonzero detuning improves chi-square by
    ``DETUNING_DELTA_CHI2`` the detuning is fixed at 0 and the amplitude at the
    normalization (1), since both are otherwise degenerate with alpha; the
    scale uncertainty is then folded into the alpha error.
    """
    tau, y, sigma = curve.tau, curve.on, curve.errors
    if np.count_nonzero(np.isfinite(sigma) & (sigma > 0)) < MIN_FIT_BINS:
        raise InvalidParameterError(f"need at least {MIN_FIT_BINS} bins with nonzero errors")
    bw = curve.tau_bin if bin_averaged else None
    flags = ["poisson_floor_variance"] if weighting == "neyman" else []
    fixed = []

    if initial is not None:
        p0 = np.array([initial.amplitude, initial.linewidth, initial.detuning,
                       initial.visibility, initial.t0, initial.background])
        degenerate = initial.detuning == 0
    else:
        if curve.reference is not None:
            ref = curve.reference.params
            lw0, t00 = ref["linewidth"], ref["t0"]
            b0 = ref["background"] / max(ref["amplitude"], 1e-300)
        else:
            guess = _initial_envelope(tau, y, curve.tau_bin)
            lw0, t00, b0 = guess[1], guess[2], 0.0
        # point evaluation is accurate enough to seed the fit and much cheaper
        freqs, chi2, coefs = detuning_scan(tau, y, sigma, lw0, t00, b0)
        best = 1 + int(np.argmin(chi2[1:]))
        a, b = coefs[best]
        dip = b < 0
        degenerate = (chi2[0] - chi2[best] < DETUNING_DELTA_CHI2) or not dip
        try:
            alpha0 = raw_visibility(curve)[0]
        except NormalizationError:
            alpha0 = 0.5
        alpha0 = float(np.clip(alpha0, 0.0, 1.0))
        if degenerate:
            p0 = np.array([1.0, lw0, 0.0, float(np.clip(1 - 2 * coefs[0][0], 0, 1)), t00, b0])
        else:
            amp = 2 * a
            alpha_ls = float(np.clip(-2 * b / amp, 0.0, 1.0)) if amp > 0 else alpha0
            p0 = np.array([max(amp, 1e-3), lw0, freqs[best], alpha_ls, t00, b0])
    if degenerate:
        fixed = ["amplitude", "detuning"]
        flags.append("degenerate_detuning")

    step = curve.tau_bin
    free = [i for i, n in enumerate(BEAT_PARAMS) if n not in fixed]
    lower_all = np.array([0.0, 1e-3 / step, 0.0, 0.0, -5 * step, 0.0])
    upper_all = np.array([np.inf, 10.0 / step, 2 * np.pi / step, 1.0, 5 * step, np.inf])
    scale_all = np.array([1.0, max(p0[1], 1.0), max(p0[2], p0[1]), 1.0, step, 1.0])

    def full(pf):
        p = p0.copy()
        p[free] = pf
        return p

    def model(pf):
        a, lw, d, al, t0, b = full(pf)
        return beat_curve(tau, a, lw, d, al, t0, b, jitter=jitter, bin_width=bw)

    resid, fisher = _objective(model, curve.counts_on, curve.scale, weighting)
    res = levenberg_marquardt(resid, p0[free], lower_all[free], upper_all[free],
                              scale_all[free], max_iter=max_iter)
    res.covariance = covariance(fisher(res.params), res.params, scale_all[free])
    params = full(res.params)
    cov = np.zeros((6, 6))
    cov[np.ix_(free, free)] = res.covariance
    res_full = LMResult(params, cov, res.chi2, res.iterations, res.damping, res.grad_norm,
                        res.converged, res.history)
    out = _package(res_full, BEAT_PARAMS, tuple(fixed), y.size, {})
    out.flags.extend(flags)
    if degenerate:
        # alpha absorbs any error in the fixed unit amplitude
        extra = (1.0 - out.params["visibility"]) * curve.scale_error / curve.scale
        out.errors["visibility"] = float(np.hypot(out.errors["visibility"], extra))
    else:
        i, j = BEAT_PARAMS.index("visibility"), BEAT_PARAMS.index("detuning")
        denom = np.sqrt(cov[i, i] * cov[j, j])
        out.correlations["visibility_detuning"] = float(cov[i, j] / denom) if denom > 0 else 0.0
    al = out.params["visibility"]
    if al <= 0.0 or al >= 1.0:
        out.flags.append("visibility_at_bound")
    out.provenance.update({
        "config_hash": curve.meta.get("config_hash", ""),
        "seed": curve.meta.get("seed", ""),
        "bin_averaged": bin_averaged,
        "jitter_in_model": jitter,
        "weighting": weighting,
    })
    if not res.converged:
        raise FitError(f"beating fit did not converge in {max_iter} iterations", best=out)
    return out


def _package(res: LMResult, names, fixed, n_data, provenance) -> FitResult:
    errs = np.sqrt(np.clip(np.diag(res.covariance), 0.0, None))
    params = {n: float(v) for n, v in zip(names, res.params)}
    errors = {n: float(e) for n, e in zip(names, errs)}
    dof = n_data - (len(names) - len(fixed))
    return FitResult(params, errors, res.chi2, dof, res.iterations, res.damping,
                     res.grad_norm, res.converged, tuple(fixed), [], {}, dict(provenance),
                     list(res.history))


# ---------------------------------------------------------------------------
# autocorrelation
# ---------------------------------------------------------------------------

def normalize_autocorrelation(hist, baseline_factor: float, jitter=0.0) -> NormalizedCurve:
    """Tap coincidences over the incoherent-bunching expectation.

    ``baseline_factor`` converts the unsynchronized cross-arm reference into
    the same-arm coincidences expected from distinguishable photons, so the
    normalized curve equals 1 at zero delay without interference and 2 with
    perfect coalescence.
    """
    return normalize_histogram(hist, "in_sync", "off_sync", jitter, baseline_factor)


def bunching_peak(curve: NormalizedCurve, half_window: int = 1):
    """Ratio of tap coincidences to the reference within ``half_window`` bins of zero."""
    factor = curve.meta.get("reference_factor", 1.0)
    centre = np.abs(curve.tau) <= (half_window + 0.5) * curve.tau_bin
    n_on = float(np.sum(curve.counts_on[centre]))
    n_off = float(np.sum(curve.counts_off[centre]))
    if n_off == 0:
        raise NormalizationError("no reference counts near tau = 0")
    peak = curve.offsync_windows * n_on / (factor * n_off)
    sigma = peak * np.sqrt((1.0 / n_on if n_on else 0.0) + 1.0 / n_off)
    return peak, float(sigma)
