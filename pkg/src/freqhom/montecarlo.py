"""Event-level simulation of the gated coincidence-counting experiment.

Each period of the pump pulse train holds one window synchronized with the
splitter pumps and ``offsync_windows`` windows without pumps. Pairs are
generated inside every window; the splitter acts only in the synchronized
one. The two-photon physics enters through the per-pair sector probabilities
conditioned on the intra-pair delay, computed in closed form, so the event
stream itself is purely classical.

Random numbers come from a counter-based generator keyed by the seed, with one
counter block per chunk of periods. The chunking is fixed by the config, so
the output does not depend on the number of worker threads.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .correlation import bin_average, damped_cosine, double_exponential
from .errors import ConfigError, InvalidParameterError
from .fbs import FbsParams, outcome_probabilities, splitter_amplitudes
from .kvconfig import read_kv
from .spectral import TWO_PI, ResonatorSpec

CHANNELS = ("R", "B", "B1", "B2")
_R, _B, _B1, _B2 = range(4)

EVENT_DTYPE = np.dtype([("time", "f8"), ("channel", "i1"), ("window", "i8")])


@dataclass(frozen=True)
class ExperimentConfig:
    """Gating, detection and source settings for one simulated acquisition.

    ``pair_rate`` is the pair generation rate inside windows; when ``None`` it
    is calibrated so that the unsynchronized windows collect
    ``target_norm_counts`` coincidences within the 1/e coherence time.
    ``visibility`` is the two-photon interference ideality fed to the
    sampler. ``detuning`` is the pump/pair separation mismatch in rad/s.
    """

    pair_rate: float | None = None
    window_length: float = 10e-9
    window_period: float = 1e-6
    offsync_windows: int = 1
    detection_efficiency_r: float = 0.1
    detection_efficiency_b: float = 0.1
    dark_rate_r: float = 100.0
    dark_rate_b: float = 100.0
    jitter_sigma: float = 40e-12
    visibility: float = 1.0
    detuning: float = 0.0
    fbs: FbsParams = field(default_factory=lambda: FbsParams(strength=np.pi / 8))
    source: ResonatorSpec = field(default_factory=ResonatorSpec)
    duration: float = 3600.0
    seed: int = 1
    tau_bin: float = 100e-12
    tau_max: float = 8e-9
    target_norm_counts: float = 2700.0
    chunks: int = 64

    def __post_init__(self):
        rates = [self.dark_rate_r, self.dark_rate_b]
        if self.pair_rate is not None:
            rates.append(self.pair_rate)
        if any(r < 0 for r in rates):
            raise InvalidParameterError("rates must be >= 0")
        for eff in (self.detection_efficiency_r, self.detection_efficiency_b, self.visibility):
            if not 0.0 <= eff <= 1.0:
                raise InvalidParameterError(f"efficiency/visibility {eff} outside [0, 1]")
        if not 0 < self.window_length:
            raise InvalidParameterError("window_length must be > 0")
        if self.offsync_windows < 1:
            raise InvalidParameterError("offsync_windows must be >= 1")
        if self.window_length * (self.offsync_windows + 1) > self.window_period:
            raise InvalidParameterError("windows do not fit in window_period")
        if self.jitter_sigma < 0 or self.tau_bin <= 0 or self.tau_max <= 0 or self.duration <= 0:
            raise InvalidParameterError("jitter, tau_bin, tau_max and duration must be positive")
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= int(self.seed) < 2**64:
            raise InvalidParameterError(f"seed must be an integer in [0, 2**64), got {self.seed!r}")
        if self.chunks < 1:
            raise InvalidParameterError("chunks must be >= 1")

    @property
    def linewidth(self) -> float:
        return self.source.linewidth

    @property
    def n_periods(self) -> int:
        return int(self.duration // self.window_period)

    @property
    def effective_pair_rate(self) -> float:
        return calibrated_pair_rate(self) if self.pair_rate is None else self.pair_rate

    @property
    def multi_pair_parameter(self) -> float:
        """Mean number of pairs per coherence time ``1/linewidth``."""
        return self.effective_pair_rate / self.linewidth

    @property
    def n_bins_half(self) -> int:
        return int(round(self.tau_max / self.tau_bin))

    @property
    def tau_centers(self) -> np.ndarray:
        n = self.n_bins_half
        return np.arange(-n, n + 1) * self.tau_bin

    # flat key-value view ---------------------------------------------------

    def to_mapping(self) -> dict:
        flat = {}
        for f in fields(self):
            if f.name in ("fbs", "source", "detuning"):
                continue
            flat[f.name] = getattr(self, f.name)
        flat.update(
            detuning_hz=self.detuning / TWO_PI,
            strength=self.fbs.strength,
            pump_phase=self.fbs.pump_phase,
            mismatch=self.fbs.mismatch,
            fiber_length=self.fbs.length,
            linewidth_hz=self.source.linewidth / TWO_PI,
            fsr_hz=self.source.fsr,
            resonance_index=self.source.signal_index,
            pump_frequency=self.source.pump_frequency,
        )
        return flat

    def config_hash(self) -> str:
        payload = json.dumps(self.to_mapping(), sort_keys=True, default=repr)
        return hashlib.sha256(payload.encode()).hexdigest()

    @classmethod
    def from_mapping(cls, mapping: dict, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        """Build from flat keys, overriding ``base``; unknown keys raise ConfigError."""
        base = base or cls()
        top = {f.name: f.type for f in fields(cls) if f.name not in ("fbs", "source", "detuning")}
        ints = {"offsync_windows", "seed", "chunks", "resonance_index"}
        fbs = asdict(base.fbs)
        src = asdict(base.source)
        kwargs = {}
        try:
            for key, raw in mapping.items():
                if key in ints:
                    value = int(raw)
                elif raw is None or (isinstance(raw, str) and raw.lower() == "none"):
                    value = None
                else:
                    value = float(raw)
                if key == "multi_pair_parameter":
                    kwargs["pair_rate"] = value * src["linewidth"] if value is not None else None
                elif key in top:
                    kwargs[key] = value
                elif key == "detuning_hz":
                    kwargs["detuning"] = TWO_PI * value
                elif key in ("strength", "pump_phase", "mismatch"):
                    fbs[key] = value
                elif key == "fiber_length":
                    fbs["length"] = value
                elif key == "linewidth_hz":
                    src["linewidth"] = TWO_PI * value
                elif key == "fsr_hz":
                    src["fsr"] = value
                elif key == "resonance_index":
                    src["signal_index"] = src["idler_index"] = value
                elif key == "pump_frequency":
                    src["pump_frequency"] = value
                else:
                    raise ConfigError(f"unknown config key {key!r}")
            if "multi_pair_parameter" in mapping and mapping.get("multi_pair_parameter") is not None:
                # linewidth may have been set in the same mapping
                kwargs["pair_rate"] = float(mapping["multi_pair_parameter"]) * src["linewidth"]
            return replace(base, fbs=FbsParams(**fbs), source=ResonatorSpec(**src), **kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path, base=None):
        return cls.from_mapping(read_kv(path), base)


def _fraction_within_coherence(cfg: ExperimentConfig) -> float:
    lw = cfg.linewidth
    width = 2.0 / lw
    avg = bin_average(lambda t: double_exponential(t, lw, cfg.jitter_sigma), [0.0], width)[0]
    return float(avg * width * lw / 2)


def calibrated_pair_rate(cfg: ExperimentConfig) -> float:
    """Pair rate giving ``target_norm_counts`` unsynchronized coincidences within ``|tau| <= 1/lw``."""
    denom = (_fraction_within_coherence(cfg) * cfg.detection_efficiency_r
             * cfg.detection_efficiency_b * cfg.window_length
             * cfg.n_periods * cfg.offsync_windows)
    if denom == 0:
        return 0.0
    return cfg.target_norm_counts / denom


@dataclass
class CorrelationHistogram:
    """Coincidence counts over ``tau = t_first - t_second`` per partition.

    Partitions: ``in_sync`` (pump-synchronized windows) and ``off_sync``
    (unsynchronized windows, summed over all of them). Autocorrelation runs
    add ``off_sync_auto``. ``offsync_windows`` is the number of
    unsynchronized windows per synchronized one, used for averaging.
    """

    tau: np.ndarray
    counts: dict
    tau_bin: float
    offsync_windows: int = 1
    meta: dict = field(default_factory=dict)

    def errors(self, partition) -> np.ndarray:
        return np.sqrt(self.counts[partition])

    def off_average(self, partition="off_sync") -> np.ndarray:
        return self.counts[partition] / self.offsync_windows

    def total(self, partition) -> int:
        return int(np.sum(self.counts[partition]))


@dataclass
class SimulationResult:
    config: ExperimentConfig
    mode: str
    histogram: CorrelationHistogram
    events: np.ndarray | None
    flags: list = field(default_factory=list)


def _chunk_rng(seed, chunk):
    bitgen = np.random.Philox(key=int(seed), counter=[0, 0, 0, int(chunk)])
    return np.random.Generator(bitgen)


def _chunk_events(cfg: ExperimentConfig, chunk: int, mode: str, pair_rate: float) -> np.ndarray:
    rng = _chunk_rng(cfg.seed, chunk)
    p0 = cfg.n_periods * chunk // cfg.chunks
    p1 = cfg.n_periods * (chunk + 1) // cfg.chunks
    n_per = p1 - p0
    slots = cfg.offsync_windows + 1
    slot_spacing = cfg.window_period / slots
    lw = cfg.linewidth
    sigma_det = cfg.jitter_sigma / np.sqrt(2.0)
    eff = {_R: cfg.detection_efficiency_r, _B: cfg.detection_efficiency_b,
           _B1: cfg.detection_efficiency_b, _B2: cfg.detection_efficiency_b}
    dark = {_R: cfg.dark_rate_r, _B: cfg.dark_rate_b,
            _B1: cfg.dark_rate_b, _B2: cfg.dark_rate_b}
    blue_channels = (_B,) if mode == "cross" else (_B1, _B2)

    out = []
    for slot in range(slots):
        n = rng.poisson(pair_rate * cfg.window_length * n_per) if n_per else 0
        period = rng.integers(p0, p1, n) if n else np.zeros(0, dtype=np.int64)
        t_emit = rng.uniform(0.0, cfg.window_length, n)
        delay = rng.laplace(0.0, 1.0 / lw, n)
        if slot == 0:
            p_rb, p_rr, _ = outcome_probabilities(cfg.fbs, delay, cfg.detuning, cfg.visibility)
            u = rng.random(n)
            outcome = np.where(u < p_rb, 0, np.where(u < p_rb + p_rr, 1, 2))
        else:
            outcome = np.zeros(n, dtype=np.int64)
        # first photon leaves the red resonance, second the blue one
        arm1 = np.where(outcome == 2, _B, _R)
        arm2 = np.where(outcome == 1, _R, _B)
        arms = np.concatenate([arm1, arm2])
        times = np.concatenate([t_emit, t_emit + delay])
        periods = np.concatenate([period, period])
        if mode == "auto":
            tap = rng.random(arms.size) < 0.5
            arms = np.where(arms == _B, np.where(tap, _B1, _B2), arms)
        eff_arr = np.select([arms == c for c in eff], list(eff.values()))
        keep = rng.random(arms.size) < eff_arr
        jitter = rng.normal(0.0, sigma_det, arms.size)
        chans, tims, pers = [arms[keep]], [times[keep] + jitter[keep]], [periods[keep]]
        for ch in (_R,) + blue_channels:
            nd = rng.poisson(dark[ch] * cfg.window_length * n_per) if n_per else 0
            chans.append(np.full(nd, ch))
            tims.append(rng.uniform(0.0, cfg.window_length, nd))
            pers.append(rng.integers(p0, p1, nd) if nd else np.zeros(0, dtype=np.int64))
        chans = np.concatenate(chans)
        pers = np.concatenate(pers).astype(np.int64)
        ev = np.empty(chans.size, dtype=EVENT_DTYPE)
        ev["channel"] = chans
        ev["window"] = pers * slots + slot
        ev["time"] = pers * cfg.window_period + slot * slot_spacing + np.concatenate(tims)
        out.append(ev)
    events = np.concatenate(out)
    order = np.lexsort((events["time"], events["window"]))
    return events[order]


def _pair_delays(a, b):
    """``t_a - t_b`` for every same-window pair; inputs sorted by window."""
    lo = np.searchsorted(b["window"], a["window"], side="left")
    hi = np.searchsorted(b["window"], a["window"], side="right")
    cnt = hi - lo
    total = int(cnt.sum())
    if total == 0:
        return np.zeros(0)
    ia = np.repeat(np.arange(a.size), cnt)
    start = np.repeat(np.cumsum(cnt) - cnt, cnt)
    ib = np.repeat(lo, cnt) + (np.arange(total) - start)
    return a["time"][ia] - b["time"][ib]


def _bin(delays, tau_bin, n_half):
    idx = np.floor(delays / tau_bin + 0.5).astype(np.int64) + n_half
    idx = idx[(idx >= 0) & (idx <= 2 * n_half)]
    return np.bincount(idx, minlength=2 * n_half + 1).astype(np.int64)


def histograms_from_events(events: np.ndarray, cfg: ExperimentConfig, mode: str) -> CorrelationHistogram:
    """Three-fold coincidence logic: two detections sharing a window id.

    Windows whose id is a multiple of ``offsync_windows + 1`` are synchronized
    with the pumps. Events must be sorted by window.
    """
    slots = cfg.offsync_windows + 1
    sync = events["window"] % slots == 0
    n_half = cfg.n_bins_half

    def pick(mask, chans):
        return events[mask & np.isin(events["channel"], chans)]

    def hist(mask, first, second):
        return _bin(_pair_delays(pick(mask, first), pick(mask, second)), cfg.tau_bin, n_half)

    if mode == "cross":
        counts = {"in_sync": hist(sync, [_R], [_B]), "off_sync": hist(~sync, [_R], [_B])}
    elif mode == "auto":
        counts = {
            "in_sync": hist(sync, [_B1], [_B2]),
            "off_sync": hist(~sync, [_R], [_B1, _B2]),
            "off_sync_auto": hist(~sync, [_B1], [_B2]),
        }
    else:
        raise InvalidParameterError(f"unknown mode {mode!r}")
    meta = {"mode": mode, "config_hash": cfg.config_hash(), "seed": int(cfg.seed),
            "window_length": cfg.window_length, "jitter_sigma": cfg.jitter_sigma}
    return CorrelationHistogram(cfg.tau_centers, counts, cfg.tau_bin, cfg.offsync_windows, meta)


def _simulate(cfg: ExperimentConfig, mode: str, threads: int, keep_events: bool) -> SimulationResult:
    flags = []
    rate = cfg.effective_pair_rate
    if rate == 0 and cfg.dark_rate_r == 0 and cfg.dark_rate_b == 0:
        flags.append("empty_histogram")
        warnings.warn("zero pair rate and zero dark rate: histogram will be empty",
                      RuntimeWarning, stacklevel=3)
    work = lambda c: _chunk_events(cfg, c, mode, rate)  # noqa: E731
    if threads <= 1:
        parts = [work(c) for c in range(cfg.chunks)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(cfg.chunks)))
    events = np.concatenate(parts)
    hist = histograms_from_events(events, cfg, mode)
    hist.meta["pair_rate"] = rate
    return SimulationResult(cfg, mode, hist, events if keep_events else None, flags)


def simulate_run(cfg: ExperimentConfig, threads: int = 1, keep_events: bool = True) -> SimulationResult:
    """Cross-arm (R, B) coincidence acquisition."""
    return _simulate(cfg, "cross", threads, keep_events)


def simulate_autocorrelation(cfg: ExperimentConfig, threads: int = 1,
                             keep_events: bool = True) -> SimulationResult:
    """Blue arm split by a 50:50 tap onto detectors B1, B2; R kept for the reference."""
    return _simulate(cfg, "auto", threads, keep_events)


# ---------------------------------------------------------------------------
# expectations
# ---------------------------------------------------------------------------

def expected_counts(cfg: ExperimentConfig, mode: str = "cross") -> dict:
    """Mean histogram per partition from pair coincidences alone.

    Accidentals from dark counts and multiple pairs are not included.
    """
    lw, det, sig = cfg.linewidth, cfg.detuning, cfg.jitter_sigma
    v, mu = splitter_amplitudes(cfg.fbs)
    t, r = abs(v) ** 2, abs(mu) ** 2
    alpha = cfg.visibility
    rate = cfg.effective_pair_rate
    n_sync = rate * cfg.window_length * cfg.n_periods
    n_off = n_sync * cfg.offsync_windows
    centers = cfg.tau_centers
    env = lambda x: double_exponential(x, lw, sig)  # noqa: E731
    osc = lambda x: damped_cosine(x, lw, det, sig)  # noqa: E731
    per_bin = 0.5 * lw * cfg.tau_bin
    e_env = bin_average(env, centers, cfg.tau_bin)
    e_osc = bin_average(osc, centers, cfg.tau_bin)
    eta_r, eta_b = cfg.detection_efficiency_r, cfg.detection_efficiency_b
    off = n_off * eta_r * eta_b * per_bin * e_env
    if mode == "cross":
        sync = n_sync * eta_r * eta_b * per_bin * ((t * t + r * r) * e_env - 2 * alpha * t * r * e_osc)
        return {"in_sync": sync, "off_sync": off}
    if mode == "auto":
        sync = n_sync * 0.5 * eta_b**2 * per_bin * t * r * (e_env + alpha * e_osc)
        return {"in_sync": sync, "off_sync": off}
    raise InvalidParameterError(f"unknown mode {mode!r}")


def autocorrelation_baseline_factor(cfg: ExperimentConfig) -> float:
    """Ratio of incoherent same-arm tap coincidences to unsynchronized cross coincidences.

    Distinguishable photons bunch into the blue arm with probability
    ``|v mu|^2``; the tap separates them half the time.
    """
    v, mu = splitter_amplitudes(cfg.fbs)
    eta_r, eta_b = cfg.detection_efficiency_r, cfg.detection_efficiency_b
    if eta_r == 0:
        raise InvalidParameterError("reference arm efficiency is zero")
    return 0.5 * abs(v * mu) ** 2 * eta_b / eta_r


# ---------------------------------------------------------------------------
# text formats
# ---------------------------------------------------------------------------

def write_events(events: np.ndarray, path) -> None:
    with Path(path).open("w") as fh:
        fh.write("# time_s channel window_id\n")
        for t, c, w in zip(events["time"].tolist(), events["channel"].tolist(),
                           events["window"].tolist()):
            fh.write(f"{t!r} {CHANNELS[c]} {w}\n")


def read_events(path) -> np.ndarray:
    times, chans, wins = [], [], []
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            t, c, w = line.split()
            times.append(float(t))
            chans.append(CHANNELS.index(c))
            wins.append(int(w))
    ev = np.empty(len(times), dtype=EVENT_DTYPE)
    ev["time"], ev["channel"], ev["window"] = times, chans, wins
    return ev


def write_histogram_csv(hist: CorrelationHistogram, path, manifest_hash=None) -> None:
    with Path(path).open("w") as fh:
        if manifest_hash:
            fh.write(f"# manifest_sha256={manifest_hash}\n")
        fh.write("tau_s,count,error,partition\n")
        for part, counts in hist.counts.items():
            err = np.sqrt(counts)
            for t, n, e in zip(hist.tau.tolist(), counts.tolist(), err.tolist()):
                fh.write(f"{t!r},{n},{e!r},{part}\n")


def read_histogram_csv(path, tau_bin=None, offsync_windows=1) -> CorrelationHistogram:
    parts = {}
    taus = {}
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("tau_s"):
                continue
            t, n, _, part = line.strip().split(",")
            parts.setdefault(part, []).append(float(n))
            taus.setdefault(part, []).append(float(t))
    first = next(iter(taus.values()))
    tau = np.array(first)
    if tau_bin is None:
        tau_bin = float(tau[1] - tau[0])
    # expected (noiseless) histograms carry fractional counts; keep them as floats
    counts = {}
    for k, v in parts.items():
        arr = np.array(v)
        counts[k] = arr.astype(np.int64) if np.all(arr == np.round(arr)) else arr
    return CorrelationHistogram(tau, counts, tau_bin, offsync_windows)
