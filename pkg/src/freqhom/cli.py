"""Command-line front end: design, analytic, simulate, fit, report.

Every run writes ``manifest.json`` holding the resolved configuration and a
SHA-256 over it; each CSV starts with ``# manifest_sha256=<hash>`` and has a
JSON mirror. Exit codes: 0 success, 2 configuration error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .correlation import default_tau_axis, g2_cross_analytic, g2_numeric, write_curves_csv
from .errors import ConfigError, FreqHomError, InvalidParameterError
from .estimation import (bunching_peak, fit_beating, normalize_autocorrelation,
                         normalize_histogram, raw_visibility)
from .fbs import TwoPhotonState, apply_fbs_two_photon
from .kvconfig import read_kv
from .montecarlo import (ExperimentConfig, autocorrelation_baseline_factor,
                         histograms_from_events, read_events, read_histogram_csv,
                         simulate_autocorrelation, simulate_run, write_events,
                         write_histogram_csv)
from .phasematch import (DispersionProfile, pump_separation_from_fsr, placement_for_source,
                         sideband_suppression, write_design_csv)
from .spectral import TWO_PI, ResonatorSpec, apply_envelope_offset, build_ring_jsa

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


# ---------------------------------------------------------------------------
# manifest and file helpers
# ---------------------------------------------------------------------------

def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=repr, separators=(",", ":"))


def make_manifest(subcommand, config, seed=None, inputs=()):
    body = {"subcommand": subcommand, "config": config, "seed": seed, "version": __version__}
    # input locations are recorded but not hashed, so moving a run directory
    # does not change what is derived from it
    h = hashlib.sha256(_canonical(body).encode()).hexdigest()
    return dict(body, inputs=[str(p) for p in inputs], config_hash=h)


def write_manifest(manifest, out_dir, outputs):
    manifest = dict(manifest, outputs=sorted(Path(p).name for p in outputs))
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2, default=repr) + "\n")
    return path


def _csv_to_json(csv_path, manifest_hash):
    with Path(csv_path).open() as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    json_path = Path(csv_path).with_suffix(".json")
    json_path.write_text(json.dumps({"manifest_sha256": manifest_hash, "rows": rows},
                                    indent=1) + "\n")
    return json_path


def _write_rows(path, header, rows, manifest_hash):
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# manifest_sha256={manifest_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _load_config_mapping(path):
    """Flat key-value file, or the ``config`` block of a previous manifest."""
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    if path.suffix == ".json":
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return dict(data.get("config", data))
    return read_kv(path)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="key = value file or a previous manifest.json")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--threads", type=int, default=1)


def _physics(p):
    p.add_argument("--linewidth-hz", type=float)
    p.add_argument("--detuning-hz", type=float)
    p.add_argument("--strength", type=float)
    p.add_argument("--duration-s", type=float)
    p.add_argument("--jitter-s", type=float)
    p.add_argument("--tau-bin-s", type=float)
    p.add_argument("--alpha", type=float, help="two-photon interference ideality")


_FLAG_KEYS = {"linewidth_hz": "linewidth_hz", "detuning_hz": "detuning_hz",
              "strength": "strength", "duration_s": "duration", "jitter_s": "jitter_sigma",
              "tau_bin_s": "tau_bin", "alpha": "visibility", "seed": "seed"}


def build_parser():
    parser = argparse.ArgumentParser(prog="freqhom", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="phase-matching report")
    _common(p)
    p.add_argument("--fsr", type=float, default=201.275e9, help="ring FSR in Hz")
    p.add_argument("--m", type=int, default=2, help="resonance offset in FSRs")
    p.add_argument("--zdw-hz", type=float, help="zero-dispersion frequency in Hz")
    p.add_argument("--beta2", type=float)
    p.add_argument("--beta3", type=float)
    p.add_argument("--beta4", type=float)
    p.add_argument("--band-offset", type=float, default=0.0,
                   help="pump band shift from the mirror point, Hz")
    p.add_argument("--detuning-hz", type=float, default=0.0)
    p.add_argument("--length", type=float, default=1000.0)
    p.add_argument("--gamma-p", type=float, help="nonlinearity-power product, 1/m")

    p = sub.add_parser("analytic", help="closed-form and numerical G2 curves")
    _common(p)
    _physics(p)
    p.add_argument("--detunings-hz", type=float, nargs="+", default=[0.0, 300e6, 600e6, 5e9])
    p.add_argument("--tau-step-s", type=float, default=20e-12)
    p.add_argument("--tau-max-s", type=float, default=8e-9)
    p.add_argument("--numeric", action="store_true", help="also propagate the ring JSA")

    p = sub.add_parser("simulate", help="Monte Carlo counting run")
    _common(p)
    _physics(p)
    p.add_argument("--mode", choices=("cross", "auto"), default="cross")

    p = sub.add_parser("fit", help="normalize and fit a stored run")
    _common(p)
    p.add_argument("--run-dir", help="directory written by simulate")
    p.add_argument("--histogram", help="histogram CSV instead of a run directory")
    p.add_argument("--offsync-windows", type=int, default=1)
    p.add_argument("--jitter-in-fit", type=float, default=0.0)
    p.add_argument("--weighting", choices=("poisson", "neyman"), default="poisson")

    p = sub.add_parser("report", help="table and figure data rebuilt from event logs")
    _common(p)
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--jitter-in-fit", type=float, default=None,
                   help="jitter used in the fit model (default: configured)")
    return parser


def _experiment_config(args) -> ExperimentConfig:
    mapping = _load_config_mapping(args.config)
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            mapping[key] = value
    return ExperimentConfig.from_mapping(mapping)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_design(args):
    base = DispersionProfile.illustrative_default()
    mapping = _load_config_mapping(args.config)
    ref = TWO_PI * args.zdw_hz if args.zdw_hz else float(mapping.get("zdw_rad_s", base.reference_frequency))
    profile = DispersionProfile(
        ref,
        args.beta2 if args.beta2 is not None else float(mapping.get("beta2", base.beta2)),
        args.beta3 if args.beta3 is not None else float(mapping.get("beta3", base.beta3)),
        args.beta4 if args.beta4 is not None else float(mapping.get("beta4", base.beta4)),
        illustrative=args.zdw_hz is None and args.beta3 is None and not mapping,
    )
    placement = placement_for_source(profile, args.fsr, args.m,
                                     band_offset=TWO_PI * args.band_offset,
                                     detuning=TWO_PI * args.detuning_hz, length=args.length,
                                     gamma_p=args.gamma_p)
    config = {"fsr_hz": args.fsr, "m": args.m, "zdw_rad_s": profile.reference_frequency,
              "beta2": profile.beta2, "beta3": profile.beta3, "beta4": profile.beta4,
              "band_offset_hz": args.band_offset, "detuning_hz": args.detuning_hz,
              "length": args.length, "gamma_p": placement.gamma_p,
              "illustrative_profile": profile.illustrative}
    manifest = make_manifest("design", config, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = sideband_suppression(profile, placement)
    csv_path = out / "design.csv"
    write_design_csv(profile, placement, rows, csv_path, manifest["config_hash"])
    json_path = _csv_to_json(csv_path, manifest["config_hash"])
    write_manifest(manifest, out, [csv_path, json_path])
    w0 = profile.reference_frequency
    print(f"pump separation / 2pi = {pump_separation_from_fsr(args.fsr, args.m) / TWO_PI / 1e9:.3f} GHz")
    print(f"recommended pumps: P1 = {(w0 + placement.pump1) / TWO_PI:.6e} Hz, "
          f"P2 = {(w0 + placement.pump2) / TWO_PI:.6e} Hz")
    print(f"target delta_beta = {rows[0].delta_beta:.6e} rad/m")
    if profile.illustrative:
        print("note: dispersion profile is illustrative, not measured fibre data")
    return 0


def cmd_analytic(args):
    cfg = _experiment_config(args)
    lw = cfg.linewidth
    alpha = cfg.visibility
    jitter = args.jitter_s if args.jitter_s is not None else 0.0
    tau = default_tau_axis(args.tau_max_s, args.tau_step_s)
    config = dict(cfg.to_mapping(), detunings_hz=list(args.detunings_hz),
                  tau_step=args.tau_step_s, tau_max=args.tau_max_s, numeric=args.numeric,
                  analytic_jitter=jitter)
    manifest = make_manifest("analytic", config, cfg.seed)
    curves = []
    for det in args.detunings_hz:
        curve = g2_cross_analytic(lw, TWO_PI * det, alpha, tau, jitter=jitter)
        curve.params["detuning_hz"] = det
        curves.append(curve)
        if args.numeric:
            spec = ResonatorSpec(linewidth=lw)
            jsa = apply_envelope_offset(build_ring_jsa(spec), TWO_PI * det)
            state = apply_fbs_two_photon(TwoPhotonState.from_jsa(jsa), cfg.fbs)
            num = g2_numeric(state, tau)
            num.params["detuning_hz"] = det
            curves.append(num)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "analytic.csv"
    write_curves_csv(curves, csv_path, manifest["config_hash"])
    json_path = _csv_to_json(csv_path, manifest["config_hash"])
    write_manifest(manifest, out, [csv_path, json_path])
    return 0


def cmd_simulate(args):
    cfg = _experiment_config(args)
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    config = cfg.to_mapping()
    manifest = make_manifest("simulate", config, int(cfg.seed))
    manifest["mode"] = args.mode
    runner = simulate_run if args.mode == "cross" else simulate_autocorrelation
    result = runner(cfg, threads=args.threads)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ev_path = out / "events.txt"
    write_events(result.events, ev_path)
    hist_path = out / "histogram.csv"
    write_histogram_csv(result.histogram, hist_path, manifest["config_hash"])
    json_path = _csv_to_json(hist_path, manifest["config_hash"])
    manifest["derived"] = {"pair_rate": cfg.effective_pair_rate,
                           "multi_pair_parameter": cfg.multi_pair_parameter,
                           "pair_rate_calibrated": cfg.pair_rate is None,
                           "flags": result.flags}
    write_manifest(manifest, out, [ev_path, hist_path, json_path])
    h = result.histogram
    print(" ".join(f"{k}={h.total(k)}" for k in h.counts))
    return 0


def _load_run(run_dir):
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"{run_dir} has no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    cfg = ExperimentConfig.from_mapping(manifest["config"])
    mode = manifest.get("mode", "cross")
    events = read_events(run_dir / "events.txt")
    hist = histograms_from_events(events, cfg, mode)
    return manifest, cfg, mode, hist


def _analyse(cfg, mode, hist, jitter, weighting="poisson"):
    if mode == "auto":
        curve = normalize_autocorrelation(hist, autocorrelation_baseline_factor(cfg))
        peak, err = bunching_peak(curve)
        return curve, {"bunching_peak": peak, "bunching_peak_err": err}
    curve = normalize_histogram(hist, weighting=weighting)
    a_r, s_r, _ = raw_visibility(curve)
    fit = fit_beating(curve, jitter=jitter, weighting=weighting)
    return curve, {"alpha_r": a_r, "alpha_r_err": s_r,
                   "alpha_f": fit.params["visibility"], "alpha_f_err": fit.errors["visibility"],
                   "fit_detuning_hz": fit.params["detuning"] / TWO_PI,
                   "fit_linewidth_hz": fit.params["linewidth"] / TWO_PI,
                   "bandwidth_hz": curve.reference.params["linewidth"] / TWO_PI,
                   "bandwidth_err_hz": curve.reference.errors["linewidth"] / TWO_PI,
                   "chi2_red": fit.chi2_red, "flags": ";".join(fit.flags), "fit": fit}


def cmd_fit(args):
    if args.run_dir:
        manifest_in, cfg, mode, hist = _load_run(args.run_dir)
        inputs = [args.run_dir]
        jitter = args.jitter_in_fit
    elif args.histogram:
        hist = read_histogram_csv(args.histogram, offsync_windows=args.offsync_windows)
        cfg, mode, inputs, jitter = None, "cross", [args.histogram], args.jitter_in_fit
    else:
        raise ConfigError("fit needs --run-dir or --histogram")
    config = {"jitter_in_fit": jitter, "weighting": args.weighting,
              "source_config": cfg.to_mapping() if cfg else None}
    manifest = make_manifest("fit", config, args.seed, inputs)
    curve, summary = _analyse(cfg, mode, hist, jitter, args.weighting)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    h = manifest["config_hash"]
    if "fit" in summary:
        fit = summary["fit"]
        fit.provenance["manifest_sha256"] = h
        (out / "fit.kv").write_text(fit.to_kv())
        csv_path = out / "fit.csv"
        csv_path.write_text(f"# manifest_sha256={h}\n{fit.csv_header()}\n{fit.csv_row()}\n")
        outputs += [out / "fit.kv", csv_path, _csv_to_json(csv_path, h)]
    norm_path = out / "normalized.csv"
    _write_rows(norm_path, ["tau_s", "on", "on_err", "off", "off_err"],
                zip(curve.tau.tolist(), curve.on.tolist(), curve.errors.tolist(),
                    curve.off.tolist(), curve.off_errors.tolist()), h)
    outputs += [norm_path, _csv_to_json(norm_path, h)]
    write_manifest(manifest, out, outputs)
    for k, v in summary.items():
        if k != "fit":
            print(f"{k} = {v}")
    return 0


def cmd_report(args):
    runs = [_load_run(d) for d in args.run_dirs]
    config = {"runs": [m["config_hash"] for m, *_ in runs], "jitter_in_fit": args.jitter_in_fit}
    manifest = make_manifest("report", config, args.seed, args.run_dirs)
    h = manifest["config_hash"]
    table, beating, bunching = [], [], []
    for (m, cfg, mode, hist), run_dir in zip(runs, args.run_dirs):
        jitter = cfg.jitter_sigma if args.jitter_in_fit is None else args.jitter_in_fit
        curve, s = _analyse(cfg, mode, hist, jitter)
        det = cfg.detuning / TWO_PI
        if mode == "auto":
            table.append([det, mode, "", "", "", "", s["bunching_peak"], s["bunching_peak_err"],
                          m["config_hash"]])
            bunching += [[det, t, v, e] for t, v, e in zip(curve.tau.tolist(), curve.on.tolist(),
                                                       curve.errors.tolist())]
        else:
            table.append([det, mode, s["alpha_r"], s["alpha_r_err"], s["alpha_f"],
                          s["alpha_f_err"], "", "", m["config_hash"]])
            beating += [[det, t, on, e, off] for t, on, e, off in
                     zip(curve.tau.tolist(), curve.on.tolist(), curve.errors.tolist(),
                         curve.off.tolist())]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for name, header, rows in (
        ("report.csv", ["detuning_hz", "mode", "alpha_r", "alpha_r_err", "alpha_f", "alpha_f_err",
                        "bunching_peak", "bunching_peak_err", "run_config_hash"], table),
        ("beating.csv", ["detuning_hz", "tau_s", "normalized", "error", "reference"], beating),
        ("bunching.csv", ["detuning_hz", "tau_s", "normalized", "error"], bunching),
    ):
        path = out / name
        _write_rows(path, header, rows, h)
        outputs += [path, _csv_to_json(path, h)]
    write_manifest(manifest, out, outputs)
    for row in table:
        print(",".join(f"{v:.4g}" if isinstance(v, float) else str(v) for v in row[:8]))
    return 0


COMMANDS = {"design": cmd_design, "analytic": cmd_analytic, "simulate": cmd_simulate,
            "fit": cmd_fit, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InvalidParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FreqHomError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
