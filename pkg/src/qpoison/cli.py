"""Command-line front end: ``qpoison <command> [options]``.

Exit status is 0 on success, 1 for usage errors and 2 for data or fit errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import DataError, FitError
from .charge_tomo import (GammaRateInputs, detect_jumps, estimate_gamma_rate, fit_tomography, read_scan_csv,
                          write_series_csv)
from .chipmodel import ConfigError, load_config
from .coincidence_stats import (background_rates, deconvolve, find_coincidences, rate_summary, read_rates_csv,
                                write_report_csv)
from .parity_decode import ParityDecoder, decode_trace, mean_periodogram, psd_gamma, write_psd_csv
from .parity_synth import (EVENT_TYPES, ChargeNoiseModel, EventRates, ReadoutModel, generate_events,
                           read_trace_csv, synthesize_trace)
from .phonon_mc import CalibrationError, InjectionPulse, simulate, with_footprints
from .qp_response import gamma_from_hits, write_gamma_csv

logger = logging.getLogger("qpoison")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p, out_default):
    p.add_argument("--config", type=Path, default=None, help="device TOML (default: bundled config)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path(out_default), help="output directory")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")


def build_parser():
    parser = _Parser(prog="qpoison", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate-phonons", help="phonon Monte Carlo for one injection pulse")
    _common(p, "phonons_out")
    p.add_argument("--amplitude", type=float, default=1e-3, help="pulse amplitude (V)")
    p.add_argument("--duration", type=float, default=10e-6, help="pulse duration (s)")
    p.add_argument("--injector", default=None)
    p.add_argument("--n-phonons", type=int, default=None)
    p.add_argument("--horizon", type=float, default=500e-6)
    p.add_argument("--islands", choices=("on", "off"), default=None, help="override the config island flag")
    p.add_argument("--footprint-area", type=float, default=None, help="override qubit footprints (m^2)")
    p.add_argument("--responsivity", type=float, default=1.0, help="Delta Gamma_1 per unit hit rate")
    p.add_argument("--bin", type=float, default=2e-6)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("synth", help="synthesize three-qubit parity traces")
    _common(p, "synth_out")
    p.add_argument("--rates", default="0,0,0,0,0,0,0", help="seven exclusive rates A,B,C,AB,BC,AC,ABC (1/s)")
    p.add_argument("--duration", type=float, default=100.0)
    p.add_argument("--dt-rep", type=float, default=10e-3)
    p.add_argument("--fidelity", type=float, default=0.9)
    p.add_argument("--sigma", type=float, default=0.6, help="readout Gaussian width (means at +-1)")
    p.add_argument("--offset-charge", type=float, nargs=3, default=(0.0, 0.0, 0.0), metavar=("QA", "QB", "QC"),
                   help="starting offset charges (e); 0 is the best-mapping point")
    p.add_argument("--diffusion", type=float, default=0.0, help="offset-charge diffusion (e/sqrt(s))")
    p.add_argument("--jump-rate", type=float, default=0.0, help="offset-charge jump rate (1/s)")

    p = sub.add_parser("analyze", help="decode, count coincidences and deconvolve")
    _common(p, "analyze_out")
    p.add_argument("trace", type=Path, nargs="?", help="trace CSV from synth")
    p.add_argument("--window", type=int, default=40)
    p.add_argument("--avg", type=int, default=40)
    p.add_argument("--dt-rep", type=float, default=None, help="repetition period (bypass mode; default 10 ms)")
    p.add_argument("--gamma-prior", type=float, default=None)
    p.add_argument("--threshold-fraction", type=float, default=0.5)
    p.add_argument("--no-mask", action="store_true")
    p.add_argument("--bypass-rates", type=Path, default=None, help="observed-rates CSV; skips decoding")

    p = sub.add_parser("psd", help="Lorentzian fit of parity-switching spectra")
    _common(p, "psd_out")
    p.add_argument("trace", type=Path)
    p.add_argument("--record-length", type=int, default=20000)
    p.add_argument("--model", choices=("exact", "lorentzian"), default="exact")

    p = sub.add_parser("tomo", help="offset-charge tomography fits and jump statistics")
    _common(p, "tomo_out")
    p.add_argument("scans", type=Path, nargs="+", help="scan CSVs (n_g_ext_e, P1) in time order")
    p.add_argument("--scan-period", type=float, default=28.0)
    p.add_argument("--jump-threshold", type=float, default=0.1)
    return parser


def _prepare_out(args, names):
    out = args.out
    targets = [out / n for n in names]
    existing = [t for t in targets if t.exists()]
    if existing and not args.force:
        raise UsageError(f"refusing to overwrite {existing[0]} (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return targets


def _load(args):
    if args.config is not None and not args.config.exists():
        raise UsageError(f"config file not found: {args.config}")
    return load_config(args.config)


def _manifest(args, inputs, outputs, started):
    return {
        "command": args.command,
        "config": str(args.config) if args.config else "<bundled default>",
        "seed": args.seed,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "wall_clock_s": round(time.perf_counter() - started, 3),
    }


def cmd_simulate_phonons(args, started):
    geometry, qubits, transport = _load(args)
    if args.islands is not None:
        geometry = geometry.with_islands(args.islands == "on")
    if args.footprint_area is not None:
        geometry = with_footprints(geometry, args.footprint_area)
    inj = args.injector or geometry.injector_sites[0].label
    names = ["hits.csv", "tallies.json"] + [f"gamma_{q}.csv" for q in geometry.qubit_labels]
    paths = _prepare_out(args, names)
    pulse = InjectionPulse(inj, args.amplitude, args.duration)
    hits = simulate(pulse, transport, geometry, args.horizon, args.seed, n_phonons=args.n_phonons, n_jobs=args.jobs)
    hits.to_csv(paths[0])
    hits.tallies_json(paths[1])
    for q, path in zip(geometry.qubit_labels, paths[2:]):
        t, g = gamma_from_hits(hits, q, args.responsivity, args.bin, t_max=args.horizon)
        f01 = qubits[q].f01 if q in qubits else 4.84e9
        write_gamma_csv(path, t, g, f01)
    print(json.dumps(hits.tallies(), sort_keys=True))
    return [], paths


def _parse_rates(text):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--rates must be seven comma-separated numbers, got {text!r}") from None
    if len(vals) != 7:
        raise UsageError("--rates needs seven values ordered A,B,C,AB,BC,AC,ABC")
    return EventRates(*vals)


def cmd_synth(args, started):
    rates = _parse_rates(args.rates)
    if args.config is not None:
        _load(args)
    paths = _prepare_out(args, ["trace.csv", "truth.csv"])
    readout = ReadoutModel({q: replace(r, sigma_even=args.sigma, sigma_odd=args.sigma)
                            for q, r in ReadoutModel().qubits.items()}, args.fidelity)
    charge = ChargeNoiseModel(diffusion_sigma=args.diffusion, jump_rate=args.jump_rate)
    ss = np.random.SeedSequence(args.seed)
    s_ev, s_tr = ss.spawn(2)
    events = generate_events(rates, args.duration, s_ev)
    trace = synthesize_trace(events, readout, charge, args.dt_rep, args.duration, s_tr, args.offset_charge)
    trace.to_csv(paths[0])
    trace.truth_to_csv(paths[1])
    print(f"{trace.n_shots} shots, truth flips per qubit {trace.truth_flip_counts().tolist()}")
    return [], paths


def cmd_analyze(args, started):
    if args.config is not None:
        _load(args)
    if args.bypass_rates is None and args.trace is None:
        raise UsageError("analyze needs a trace CSV or --bypass-rates")
    if args.window < 1 or args.avg < 1:
        raise UsageError("--window and --avg must be >= 1")
    if args.bypass_rates is not None:
        paths = _prepare_out(args, ["report.csv", "report.txt"])
        rates, sig = read_rates_csv(args.bypass_rates)
        dt_rep = args.dt_rep if args.dt_rep is not None else 10e-3
        coinc = None
        decon = deconvolve(rates, args.window * dt_rep, sig)
        inputs = [args.bypass_rates]
    else:
        trace = read_trace_csv(args.trace)
        paths = _prepare_out(args, ["report.csv", "report.txt", "digital_A.csv", "digital_B.csv", "digital_C.csv"])
        digitals, _ = decode_trace(trace, args.avg, gamma_prior=args.gamma_prior, mask=not args.no_mask,
                                   threshold_fraction=args.threshold_fraction)
        for d, path in zip(digitals, paths[2:]):
            d.to_csv(path)
        coinc = find_coincidences(digitals, args.window, trace.dt_rep)
        if np.any(coinc.tau[:3] == 0):
            raise DataError("no unmasked data on at least one qubit")
        decon = deconvolve(coinc)
        inputs = [args.trace]
    write_report_csv(paths[0], decon, coinc)
    bg, bgs = background_rates(decon.observed[:3], decon.delta_t)
    lines = [f"window {args.window} shots, delta_t {decon.delta_t:g} s, solver residual {decon.residual:.2e}"]
    for k, name in enumerate(EVENT_TYPES):
        lines.append(f"{name:>4}: observed {decon.observed[k]:.5g}  extracted {decon.rates[k]:.5g} "
                     f"+- {decon.sigmas[k]:.2g} 1/s")
    for k, name in enumerate(EVENT_TYPES[3:]):
        lines.append(f"{name:>4}: accidental background {bg[k]:.5g} 1/s")
    lines.append(rate_summary(decon).summary())
    paths[1].write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return inputs, paths


def cmd_psd(args, started):
    if args.config is not None:
        _load(args)
    if args.record_length < 2:
        raise UsageError("--record-length must be >= 2")
    trace = read_trace_csv(args.trace)
    fits, spectra, summaries = {}, [], {}
    for q, x in zip(trace.labels, trace.samples):
        ro = ParityDecoder(trace.dt_rep, gamma_prior=1.0).fit(x).readout_
        raw = np.where(x >= ro.midpoint, 1.0, -1.0)
        n = min(args.record_length, raw.size)
        recs = raw[: (raw.size // n) * n].reshape(-1, n)
        spectra.append(mean_periodogram(recs, trace.dt_rep))
        try:
            fit = psd_gamma(recs, trace.dt_rep, args.model)
        except FitError as exc:
            raise FitError(f"qubit {q}: {exc}") from exc
        fits[q] = {"Gamma_p": fit.Gamma_p, "Gamma_p_ci95": list(fit.ci95), "F": fit.F, "F_stderr": fit.F_stderr,
                   "n_records": fit.n_records, "record_length": fit.record_length, "Delta_t": fit.Delta_t}
        summaries[q] = fit.summary()
    paths = _prepare_out(args, [f"psd_{q}.csv" for q in trace.labels] + ["psd_fit.json"])
    for q in trace.labels:
        print(f"{q}: {summaries[q]}")
    for (f, S), path in zip(spectra, paths):
        write_psd_csv(path, f, S)
    paths[-1].write_text(json.dumps(fits, indent=2, sort_keys=True) + "\n")
    return [args.trace], paths


def cmd_tomo(args, started):
    if args.config is not None:
        _load(args)
    rows = []
    for path in args.scans:
        x, y = read_scan_csv(path)
        try:
            rows.append((path.name, fit_tomography(x, y)))
        except FitError as exc:
            raise FitError(f"{path}: {exc}") from exc
    paths = _prepare_out(args, ["tomo_fits.csv", "dng_series.csv", "jumps.json"])
    with open(paths[0], "w") as fh:
        fh.write("scan,d,nu,dng_e,dng_stderr_e,residual_norm\n")
        for name, r in rows:
            fh.write(f"{name},{r.d!r},{r.nu!r},{r.dng!r},{r.stderr[2]!r},{r.residual_norm!r}\n")
    times = np.arange(len(rows)) * args.scan_period
    dng = np.array([r.dng for _, r in rows])
    write_series_csv(paths[1], times, dng)
    summary = {"n_scans": len(rows)}
    if len(rows) >= 2:
        j = detect_jumps(times, dng, args.jump_threshold)
        summary.update(jump_count=j.count, span_s=j.span, jump_rate=j.rate, jump_rate_err=j.sigma)
        if j.count > 0:
            summary["gamma_rate"] = estimate_gamma_rate(GammaRateInputs(our_jump_rate=j.rate))
    paths[2].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for name, r in rows:
        print(f"{name}: d={r.d:.4f} nu={r.nu:.4f} dng={r.dng:.4f}(+-{r.stderr[2]:.2g}) e")
    return list(args.scans), paths


COMMANDS = {
    "simulate-phonons": cmd_simulate_phonons,
    "synth": cmd_synth,
    "analyze": cmd_analyze,
    "psd": cmd_psd,
    "tomo": cmd_tomo,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    started = time.perf_counter()
    try:
        inputs, outputs = COMMANDS[args.command](args, started)
    except UsageError as exc:
        print(f"qpoison {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FitError, ConfigError, CalibrationError, ValueError, KeyError, OSError) as exc:
        print(f"qpoison {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    manifest = _manifest(args, inputs, outputs, started)
    (args.out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
