"""Command-line front end.

Every command takes its parameters from a YAML run configuration
(``--config``, defaults otherwise) with a few flags overriding the run
group. The worker count (``--parallel``) is not part of the configuration:
results do not depend on it. Exit codes: 0 success, 1 validation error, 2 runtime or fit failure,
3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .archive import ArchiveError, read_archive, write_archive
from .coefficients import (
    sql_optimum,
    stroboscopic_noise_budget,
)
from .config import PRESETS, ConfigError, RunConfig, preset
from .estimation import DegenerateInputError, NonpositivePNError, squeezing_metric
from .fits import (
    FitError,
    fit_exponential_decay,
    fit_gaussian_profile,
    fit_mors_polarization,
    fit_noise_vs_power,
    fit_sinusoid,
    r_squared,
)
from .rng import RecordStream, derive_seed
from .simulator import (
    SimulationError,
    correlated_pair_covariance,
    css_projection_noise,
    simulate_batch,
)
from .spin_dynamics import spin_temperature, mors_spectrum
from .tomography import (
    gap_squeezing_sweep,
    phase_sweep,
    scan_1d,
    scan_duration_estimate,
    scan_positions,
    write_csv,
    write_json,
)

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3
MORS_NOISE_LABEL = 0x3025


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


# ---------------------------------------------------------------------------
# helpers


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig.default()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "bins", None) is not None:
        changes["analysis.n_bins_b"] = args.bins
    return cfg.replace(**changes) if changes else cfg


def _workers(args) -> int:
    """Worker processes; an execution setting kept out of the configuration snapshot."""
    n = getattr(args, "parallel", None)
    if n is None:
        return 1
    if n < 1:
        raise ConfigError("parallel: must be >= 1")
    return n


def _out_dir(args, cfg: RunConfig) -> Path:
    return Path(args.out) if getattr(args, "out", None) else Path(cfg.data["out_dir"])


def _emit(cfg: RunConfig, out: Path, stem: str, rows=None, report=None):
    written = []
    if rows is not None and cfg.data["emit"]["csv"]:
        written.append(write_csv(out / f"{stem}.csv", rows))
    if report is not None and cfg.data["emit"]["json"]:
        written.append(write_json(out / f"{stem}.json", report))
    for path in written:
        print(f"wrote {path}")


def _fmt(value, spec=".6g"):
    return "nan" if value is None or (isinstance(value, float) and math.isnan(value)) \
        else format(value, spec)


# ---------------------------------------------------------------------------
# commands


def cmd_config(args) -> int:
    cfg = preset(args.preset)
    if args.out:
        print(f"wrote {cfg.save(args.out)}")
    else:
        sys.stdout.write(cfg.to_yaml())
    return EXIT_OK


def budget_rows(cfg: RunConfig) -> list[dict]:
    strobo = cfg.stroboscopic()
    sn_scale = float(cfg.data["budget"]["sn_scale"])
    en = float(cfg.data["stroboscopic"]["electronic_noise_snu"])
    rows = []
    for d in cfg.data["budget"]["duty_cycles"]:
        b = stroboscopic_noise_budget(strobo.replace(duty_cycle=float(d)), sn_scale, en)
        rows.append({"duty_cycle": float(d), "kappa2": strobo.kappa2, **b.to_dict()})
    return rows


def cmd_budget(args) -> int:
    cfg = _load_config(args)
    rows = budget_rows(cfg)
    sql = sql_optimum()
    print(f"{'D':>6} {'SN':>10} {'PN':>10} {'BAN':>10} {'EN':>10} {'total':>10}")
    for r in rows:
        print(f"{r['duty_cycle']:>6.3f} {r['sn']:>10.5g} {r['pn']:>10.5g} {r['ban']:>10.5g} "
              f"{r['en']:>10.5g} {r['total']:>10.5g}")
    print(f"SQL: kappa^4 = {sql.kappa_opt**4:.4g}, noise/PN = {sql.variance_ratio:.5f}, "
          f"std ratio = {sql.std_ratio:.3f}")
    report = {"rows": rows, "sql": sql._asdict() | {"kappa4": sql.kappa_opt**4}}
    if args.out:
        _emit(cfg, Path(args.out), "budget", rows, report)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    if args.reps is not None:
        cfg = cfg.replace(**{"run.reps": args.reps})
    p = cfg.simulation_params()
    batch = simulate_batch(p, cfg.data["run"]["reps"], cfg.data["seed"],
                           n_workers=_workers(args))
    out = Path(args.out) if args.out else Path(cfg.data["out_dir"]) / "shots.jsonl"
    print(f"wrote {write_archive(out, batch, cfg)} ({len(batch)} records)")
    return EXIT_OK


def analyze_archive(archive, n_bins: int | None = None, n_blocks: int | None = None) -> dict:
    """Squeezing report for a decoded archive; ``n_bins`` truncates pulse B."""
    cfg = archive.config
    p = cfg.simulation_params()
    n_bins = cfg.data["analysis"]["n_bins_b"] if n_bins is None else n_bins
    n_blocks = cfg.data["analysis"]["n_blocks"] if n_blocks is None else n_blocks
    n_total = p.sequence.n_bins_b
    if n_bins is not None and not 1 <= n_bins <= n_total:
        raise ConfigError(f"bins: must lie in [1, {n_total}]")
    duration = (n_total if n_bins is None else n_bins) * p.sequence.bin_width
    pn_ref = None
    if cfg.data["analysis"]["pn_reference"] == "css":
        pn_ref = css_projection_noise(p, n_bins)
    res = squeezing_metric(archive.batch, p.shot_noise(duration), p.electronic(duration),
                           pn_ref=pn_ref, n_blocks=n_blocks, n_bins=n_bins)
    model = correlated_pair_covariance(p, n_bins)
    budget = stroboscopic_noise_budget(p.strobo, 1.0,
                                       float(cfg.data["stroboscopic"]["electronic_noise_snu"]))
    return {
        "n_records": len(archive),
        "n_bins_b": n_total if n_bins is None else n_bins,
        "config_sha256": cfg.sha256,
        "squeezing": res.to_dict(),
        "model": {"xi2_db": model.xi2_db(pn_ref), "var_a": model.var_a, "var_b": model.var_b,
                  "covariance": model.covariance, "alpha": model.alpha},
        "budget_pulse_a": budget.to_dict(),
    }


def cmd_analyze(args) -> int:
    archive = read_archive(args.archive)
    report = analyze_archive(archive, args.bins, args.blocks)
    sq = report["squeezing"]
    print(f"records: {report['n_records']}   pulse-B bins: {report['n_bins_b']}")
    print(f"xi^2 = {_fmt(sq['xi2'], '.4f')} +- {_fmt(sq['xi2_err'], '.4f')}  "
          f"({_fmt(sq['xi2_db'], '.2f')} +- {_fmt(sq['xi2_db_err'], '.2f')} dB)")
    print(f"alpha = {_fmt(sq['alpha'], '.4f')} +- {_fmt(sq['alpha_err'], '.4f')}")
    print(f"Var Q_A = {_fmt(sq['var_a'])}  Var Q_B = {_fmt(sq['var_b'])}  "
          f"Var(Q_B|Q_A) = {_fmt(sq['cond_var'])}")
    print(f"model xi^2 = {report['model']['xi2_db']:.2f} dB")
    if args.out:
        write_json(args.out, report)
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_scan(args) -> int:
    cfg = _load_config(args)
    s = cfg.data["scan"]
    reps = args.reps if args.reps is not None else s["reps_per_position"]
    n_scans = args.scans if args.scans is not None else s["n_scans"]
    duration = scan_duration_estimate(s["n_positions"], reps, s["per_rep_time_s"])
    print(f"estimated acquisition time per scan: {duration:.3g} s "
          f"({s['n_positions']} positions x {reps} reps x {s['per_rep_time_s'] * 1e3:.3g} ms)")
    result = scan_1d(cfg.simulation_params(), cfg.sample("scan"),
                     scan_positions(s["n_positions"], s["step_m"], 0.0), reps, n_scans,
                     cfg.data["seed"], rf_phase=s["rf_phase_rad"],
                     background_reps=s["background_reps"],
                     n_workers=_workers(args))
    summary = result.summary() | {"scan_duration_s": duration}
    print(f"center std: unconditional {result.std_uncond * 1e3:.3f} mm, "
          f"conditional {result.std_cond * 1e3:.3f} mm, improvement {result.improvement:.2f}")
    out = _out_dir(args, cfg)
    _emit(cfg, out, "scan_profile", result.table_rows())
    _emit(cfg, out, "scan_centers", result.center_rows())
    _emit(cfg, out, "scan_histogram", result.histogram_rows())
    _emit(cfg, out, "scan_summary", report=summary)
    return EXIT_OK


def cmd_phase_sweep(args) -> int:
    cfg = _load_config(args)
    ps = cfg.data["phase_sweep"]
    reps = args.reps if args.reps is not None else ps["reps"]
    phases = [math.radians(v) for v in ps["phases_deg"]]
    result = phase_sweep(cfg.simulation_params(), cfg.sample("phase_sweep"), phases, reps, cfg.data["seed"],
                         background_reps=ps["background_reps"],
                         n_workers=_workers(args))
    print(f"{'phase':>7} {'signal':>10} {'SNR':>7} {'SNR|A':>7} {'reduction':>9}")
    for r in result.rows():
        print(f"{r['phase_deg']:>7.1f} {r['signal']:>10.4g} {r['snr_uncond']:>7.3f} "
              f"{r['snr_cond']:>7.3f} {r['reduction']:>9.3f}")
    summ = result.summary()
    print(f"signal maximum at {_fmt(summ['phase_max_deg'], '.2f')} deg, R^2 = {_fmt(summ['r2'], '.5f')}")
    _emit(cfg, _out_dir(args, cfg), "phase_sweep", result.rows(), summ)
    return EXIT_OK


def cmd_gap_sweep(args) -> int:
    cfg = _load_config(args)
    gs = cfg.data["gap_sweep"]
    reps = args.reps if args.reps is not None else gs["reps"]
    points = gap_squeezing_sweep(cfg.simulation_params(), gs["gaps_s"], reps, cfg.data["seed"],
                                 n_blocks=cfg.data["analysis"]["n_blocks"],
                                 n_workers=_workers(args))
    rows = [{"gap_s": pt.gap, "xi2_db": pt.xi2_db, "xi2_db_err": pt.xi2_db_err,
             "predicted_db": pt.predicted_db} for pt in points]
    for r in rows:
        print(f"gap {r['gap_s'] * 1e6:7.1f} us: {r['xi2_db']:6.2f} +- {r['xi2_db_err']:.2f} dB "
              f"(model {r['predicted_db']:.2f})")
    _emit(cfg, _out_dir(args, cfg), "gap_sweep", rows, {"points": rows, "reps": reps})
    return EXIT_OK


def cmd_mors(args) -> int:
    cfg = _load_config(args)
    pol = args.polarization if args.polarization is not None else cfg.data["ensemble"]["polarization"]
    spin = cfg.data["ensemble"]["spin"]
    larmor = args.larmor_hz if args.larmor_hz is not None else cfg.data["ensemble"]["larmor_hz"]
    pop = spin_temperature(pol, spin)
    comps, freqs, mag = mors_spectrum(pop, larmor, args.quad_split_hz, args.linewidth_hz)
    if args.noise > 0:
        z = RecordStream().normals(derive_seed(cfg.data["seed"], MORS_NOISE_LABEL), mag.size)
        mag = mag + args.noise * mag.max() * z
    fit = fit_mors_polarization(freqs, mag, larmor, args.quad_split_hz, spin=spin)
    rows = [{"frequency_hz": float(f), "magnitude": float(m)} for f, m in zip(freqs, mag)]
    report = {"input_polarization": pol, "populations": pop.to_dict(),
              "components": [{"m": c.m, "frequency_hz": c.frequency, "amplitude": c.amplitude}
                             for c in comps],
              "fit": fit.to_dict()}
    print(f"fitted polarization {fit['polarization']:.5f} +- {fit.error('polarization'):.5f} "
          f"(input {pol})")
    _emit(cfg, _out_dir(args, cfg), "mors", rows, report)
    return EXIT_OK


def _read_columns(path, n_min: int) -> list[np.ndarray]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if rows:
        try:
            [float(v) for v in rows[0]]
        except ValueError:
            rows = rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric data ({exc})") from exc
    if data.ndim != 2 or data.shape[1] < n_min:
        raise ConfigError(f"{path}: expected at least {n_min} numeric columns")
    return [data[:, j] for j in range(data.shape[1])]


def cmd_fit(args) -> int:
    cols = _read_columns(args.data, 2)
    x, y = cols[0], cols[1]
    sigma = cols[2] if len(cols) > 2 else None
    if args.model == "decay":
        fit = fit_exponential_decay(x, y, sigma)
    elif args.model == "noise-power":
        fit = fit_noise_vs_power(x, y, eta=args.eta, sigma=sigma)
    elif args.model == "gaussian":
        fit = fit_gaussian_profile(x, y, sigma)
    elif args.model == "sinusoid":
        fit = fit_sinusoid(np.radians(x) if args.degrees else x, y)
    else:
        fit = fit_mors_polarization(x, y, args.larmor_hz, args.quad_split_hz, spin=args.spin,
                                    sigma=sigma)
    report = fit.to_dict()
    if args.model == "sinusoid":
        report["r2"] = r_squared(fit)
    for name in fit.names:
        print(f"{name} = {fit[name]:.8g} +- {_fmt(fit.error(name), '.3g')}")
    if args.out:
        write_json(args.out, report)
        print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qmit", description="Entanglement-enhanced RF magnetometry toolkit")
    parser.add_argument("--version", action="version", version=f"qmit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, *, reps=True, bins=False, parallel=True):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--seed", type=int, help="override the base seed")
        p.add_argument("--out", help="output file or directory")
        if reps:
            p.add_argument("--reps", type=int, help="override the repetition count")
        if bins:
            p.add_argument("--bins", type=int, help="use only the first N bins of pulse B")
        if parallel:
            p.add_argument("--parallel", type=int, help="worker processes")
        return p

    p = sub.add_parser("config", help="write a preset configuration")
    p.add_argument("--preset", choices=PRESETS, default="squeezing")
    p.add_argument("--out", help="YAML file to write (stdout otherwise)")
    p.set_defaults(func=cmd_config)

    p = common(sub.add_parser("budget", help="noise budget per duty cycle"),
               reps=False, parallel=False)
    p.set_defaults(func=cmd_budget)

    p = common(sub.add_parser("simulate", help="simulate shots into an archive"))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="squeezing report for a shot archive")
    p.add_argument("archive")
    p.add_argument("--bins", type=int, help="use only the first N bins of pulse B")
    p.add_argument("--blocks", type=int, help="number of error blocks")
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(func=cmd_analyze)

    p = common(sub.add_parser("scan", help="repeated 1D localization scans"))
    p.add_argument("--scans", type=int, help="override the number of scans")
    p.set_defaults(func=cmd_scan)

    p = common(sub.add_parser("phase-sweep", help="signal and SNR against RF phase"))
    p.set_defaults(func=cmd_phase_sweep)

    p = common(sub.add_parser("gap-sweep", help="squeezing against the gap duration"))
    p.set_defaults(func=cmd_gap_sweep)

    p = common(sub.add_parser("mors", help="synthesize and fit a MORS spectrum"),
               reps=False, parallel=False)
    p.add_argument("--polarization", type=float)
    p.add_argument("--larmor-hz", type=float)
    p.add_argument("--quad-split-hz", type=float, default=1.2e3)
    p.add_argument("--linewidth-hz", type=float, default=300.0)
    p.add_argument("--noise", type=float, default=0.0, help="relative Gaussian noise")
    p.set_defaults(func=cmd_mors)

    p = sub.add_parser("fit", help="fit a model to CSV columns x, y[, sigma]")
    fits = p.add_subparsers(dest="model", required=True, parser_class=_Parser)
    for name, text in (("decay", "exponential decay A0 exp(-t/T1)"),
                       ("noise-power", "offset + linear + quadratic in kappa^2"),
                       ("gaussian", "Gaussian profile"),
                       ("sinusoid", "sinusoid against phase"),
                       ("mors", "MORS spectrum polarization")):
        q = fits.add_parser(name, help=text)
        q.add_argument("data", help="CSV file")
        q.add_argument("--out", help="JSON report path")
        q.set_defaults(func=cmd_fit, eta=1.0, degrees=False)
        if name == "noise-power":
            q.add_argument("--eta", type=float, default=1.0)
        if name == "sinusoid":
            q.add_argument("--degrees", action="store_true")
        if name == "mors":
            q.add_argument("--larmor-hz", type=float, required=True)
            q.add_argument("--quad-split-hz", type=float, required=True)
            q.add_argument("--spin", type=int, default=4)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ArchiveError as exc:
        print(f"error: archive: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NonpositivePNError, DegenerateInputError, FitError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, SimulationError, ValueError) as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (RuntimeError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
