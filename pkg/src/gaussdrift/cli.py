"""Command line front end: ``gaussdrift run|sweep|fit``.

Failures end with a single stderr line ``error: <category>: <message>`` and a
nonzero exit status:

    usage 2, config 3, io 4, integration 5, fit 6, internal 1
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .config import ConfigError, DEFAULTS, RunConfig, format_value, load_config
from .experiment import CoherenceSeries, InsufficientDataError, fit_decay, run_experiment

log = logging.getLogger("gaussdrift")

EXIT = {"usage": 2, "config": 3, "io": 4, "integration": 5, "fit": 6, "internal": 1}
SERIES_HEADER = "time,coherence,stderr"
SUMMARY_HEADER = "delta_x,gamma,gamma_stderr,r_squared,n_used_realizations"
MANIFEST = "manifest.txt"
_SERIES_RE = re.compile(r"series_dx(.+)\.csv$")


class CliError(Exception):
    def __init__(self, category: str, message: str):
        self.category = category
        super().__init__(message)


def num(x) -> str:
    """Shortest round-trip text for a float; never locale dependent."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def dx_label(dx: float) -> str:
    text = repr(float(dx))
    return text[:-2] if text.endswith(".0") else text


# ---------------------------------------------------------------------------
# files

def write_series(path: Path, series: CoherenceSeries) -> None:
    lines = [SERIES_HEADER]
    for t, v, s in zip(series.times, series.values, series.stderr):
        lines.append(f"{num(t)},{num(v)},{num(s)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_series(path: Path) -> CoherenceSeries:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError("io", f"cannot read {path}: {exc.strerror or exc}") from None
    rows = [ln for ln in text.splitlines() if ln.strip()]
    if not rows or rows[0].replace(" ", "") != SERIES_HEADER:
        raise CliError("io", f"{path}: expected header '{SERIES_HEADER}'")
    data = []
    for i, ln in enumerate(rows[1:], start=2):
        parts = ln.split(",")
        if len(parts) != 3:
            raise CliError("io", f"{path}:{i}: expected 3 columns")
        try:
            data.append([float(p) for p in parts])
        except ValueError:
            raise CliError("io", f"{path}:{i}: non-numeric value") from None
    arr = np.array(data, dtype=float).reshape(-1, 3)
    if arr.shape[0] > 1 and np.any(np.diff(arr[:, 0]) <= 0):
        raise CliError("io", f"{path}: times must be strictly increasing")
    return CoherenceSeries(arr[:, 0], arr[:, 1], arr[:, 2], 0)


def summary_line(dx, fit, n_used) -> str:
    if fit is None:
        return f"{num(dx)},nan,nan,nan,{n_used}"
    return f"{num(dx)},{num(fit.gamma)},{num(fit.gamma_stderr)},{num(fit.r_squared)},{n_used}"


def write_manifest(path: Path, entries: list[tuple[str, str]]) -> None:
    path.write_text("".join(f"{k} = {v}\n" for k, v in entries), encoding="utf-8")


def read_manifest(path: Path) -> dict:
    out = {}
    try:
        text = path.read_text(encoding="utf-8")
    except OSError:
        return out
    for ln in text.splitlines():
        if "=" in ln and not ln.lstrip().startswith("#"):
            k, v = ln.split("=", 1)
            out[k.strip()] = v.strip()
    return out


_FIG3 = """\
# coherence against time for each separation
set terminal pngcairo size 900,600
set output 'coherence.png'
set datafile separator ','
set key top right
set logscale y
set xlabel 'time (oscillator periods)'
set ylabel 'coherence'
plot {plots}
"""

_FIG4 = """\
# decay constant against separation, with a quadratic guide through the first point
set terminal pngcairo size 900,600
set output 'decay_constants.png'
set datafile separator ','
set key top left
set xlabel 'separation (oscillator lengths)'
set ylabel 'decay constant (per period)'
dx0 = {dx0}
g0 = {g0}
plot 'summary.csv' every ::1 using 1:2:3 with yerrorbars title 'fitted', \\
     g0 * (x / dx0)**2 with lines dashtype 2 title 'quadratic'
"""


def write_gnuplot(out: Path, points) -> None:
    plots = ", \\\n     ".join(
        f"'series_dx{dx_label(p.delta_x)}.csv' every ::1 using 1:2 with lines title 'dx = {dx_label(p.delta_x)}'"
        for p in points if p.ensemble is not None)
    (out / "coherence.gp").write_text(_FIG3.format(plots=plots or "1/0 notitle"), encoding="utf-8")
    ref = next((p for p in points if p.fit is not None and p.delta_x > 0 and p.fit.gamma > 0), None)
    dx0, g0 = (ref.delta_x, ref.fit.gamma) if ref else (1.0, 0.0)
    (out / "decay_constants.gp").write_text(_FIG4.format(dx0=num(dx0), g0=num(g0)),
                                            encoding="utf-8")


# ---------------------------------------------------------------------------
# commands

def _resolve(args) -> tuple[RunConfig, int]:
    cfg = load_config(args.config) if args.config else DEFAULTS
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.out is not None:
        changes["output_dir"] = args.out
    if args.threads is not None:
        changes["threads"] = args.threads
    elif cfg.threads == 0 and os.environ.get("GAUSSDRIFT_THREADS"):
        raw = os.environ["GAUSSDRIFT_THREADS"]
        try:
            changes["threads"] = int(raw)
        except ValueError:
            raise ConfigError("constraint", f"GAUSSDRIFT_THREADS: not an integer: {raw!r}",
                              key="threads") from None
    cfg = cfg.replace(**changes) if changes else cfg
    return cfg, cfg.resolved_threads()


def _output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError("io", f"cannot create output directory {out}: {exc.strerror or exc}") from None
    return out


def _simulate(args, dx_list) -> int:
    cfg, threads = _resolve(args)
    out = _output_dir(cfg)
    t0 = time.perf_counter()
    started = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    points = run_experiment(cfg, dx_list, threads)
    wall = time.perf_counter() - t0

    summary = [SUMMARY_HEADER]
    results = []
    for p in points:
        label = dx_label(p.delta_x)
        n_used = p.ensemble.n_used if p.ensemble else 0
        if p.ensemble is not None:
            write_series(out / f"series_dx{label}.csv", p.ensemble.series)
        summary.append(summary_line(p.delta_x, p.fit, n_used))
        results.append((f"result.dx{label}.n_used_realizations", str(n_used)))
        if p.ensemble is not None:
            results.append((f"result.dx{label}.failed_realizations", str(len(p.ensemble.failures))))
            for key, val in p.ensemble.stats.items():
                results.append((f"result.dx{label}.{key}", str(val)))
        if p.fit is not None:
            results.append((f"result.dx{label}.gamma", num(p.fit.gamma)))
            results.append((f"result.dx{label}.fit_window", f"{num(p.fit.fit_window[0])}, "
                                                            f"{num(p.fit.fit_window[1])}"))
        if p.error:
            results.append((f"result.dx{label}.error", p.error))
    (out / "summary.csv").write_text("\n".join(summary) + "\n", encoding="utf-8")

    manifest = [("command", args.command), ("code_version", __version__),
                ("numba", "on" if _kernels.NUMBA_ENABLED else "off"), ("seed", str(cfg.master_seed)),
                ("threads", str(threads)), ("started_utc", started), ("wall_time_s", f"{wall:.3f}")]
    manifest += [(f"config.{k}", v) for k, v in cfg.items()]
    manifest += results
    write_manifest(out / MANIFEST, manifest)
    if args.gnuplot:
        write_gnuplot(out, points)

    failed = [p for p in points if p.fit is None]
    if failed:
        worst = failed[0]
        category = "integration" if worst.ensemble is None else "fit"
        raise CliError(category, f"{len(failed)} of {len(points)} separations produced no fit; "
                                 f"dx={dx_label(worst.delta_x)}: {worst.error}")
    for p in points:
        log.info("dx=%s gamma=%.6g +- %.2g r2=%.4f", dx_label(p.delta_x), p.fit.gamma,
                 p.fit.gamma_stderr, p.fit.r_squared)
    return 0


def cmd_run(args) -> int:
    if args.dx is None:
        cfg, _ = _resolve(args)
        dx = cfg.delta_x_list[0]
    else:
        dx = args.dx
        if not (math.isfinite(dx) and dx >= 0):
            raise CliError("usage", f"--dx must be finite and >= 0, got {dx!r}")
    return _simulate(args, [dx])


def cmd_sweep(args) -> int:
    return _simulate(args, None)


def cmd_fit(args) -> int:
    rows = [SUMMARY_HEADER]
    failures = []
    for name in args.csv:
        path = Path(name)
        m = _SERIES_RE.search(path.name)
        dx = float(m.group(1)) if m else math.nan
        series = read_series(path)
        manifest = read_manifest(path.parent / MANIFEST)
        n_used = manifest.get(f"result.dx{dx_label(dx)}.n_used_realizations", "") if m else ""
        floor = float(manifest.get("config.noise_floor", DEFAULTS.noise_floor))
        try:
            fit = fit_decay(series, floor)
        except InsufficientDataError as exc:
            failures.append(f"{path.name}: {exc}")
            fit = None
        rows.append(summary_line(dx, fit, n_used))
    text = "\n".join(rows) + "\n"
    if args.out:
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "summary.csv").write_text(text, encoding="utf-8")
        except OSError as exc:
            raise CliError("io", f"cannot write {out / 'summary.csv'}: {exc.strerror or exc}") from None
    sys.stdout.write(text)
    if failures:
        raise CliError("fit", f"{len(failures)} of {len(args.csv)} series produced no fit; {failures[0]}")
    return 0


# ---------------------------------------------------------------------------
# entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="run configuration file (flat key = value)")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="master seed (overrides master_seed)")
    common.add_argument("--threads", type=int, help="worker threads, 0 = one per CPU")
    common.add_argument("--gnuplot", action="store_true", help="also write gnuplot scripts")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="gaussdrift", description="Gaussian-operator decoherence experiments")
    p.add_argument("--version", action="version", version=f"gaussdrift {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    r = sub.add_parser("run", parents=[common], help="simulate a single separation")
    r.add_argument("--dx", type=float, help="separation (default: first entry of delta_x_list)")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("sweep", parents=[common], help="simulate every entry of delta_x_list")
    s.set_defaults(func=cmd_sweep)
    f = sub.add_parser("fit", parents=[common], help="re-fit existing series CSV files")
    f.add_argument("csv", nargs="+")
    f.set_defaults(func=cmd_fit)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.threads is not None and args.threads < 0:
            raise CliError("usage", "--threads must be >= 0")
        return args.func(args)
    except CliError as exc:
        category, message = exc.category, str(exc)
    except ConfigError as exc:
        category, message = "config", str(exc)
    except OSError as exc:
        category, message = "io", f"{exc.filename or ''}: {exc.strerror or exc}".lstrip(": ")
    except Exception as exc:  # noqa: BLE001 - last-resort category for the exit line
        category, message = "internal", f"{type(exc).__name__}: {exc}"
    message = " ".join(message.split())
    print(f"error: {category}: {message}", file=sys.stderr)
    return EXIT[category]


if __name__ == "__main__":
    sys.exit(main())
