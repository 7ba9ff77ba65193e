"""``fluoro`` command-line entry point.

Every command writes its files into a staging directory inside ``--out`` and
moves them into place only after everything succeeded, so a failing run
leaves no partial output. Exit codes: 0 ok, 1 configuration, 2 I/O, 3 numerical.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import analysis as an
from . import plotting
from . import tomography as tomo
from .config import (ConfigError, chsh_settings_from, config_hash, emitter_from, interferometer_from,
                     load_config, rescale_flag, schema, trajectory_from)
from .franson import split_to_alice_bob
from .physics import (g2_function, g2_weak, liouvillian_g2, pair_rate, pair_rate_optimum, separable_chsh, visibility,
                      CorrelationCurve)
from .trajectories import simulate_detections

log = logging.getLogger("fluoro")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class Output:
    """Collects files in a staging directory and publishes them atomically-ish on commit."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        out_dir.mkdir(parents=True, exist_ok=True)
        self.stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.stage / name

    def json(self, name: str, data: dict, schema_name: str | None = None) -> None:
        if schema_name is not None:
            jsonschema.validate(data, schema(schema_name))
        with open(self.path(name), "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True, allow_nan=True)
            fh.write("\n")

    def rows(self, name: str, header, rows) -> None:
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])

    def commit(self) -> None:
        for name in self.files:
            os.replace(self.stage / name, self.out_dir / name)
        shutil.rmtree(self.stage, ignore_errors=True)

    def abort(self) -> None:
        shutil.rmtree(self.stage, ignore_errors=True)


def _params_dict(p) -> dict:
    return {"gamma_rad_per_s": p.gamma, "detuning_rad_per_s": p.delta, "rabi_rad_per_s": p.rabi, "s0": p.s0,
            "s": p.s}


# -- commands --------------------------------------------------------------------


def cmd_g2(cfg, out: Output, seed: int, simulate: bool, threads: int) -> None:
    p = emitter_from(cfg)
    a = cfg["analysis"]
    tau = np.linspace(0.0, a["span_s"], a["g2_points"])
    exact = liouvillian_g2(p, tau)
    weak = CorrelationCurve(tau, g2_weak(p, tau))
    exact.to_csv(out.path("g2_exact.csv"))
    weak.to_csv(out.path("g2_weak.csv"))
    summary = {"schema_version": 1, "params": _params_dict(p), "files": ["g2_exact.csv", "g2_weak.csv"],
               "simulation": None}
    hist = None
    if simulate:
        tc = trajectory_from(cfg, seed, p)
        stream = simulate_detections(tc, threads)
        sa, sb = split_to_alice_bob(stream, tc.seed)
        gate = tc.duty_cycle.window_index if tc.duty_cycle is not None else None
        hist = an.g2_histogram(sa, sb, a["bin_width_s"], a["span_s"], tc.duration, gate=gate)
        sim = {"detections": len(stream), "rate_per_s": stream.rate}
        if tc.bunching is not None:
            fit = an.fit_baseline(hist, 5.0 * p.lifetime)
            hist = hist.with_normalization(fit.normalization)
            sim["baseline"] = {"amplitude": fit.amplitude, "timescale_s": fit.timescale,
                               "amplitude_err": fit.amplitude_err, "timescale_err": fit.timescale_err}
        chi2, dof = an.chi2_per_dof(hist, g2_function(p, "exact", t_max=a["span_s"] + a["bin_width_s"]))
        sim.update({"chi2_per_dof": chi2, "dof": dof, "g2_zero_bin": float(hist.g2[hist.zero_bin()])})
        hist.to_csv(out.path("g2_simulated.csv"))
        summary["files"].append("g2_simulated.csv")
        summary["simulation"] = sim
    plotting.plot_g2(out.path("g2.png"), tau, {"Bloch equations": exact.values, "weak drive": weak.values}, hist)
    out.json("g2.json", summary, "g2")


def cmd_visibility(cfg, out: Output, seed: int, simulate: bool, threads: int) -> None:
    a = cfg["analysis"]
    dt = a["visibility_delay_s"]
    grid = a["visibility_s0_grid"]
    rows = []
    for s0 in grid:
        p = emitter_from(cfg, s0)
        rows.append((float(s0), visibility(p, dt), separable_chsh(p, dt)))
    out.rows("visibility.csv", ["s0", "visibility", "separable_S"], rows)
    out.json("visibility.json", {"schema_version": 1, "delay_s": dt,
                                 "points": [{"s0": r[0], "visibility": r[1]} for r in rows]}, "visibility")
    plotting.plot_visibility(out.path("visibility.png"), [r[0] for r in rows], [r[1] for r in rows])


def cmd_chsh(cfg, out: Output, seed: int, simulate: bool, threads: int) -> None:
    p = emitter_from(cfg)
    tc = trajectory_from(cfg, seed, p)
    iface = interferometer_from(cfg)
    settings = chsh_settings_from(cfg)
    w = cfg["analysis"]["window_s"]
    res, _ = an.simulate_chsh(tc, iface, w, settings, psi_model=cfg["analysis"]["psi_model"], threads=threads)
    model = an.analytic_window_curve(p, iface, [w], rescale=rescale_flag(cfg))
    data = res.to_dict(_params_dict(p), [w], [res.S])
    data["analytic_S"] = float(model.S[0])
    out.json("chsh.json", data, "chsh")
    labels = ["a,b", "a',b", "a,b'", "a',b'"]
    plotting.plot_chsh(out.path("chsh.png"), labels, res.expectations, res.sigmas)


def cmd_scan_window(cfg, out: Output, seed: int, simulate: bool, threads: int) -> None:
    p = emitter_from(cfg)
    iface = interferometer_from(cfg)
    windows = np.asarray(cfg["analysis"]["windows_s"], dtype=float)
    model = an.analytic_window_curve(p, iface, windows, rescale=rescale_flag(cfg))
    cols = [windows, model.S, model.S_unscaled, model.g2_edge, model.g2_mean]
    header = ["window_s", "S_model", "S_unscaled", "g2_edge", "g2_mean"]
    data = model.to_dict(_params_dict(p))
    sim = None
    if simulate:
        tc = trajectory_from(cfg, seed, p)
        settings = chsh_settings_from(cfg)
        tables = an.simulate_setting_events(tc, iface, settings, cfg["analysis"]["psi_model"], threads)
        gate = tc.duty_cycle.window_index if tc.duty_cycle is not None else None
        sim = an.simulated_window_curve(tables, iface.peak_center, windows, settings, gate)
        cols += [sim.S, sim.sigma_S]
        header += ["S_simulated", "sigma_S_simulated"]
        data["simulation"] = sim.to_dict()
    out.rows("scan.csv", header, zip(*[np.asarray(c, dtype=float) for c in cols]))
    out.json("scan.json", data, "scan")
    plotting.plot_scan(out.path("scan.png"), windows, model.S, None if sim is None else sim.S,
                       None if sim is None else sim.sigma_S)


def _synthesize_records(cfg, seed: int, threads: int) -> list:
    """x/y-basis records from a simulated four-setting run (sigma_x at phase 0, sigma_y at pi/2)."""
    p = emitter_from(cfg)
    tc = trajectory_from(cfg, seed, p)
    iface = interferometer_from(cfg)
    settings = an.ChshSettings(0.0, math.pi / 2, 0.0, math.pi / 2)
    tables = an.simulate_setting_events(tc, iface, settings, cfg["analysis"]["psi_model"], threads)
    records = []
    for basis, table in zip(("xx", "yx", "xy", "yy"), tables):
        n = an.joint_counts(table, iface.peak_center, cfg["analysis"]["window_s"])
        e = an.expectation_joint(*n)
        records.append(tomo.MeasurementRecord(basis, e.value, float(e.n)))
    return records


def cmd_tomography(cfg, out: Output, seed: int, simulate: bool, threads: int) -> None:
    t = cfg["tomography"]
    p = emitter_from(cfg)
    if t["synthesize"]:
        records = _synthesize_records(cfg, seed, threads)
    else:
        records = tomo.load_records(t["records_path"])
    zz = t["sigma_zz"]
    if zz is None:
        zz = tomo.model_sigma_zz(p.gamma, p.delta, t["sigma_zz_window_s"], t["sigma_zz_delay_s"])
    settings = tomo.FitSettings(n_starts=t["n_starts"], seed=seed, pseudo_mode=t["pseudo_mode"])
    res = tomo.reconstruct(records, zz, t["n_zz"], settings, t["bootstrap_samples"], threads)
    data = res.to_dict()
    out.json("tomography.json", data, "tomography")
    out.rows("rho.csv", ["row", "col", "re", "im"],
             [(i, j, float(res.rho[i, j].real), float(res.rho[i, j].imag)) for i in range(4) for j in range(4)])
    plotting.plot_density(out.path("rho.png"), res.rho, list(tomo.BASIS_ORDER))


def cmd_pair_rate(cfg, out: Output, seed: int, simulate: bool, threads: int) -> None:
    p = emitter_from(cfg)
    g = p.gamma
    rep = pair_rate_optimum(g)
    grid = np.asarray(cfg["analysis"]["pair_rate_s0_grid"], dtype=float)
    rabi = g * np.sqrt(2.0 * grid)
    rates = np.asarray(pair_rate(g, rabi), dtype=float)
    out.rows("pair_rate.csv", ["s0", "rabi_rad_per_s", "pair_rate_per_s"], zip(grid, rabi, rates))
    out.json("pair_rate.json", {
        "schema_version": 1, "gamma_rad_per_s": g, "rabi_opt_rad_per_s": rep.rabi_opt, "s0_opt": rep.s0_opt,
        "np_max_per_s": rep.np_max, "window_s": rep.window, "rabi_opt_over_gamma": rep.rabi_opt / g,
        "np_max_over_gamma": rep.np_max / g,
    }, "pair_rate")
    plotting.plot_pair_rate(out.path("pair_rate.png"), grid, rates, rep.s0_opt, rep.np_max)


COMMANDS = {
    "g2": cmd_g2,
    "visibility": cmd_visibility,
    "chsh": cmd_chsh,
    "scan-window": cmd_scan_window,
    "tomography": cmd_tomography,
    "pair-rate": cmd_pair_rate,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fluoro", description="Entangled photon pairs from resonance fluorescence.")
    ap.add_argument("--version", action="version", version=f"fluoro {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, default=None, help="YAML/JSON configuration (defaults if omitted)")
        sp.add_argument("--out", type=Path, required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="overrides trajectory.seed")
        sp.add_argument("--simulate", action="store_true", help="add Monte Carlo results where optional")
        sp.add_argument("--threads", type=int, default=None, help="worker cap (env FLUORO_THREADS)")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def _threads(arg: int | None) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("FLUORO_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"FLUORO_THREADS must be an integer, got {env!r}")
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        threads = _threads(args.threads)
        seed = cfg["trajectory"]["seed"] if args.seed is None else args.seed
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        cfg["trajectory"]["seed"] = seed
    except ConfigError as exc:
        print(f"fluoro: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"fluoro: cannot read configuration: {exc}", file=sys.stderr)
        return EXIT_IO

    try:
        out = Output(args.out)
    except OSError as exc:
        print(f"fluoro: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        COMMANDS[args.command](cfg, out, seed, args.simulate, threads)
        meta = {"schema_version": 1, "command": args.command, "version": __version__, "seed": seed,
                "config_hash": config_hash(cfg), "simulate": bool(args.simulate), "config": cfg,
                "files": sorted(out.files)}
        out.json("run_metadata.json", meta, "run_metadata")
        stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        out.json("run_timestamp.json", {"schema_version": 1, "utc": stamp}, "run_timestamp")
        out.commit()
    except ConfigError as exc:
        out.abort()
        print(f"fluoro: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        out.abort()
        print(f"fluoro: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError, jsonschema.ValidationError) as exc:
        out.abort()
        print(f"fluoro: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BaseException:
        out.abort()
        raise
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
