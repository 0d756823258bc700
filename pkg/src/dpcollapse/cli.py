"""Command-line front end.

Exit codes: 0 success, 2 configuration or input schema error, 3 numerical
failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import curves as C
from . import io
from .config import ConfigError, ConfigDocument, load_config
from .physics import DomainError, decay_rate, dp_quadratic_coefficient, micro_enhancement

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class _Run:
    """Shared state of one invocation: config, output dir, format, files."""

    def __init__(self, args):
        self.args = args
        overrides = list(args.set or [])
        if args.seed is not None:
            overrides.append(f"simulation.master_seed={args.seed}")
        self.doc: ConfigDocument = load_config(args.config, overrides)
        self.out = Path(args.out)
        self.fmt = args.format
        self.files = []

    @property
    def seed(self) -> int:
        return self.doc.get("simulation", "master_seed")

    def meta(self, **extra):
        return io.provenance(self.doc.config_hash, self.seed, **extra)

    def ensure_out(self):
        self.out.mkdir(parents=True, exist_ok=True)

    def table(self, name, columns, **extra):
        self.ensure_out()
        self.files.append(io.write_table(self.out / name, columns, self.meta(**extra), self.fmt))

    def svg(self, name, panels, title=""):
        if self.args.svg:
            self.ensure_out()
            self.files.append(io.write_svg(self.out / name, panels, title))

    def finish(self, command):
        if self.files:
            io.write_manifest(self.out, self.meta(command=command), self.files)


# --------------------------------------------------------------------------
# subcommands


def cmd_validate(run: _Run) -> int:
    doc = run.doc
    print(f"config ok  hash={doc.config_hash}")
    for (section, key), v in sorted(doc.si.items()):
        if section in doc.sections:
            print(f"  {section}.{key} = {v!r}")
    return EXIT_OK


def cmd_dp_energy(run: _Run) -> int:
    doc, args = run.doc, run.args
    consts = doc.scenario().constants
    pz, mir = doc.piezo(), doc.mirror()
    model = doc.model("parameter_free")
    k = dp_quadratic_coefficient(pz, mir, consts)
    rows = {"k_J_per_m2": k,
            "k_piezo_J_per_m2": dp_quadratic_coefficient(pz, None, consts),
            "k_mirror_J_per_m2": dp_quadratic_coefficient(None, mir, consts)}
    print(f"k = {k:.6g} J/m^2  (piezo {rows['k_piezo_J_per_m2']:.6g}, "
          f"mirror {rows['k_mirror_J_per_m2']:.6g})")
    if args.ds is not None:
        ds = args.ds
        if ds < 0:
            raise DomainError("--ds must be non-negative")
        e_sm = k * ds * ds
        xi = float(micro_enhancement(ds, model.enhancement))
        gf = doc.get("model", "gamma_factor")
        rows.update({"ds_m": ds, "E_smeared_J": e_sm, "E_parameter_free_J": e_sm * xi,
                     "gamma_smeared_per_s": float(decay_rate(e_sm, gf, consts)),
                     "gamma_parameter_free_per_s": float(decay_rate(e_sm * xi, gf, consts))})
        print(f"ds = {ds:.6g} m: E_DP smeared {e_sm:.6g} J (Gamma {rows['gamma_smeared_per_s']:.6g}"
              f" 1/s), parameter-free {e_sm * xi:.6g} J (Gamma "
              f"{rows['gamma_parameter_free_per_s']:.6g} 1/s)")
    if args.numeric:
        from .dp_numeric import MassBody, QuadratureConfig, fit_quadratic_coefficient
        body = MassBody.cylinder(mir.radius, mir.thickness, mir.density)
        samples = mir.thickness * np.array([1 / 200, 1 / 150, 1 / 100, 1 / 75, 1 / 50])
        table = {"voxels_per_axis": [], "k_mirror_numeric_J_per_m2": [], "fit_rel_rms": []}
        n = args.voxels
        levels = [n >> i for i in range(args.levels - 1, -1, -1)]
        for nv in levels:
            fit = fit_quadratic_coefficient([body], samples, QuadratureConfig(nv))
            table["voxels_per_axis"].append(nv)
            table["k_mirror_numeric_J_per_m2"].append(fit.k)
            table["fit_rel_rms"].append(fit.rel_rms)
            print(f"  numeric mirror k at {nv}^3 voxels: {fit.k:.6g} J/m^2 "
                  f"(ratio to closed form {fit.k / rows['k_mirror_J_per_m2']:.4f})")
        run.table("dp_convergence", table)
    names = list(rows)
    run.table("dp_energy", {"quantity": np.arange(len(names)),
                            "value": [rows[n] for n in names]},
              quantities=" ".join(names))
    return EXIT_OK


def _curve_columns(sc):
    w = sc.weights
    n0, ndc = C.curve_zero(sc), C.curve_dark_count(sc)
    mean_dc = C.curve_mean_to_dc(sc, w)
    return {
        "t_s": sc.grid.centers,
        "ds_m": C.displacement_curve(sc).values,
        "survival": C.survival_on_grid(sc),
        "N_zero": n0.values,
        "N_dc": ndc.values,
        "N_sup": C.curve_superposed(sc, w).values,
        "N_mean_all": C.curve_mean_all(sc, w).values,
        "N_mean_to_dc": mean_dc.values,
        "p_to_mov": C.prob_to_mov_curve(sc, w).values,
        "dev_mean_to_dc": C.percent_deviation(mean_dc, n0).values * 100,
        "dev_dc": C.percent_deviation(ndc, n0).values * 100,
    }


def cmd_curves(run: _Run) -> int:
    sc = run.doc.scenario(run.args.model)
    cols = _curve_columns(sc)
    run.table("curves", cols, model=sc.model.kind)
    t_us = cols["t_s"] * 1e6
    run.svg("curves", [
        {"x": t_us, "series": {"mean to dc": cols["dev_mean_to_dc"], "dark count": cols["dev_dc"]},
         "ylabel": "deviation from zero curve (%)"},
        {"x": t_us, "series": {"displacement": cols["ds_m"] * 1e9},
         "ylabel": "displacement (nm)", "xlabel": "t (us)"},
    ], title=f"{sc.model.kind} model, R = {sc.circuit.series_resistance:g} Ohm")
    plateau = cols["ds_m"][-1]
    print(f"wrote {len(cols['t_s'])} bins; final displacement {plateau:.4g} m; "
          f"final survival {cols['survival'][-1]:.3g}")
    return EXIT_OK


def cmd_simulate(run: _Run) -> int:
    from .montecarlo import SeedPolicy, run_ensemble
    args = run.args
    sc = run.doc.scenario(args.model)
    n = args.trajectories or run.doc.get("simulation", "n_trajectories")
    summ = run_ensemble(sc, None, n, SeedPolicy(run.seed), workers=args.workers)
    ref = C.curve_mean_to_dc(sc)
    cols = {
        "t_s": sc.grid.centers,
        "N_mean_all": summ.mean_all.values, "se_mean_all": summ.mean_all.stderr,
        "N_mean_to_dc": summ.mean_to_dc.values, "se_mean_to_dc": summ.mean_to_dc.stderr,
        "N_mean_to_zero": summ.mean_to_zero.values, "se_mean_to_zero": summ.mean_to_zero.stderr,
        "N_mean_to_dc_analytic": ref.values,
        "N_dc": C.curve_dark_count(sc).values,
        "N_zero": C.curve_zero(sc).values,
    }
    n_mov, n_not, n_none = summ.outcome_counts
    run.table("summary", cols, model=sc.model.kind, n_trajectories=n, n_mov=n_mov,
              n_not_mov=n_not, n_none=n_none, w_not_mov=sc.weights.w_not_mov)
    if args.dump_trajectories:
        run.ensure_out()
        t_c = summ.collapse_times
        run.table("trajectories", {
            "seed_id": np.arange(n),
            "collapse_time_s": t_c,
            "outcome": np.select([summ.outcomes == "mov", summ.outcomes == "not_mov"], [1, 0], -1),
            "branch": (summ.branches == "mov").astype(int),
        }, outcome_codes="1=mov 0=not_mov -1=none", branch_codes="1=mov 0=not_mov")
        path = run.out / "trajectory_counts.npz"
        np.savez_compressed(path, counts=summ.counts, branches=summ.branches.astype(str),
                            dt=sc.grid.dt)
        run.files.append(path)
    med = summ.median_collapse_time
    print(f"outcomes: mov {n_mov}, not_mov {n_not}, none {n_none}; "
          f"median collapse time {med * 1e6:.4g} us")
    run.svg("summary", [{"x": sc.grid.centers * 1e6,
                         "series": {"simulated": cols["N_mean_to_dc"], "analytic": ref.values},
                         "ylabel": "mean to dc (1/s)", "xlabel": "t (us)"}])
    return EXIT_OK


def _grid_from_t(t):
    from .scenario import TimeGrid
    t = np.asarray(t, dtype=float)
    if t.size < 2:
        raise io.SchemaError("need at least two time bins")
    dt = t[1] - t[0]
    grid = TimeGrid(dt, t.size)
    if not np.allclose(grid.centers, t, rtol=1e-6, atol=1e-6 * dt):
        raise io.SchemaError("column 't_s' must hold uniform bin centres starting at dt/2")
    return grid


def cmd_estimate(run: _Run) -> int:
    from .curves import RateCurve
    from .estimator import bootstrap_bands, invert_mean_to_dc, model_goodness, smooth_rate
    args = run.args
    src = Path(args.source)
    cols, meta = io.read_table(src, ["t_s", "N_mean_to_dc", "N_dc", "N_zero"])
    grid = _grid_from_t(cols["t_s"])
    se = cols.get("se_mean_to_dc")
    mean = RateCurve(grid, cols["N_mean_to_dc"], se)
    dc, zero = RateCurve(grid, cols["N_dc"]), RateCurve(grid, cols["N_zero"])
    sc = run.doc.scenario().replace(grid=grid)
    w_nm = sc.weights.w_not_mov
    kw = {"max_rel_err": args.max_rel_err} if args.max_rel_err else {}
    est = invert_mean_to_dc(mean, dc, zero, w_nm, **kw)
    if args.window:
        est = smooth_rate(est, args.window)
    if args.bootstrap:
        npz = src.parent / "trajectory_counts.npz"
        if not npz.exists():
            raise io.SchemaError(f"bootstrap needs {npz} (run simulate --dump-trajectories)")
        with np.load(npz, allow_pickle=False) as data:
            counts, branches = data["counts"], data["branches"]
        est = bootstrap_bands(counts, branches, grid, dc, zero, w_nm, args.bootstrap,
                              seed=run.seed, estimate=est, **kw)
    nan = np.full(grid.n_bins, np.nan)
    run.table("estimate", {
        "t": grid.centers,
        "cumulative": est.cumulative,
        "rate": est.rate if est.rate is not None else nan,
        "mask": est.mask.astype(int),
        "ci_lo": est.ci_lower if est.ci_lower is not None else nan,
        "ci_hi": est.ci_upper if est.ci_upper is not None else nan,
    }, source=src.name)
    good = model_goodness(est, sc.model, sc)
    print(f"unmasked bins {int(est.mask.sum())}/{grid.n_bins} {est.masked_counts()}")
    print(f"goodness vs {sc.model.kind}: chi2 {good.statistic:.4g} over {good.n_bins} bins "
          f"(reduced {good.reduced:.4g})")
    if est.rate is not None:
        print(f"rate clip fraction {est.diagnostics['clip_fraction']:.3g}")
    return EXIT_OK


def cmd_tagg(run: _Run) -> int:
    from .montecarlo import SeedPolicy
    from .tagg import mz_curves, mz_mean_to_dc_plus, run_mz_ensemble
    args = run.args
    sc = run.doc.mz_scenario(inverted=True if args.inverted else None)
    dcp, n0, dcm = mz_curves(sc)
    ref = mz_mean_to_dc_plus(sc)
    cols = {"t_s": sc.grid.centers, "N_dc_plus": dcp.values, "N_zero": n0.values,
            "N_dc_minus": dcm.values, "N_mean_to_dc_plus": ref.values}
    extra = {"inverted": int(sc.inverted)}
    if args.trajectories:
        summ = run_mz_ensemble(sc, args.trajectories, SeedPolicy(run.seed))
        cols["N_mean_to_dc_plus_mc"] = summ.mean_to_dc_plus.values
        cols["se_mean_to_dc_plus_mc"] = summ.mean_to_dc_plus.stderr
        extra.update({f"n_{'plus' if b == '+' else 'minus' if b == '-' else b}": v
                      for b, v in summ.outcome_counts.items()})
        z = np.abs(summ.mean_to_dc_plus.values - ref.values) / summ.mean_to_dc_plus.stderr
        print(f"outcomes {summ.outcome_counts}; bins within 3 stderr: {np.mean(z <= 3):.4f}")
    run.table("tagg", cols, **extra)
    run.svg("tagg", [{"x": sc.grid.centers * 1e6,
                      "series": {"dc+": dcp.values, "zero": n0.values, "dc-": dcm.values,
                                 "mean to dc+": ref.values},
                      "ylabel": "rate (1/s)", "xlabel": "t (us)"}])
    print(f"wrote {sc.grid.n_bins} bins (inverted={sc.inverted})")
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "dp-energy": cmd_dp_energy, "curves": cmd_curves,
            "simulate": cmd_simulate, "estimate": cmd_estimate, "tagg": cmd_tagg}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="path to a .cfg file")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--svg", action="store_true", help="also write SVG charts")

    p = argparse.ArgumentParser(prog="dpcollapse", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check a config and print SI values")

    d = sub.add_parser("dp-energy", parents=[common], help="collapse energy and rate")
    d.add_argument("--ds", type=float, help="displacement in m")
    d.add_argument("--coefficient", action="store_true", help="print k only (default)")
    d.add_argument("--numeric", action="store_true", help="voxel cross-check of the mirror term")
    d.add_argument("--voxels", type=int, default=32)
    d.add_argument("--levels", type=int, default=3, help="refinement levels for --numeric")

    models = ("smeared", "parameter-free", "parameter_free", "custom")
    c = sub.add_parser("curves", parents=[common], help="expected detection-rate curves")
    c.add_argument("--model", choices=models)

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo trajectory ensemble")
    s.add_argument("--trajectories", type=int)
    s.add_argument("--model", choices=models)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--dump-trajectories", action="store_true")

    e = sub.add_parser("estimate", parents=[common], help="recover the cumulative decay")
    e.add_argument("--from", dest="source", required=True,
                   help="curves or summary table (t_s, N_mean_to_dc, N_dc, N_zero)")
    e.add_argument("--window", type=int, default=0, help="local-fit window for the rate")
    e.add_argument("--bootstrap", type=int, default=0, help="number of resamples")
    e.add_argument("--max-rel-err", type=float, default=0.0,
                   help="mask bins whose relative standard error exceeds this")

    t = sub.add_parser("tagg", parents=[common], help="two-mirror Mach-Zehnder variant")
    t.add_argument("--inverted", action="store_true")
    t.add_argument("--trajectories", type=int, default=0)
    return p


def main(argv=None) -> int:
    from .dp_numeric import ConvergenceError, FitError
    from .estimator import EstimationError
    from .scenario import QuadratureError

    args = build_parser().parse_args(argv)
    try:
        run = _Run(args)
        code = COMMANDS[args.command](run)
        run.finish(args.command)
        return code
    except (ConfigError, io.SchemaError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (QuadratureError, ConvergenceError, FitError, EstimationError,
            FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
