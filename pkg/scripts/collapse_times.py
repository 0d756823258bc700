"""Median collapse time against series resistance for both rate models."""
import argparse
from pathlib import Path

import numpy as np

from dpcollapse import io
from dpcollapse.config import load_config, shipped_config
from dpcollapse.montecarlo import SeedPolicy, run_ensemble
from dpcollapse.scenario import TimeGrid


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("out/collapse_times"))
    ap.add_argument("--trajectories", type=int, default=10_000)
    ap.add_argument("--resistances", type=float, nargs="+",
                    default=[1e2, 3e2, 1e3, 3e3, 1e4, 2.5e4])
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    base = load_config(shipped_config("fig4_r1k.cfg"))
    rows = {"R_ohm": [], "median_smeared_s": [], "median_parameter_free_s": []}
    for r in args.resistances:
        doc = load_config(shipped_config("fig4_r1k.cfg"), [f"circuit.R={r}"])
        rows["R_ohm"].append(r)
        for kind in ("smeared", "parameter_free"):
            sc = doc.scenario(kind).replace(grid=TimeGrid.from_horizon(40e-6, 2))
            s = run_ensemble(sc, None, args.trajectories, SeedPolicy(base.simulation().master_seed))
            rows[f"median_{kind}_s"].append(s.median_collapse_time)
        print(f"R = {r:8.0f} ohm: smeared {rows['median_smeared_s'][-1] * 1e6:7.3f} us,"
              f" parameter free {rows['median_parameter_free_s'][-1] * 1e6:7.3f} us")
    io.write_table(args.out / "collapse_times", rows, io.provenance(base.config_hash))
    r = np.asarray(rows["R_ohm"])
    io.write_svg(args.out / "collapse_times", [{
        "x": np.log10(r), "xlabel": "log10 R (ohm)", "ylabel": "median collapse (us)",
        "series": {k: 1e6 * np.asarray(v) for k, v in rows.items() if k != "R_ohm"}}])


if __name__ == "__main__":
    main()
