"""Voxel refinement of the rigid-shift energy: sphere against its radial
quadrature and the mirror cylinder against the closed-form coefficient."""
import argparse

import numpy as np

from dpcollapse.dp_numeric import (
    MassBody, QuadratureConfig, dp_energy_levels, fit_quadratic_coefficient, sphere_oracle,
)
from dpcollapse.physics import dp_quadratic_coefficient
from dpcollapse.presets import MIRROR


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--voxels", type=int, default=64)
    ap.add_argument("--levels", type=int, default=4)
    args = ap.parse_args()
    q = QuadratureConfig(args.voxels, args.levels, tolerance=1.0)
    for d in (0.05, 0.3, 1.0):
        oracle = sphere_oracle(1.0, 1.0, d)
        _, levels = dp_energy_levels([MassBody.sphere(1.0, 1.0)], (0.0, 0.0, d), q)
        errs = "  ".join(f"{n}^3 {100 * (v / oracle - 1):+.2f}%" for n, v in levels)
        print(f"sphere d = {d:4.2f} R: {errs}")
    body = MassBody.cylinder(MIRROR.radius, MIRROR.thickness, MIRROR.density)
    s = MIRROR.thickness * np.array([1 / 200, 1 / 150, 1 / 100, 1 / 75, 1 / 50])
    closed = dp_quadratic_coefficient(None, MIRROR)
    for n in (16, 32):
        fit = fit_quadratic_coefficient([body], s, QuadratureConfig(n))
        print(f"mirror {n}^3: k = {fit.k:.4e} J/m^2 ({fit.k / closed:.3f} of the closed form,"
              f" fit residual {100 * fit.rel_max:.2f}%)")


if __name__ == "__main__":
    main()
