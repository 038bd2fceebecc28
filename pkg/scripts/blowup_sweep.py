"""Blow-up times of the heat-plus-source problem against the scalar ODE bound."""
import argparse
import math

import numpy as np
from scipy.integrate import quad

from pxlap.blowup import blowup_box_grid, parabolic_blowup, principal_eigenvalue
from pxlap.mesh import DomainSpec, build_grid


def ode_time(lam, q, y0, eig):
    if y0 <= (eig / lam) ** (1 / (q - 1)):
        return math.inf
    return quad(lambda y: 1 / (lam * y ** q - eig * y), y0, math.inf)[0]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lambdas", default="0,10,25,50,100")
    ap.add_argument("--z0", type=float, default=10.0)
    ap.add_argument("--dt0", default="1e-3,1e-4,1e-5")
    args = ap.parse_args()

    grid = build_grid(DomainSpec(), 201)
    box, _ = blowup_box_grid(grid)
    eig = principal_eigenvalue(box)
    z0 = np.where(box.boundary, 0.0, args.z0)
    print(f"# principal eigenvalue of the box: {eig:.6g}")
    print("lambda,dt0,status,t_event,ode_bound,steps")
    for lam in map(float, args.lambdas.split(",")):
        for dt0 in map(float, args.dt0.split(",")):
            rep = parabolic_blowup(lam, z0, box, dt0=dt0)
            bound = ode_time(lam, box.q, args.z0, eig) if lam > 0 else math.inf
            print(f"{lam:g},{dt0:g},{rep.status},{rep.t_event},{bound:.6g},{len(rep.times) - 1}")


if __name__ == "__main__":
    main()
