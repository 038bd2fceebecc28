"""Threshold bracket under mesh refinement, in 1D and (optionally) 2D."""
import argparse
import time

from pxlap.branches import estimate_lambda_star
from pxlap.mesh import DomainSpec, build_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="51,101,201,401")
    ap.add_argument("--tol", type=float, default=1e-3)
    ap.add_argument("--two-d", action="store_true", help="also run 2D on 11,21,41 nodes")
    args = ap.parse_args()

    runs = [(1, int(n)) for n in args.sizes.split(",")]
    if args.two_d:
        runs += [(2, n) for n in (11, 21, 41)]
    print("dim,n,lo,hi,rel_width,probes,stalled,seconds")
    for dim, n in runs:
        t0 = time.perf_counter()
        est = estimate_lambda_star(build_grid(DomainSpec(dimension=dim), n), tol=args.tol)
        print(f"{dim},{n},{est.lo:.8g},{est.hi:.8g},{est.rel_width:.3g},{len(est.trace)},"
              f"{len(est.stalled)},{time.perf_counter() - t0:.1f}")


if __name__ == "__main__":
    main()
