"""Minimal and mountain-pass branches over a lambda grid below the threshold.

Writes ``branches.csv`` (lambda,min_sup,min_energy,sec_sup,sec_level,sec_status)
and ``lambda_star.json`` into the output directory.
"""
import argparse
import logging
from pathlib import Path

import numpy as np

from pxlap.branches import bifurcation_scan, estimate_lambda_star
from pxlap.mesh import DomainSpec, build_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=201)
    ap.add_argument("--points", type=int, default=12)
    ap.add_argument("--out", default="results/bifurcation")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    grid = build_grid(DomainSpec(), args.n)
    est = estimate_lambda_star(grid)
    logging.info("lambda* in [%.6g, %.6g]", est.lo, est.hi)
    lams = np.linspace(0.05, 0.95, args.points) * est.lo
    table = bifurcation_scan(grid, lams, with_second=True, lambda_star_lo=est.lo)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "branches.csv").write_text(table.to_csv())
    (out / "lambda_star.json").write_text(est.to_json())
    for r in table.rows:
        sec = f"{r.sec_sup:.4g}" if r.sec_sup is not None else "-"
        logging.info("lambda=%8.3f  min_sup=%.4g  second=%s (%s)", r.lam, r.min_sup, sec,
                     r.sec_status)


if __name__ == "__main__":
    main()
