"""Recover y = 2.5*x1^2 + sin(x2) from noiseless samples and export the front.

    python scripts/recover_formula.py --out runs/recover --seed 0
"""

import argparse
import time
from pathlib import Path

import numpy as np

from symreg import Options, run
from symreg.fitting import Dataset
from symreg.io import export_hall_of_fame


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/recover"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--generations", type=int, default=200)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    X = rng.uniform(0.5, 3, size=(200, 2))
    y = 2.5 * X[:, 0] ** 2 + np.sin(X[:, 1])
    data = Dataset.from_arrays(X, y, fit_fraction=0.8, seed=args.seed, variable_names=("x1", "x2"))
    opts = Options(
        n_vars=2,
        n_islands=2,
        island_capacity=50,
        generations=args.generations,
        seed=args.seed,
        target_threshold=1e-6,
    )

    t0 = time.perf_counter()
    hof = run(opts, data, callback=lambda s: print(f"gen {s.generation}: best mare {s.hall_of_fame.best('mare'):.3e}") if s.generation % 10 == 0 else None)
    elapsed = time.perf_counter() - t0

    table, report = export_hall_of_fame(hof, args.out, data.variable_names)
    best = min(hof, key=lambda i: i.measures.mare)
    print(f"{len(hof)} expressions after {hof.generations} generations in {elapsed:.1f}s")
    print(f"best: {best.text}  (mare {best.measures.mare:.2e})")
    print(f"wrote {table} and {report}")


if __name__ == "__main__":
    main()
