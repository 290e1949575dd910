"""Ablation sweep over pipeline variants on several synthetic seeds.

Prints one CSV row per (seed, variant) followed by a per-variant mean, and
writes the same table to --out.

    python3 scripts/run_ablation.py --seeds 0 1 2 3 4 --out results/ablation.csv
"""

from __future__ import annotations

import argparse
import csv
import sys
import tempfile
from pathlib import Path

import numpy as np
import yaml

from geoloc.cli import expand_grid
from geoloc.evaluation import THRESHOLDS_KM, engine_factory, sweep
from geoloc.synthetic import SyntheticSpec, generate_synthetic, load_bundle, write_bundle

HERE = Path(__file__).resolve().parent


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", default=str(HERE.parent / "configs" / "ablation_grid.yaml"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--sigma-km", type=float, default=50.0)
    ap.add_argument("--n-reference", type=int, default=10_000)
    ap.add_argument("--n-query", type=int, default=500)
    ap.add_argument("--out", default=None, help="CSV output path")
    args = ap.parse_args(argv)

    with open(args.grid, encoding="utf-8") as fh:
        configs = expand_grid(yaml.safe_load(fh))
    header = ["seed", "label"] + [f"acc@{t:g}km" for t in THRESHOLDS_KM]
    rows = []
    with tempfile.TemporaryDirectory() as tmp:
        for seed in args.seeds:
            spec = SyntheticSpec(seed=seed, sigma_km=args.sigma_km, n_reference=args.n_reference,
                                 n_query=args.n_query)
            bundle = load_bundle(write_bundle(generate_synthetic(spec), Path(tmp) / f"s{seed}"))
            make = engine_factory(bundle.store, bundle.priors, bundle.cities, seed=seed)
            for rep in sweep(configs, make, bundle.query_ids, bundle.query_vectors, bundle.truth):
                rows.append([seed, rep.label] + [rep.at(t) for t in THRESHOLDS_KM])
            bundle.close()

    labels = [c.label for c in configs]
    for label in labels:
        acc = np.array([r[2:] for r in rows if r[1] == label])
        rows.append(["mean", label] + acc.mean(axis=0).tolist())

    out = open(args.out, "w", newline="") if args.out else None
    try:
        for sink in filter(None, (sys.stdout, out)):
            w = csv.writer(sink, lineterminator="\n")
            w.writerow(header)
            w.writerows([r[:2] + [f"{x:.4f}" for x in r[2:]] for r in rows])
    finally:
        if out:
            out.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
