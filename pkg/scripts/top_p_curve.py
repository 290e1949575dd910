"""Accuracy as a function of the candidate-set size p for the clustered pipeline.

    python3 scripts/top_p_curve.py --seeds 0 1 2 --threshold-km 25
"""

from __future__ import annotations

import argparse
import sys
import tempfile
from pathlib import Path

import numpy as np

from geoloc.evaluation import engine_factory, sweep
from geoloc.pipeline import PipelineConfig
from geoloc.synthetic import SyntheticSpec, generate_synthetic, load_bundle, write_bundle


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--p", type=int, nargs="+", default=[1, 5, 10, 25, 50, 100, 200])
    ap.add_argument("--K", type=int, default=100)
    ap.add_argument("--no-rerank", action="store_true")
    ap.add_argument("--threshold-km", type=float, default=25.0)
    ap.add_argument("--sigma-km", type=float, default=50.0)
    args = ap.parse_args(argv)

    configs = [PipelineConfig("cluster", not args.no_rerank, p, K=args.K) for p in args.p]
    curves = []
    with tempfile.TemporaryDirectory() as tmp:
        for seed in args.seeds:
            spec = SyntheticSpec(seed=seed, sigma_km=args.sigma_km)
            bundle = load_bundle(write_bundle(generate_synthetic(spec), Path(tmp) / f"s{seed}"))
            make = engine_factory(bundle.store, bundle.priors, bundle.cities, seed=seed)
            reps = sweep(configs, make, bundle.query_ids, bundle.query_vectors, bundle.truth)
            curves.append([r.at(args.threshold_km) for r in reps])
            bundle.close()

    curves = np.array(curves)
    print(f"p,mean_acc@{args.threshold_km:g}km,min,max")
    for p, col in zip(args.p, curves.T):
        print(f"{p},{col.mean():.4f},{col.min():.4f},{col.max():.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
