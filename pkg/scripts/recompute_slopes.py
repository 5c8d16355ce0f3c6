""" Re-derives the update-cost slopes from a bench.csv file, independently of
    the ccrtrack package, and compares them with the ones in bench.json. """

import argparse
import json
from pathlib import Path

import numpy as np
import pandas as pd


def get_config() -> argparse.Namespace:
    parser = argparse.ArgumentParser()
    parser.add_argument("--report", type=Path, default=Path("report"), help="Directory holding bench.csv and bench.json")
    parser.add_argument("--phase", type=str, default="update")
    parser.add_argument("--tolerance", type=float, default=1e-6)

    return parser.parse_args()


def recompute_slopes(samples: pd.DataFrame, phase: str = "update") -> dict:
    medians = samples[samples["phase"] == phase].groupby(["method", "d"])["nanos"].median().reset_index()
    slopes = {}
    for method, rows in medians.groupby("method"):
        if len(rows) < 2:
            slopes[method] = None
            continue
        slope, _ = np.polyfit(np.log(rows["d"].to_numpy(float)), np.log(rows["nanos"].to_numpy(float)), 1)
        slopes[method] = float(slope)
    return slopes


def main():
    config = get_config()
    slopes = recompute_slopes(pd.read_csv(config.report / "bench.csv"), config.phase)
    reported = json.loads((config.report / "bench.json").read_text())["slopes"]

    mismatched = False
    for method, slope in slopes.items():
        expected = reported.get(method)
        if slope is None or expected is None:
            agree = slope is None and expected is None
        else:
            agree = abs(slope - expected) <= config.tolerance
        mismatched |= not agree
        print(f"{method}: recomputed={slope} reported={expected} {'ok' if agree else 'MISMATCH'}")

    raise SystemExit(1 if mismatched else 0)


if __name__ == "__main__":
    main()
