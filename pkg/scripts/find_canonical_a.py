"""Scan a upward on a 1e-3 grid and print the first value passing the assumption checker."""
import argparse
import json

from logcircle.lab_cli import HORIZON_LABEL, check_dynamical_assumptions, find_passing_a
from logcircle.map_core import CircleMap, ExperimentProfile


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--L", type=float, default=200.0)
    ap.add_argument("--start", type=float, default=0.3)
    ap.add_argument("--horizon", type=int, default=1000)
    args = ap.parse_args()
    profile = ExperimentProfile.practical(args.L)
    base = CircleMap(0.0, args.L)
    a = find_passing_a(base, profile, args.horizon, grid=1000, start=args.start)
    out = {"L": args.L, "start": args.start, "horizon": args.horizon, "label": HORIZON_LABEL, "a": a}
    if a is not None:
        out["a"] = round(a, 3)
        out["verdict"] = check_dynamical_assumptions(base.with_a(a), profile, args.horizon).to_dict()
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
