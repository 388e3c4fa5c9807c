"""Track an index for several cardinalities and print an R^2 table.

Without ``--data`` a synthetic 31-stock panel stands in for the OR-library
Hang Seng file.
"""

import argparse

from sparsum.tracker import TrackConfig, load_dataset, prices_to_returns, synthetic_panel, track_many


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", help="OR-library indtrack file or returns CSV")
    ap.add_argument("--k", type=int, nargs="+", default=[5, 15, 25, 31])
    ap.add_argument("--s", type=float, default=0.0)
    ap.add_argument("--time-limit", type=float, default=60.0)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)

    ds = load_dataset(args.data) if args.data else prices_to_returns(synthetic_panel())
    cfg = TrackConfig(s=args.s, time_limit=args.time_limit)
    print(f"{ds.source_id}: m={ds.m}, t={ds.t}, s={args.s}")
    print(f"{'k':>4} {'nnz':>4} {'R2 (oos)':>9} {'status':>10} {'note':>10}")
    for r in track_many(ds, args.k, cfg, jobs=args.jobs):
        note = "non-unique" if r.non_unique else ""
        print(f"{r.k:>4} {r.nonzeros:>4} {r.r2_oos:>9.3f} {r.report.status.value:>10} {note:>10}")


if __name__ == "__main__":
    main()
