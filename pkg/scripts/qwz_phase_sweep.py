#!/usr/bin/env python3
"""Map the two-band model's phase diagram: bulk index against the mass
parameter. Transitions sit at m = -2, 0, 2; points too close to a closing
gap are reported as uncertified."""

import argparse

import numpy as np

from bulkedge.bulk import bulk_index
from bulkedge.errors import BulkEdgeError
from bulkedge.model import BlochSymbol, qwz


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--m-min", type=float, default=-3.0)
    parser.add_argument("--m-max", type=float, default=3.0)
    parser.add_argument("--steps", type=int, default=25)
    parser.add_argument("--out", default="qwz_phase.csv")
    args = parser.parse_args()
    rows = ["m,bulk_index,certified"]
    for m in np.linspace(args.m_min, args.m_max, args.steps):
        try:
            c = bulk_index(BlochSymbol(qwz(float(m))), 0.0, grid=(16, 16))
            rows.append(f"{m!r},{c},1")
            print(f"m={m:+.3f}  C={c:+d}")
        except BulkEdgeError as exc:
            rows.append(f"{m!r},,0")
            print(f"m={m:+.3f}  uncertified ({type(exc).__name__})")
    with open(args.out, "w") as fh:
        fh.write("\n".join(rows) + "\n")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
