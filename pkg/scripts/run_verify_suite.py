#!/usr/bin/env python3
"""Run the three-index verification over the standard model suite and print
one line per configuration. Writes reports under --out (default ./suite_out)."""

import argparse
import json
import os
import sys
import time

from bulkedge.cli import RunConfig, cmd_verify
from bulkedge.model import parse_config_text

SUITE = [
    ("hof13_gap1", 'model = "hofstadter"\np = 1\nq = 3\ngap = 1\n'),
    ("hof13_gap2", 'model = "hofstadter"\np = 1\nq = 3\ngap = 2\n'),
    ("hof15_gap1", 'model = "hofstadter"\np = 1\nq = 5\ngap = 1\n'),
    ("qwz_m-1", 'model = "qwz"\nm = -1.0\nmu = 0.0\n'),
    ("qwz_m+1", 'model = "qwz"\nm = 1.0\nmu = 0.0\n'),
    ("qwz_m+3", 'model = "qwz"\nm = 3.0\nmu = 0.0\n'),
]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="suite_out")
    args = parser.parse_args()
    failures = 0
    for name, text in SUITE:
        out = os.path.join(args.out, name)
        os.makedirs(out, exist_ok=True)
        cfg = RunConfig.from_dict(parse_config_text(text))
        t0 = time.perf_counter()
        code = cmd_verify(cfg, out)
        dt = time.perf_counter() - t0
        report = json.load(open(os.path.join(out, "verify_report.json")))
        idx = report.get("indices", {})
        print(f"{name:11s} exit={code} bulk={idx.get('bulk')} edge={idx.get('edge')} "
              f"gp={idx.get('gp')} agree={idx.get('agree')} [{dt:.0f}s]")
        failures += code != 0
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
