"""Run the experiment presets (Tests 7.1-7.6) through the command-line front end.

Usage: python scripts/presets.py 7.1 [7.2 ...] [--out results] [--workers 1]

Each preset is a ``convexcip sweep`` (or simulate + invert for 3-D) whose
per-value images, metrics and ``summary.csv`` land in ``<out>/test_<id>``.
"""

import argparse
import sys
from pathlib import Path

from convexcip import cli

PRESETS = {
    "7.1": [("Nt", "10,20,40", ["--phantom", "B", "--sigma", "0.01"])],
    "7.2": [("epsilon", "0.001,0.01,0.03,0.05,0.1",
             ["--phantom", "OmegaGlyph", "--sigma", "0.01"])],
    "7.3": [("lambda", "1,2,3,4,5", ["--phantom", "A", "--sigma", "0.01"])],
    "7.4": [("sigma", "0.01,0.03,0.05", ["--phantom", "SZ"])],
    "7.5": [("amplitude", "2,3,5,10", ["--phantom", "A", "--sigma", "0.01"]),
            ("amplitude", "2,3,5,10", ["--phantom", "SZ", "--sigma", "0.01"])],
}
LETTERS_3D = ("L", "K")


def run_sweeps(key, out, workers):
    for j, (axis, values, extra) in enumerate(PRESETS[key]):
        dest = out / f"test_{key}" / f"{axis}_{j}"
        code = cli.main(["sweep", "--axis", axis, "--values", values, "--out", str(dest),
                         "--workers", str(workers)] + extra)
        if code:
            return code
    return 0


def run_3d(out, N):
    for letter in LETTERS_3D:
        dest = out / "test_7.6" / letter
        common = ["--n", "3", "--N", str(N), "--phantom", letter, "--sigma", "0.01"]
        code = cli.main(["simulate", "--out", str(dest / "dataset.csv")] + common)
        code = code or cli.main(["invert", str(dest / "dataset.csv"), "--out", str(dest)]
                                + common)
        if code:
            return code
    return 0


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("tests", nargs="+", choices=sorted(PRESETS) + ["7.6"])
    p.add_argument("--out", default="results")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--N3", type=int, default=20, help="grid size per axis for 7.6")
    args = p.parse_args(argv)
    out = Path(args.out)
    for key in args.tests:
        code = run_3d(out, args.N3) if key == "7.6" else run_sweeps(key, out, args.workers)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
