#!/usr/bin/env python3
"""Solver stand-in.

Derives a deterministic result field from the converted mesh and
reports the degree-of-freedom count as a value output: num_dofs is the
line count of the input, written to the outputs.json manifest.
"""

import argparse
import json
import sys


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--mesh", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--manifest", default="outputs.json")
    args = ap.parse_args()

    with open(args.mesh, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("xdmfv1 "):
        print("simulate: %s is not an xdmfv1 file" % args.mesh, file=sys.stderr)
        return 2

    num_dofs = len(lines)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("vtkv1 dofs=%d\n" % num_dofs)
        for i, line in enumerate(lines[1:], start=1):
            fh.write("value %d %d\n" % (i, sum(line.encode("utf-8")) % 997))

    with open(args.manifest, "w", encoding="utf-8") as fh:
        json.dump({"num_dofs": num_dofs}, fh)
        fh.write("\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
