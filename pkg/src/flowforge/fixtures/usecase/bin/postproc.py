#!/usr/bin/env python3
"""Postprocessing stand-in: tabulates a vtkv1 result as csv."""

import argparse
import sys


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--result", required=True)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    with open(args.result, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("vtkv1 "):
        print("postproc: %s is not a vtkv1 file" % args.result, file=sys.stderr)
        return 2

    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("index,value\n")
        for line in lines[1:]:
            parts = line.split()
            if len(parts) == 3 and parts[0] == "value":
                fh.write("%s,%s\n" % (parts[1], parts[2]))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
