#!/usr/bin/env python3
"""Mesh generator stand-in.

Writes a text mesh whose node count grows with the domain size, so any
change to --size changes the output bytes.
"""

import argparse


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=float, required=True)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    nodes = max(3, int(round(args.size * 4)))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("meshv1 size=%r nodes=%d\n" % (args.size, nodes))
        for i in range(nodes):
            fh.write("node %d %.6f\n" % (i, i * args.size / nodes))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
