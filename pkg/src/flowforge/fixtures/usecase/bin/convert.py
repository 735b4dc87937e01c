#!/usr/bin/env python3
"""Mesh format converter stand-in: meshv1 text in, xdmfv1 text out.

Refuses input without the meshv1 magic; failure-path tests rely on the
nonzero exit.
"""

import argparse
import sys


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--mesh", required=True)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    with open(args.mesh, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("meshv1 "):
        print("convert: %s is not a meshv1 file" % args.mesh, file=sys.stderr)
        return 2

    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("xdmfv1 from=[%s]\n" % lines[0])
        for line in lines[1:]:
            fh.write("cell %s\n" % line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
