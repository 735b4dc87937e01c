#!/usr/bin/env python3
"""Macro file stand-in: turns run facts into TeX-style definitions."""

import argparse


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dofs", type=int, required=True)
    ap.add_argument("--size", type=float, required=True)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\\newcommand{\\numdofs}{%d}\n" % args.dofs)
        fh.write("\\newcommand{\\domainsize}{%r}\n" % args.size)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
