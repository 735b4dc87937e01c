#!/usr/bin/env python3
"""Typesetting stand-in: binds macros and table into one artifact."""

import argparse


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--table", required=True)
    ap.add_argument("--macros", required=True)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    with open(args.macros, encoding="utf-8") as fh:
        macros = fh.read()
    with open(args.table, encoding="utf-8") as fh:
        table = fh.read()

    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("pdfv1\n")
        fh.write("%% macros\n")
        fh.write(macros)
        fh.write("%% table\n")
        fh.write(table)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
