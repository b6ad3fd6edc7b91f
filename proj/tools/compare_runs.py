#!/usr/bin/env python3
"""Render the summary.csv files of several run directories as one text table.

Usage: compare_runs.py RUN_DIR [RUN_DIR ...]

Rows are the losses of the runs, columns are clean accuracy followed by the
per-attack adversarial accuracies (percent).
"""

import csv
import sys
from pathlib import Path


def load_summary(run_dir: Path):
    path = run_dir / "summary.csv"
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) != 2:
        raise SystemExit(f"{path}: expected a header and one data row")
    header, data = rows
    return header, data


def main(argv):
    if len(argv) < 2:
        print(__doc__.strip(), file=sys.stderr)
        return 2

    tables = []
    columns = None
    for arg in argv[1:]:
        header, data = load_summary(Path(arg))
        if columns is None:
            columns = header
        elif header != columns:
            raise SystemExit(f"{arg}: attack columns differ from the first run")
        tables.append(data)

    names = ["loss"] + [c for c in columns[1:]]
    widths = [max(len(n), 8) for n in names]
    for row in tables:
        cells = [row[0]] + [f"{100 * float(v):.1f}" for v in row[1:]]
        for i, cell in enumerate(cells):
            widths[i] = max(widths[i], len(cell))

    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths))

    print(fmt(names))
    print(fmt(["-" * w for w in widths]))
    for row in tables:
        print(fmt([row[0]] + [f"{100 * float(v):.1f}" for v in row[1:]]))
    return 0


if __name__ == "__main__":
    raise SystemExit(main(sys.argv))
