#!/usr/bin/env python3
"""
Build a panel of ADF statistics over d for several price files.

Usage:
    python scripts/adf_table.py <output.csv> <bars.csv> [<bars.csv> ...]

Each input is resampled to 10-minute bars and swept over d = 0.0, 0.1, ..., 1.0
on log close prices. The output has one row per file and one column per d,
plus the 5% critical value and the smallest passing d.

Examples:
    python scripts/adf_table.py table.csv data/rb.csv data/hc.csv
"""

import os
import sys

import pandas as pd

from ffdlab.errors import FfdlabError
from ffdlab.modules.market_data import load_csv, resample
from ffdlab.modules.stationarity import d_grid, d_sweep, sweep_table_row

PERIOD_MINUTES = 10
TAU = 1e-5


def sweep_file(path):
    """One table row for a price file."""
    series = resample(load_csv(path), PERIOD_MINUTES)
    rows = d_sweep(series.close, grid=d_grid(0.1), tau=TAU, log=True)
    return sweep_table_row(rows, os.path.splitext(os.path.basename(path))[0])


def build_table(paths):
    records = []
    for path in paths:
        try:
            records.append(sweep_file(path))
            print(f"  ✓ {path}")
        except FfdlabError as e:
            print(f"  ✗ {path}: {e}")
    return pd.DataFrame(records)


def main():
    if len(sys.argv) < 3:
        print(__doc__)
        sys.exit(1)

    output, paths = sys.argv[1], sys.argv[2:]
    missing = [p for p in paths if not os.path.exists(p)]
    if missing:
        print(f"Error: input not found: {', '.join(missing)}")
        sys.exit(1)

    print(f"Sweeping {len(paths)} file(s)")
    table = build_table(paths)
    if table.empty:
        print("Error: no file produced a sweep")
        sys.exit(1)

    table.to_csv(output, index=False, float_format="%.4f")
    print(f"\n✅ Wrote {len(table)} row(s) to {output}")


if __name__ == "__main__":
    main()
