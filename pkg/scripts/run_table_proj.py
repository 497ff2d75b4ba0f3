#!/usr/bin/env python3
"""Desk-scale recovery table for the nearest-point solver.

Thin wrapper over `penorth bench table-proj`; every flag passes through.
Defaults reproduce the n in {200, 500}, k in {5, 10}, xi in {0.5, 0.7, 0.9}
grid with 20 seeds per cell. Useful variations:

    python3 scripts/run_table_proj.py --xi 0.98 --xi 1.0
    python3 scripts/run_table_proj.py --n 2000 --k 10 --seeds 50 --workers 8
    python3 scripts/run_table_proj.py --out proj_table.json
"""

import sys

from penorth.cli import main

if __name__ == "__main__":
    main(["bench", "table-proj", *sys.argv[1:]])
