#!/usr/bin/env python3
"""Residual table for orthogonal nonnegative factorization on synthetic data.

Thin wrapper over `penorth bench table-onmf`; every flag passes through.
Defaults run n=200, r=600, k=5 at xi in {0, 0.01, 0.1} with 5 seeds per
cell and report the output residual against the generating factor's own
residual. Examples:

    python3 scripts/run_table_onmf.py --xi 0.0 --seeds 10
    python3 scripts/run_table_onmf.py --n 500 --r 1000 --workers 4 --out onmf_table.json
"""

import sys

from penorth.cli import main

if __name__ == "__main__":
    main(["bench", "table-onmf", *sys.argv[1:]])
