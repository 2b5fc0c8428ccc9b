"""Clustered environments plus leave-one-environment-out on the UCI tables.

The CSVs must already be in the data directory (see README):

    python3 scripts/run_real.py --data-dir data/
"""

import sys

from cglearn.cli import main

if __name__ == "__main__":
    status = main(["run", "--scenario", "real-regression", "--trials", "10",
                   "--output", "results/real-regression", *sys.argv[1:]])
    if status == 0:
        status = main(["run", "--scenario", "real-classification", "--trials", "10",
                       "--output", "results/real-classification", *sys.argv[1:]])
    sys.exit(status)
