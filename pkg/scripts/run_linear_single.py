"""Single-environment SEM runs with the data split into 3 and 5 batches.

    python3 scripts/run_linear_single.py --batches 3
"""

import sys

from cglearn.cli import main

if __name__ == "__main__":
    sys.exit(main(["run", "--scenario", "linear-single", "--batches", "3", "5",
                   "--trials", "50", "--output", "results/linear-single", *sys.argv[1:]]))
