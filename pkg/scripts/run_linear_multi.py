"""Multi-environment SEM sweep: all eight cases, ERM vs CGLearn vs IRMv1.

    python3 scripts/run_linear_multi.py --trials 50 --output results/linear-multi

Extra flags are passed through to ``cglearn run``.
"""

import sys

from cglearn.cli import main

if __name__ == "__main__":
    sys.exit(main(["run", "--scenario", "linear-multi", "--methods", "erm", "cglearn", "irmv1",
                   "--trials", "50", "--output", "results/linear-multi", *sys.argv[1:]]))
