"""Two-feature demo: X1 causes Y, X2 is an effect whose slope changes sign
across environments. Prints the learned weights per method.
"""

import sys

from cglearn.cli import main

if __name__ == "__main__":
    sys.exit(main(["run", "--scenario", "two-feature-demo", "--methods", "erm", "cglearn", "irmv1",
                   "--trials", "50", "--output", "results/demo", *sys.argv[1:]]))
