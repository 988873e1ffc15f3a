"""Timing sweep over noss and observation count; writes cost_ratio.csv.

Equivalent to ``gckf bench`` with every architecture and several M values.

    python3 scripts/cost_sweep.py --nos 1000 --out runs/bench
"""

import sys

from gckf.cli import main

if __name__ == "__main__":
    defaults = [
        "bench", "--nos", "1000", "--noss-list", "2,5,10,20,50",
        "--arch", "II,ELSD_FN,ELSD_FC", "--obs-list", "10,100,500", "--out", "runs/bench",
    ]
    sys.exit(main(defaults + sys.argv[1:]))
