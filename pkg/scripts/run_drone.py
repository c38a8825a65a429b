"""Full drone experiment: simulate, fit, compare. Outputs land in runs/drone by default."""
import sys

from run_experiment import cli

if __name__ == "__main__":
    sys.exit(cli("drone"))
