"""Full driving experiment: simulate, fit, compare. Outputs land in runs/driving by default."""
import sys

from run_experiment import cli

if __name__ == "__main__":
    sys.exit(cli("driving"))
