"""Run the limits sweep and write CSV; extra arguments are passed to `corrsbl limits`.

Example: python scripts/run_limits.py --config configs/limits.cfg --out limits.csv
"""
import sys

from corrsbl.cli import main

if __name__ == "__main__":
    sys.exit(main(["limits", *sys.argv[1:]]))
