"""Run the exp3 sweep and write CSV; extra arguments are passed to `corrsbl exp3`.

Example: python scripts/run_exp3.py --config configs/exp3.cfg --out exp3.csv
"""
import sys

from corrsbl.cli import main

if __name__ == "__main__":
    sys.exit(main(["exp3", *sys.argv[1:]]))
