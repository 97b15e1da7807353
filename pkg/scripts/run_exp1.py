"""Run the exp1 sweep and write CSV; extra arguments are passed to `corrsbl exp1`.

Example: python scripts/run_exp1.py --config configs/exp1.cfg --out exp1.csv
"""
import sys

from corrsbl.cli import main

if __name__ == "__main__":
    sys.exit(main(["exp1", *sys.argv[1:]]))
