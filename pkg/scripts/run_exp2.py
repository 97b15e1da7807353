"""Run the exp2 sweep and write CSV; extra arguments are passed to `corrsbl exp2`.

Example: python scripts/run_exp2.py --config configs/exp2.cfg --out exp2.csv
"""
import sys

from corrsbl.cli import main

if __name__ == "__main__":
    sys.exit(main(["exp2", *sys.argv[1:]]))
