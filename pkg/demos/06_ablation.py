"""Why the interaction grid matters: a task decided by same-position matches.

Every pair shares exactly one planted word. It counts as a match only when
the word sits at the same position in both sentences. A model that only
sees the [CLS] vectors has to squeeze that comparison through attention;
the interaction grid lays it out cell by cell.

Takes about a minute per seed. Pass seeds as arguments, e.g.
``python3 demos/06_ablation.py 0 1 2``.
"""

import sys
from pathlib import Path

from cirn.config import load
from cirn.experiments import format_ablation_table, run_ablation

seeds = [int(s) for s in sys.argv[1:]] or [0]
run = load(str(Path(__file__).resolve().parent.parent / "configs" / "position_match.json"))
table = run_ablation(run, seeds)
print(format_ablation_table(table, seeds))
