"""
How many link rounds?
=====================

Sweep the number of propagation rounds M from 0 (no links) to 4 and write a
CSV ready for plotting, through the command-line entry point.
"""

import csv
import statistics
import tempfile
from collections import defaultdict
from pathlib import Path

from linkedrnn.cli import main

work = Path(tempfile.mkdtemp())
data = work / "synthetic.json"
table = work / "layers.csv"

main(["generate", "--out", str(data), "--seed", "0"])
main(["sweep", str(data), "--axis", "layers", "--max-layers", "4", "--seeds", "3",
      "--hidden", "32", "--lr", "0.01", "--out", str(table)])

by_m = defaultdict(list)
with table.open() as fh:
    for row in csv.DictReader(fh):
        by_m[int(row["layers"])].append(float(row["micro_f1"]))

for m, scores in sorted(by_m.items()):
    med = statistics.median(scores)
    print(f"M={m}  median micro-F1 {med:.3f}  " + "#" * round(40 * med))

print(f"table: {table}")
