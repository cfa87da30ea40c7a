# Regenerates case_study.csv (Python 3 standard library only).
import math
import random

rng = random.Random(20240611)
rows = []
for _ in range(1000):
    x1 = rng.gauss(0.0, 1.0)
    x2 = rng.uniform(-3.0, 3.0)
    x3 = rng.uniform(-1.0, 1.0)
    x4 = rng.uniform(-1.0, 1.0)
    mu = 1.0 + 0.5 * x1 + math.sin(x2) + math.tanh(2.0 * x3) * x4
    y = mu + rng.gauss(0.0, 0.4)
    rows.append((y, x1, x2, x3, x4))

with open("case_study.csv", "w") as f:
    f.write("y,x1,x2,x3,x4\n")
    for r in rows:
        f.write(",".join(repr(round(v, 6)) for v in r) + "\n")
