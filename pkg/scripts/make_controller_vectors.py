"""Regenerate src/fcpsim/data/controller_vectors.csv.

Straight-line evaluation of the control law with the reference gains
(44.72, 7.22, 2.25, 1.12, d=10), no clamping. Deliberately does not import
fcpsim so the file can check any implementation.
"""

import csv
import random
from pathlib import Path

KP, KI, KD, KDD, D = 44.72, 7.22, 2.25, 1.12, 10
N = 200


def main():
    rng = random.Random(20240601)
    t, ts, es = 0.0, [], []
    rows = []
    e_i = 0.0
    for k in range(N):
        t += rng.choice((0.001, 0.001, 0.001, 0.0015, 0.002))
        e = rng.uniform(-0.05, 0.05)
        if k == 0:
            e_d = e_dd = 0.0
        else:
            e_i += (t - ts[-1]) * e
            e_d = (e - es[-1]) / (t - ts[-1])
            j = max(0, k - D)
            e_dd = (e - es[j]) / (t - ts[j])
        ts.append(t)
        es.append(e)
        rows.append((t, e, KP * e + KI * e_i + KD * e_d + KDD * e_dd))
    out = Path(__file__).resolve().parents[1] / "src" / "fcpsim" / "data" / "controller_vectors.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "e", "expected_v"])
        for r in rows:
            w.writerow([repr(x) for x in r])


if __name__ == "__main__":
    main()
