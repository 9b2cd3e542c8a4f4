#!/usr/bin/env python3
"""Regenerates the seeded clinical prediction fixtures from the target study counts.

hospital: 43 eyes / 23 patients, 40 graded exactly, every referable call right.
brac:     206 eyes / 103 patients, 190 exact, 5 off by one grade, 11 further off.
"""
import csv
import pathlib

HERE = pathlib.Path(__file__).resolve().parent


def write(name, rows, n_patients):
    out = HERE / name
    out.mkdir(exist_ok=True)
    with open(out / "validation.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["image_id", "patient_code", "grade", "confidence", "eye"])
        for i, (t, _, _) in enumerate(rows):
            w.writerow([f"{name}-{i:03d}", f"{name.upper()}-P{i % n_patients:03d}", t, 4, "left" if i < n_patients else "right"])
    with open(out / "predictions.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["image_id", "predicted_grade", "dr_score"])
        for i, (_, p, s) in enumerate(rows):
            w.writerow([f"{name}-{i:03d}", p, f"{s:.3f}"])


def hospital():
    rows = [(0, 0, 0.05 + 0.01 * (i % 10)) for i in range(20)]
    rows += [(1 + i % 4, 1 + i % 4, 0.70 + 0.01 * (i % 20)) for i in range(20)]
    rows += [(2, 3, 0.91), (3, 2, 0.88), (4, 3, 0.97)]  # wrong stage, right referral
    return rows


def brac():
    rows = [(0, 0, 0.04 + 0.002 * (i % 100)) for i in range(150)]
    rows += [(1 + i % 4, 1 + i % 4, 0.60 + 0.01 * (i % 35)) for i in range(40)]
    rows += [(1, 0, 0.35), (1, 2, 0.72), (2, 1, 0.66), (0, 1, 0.55), (3, 4, 0.93)]  # off by one
    rows += [(0, 2, 0.62), (0, 3, 0.81), (2, 0, 0.21), (3, 0, 0.30), (4, 1, 0.64), (4, 2, 0.77),
             (1, 3, 0.83), (1, 4, 0.95), (2, 4, 0.90), (0, 4, 0.86), (3, 1, 0.58)]
    return rows


if __name__ == "__main__":
    h, b = hospital(), brac()
    assert len(h) == 43 and sum(t == p for t, p, _ in h) == 40
    assert len(b) == 206 and sum(t == p for t, p, _ in b) == 190
    assert sum(abs(t - p) <= 1 for t, p, _ in b) == 195
    write("hospital", h, 23)
    write("brac", b, 103)
