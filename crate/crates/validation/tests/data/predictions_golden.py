#!/usr/bin/env python3
"""Writes predictions.tsv: each closed-form branch of the equilibrium
predictions, transcribed by hand, evaluated at five evenly spaced prices over
its grid range. Independent of the Rust code on purpose.

    python3 predictions_golden.py > predictions.tsv
"""

ROWS = [
    ("HM_LU", [
        ("cdf_zero", 3.0, 7.4, "0", lambda p: 0.0),
        ("cdf", 7.5, 12.0, "1 - (12 - p)(10p - 3)/(10p(p - 3))",
         lambda p: 1 - (12 - p) * (10 * p - 3) / (10 * p * (p - 3))),
        ("lower", 7.5, 12.0, "120 - 120/p", lambda p: 120 - 120 / p),
        ("tie", 7.5, 12.0, "120 - 240/p", lambda p: 120 - 240 / p),
        ("higher", 7.5, 12.0, "70 - 120/p", lambda p: 70 - 120 / p),
    ]),
    ("HM_HU", [
        ("cdf_zero", 3.0, 7.3, "0", lambda p: 0.0),
        ("cdf", 7.4, 12.0, "1 - (12 - p)(10p - 6)/(10p(p - 3))",
         lambda p: 1 - (12 - p) * (10 * p - 6) / (10 * p * (p - 3))),
        ("lower", 7.4, 12.0, "140 - 240/p", lambda p: 140 - 240 / p),
        ("tie", 7.4, 9.6, "115 - 240/p", lambda p: 115 - 240 / p),
        ("tie", 9.7, 12.0, "140 - 480/p", lambda p: 140 - 480 / p),
        ("higher", 7.4, 12.0, "90 - 240/p", lambda p: 90 - 240 / p),
    ]),
    ("LM_LU", [
        ("cdf_zero", 9.0, 10.2, "0", lambda p: 0.0),
        ("cdf", 10.3, 12.0, "1 - (12 - p)(10p - 27)/(10p(p - 9))",
         lambda p: 1 - (12 - p) * (10 * p - 27) / (10 * p * (p - 9))),
        ("lower", 10.3, 12.0, "120 - 360/p", lambda p: 120 - 360 / p),
        ("tie", 10.3, 12.0, "110 - 720/p", lambda p: 110 - 720 / p),
        ("higher", 10.3, 12.0, "70 - 360/p", lambda p: 70 - 360 / p),
    ]),
    ("LM_HU", [
        ("cdf_zero", 9.0, 9.9, "0", lambda p: 0.0),
        ("cdf", 10.0, 12.0, "1 - (12 - p)(10p - 54)/(10p(p - 9))",
         lambda p: 1 - (12 - p) * (10 * p - 54) / (10 * p * (p - 9))),
        ("lower", 10.0, 12.0, "140 - 720/p", lambda p: 140 - 720 / p),
        ("tie", 10.0, 12.0, "170 - 1440/p", lambda p: 170 - 1440 / p),
        ("higher", 10.0, 12.0, "90 - 720/p", lambda p: 90 - 720 / p),
    ]),
]

print("treatment\tbranch\tlo\thi\texpression\tprobes")
for label, branches in ROWS:
    for kind, lo, hi, expr, f in branches:
        probes = []
        for k in range(5):
            p = lo + (hi - lo) * k / 4
            probes.append(f"{p!r} {f(p)!r}")
        print(f"{label}\t{kind}\t{lo:.1f}\t{hi:.1f}\t{expr}\t{' '.join(probes)}")
