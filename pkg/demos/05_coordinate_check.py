#!/usr/bin/env python3
"""Coordinate check: activation scales across a width sweep.

Trains the desk transformer for a few steps at several widths and prints
the RMS of block pre-activations.  Under the full transfer rules the
magnitudes stay flat in width; under the uncorrected reference mode they
grow.

Usage:
    python demos/05_coordinate_check.py          # widths 32..128, fast
    python demos/05_coordinate_check.py --full   # widths 64..1024, a few minutes
"""

import sys

from hpxfer import BaseHyperParams
from hpxfer.training import coordinate_check, preactivation_ratio_bound

full = "--full" in sys.argv
widths = [64, 256, 1024] if full else [32, 64, 128]
steps = 10 if full else 6

base = BaseHyperParams(lr=0.01, init_var=0.04, eps=1e-8, weight_decay=0.0)

for parameterisation in ("complete_dp", "sp"):
    print("=" * 72)
    print(f"parameterisation: {parameterisation}, widths {widths}, {steps} steps")
    print("=" * 72)
    report = coordinate_check(
        widths, widths[0], depth=2, base=base,
        parameterisation=parameterisation, steps=steps,
        batch_size=4, seq_len=16, head_dim=16, seed=0,
    )
    last = max(r["step"] for r in report["records"])
    print(f"{'layer':>6s} " + " ".join(f"w={w:<9d}" for w in widths) + "  (mlp pre-activation rms, last step)")
    for layer in sorted({r["layer"] for r in report["records"]}):
        row = {
            r["width"]: r["mlp_fc_act_rms"]
            for r in report["records"]
            if r["layer"] == layer and r["step"] == last
        }
        print(f"{layer:>6d} " + " ".join(f"{row[w]:<11.4f}" for w in widths))
    worst = preactivation_ratio_bound(report, "mlp_fc_act_rms")
    print(f"worst max/min ratio across widths: {worst:.2f}")
    print("embedding-gradient rms times width (flat means it scales as 1/width):")
    for w in widths:
        series = report["embedding_grad_rms"][w]
        print(f"  width {w:5d}: {series[0] * w:.4f} (step 1) ... {series[-1] * w:.4f} (step {len(series)})")
    print()
