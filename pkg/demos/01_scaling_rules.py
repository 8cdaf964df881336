#!/usr/bin/env python3
"""Walk through the per-tensor scaling rules.

Resolves hyperparameters for every tensor role while scaling width, depth,
batch size and token budget, and prints the multiplier each rule applies.

Usage:
    python demos/01_scaling_rules.py
"""

from hpxfer import (
    BaseHyperParams,
    Parameterisation,
    ScaleRatios,
    TensorRole,
    resolve,
)

base = BaseHyperParams(lr=1e-2, init_var=4e-4, eps=1e-8, weight_decay=0.1)

print("=" * 76)
print("Base hyperparameters (tuned at the reference scale)")
print("=" * 76)
print(f"  lr={base.lr}  init_var={base.init_var}  eps={base.eps}  "
      f"wd={base.weight_decay}  betas=({base.beta1}, {base.beta2})")

scenarios = [
    ("identity (sanity: everything unchanged)", ScaleRatios()),
    ("4x wider", ScaleRatios(width=4.0)),
    ("4x deeper, alpha=1", ScaleRatios(depth=4.0, alpha=1.0)),
    ("4x deeper, alpha=0.5", ScaleRatios(depth=4.0, alpha=0.5)),
    ("4x batch at fixed tokens", ScaleRatios(batch=4.0)),
    ("4x tokens at fixed batch", ScaleRatios(tokens=4.0)),
    ("16x wide, 8x deep, 4x batch, 16x tokens", ScaleRatios(width=16.0, depth=8.0, batch=4.0, tokens=16.0)),
]

for label, ratios in scenarios:
    print()
    print("=" * 76)
    print(f"Target scale: {label}")
    print("=" * 76)
    header = f"  {'role':22s} {'lr':>12s} {'init_var':>12s} {'eps':>12s} {'wd':>10s} {'1-b1':>8s}"
    print(header)
    for role in TensorRole:
        r = resolve(role, base, ratios, Parameterisation.COMPLETE_DP)
        extra = ""
        if r.residual_mult is not None:
            extra = f"  residual x{r.residual_mult:g}"
        if r.momentum_clamped:
            extra += "  [momentum clamped]"
        print(
            f"  {role.value:22s} {r.lr:12.3e} {r.init_var:12.3e} {r.eps:12.3e} "
            f"{r.weight_decay:10.4f} {1 - r.beta1:8.4f}{extra}"
        )
    r = resolve(TensorRole.HIDDEN_WEIGHT, base, ratios)
    print(f"  training iterations multiplier: {r.num_steps_multiplier:g}")

print()
print("Width-only rules (no depth/batch/token factors):")
wide = ScaleRatios(width=4.0, depth=4.0, batch=4.0, tokens=16.0)
for role in (TensorRole.HIDDEN_WEIGHT, TensorRole.UNEMBED_WEIGHT):
    mup = resolve(role, base, wide, Parameterisation.MUP)
    cdp = resolve(role, base, wide, Parameterisation.COMPLETE_DP)
    print(f"  {role.value:16s}  width-only lr={mup.lr:.3e}   full rules lr={cdp.lr:.3e}")
