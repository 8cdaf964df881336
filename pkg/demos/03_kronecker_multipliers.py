#!/usr/bin/env python3
"""Per-module multipliers: the type+depth factorisation in action.

Shows how a fully uncoupled grid of log2 multipliers projects onto the
additive type+depth subspace, how depth profiles interpolate when the model
grows deeper, and how the pieces compose into one final multiplier.

Usage:
    python demos/03_kronecker_multipliers.py
"""

import numpy as np

from hpxfer import (
    FullMultiplierGrid,
    MultiplierKind,
    PerModuleMultipliers,
    batch_multipliers,
    compose,
    expand_kronecker,
    free_parameter_count,
    interpolate_depth,
    project_to_kronecker,
    reference_layouts,
    reference_taxonomy,
)

print("Reference taxonomy:")
tax = reference_taxonomy()
for t in tax.types:
    tags = []
    if t.depth_indexed:
        tags.append("per-depth")
    if t.residual:
        tags.append("residual")
    if not t.random_init:
        tags.append("constant-init")
    print(f"  {t.name:20s} {' '.join(tags)}")
print(f"total searchable multipliers at depth 4: "
      f"{free_parameter_count(reference_layouts(depth=4))}")

print()
print("A depth-factored learning-rate multiplier set (log2 values):")
lr = PerModuleMultipliers(
    kind=MultiplierKind.LR,
    type_mult={"qkv_weight": 1.0, "mlp_in_weight": -0.5, "input_embedding": 0.5},
    depth_mult=np.array([0.4, 0.0, -0.1, -0.3]),
    depth_types=frozenset({"qkv_weight", "mlp_in_weight"}),
)
print("  type:", {k: round(v, 3) for k, v in lr.type_mult.items()})
print("  depth (gauged to mean zero):", np.round(lr.depth_mult, 3))

print()
print("Composed multiplier for qkv weights at each depth, with a 4x-batch rule:")
sde = batch_multipliers(4.0)
for depth in range(1, 5):
    value = compose(lr, "qkv_weight", depth, sde=sde)
    print(f"  depth {depth}: x{value:.3f}")
print("  input_embedding (no depth index):", f"x{compose(lr, 'input_embedding', sde=sde):.3f}")

print()
print("Transfer to a deeper model re-samples the depth profile linearly:")
deeper = interpolate_depth(lr, 8)
print("  depth profile at 8 layers:", np.round(deeper.depth_mult, 3))

print()
print("Projection of a non-separable grid onto the type+depth subspace:")
grid = FullMultiplierGrid(
    MultiplierKind.LR, ("qkv_weight", "mlp_in_weight"), np.array([[0.0, 1.0], [1.0, 0.0]])
)
pm = project_to_kronecker(grid)
fitted = expand_kronecker(pm)
print("  grid:\n", grid.values)
print("  type:", pm.type_mult, " depth:", pm.depth_mult)
print("  residual:\n", grid.values - fitted.values)
