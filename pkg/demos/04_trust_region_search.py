#!/usr/bin/env python3
"""Trust-region random search vs plain random search on a cliffed landscape.

The objective is a quadratic bowl whose region x[0] > 2 destabilises the
run (the executor reports the boundary loss and a diverged flag).  The
trust region walks to the optimum without parking in the unstable region;
the fixed-box baseline wastes much of its budget there.

Usage:
    python demos/04_trust_region_search.py
"""

from hpxfer import SearchSpace, TrialStatus, run_search, synthetic_objective
from hpxfer.search import uniform_box_search

space = SearchSpace(dimension=10, max_trials=1000, max_concurrency=1)
print("Searching a 10-d cliffed quadratic, budget", space.max_trials)
print("defaults: box half-width", space.initial_radius, "decay", space.decay_factor,
      "patience", space.patience)

state = run_search(space, synthetic_objective("cliff"), seed=0)
n_div = sum(1 for r in state.trial_log if r.status is TrialStatus.DIVERGED)
print()
print(f"trust region: best loss {state.best_loss:.4g} at x[0]={state.best_point[0]:.3f}")
print(f"  radius after decays: {state.radius:.4f} ({state.decay_count} decays, "
      f"exactly 1.0 * 0.7**{state.decay_count})")
print(f"  diverged trials hit along the way: {n_div}")

_, box_best = uniform_box_search(-4.0, 4.0, 10, 1000, synthetic_objective("cliff"), seed=1000)
print(f"fixed-box random search over [-4, 4]^10: best loss {box_best:.4g}")

print()
print("Same engine with the gated asynchronous evolution strategy:")
cma_state = run_search(
    SearchSpace(dimension=10, max_trials=1000, max_concurrency=8),
    synthetic_objective("cliff"),
    mode="cmaes",
    population=10,
    seed=0,
)
generations = max(r.generation for r in cma_state.trial_log)
print(f"  best loss {cma_state.best_loss:.4g} over {generations + 1} generations")
