"""Trust-region random search and gated asynchronous CMA-ES over log2 multipliers.

The trust-region search samples uniformly inside an L-infinity box around the
incumbent best and shrinks the box by a fixed factor whenever ``patience``
consecutive trials fail to improve.  Both modes run trials through a
pluggable executor under a concurrency cap; every terminal trial is appended
to an fsynced store so a run can be resumed or replayed exactly.

The state machine is single-writer: proposals and records are serialized
through one lock, and the completion order is the record order, which makes
replay deterministic regardless of scheduling.
"""

from __future__ import annotations

import concurrent.futures
import enum
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from hpxfer.cmaes import CMAES
from hpxfer.store import TrialStore

__all__ = [
    "SearchSpace",
    "TrialStatus",
    "TrialRecord",
    "TrialResult",
    "TrustRegionState",
    "run_search",
    "cmaes_gate",
    "effective_loss",
    "uniform_box_search",
    "synthetic_objective",
    "resume_search",
]


@dataclass(frozen=True)
class SearchSpace:
    """Search configuration; defaults are the reference search settings."""

    dimension: int
    initial_point: tuple[float, ...] | None = None
    initial_radius: float = 1.0
    decay_factor: float = 0.7
    patience: int = 100
    max_trials: int = 5000
    max_concurrency: int = 100

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.initial_point is None:
            object.__setattr__(self, "initial_point", (0.0,) * self.dimension)
        elif len(self.initial_point) != self.dimension:
            raise ValueError("initial_point length must equal dimension")
        if not self.initial_radius >= 0.0:
            raise ValueError("initial_radius must be nonnegative")
        if not 0.0 < self.decay_factor < 1.0:
            raise ValueError("decay_factor must lie in (0, 1)")
        if self.patience < 1 or self.max_trials < 0 or self.max_concurrency < 1:
            raise ValueError("patience/max_trials/max_concurrency out of range")

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "initial_point": list(self.initial_point),
            "initial_radius": self.initial_radius,
            "decay_factor": self.decay_factor,
            "patience": self.patience,
            "max_trials": self.max_trials,
            "max_concurrency": self.max_concurrency,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SearchSpace":
        return cls(
            dimension=doc["dimension"],
            initial_point=tuple(doc["initial_point"]),
            initial_radius=doc["initial_radius"],
            decay_factor=doc["decay_factor"],
            patience=doc["patience"],
            max_trials=doc["max_trials"],
            max_concurrency=doc["max_concurrency"],
        )


class TrialStatus(enum.Enum):
    PENDING = "pending"
    RUNNING = "running"
    FINISHED = "finished"
    FAILED = "failed"
    DIVERGED = "diverged"


@dataclass(frozen=True)
class TrialRecord:
    """One search trial.  Diverged trials carry the last stable loss if known."""

    trial_id: int
    point: tuple[float, ...]
    seed: int
    status: TrialStatus
    final_loss: float | None = None
    wall_time: float = 0.0
    generation: int | None = None

    def __post_init__(self) -> None:
        if self.status is TrialStatus.FINISHED and self.final_loss is None:
            raise ValueError("finished trials must carry a final loss")

    def to_dict(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "point": list(self.point),
            "seed": self.seed,
            "status": self.status.value,
            "final_loss": self.final_loss,
            "wall_time": self.wall_time,
            "generation": self.generation,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrialRecord":
        return cls(
            trial_id=doc["trial_id"],
            point=tuple(doc["point"]),
            seed=doc["seed"],
            status=TrialStatus(doc["status"]),
            final_loss=doc["final_loss"],
            wall_time=doc.get("wall_time", 0.0),
            generation=doc.get("generation"),
        )


@dataclass(frozen=True)
class TrialResult:
    """Executor return value; plain floats are treated as finished losses."""

    loss: float | None
    diverged: bool = False


Executor = Callable[[np.ndarray, int], "float | TrialResult"]


class TrustRegionState:
    """Single-writer search state: incumbent, radius and the trial log."""

    def __init__(self, space: SearchSpace, rng: np.random.Generator | None = None):
        self.space = space
        self.best_point = np.asarray(space.initial_point, dtype=np.float64)
        self.best_loss: float | None = None
        self.decay_count = 0
        self.trials_since_improvement = 0
        self.trial_log: list[TrialRecord] = []
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._seen_ids: set[int] = set()

    @property
    def radius(self) -> float:
        # derived from the decay count so the radius law holds exactly
        return self.space.initial_radius * self.space.decay_factor**self.decay_count

    def propose(self) -> np.ndarray:
        """Uniform draw from the L-infinity ball around the incumbent."""
        offset = self.rng.uniform(-self.radius, self.radius, self.space.dimension)
        return self.best_point + offset

    def draw_seed(self) -> int:
        return int(self.rng.integers(0, 2**31 - 1))

    def record(self, trial: TrialRecord) -> None:
        """Apply one terminal trial to the state.

        Only finished trials can improve the incumbent; failed and diverged
        trials still consume patience so that radius decay reflects the true
        volume of unproductive work.
        """
        if trial.status not in (TrialStatus.FINISHED, TrialStatus.FAILED, TrialStatus.DIVERGED):
            raise ValueError(f"cannot record non-terminal trial {trial.trial_id}")
        if trial.trial_id in self._seen_ids:
            raise ValueError(f"duplicate trial_id {trial.trial_id}")
        self._seen_ids.add(trial.trial_id)
        self.trial_log.append(trial)

        improved = (
            trial.status is TrialStatus.FINISHED
            and trial.final_loss is not None
            and (self.best_loss is None or trial.final_loss < self.best_loss)
        )
        if improved:
            self.best_point = np.asarray(trial.point, dtype=np.float64)
            self.best_loss = trial.final_loss
            self.trials_since_improvement = 0
        else:
            self.trials_since_improvement += 1
            if self.trials_since_improvement >= self.space.patience:
                self.decay_count += 1
                self.trials_since_improvement = 0

    @classmethod
    def replay(cls, space: SearchSpace, records: Sequence[TrialRecord]) -> "TrustRegionState":
        """Rebuild the state by re-applying records in completion order."""
        state = cls(space)
        for record in records:
            state.record(record)
        return state


def effective_loss(record: TrialRecord, penalty: float) -> float:
    """Objective value used for selection: last stable loss or the penalty."""
    if record.final_loss is not None and np.isfinite(record.final_loss):
        return record.final_loss
    return penalty


def default_penalty(records: Sequence[TrialRecord]) -> float:
    """Worst finished loss plus one; used when a failed trial has no loss."""
    finished = [r.final_loss for r in records if r.status is TrialStatus.FINISHED]
    return (max(finished) + 1.0) if finished else 1.0


def cmaes_gate(
    pool: Sequence[TrialRecord],
    current_generation: int,
    population: int,
    penalty: float,
) -> list[TrialRecord] | None:
    """Select the update batch once the current generation has enough results.

    Returns None while fewer than ``population`` trials sampled from the
    current generation are terminal.  Once the gate opens, the ``population``
    lowest-loss trials from the whole unconsumed pool (stragglers included)
    are selected; ties at the cut are broken toward the lower trial id.
    """
    if population < 2:
        raise ValueError("population must be >= 2")
    current = [r for r in pool if r.generation == current_generation]
    if len(current) < population:
        return None
    ranked = sorted(pool, key=lambda r: (effective_loss(r, penalty), r.trial_id))
    return ranked[:population]


def _to_terminal(
    record: TrialRecord, executor: Executor
) -> TrialRecord:
    start = time.perf_counter()
    try:
        outcome = executor(np.asarray(record.point), record.seed)
    except Exception:
        return replace(
            record, status=TrialStatus.FAILED, wall_time=time.perf_counter() - start
        )
    wall = time.perf_counter() - start
    if isinstance(outcome, TrialResult):
        status = TrialStatus.DIVERGED if outcome.diverged else TrialStatus.FINISHED
        loss = outcome.loss
        if loss is not None and not np.isfinite(loss):
            loss = None
        if status is TrialStatus.FINISHED and loss is None:
            status = TrialStatus.FAILED
    else:
        loss = float(outcome)
        status = TrialStatus.FINISHED if np.isfinite(loss) else TrialStatus.DIVERGED
        if status is TrialStatus.DIVERGED:
            loss = None
    return replace(record, status=status, final_loss=loss, wall_time=wall)


def run_search(
    space: SearchSpace,
    executor: Executor,
    mode: str = "trust_region",
    population: int | None = None,
    seed: int = 0,
    store_path: str | Path | None = None,
) -> TrustRegionState:
    """Run one search to its trial budget and return the final state.

    ``mode`` is ``"trust_region"`` or ``"cmaes"`` (which requires a
    population size).  Individual trial failures never abort the search.
    With ``max_concurrency`` 1 the run is fully sequential and deterministic;
    with more workers the persisted completion order makes it replayable.
    """
    if mode not in ("trust_region", "cmaes"):
        raise ValueError(f"unknown search mode {mode!r}")
    cma: CMAES | None = None
    if mode == "cmaes":
        if population is None or population < 2:
            raise ValueError("cmaes mode requires a population >= 2")
        cma = CMAES(np.asarray(space.initial_point), space.initial_radius, population)

    state = TrustRegionState(space, np.random.default_rng(seed))
    store = TrialStore(store_path) if store_path is not None else None
    if store is not None:
        store.open_for_append()
        store.write_header({"space": space.to_dict(), "mode": mode, "seed": seed})

    lock = threading.Lock()
    unconsumed: list[TrialRecord] = []
    next_id = 0

    def propose_next() -> TrialRecord | None:
        nonlocal next_id
        with lock:
            if next_id >= space.max_trials:
                return None
            trial_id = next_id
            next_id += 1
            if cma is not None:
                point = cma.ask(state.rng)
                generation = cma.generation
            else:
                point = (
                    np.asarray(space.initial_point, dtype=np.float64)
                    if trial_id == 0
                    else state.propose()
                )
                generation = None
            return TrialRecord(
                trial_id=trial_id,
                point=tuple(float(x) for x in point),
                seed=state.draw_seed(),
                status=TrialStatus.RUNNING,
                generation=generation,
            )

    def commit(terminal: TrialRecord) -> None:
        with lock:
            state.record(terminal)
            if store is not None:
                store.append(terminal.to_dict())
            if cma is not None:
                unconsumed.append(terminal)
                penalty = default_penalty(state.trial_log)
                batch = cmaes_gate(unconsumed, cma.generation, cma.population, penalty)
                if batch is not None:
                    points = np.array([b.point for b in batch])
                    losses = np.array([effective_loss(b, penalty) for b in batch])
                    cma.tell(points, losses)
                    chosen = {b.trial_id for b in batch}
                    unconsumed[:] = [r for r in unconsumed if r.trial_id not in chosen]

    workers = min(space.max_concurrency, max(1, space.max_trials))
    try:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as tpe:
            in_flight: dict = {}
            while True:
                while len(in_flight) < workers:
                    record = propose_next()
                    if record is None:
                        break
                    in_flight[tpe.submit(_to_terminal, record, executor)] = record
                if not in_flight:
                    break
                done, _ = concurrent.futures.wait(
                    in_flight, return_when=concurrent.futures.FIRST_COMPLETED
                )
                for future in done:
                    in_flight.pop(future)
                    commit(future.result())
    finally:
        if store is not None:
            store.close()
    return state


def resume_search(store_path: str | Path) -> TrustRegionState:
    """Rebuild the state recorded in a trial store (crash-tolerant)."""
    header, docs = TrialStore(store_path).load()
    if header is None:
        raise ValueError(f"store {store_path} has no header")
    space = SearchSpace.from_dict(header["space"])
    records = [TrialRecord.from_dict(d) for d in docs]
    return TrustRegionState.replay(space, records)


def uniform_box_search(
    low: float,
    high: float,
    dimension: int,
    budget: int,
    executor: Executor,
    seed: int = 0,
) -> tuple[np.ndarray | None, float | None]:
    """Plain random search over a fixed box; the no-locality baseline."""
    rng = np.random.default_rng(seed)
    best_point, best_loss = None, None
    for trial_id in range(budget):
        point = rng.uniform(low, high, dimension)
        trial_seed = int(rng.integers(0, 2**31 - 1))
        record = _to_terminal(
            TrialRecord(trial_id, tuple(point), trial_seed, TrialStatus.RUNNING),
            executor,
        )
        if record.status is TrialStatus.FINISHED and (
            best_loss is None or record.final_loss < best_loss
        ):
            best_point, best_loss = point, record.final_loss
    return best_point, best_loss


# ---------------------------------------------------------------------------
# Synthetic landscapes with known structure, used as executors in tests and
# from the command line as "synthetic:<name>".
# ---------------------------------------------------------------------------


def _quadratic_target(dimension: int) -> np.ndarray:
    target = np.zeros(dimension)
    target[0] = 1.5
    if dimension > 1:
        target[1] = -0.5
    return target


def sphere_objective(point: np.ndarray, seed: int = 0) -> float:
    """Quadratic bowl with optimum at (1.5, -0.5, 0, ...)."""
    target = _quadratic_target(point.shape[0])
    return float(np.sum((point - target) ** 2))


CLIFF_BOUNDARY = 2.0


def cliff_objective(point: np.ndarray, seed: int = 0) -> "float | TrialResult":
    """Same bowl, but the region x[0] > 2 destabilises the run.

    Diverged evaluations report the loss at the stability boundary (the
    last stable value on the path into the unstable region).
    """
    if point[0] > CLIFF_BOUNDARY:
        clamped = point.copy()
        clamped[0] = CLIFF_BOUNDARY
        return TrialResult(loss=sphere_objective(clamped, seed), diverged=True)
    return sphere_objective(point, seed)


_SYNTHETIC = {"sphere": sphere_objective, "cliff": cliff_objective}


def synthetic_objective(name: str) -> Executor:
    try:
        return _SYNTHETIC[name]
    except KeyError:
        raise ValueError(f"unknown synthetic objective {name!r}") from None
