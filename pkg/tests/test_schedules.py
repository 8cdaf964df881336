import itertools
import math

import pytest

from hpxfer.model import ModelConfig
from hpxfer.scaling import BaseHyperParams
from hpxfer.schedules import (
    REFERENCE_GRID_REPORTED_RUNS,
    Schedule,
    ScheduleGrid,
    SyntheticIntervalTrainer,
    best_schedule_per_horizon,
    count_prefixes,
    enumerate_schedules,
    evaluate_schedules,
    schedule_count,
)
from hpxfer.training import DeskIntervalTrainer


def brute_force_schedules(intervals: int, max_level: int) -> list[tuple[int, ...]]:
    """Independent oracle: filter the full product for monotone sequences."""
    return [
        combo
        for combo in itertools.product(range(max_level + 1), repeat=intervals)
        if all(b >= a for a, b in zip(combo, combo[1:]))
    ]


def test_schedule_validation():
    Schedule((0, 0, 1, 2))
    with pytest.raises(ValueError):
        Schedule((1, 0))
    with pytest.raises(ValueError):
        Schedule((-1, 0))


def test_grid_level_set():
    grid = ScheduleGrid(peak_lr=0.0015, decay_base=2.5, max_level=4, intervals=16)
    lrs = grid.level_lrs()
    assert lrs[0] == 0.0015
    assert lrs[4] == pytest.approx(0.0015 / 2.5**4, rel=1e-12)
    assert all(b < a for a, b in zip(lrs, lrs[1:]))


def test_tiny_enumerations():
    assert schedule_count(1, 1) == 2
    two = [s.levels for s in enumerate_schedules(ScheduleGrid(intervals=2, max_level=1))]
    assert two == [(0, 0), (0, 1), (1, 1)]


def test_counts_match_brute_force():
    for intervals in range(1, 7):
        for max_level in range(0, 4):
            expected = brute_force_schedules(intervals, max_level)
            grid = ScheduleGrid(intervals=intervals, max_level=max_level)
            got = [s.levels for s in enumerate_schedules(grid)]
            assert got == sorted(expected), (intervals, max_level)
            assert len(got) == schedule_count(intervals, max_level)


def test_reference_grid_counts():
    assert schedule_count(16, 4) == 4845
    assert REFERENCE_GRID_REPORTED_RUNS == 4842  # reported alongside, not asserted equal


def test_enumeration_guard():
    grid = ScheduleGrid(intervals=200, max_level=10)
    with pytest.raises(ValueError):
        next(enumerate_schedules(grid))


def test_prefix_counts():
    # L=2, k_max=1: nonempty prefixes are (0), (1), (0,0), (0,1), (1,1)
    assert count_prefixes(2, 1) == 5
    for intervals, max_level in [(3, 2), (4, 1), (6, 3)]:
        prefixes = set()
        for s in brute_force_schedules(intervals, max_level):
            for h in range(1, intervals + 1):
                prefixes.add(s[:h])
        assert count_prefixes(intervals, max_level) == len(prefixes)


def test_sharing_strictly_helps():
    for intervals, max_level in [(2, 1), (4, 2), (6, 3)]:
        trained_with_sharing = count_prefixes(intervals, max_level)
        trained_without = intervals * schedule_count(intervals, max_level)
        assert trained_with_sharing < trained_without


def test_synthetic_losses_identical_with_and_without_sharing():
    grid = ScheduleGrid(intervals=4, max_level=2, interval_steps=1)
    trainer = SyntheticIntervalTrainer(grid)
    shared = evaluate_schedules(grid, trainer, share_prefixes=True)
    unshared = evaluate_schedules(grid, trainer, share_prefixes=False)
    assert shared.keys() == unshared.keys()
    for prefix in shared:
        assert shared[prefix] == unshared[prefix]


def test_best_schedule_per_horizon_synthetic():
    grid = ScheduleGrid(intervals=5, max_level=2, interval_steps=1)
    trainer = SyntheticIntervalTrainer(grid)
    report = best_schedule_per_horizon(grid, [2, 4, 5], trainer)
    assert set(report["winners"]) == {2, 4, 5}
    for horizon, winner in report["winners"].items():
        assert len(winner["schedule"]) == horizon
        assert math.isfinite(winner["loss"])
    assert len(report["prefix_relations"]) == 2
    assert report["evaluated_prefixes"] == count_prefixes(5, 2)


def test_single_level_grid_trivial_winner():
    grid = ScheduleGrid(intervals=3, max_level=0, interval_steps=1)
    trainer = SyntheticIntervalTrainer(grid)
    report = best_schedule_per_horizon(grid, [3], trainer)
    assert report["winners"][3]["schedule"] == [0, 0, 0]


def test_desk_trainer_sharing_is_bitwise_equal():
    grid = ScheduleGrid(peak_lr=0.01, decay_base=2.5, max_level=1, intervals=2, interval_steps=3)
    cfg = ModelConfig(width=16, depth=1, head_dim=8, vocab=11, max_seq_len=8, init_seed=0)
    base = BaseHyperParams(lr=0.01, init_var=0.04, eps=1e-8, weight_decay=0.0)
    trainer = DeskIntervalTrainer(grid, cfg, base, batch_size=2, seq_len=8, data_seed=5)
    shared = evaluate_schedules(grid, trainer, share_prefixes=True)
    unshared = evaluate_schedules(grid, trainer, share_prefixes=False)
    assert shared.keys() == unshared.keys()
    for prefix in shared:
        assert shared[prefix] == unshared[prefix], prefix  # bitwise, not approx


def test_horizon_validation():
    grid = ScheduleGrid(intervals=3, max_level=1, interval_steps=1)
    trainer = SyntheticIntervalTrainer(grid)
    with pytest.raises(ValueError):
        best_schedule_per_horizon(grid, [4], trainer)
    with pytest.raises(ValueError):
        best_schedule_per_horizon(grid, [], trainer)
