"""Training loop, coordinate checks and transfer sweeps for the desk model.

A run is deterministic given (init_seed, data_seed): batches are a pure
function of the global step, so warm starts resume mid-schedule exactly.
Non-finite losses stop the run and report the last stable loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from hpxfer.data import sample_batch
from hpxfer.model import DeskTransformer, ModelConfig
from hpxfer.optim import PerTensorAdamW
from hpxfer.per_module import (
    KindLayout,
    ModuleType,
    ModuleTypeTaxonomy,
    MultiplierKind,
    free_parameter_count,
    unpack_point,
)
from hpxfer.scaling import BaseHyperParams, ScaleRatios
from hpxfer.search import TrialResult

__all__ = [
    "TrainConfig",
    "TrainResult",
    "cosine_schedule",
    "train",
    "evaluate",
    "coordinate_check",
    "lr_transfer_sweep",
    "argmin_lr",
    "DeskIntervalTrainer",
    "desk_taxonomy",
    "desk_lr_layouts",
    "make_desk_executor",
]


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch_size: int
    seq_len: int
    schedule: str = "cosine"
    final_lr_fraction: float = 0.1
    decay_variant: str = "adamw"
    data_seed: int = 0
    total_steps: int | None = None  # schedule horizon; defaults to `steps`
    val_batches: int = 8

    def __post_init__(self) -> None:
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.steps < 0 or self.batch_size < 1 or self.seq_len < 1:
            raise ValueError("steps/batch_size/seq_len out of range")


@dataclass
class TrainResult:
    losses: np.ndarray
    final_loss: float
    val_loss: float | None
    diverged: bool
    steps_completed: int
    stats: list[dict] = field(default_factory=list)

    def as_trial_result(self) -> TrialResult:
        loss = self.val_loss if self.val_loss is not None else self.final_loss
        if not math.isfinite(loss):
            loss = None  # diverged before any stable loss was observed
        return TrialResult(loss=loss, diverged=self.diverged)


def cosine_schedule(total_steps: int, final_fraction: float) -> Callable[[int], float]:
    """Multiplier decaying from 1 to final_fraction over total_steps."""

    def schedule(step: int) -> float:
        if total_steps <= 1:
            return 1.0
        progress = min(step / (total_steps - 1), 1.0)
        return final_fraction + 0.5 * (1.0 - final_fraction) * (1.0 + math.cos(math.pi * progress))

    return schedule


def _schedule_for(tcfg: TrainConfig) -> Callable[[int], float]:
    if tcfg.schedule == "constant":
        return lambda step: 1.0
    horizon = tcfg.total_steps if tcfg.total_steps is not None else tcfg.steps
    return cosine_schedule(horizon, tcfg.final_lr_fraction)


def evaluate(model: DeskTransformer, tcfg: TrainConfig) -> float:
    """Mean held-out loss over the validation batches."""
    losses = []
    for i in range(tcfg.val_batches):
        tokens, targets = sample_batch(
            tcfg.data_seed, i, tcfg.batch_size, tcfg.seq_len, model.cfg.vocab, split="val"
        )
        loss, _, _ = model.loss_and_grads(tokens, targets)
        losses.append(loss)
    return float(np.mean(losses))


def train(
    model: DeskTransformer,
    tcfg: TrainConfig,
    optimizer: PerTensorAdamW | None = None,
    start_step: int = 0,
    schedule_fn: Callable[[int], float] | None = None,
    collect_stats: bool = False,
    compute_val: bool = True,
) -> TrainResult:
    """Run ``tcfg.steps`` optimizer steps starting at ``start_step``.

    Pass the optimizer back in (with ``start_step``) to continue a run; the
    batch stream continues seamlessly because batches are indexed by the
    global step.
    """
    optimizer = optimizer or PerTensorAdamW(model, tcfg.decay_variant)
    schedule = schedule_fn or _schedule_for(tcfg)

    losses: list[float] = []
    stats_log: list[dict] = []
    last_stable = math.nan
    diverged = False
    for local_step in range(tcfg.steps):
        step = start_step + local_step
        tokens, targets = sample_batch(
            tcfg.data_seed, step, tcfg.batch_size, tcfg.seq_len, model.cfg.vocab
        )
        loss, grads, stats = model.loss_and_grads(tokens, targets, collect_stats=collect_stats)
        if not math.isfinite(loss):
            diverged = True
            break
        losses.append(loss)
        last_stable = loss
        update_rms = optimizer.step(
            grads, schedule_mult=schedule(step), collect_update_rms=collect_stats
        )
        if collect_stats:
            stats = dict(stats)
            stats["step"] = step
            stats["update_rms"] = update_rms
            stats_log.append(stats)

    if not losses:
        # zero-step runs report the untouched starting loss
        tokens, targets = sample_batch(
            tcfg.data_seed, start_step, tcfg.batch_size, tcfg.seq_len, model.cfg.vocab
        )
        initial, _, _ = model.loss_and_grads(tokens, targets)
        last_stable = initial
        if diverged:
            last_stable = math.nan

    val_loss = None
    if compute_val and not diverged:
        val_loss = evaluate(model, tcfg)
    return TrainResult(
        losses=np.asarray(losses),
        final_loss=float(last_stable),
        val_loss=val_loss,
        diverged=diverged,
        steps_completed=len(losses),
        stats=stats_log,
    )


# ---------------------------------------------------------------------------
# Coordinate checks
# ---------------------------------------------------------------------------


def coordinate_check(
    widths: list[int],
    base_width: int,
    depth: int,
    base: BaseHyperParams,
    parameterisation: str = "complete_dp",
    alpha: float = 1.0,
    steps: int = 10,
    batch_size: int = 4,
    seq_len: int = 32,
    head_dim: int = 16,
    vocab: int = 64,
    seed: int = 0,
) -> dict:
    """Per-(width, layer, step) RMS of pre-activations, their gradients and updates.

    The same init/data seeds are used at every width; tensors of matching
    shape therefore share their random draws.
    """
    records: list[dict] = []
    emb_grad: dict[int, list[float]] = {}
    for width in widths:
        cfg = ModelConfig(
            width=width,
            depth=depth,
            head_dim=head_dim,
            vocab=vocab,
            max_seq_len=seq_len,
            alpha=alpha,
            parameterisation=parameterisation,
            init_seed=seed,
        )
        ratios = ScaleRatios(width=width / base_width, alpha=alpha)
        model = DeskTransformer(cfg, base, ratios)
        tcfg = TrainConfig(
            steps=steps, batch_size=batch_size, seq_len=seq_len,
            schedule="constant", data_seed=seed + 1,
        )
        result = train(model, tcfg, collect_stats=True, compute_val=False)
        emb_grad[width] = [s["embedding_grad_rms"] for s in result.stats]
        for s in result.stats:
            for layer in range(1, depth + 1):
                records.append(
                    {
                        "width": width,
                        "layer": layer,
                        "step": s["step"],
                        "attn_qkv_act_rms": s[f"block{layer}.attn_qkv_act_rms"],
                        "mlp_fc_act_rms": s[f"block{layer}.mlp_fc_act_rms"],
                        "attn_qkv_grad_rms": s[f"block{layer}.attn_qkv_grad_rms"],
                        "mlp_fc_grad_rms": s[f"block{layer}.mlp_fc_grad_rms"],
                        "qkv_update_rms": s["update_rms"][f"block{layer}.w_qkv"],
                        "mlp_fc_update_rms": s["update_rms"][f"block{layer}.w_fc"],
                        "diverged": bool(result.diverged),
                    }
                )
    return {
        "widths": widths,
        "depth": depth,
        "steps": steps,
        "parameterisation": parameterisation,
        "records": records,
        "embedding_grad_rms": emb_grad,
    }


def preactivation_ratio_bound(report: dict, field_name: str = "mlp_fc_act_rms") -> float:
    """Worst max/min RMS ratio across widths over all (layer, step) cells."""
    by_cell: dict[tuple[int, int], list[float]] = {}
    for rec in report["records"]:
        by_cell.setdefault((rec["layer"], rec["step"]), []).append(rec[field_name])
    worst = 1.0
    for values in by_cell.values():
        worst = max(worst, max(values) / min(values))
    return worst


# ---------------------------------------------------------------------------
# Learning-rate transfer sweeps
# ---------------------------------------------------------------------------


def argmin_lr(mean_losses: dict[float, float]) -> float:
    """Learning rate with the lowest mean loss; ties go to the smaller rate."""
    return min(sorted(mean_losses), key=lambda lr: (mean_losses[lr], lr))


# ---------------------------------------------------------------------------
# Interval executor for schedule evaluation (prefix sharing carries the full
# model + optimizer state across warm starts, unchanged)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _IntervalState:
    params: dict
    m: dict
    v: dict
    opt_steps: int
    global_step: int


class DeskIntervalTrainer:
    """Trains one schedule interval at a fixed decay level on the desk model.

    States are full snapshots (parameters, optimizer moments, step counts),
    so a child interval continues exactly where its parent stopped; the
    reported loss is the mean training loss over the interval.
    """

    def __init__(
        self,
        grid,
        model_cfg: ModelConfig,
        base: BaseHyperParams,
        batch_size: int,
        seq_len: int,
        data_seed: int = 0,
        decay_variant: str = "adamw",
    ):
        self.grid = grid
        self.base = replace(base, lr=grid.peak_lr)
        self.model_cfg = model_cfg
        self.batch_size = batch_size
        self.seq_len = seq_len
        self.data_seed = data_seed
        self.decay_variant = decay_variant

    def _fresh(self) -> tuple[DeskTransformer, PerTensorAdamW]:
        model = DeskTransformer(self.model_cfg, self.base, ScaleRatios(alpha=self.model_cfg.alpha))
        return model, PerTensorAdamW(model, self.decay_variant)

    @staticmethod
    def _snapshot(model: DeskTransformer, opt: PerTensorAdamW, global_step: int) -> _IntervalState:
        return _IntervalState(
            params={k: v.copy() for k, v in model.params.items()},
            m={k: v.copy() for k, v in opt.m.items()},
            v={k: v.copy() for k, v in opt.v.items()},
            opt_steps=opt.step_count,
            global_step=global_step,
        )

    def initial_state(self) -> _IntervalState:
        model, opt = self._fresh()
        return self._snapshot(model, opt, 0)

    def train_interval(self, state: _IntervalState, level: int, interval_index: int):
        model, opt = self._fresh()
        for name in model.params:
            model.params[name][...] = state.params[name]
            opt.m[name][...] = state.m[name]
            opt.v[name][...] = state.v[name]
        opt.step_count = state.opt_steps

        multiplier = self.grid.lr_multiplier(level)
        tcfg = TrainConfig(
            steps=self.grid.interval_steps,
            batch_size=self.batch_size,
            seq_len=self.seq_len,
            schedule="constant",
            decay_variant=self.decay_variant,
            data_seed=self.data_seed,
        )
        result = train(
            model,
            tcfg,
            optimizer=opt,
            start_step=state.global_step,
            schedule_fn=lambda step: multiplier,
            compute_val=False,
        )
        loss = float(np.mean(result.losses)) if result.steps_completed else math.nan
        return self._snapshot(model, opt, state.global_step + result.steps_completed), loss


# ---------------------------------------------------------------------------
# Per-module search over the desk model
# ---------------------------------------------------------------------------


def desk_taxonomy(qk_norm: bool = True) -> ModuleTypeTaxonomy:
    """Module types matching the desk model's tensors exactly."""
    block = [
        ModuleType("qkv_weight", True),
        ModuleType("attn_out_weight", True),
        ModuleType("mlp_in_weight", True),
        ModuleType("mlp_out_weight", True),
        ModuleType("block_norm_scale", True, random_init=False),
        ModuleType("residual_mha", True, residual=True, random_init=False),
        ModuleType("residual_mlp", True, residual=True, random_init=False),
    ]
    if qk_norm:
        block.insert(1, ModuleType("qk_norm_scale", True, random_init=False))
    outer = [
        ModuleType("input_embedding", False),
        ModuleType("position_embedding", False),
        ModuleType("unembed_weight", False),
        ModuleType("final_norm_scale", False, random_init=False),
    ]
    return ModuleTypeTaxonomy(name="desk", version=1, types=tuple(block + outer))


def desk_lr_layouts(depth: int, taxonomy: ModuleTypeTaxonomy) -> tuple[KindLayout, ...]:
    """Learning-rate-only search space: type multipliers plus a depth vector."""
    trainable = tuple(t.name for t in taxonomy.trainable)
    return (KindLayout(MultiplierKind.LR, trainable, depth),)


def make_desk_executor(
    model_cfg: ModelConfig,
    base: BaseHyperParams,
    layouts: tuple[KindLayout, ...],
    taxonomy: ModuleTypeTaxonomy,
    steps: int = 100,
    batch_size: int = 8,
    seq_len: int = 32,
):
    """Executor mapping a log2 multiplier point to a short training run's loss.

    The trial seed drives both initialization and data order; divergence is
    reported with the last stable loss, matching the search conventions.
    """
    dimension = free_parameter_count(layouts)

    def executor(point: np.ndarray, seed: int) -> TrialResult:
        if point.shape != (dimension,):
            raise ValueError(f"point must have dimension {dimension}")
        sets = unpack_point(point, layouts, taxonomy)
        cfg = replace(model_cfg, init_seed=seed)
        model = DeskTransformer(cfg, base, ScaleRatios(alpha=cfg.alpha), per_module=sets)
        tcfg = TrainConfig(
            steps=steps, batch_size=batch_size, seq_len=seq_len, data_seed=seed + 7919
        )
        result = train(model, tcfg)
        return result.as_trial_result()

    executor.dimension = dimension
    return executor


def lr_transfer_sweep(
    axis: str,
    levels: list,
    lr_grid: list[float],
    base: BaseHyperParams,
    base_width: int = 64,
    base_depth: int = 2,
    base_batch: int = 8,
    base_steps: int = 200,
    seq_len: int = 32,
    head_dim: int = 16,
    vocab: int = 64,
    alpha: float = 1.0,
    parameterisation: str = "complete_dp",
    seeds: tuple[int, ...] = (0, 1, 2),
    apply_rule: bool = True,
) -> dict:
    """Train every (level, base-lr, seed) cell and locate the optimum per level.

    For the batch and token axes the token budget is held fixed, so the step
    count scales with the level; ``apply_rule`` toggles the batch/horizon
    hyperparameter adjustments (the width axis always applies its
    parameterisation).
    """
    if axis not in ("width", "depth", "batch", "tokens"):
        raise ValueError(f"unknown sweep axis {axis!r}")

    cells: list[dict] = []
    for level in levels:
        width, depth, batch, steps = base_width, base_depth, base_batch, base_steps
        ratios = ScaleRatios(alpha=alpha)
        if axis == "width":
            width = int(level)
            ratios = ScaleRatios(width=width / base_width, alpha=alpha)
        elif axis == "depth":
            depth = int(level)
            ratios = ScaleRatios(depth=depth / base_depth, alpha=alpha)
        elif axis == "batch":
            batch = int(level)
            kappa = batch / base_batch
            steps = max(1, round(base_steps / kappa))  # fixed token budget
            if apply_rule:
                ratios = ScaleRatios(batch=kappa, alpha=alpha)
        elif axis == "tokens":
            steps = max(1, round(base_steps * float(level)))
            if apply_rule:
                ratios = ScaleRatios(tokens=float(level), alpha=alpha)

        for base_lr in lr_grid:
            hps = replace(base, lr=base_lr)
            for seed in seeds:
                cfg = ModelConfig(
                    width=width, depth=depth, head_dim=head_dim, vocab=vocab,
                    max_seq_len=seq_len, alpha=alpha,
                    parameterisation=parameterisation, init_seed=seed,
                )
                model = DeskTransformer(cfg, hps, ratios)
                tcfg = TrainConfig(
                    steps=steps, batch_size=batch, seq_len=seq_len,
                    data_seed=1000 + seed,
                )
                result = train(model, tcfg)
                loss = result.val_loss if result.val_loss is not None else result.final_loss
                cells.append(
                    {
                        "level": level,
                        "lr": base_lr,
                        "seed": seed,
                        "loss": loss,
                        "diverged": result.diverged,
                    }
                )

    mean_loss: dict = {}
    for level in levels:
        per_lr: dict[float, float] = {}
        for base_lr in lr_grid:
            values = [c["loss"] for c in cells if c["level"] == level and c["lr"] == base_lr]
            per_lr[base_lr] = float(np.mean(values))
        mean_loss[level] = per_lr

    optima = {level: argmin_lr(mean_loss[level]) for level in levels}
    return {
        "axis": axis,
        "levels": list(levels),
        "lr_grid": list(lr_grid),
        "apply_rule": apply_rule,
        "cells": cells,
        "mean_loss": mean_loss,
        "argmin_lr": optima,
        "argmin_index": {
            level: sorted(lr_grid).index(optima[level]) for level in levels
        },
    }
