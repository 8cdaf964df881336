"""Batch-size and token-horizon scaling from the adaptive-optimizer diffusion limit.

When gradients are noise-dominated, the simplified RMSProp-with-decay
iteration

    theta[k+1] = theta[k] - eta * (g[k] / sigma + lam * theta[k]),
    g[k] = g + sigma * e[k],   e[k] ~ N(0, I)

discretises a stochastic differential equation with time step eta**2.
Rescaling (eta, lam, sigma, steps) so that the limiting process is unchanged
gives the square-root batch rule and the reciprocal token-horizon rule
implemented here.  :func:`simulate_rmspropw` runs the iteration directly and
serves as a Monte-Carlo oracle for those invariances.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "DecayVariant",
    "SDEMultipliers",
    "RMSPropWConfig",
    "IterateStats",
    "batch_multipliers",
    "horizon_multipliers",
    "combined_multipliers",
    "simulate_rmspropw",
    "invariance_report",
]

DIVERGENCE_THRESHOLD = 1e12


class DecayVariant(enum.Enum):
    """Coupled decay (decay premultiplied by lr) vs decoupled decay."""

    ADAMW = "adamw"
    ADAMLH = "adamlh"


@dataclass(frozen=True)
class SDEMultipliers:
    """Hyperparameter multipliers that keep the diffusion limit fixed."""

    m_eta: float
    m_lambda: float
    m_eps: float
    m_one_minus_beta: float
    m_steps: float

    def validate_coupled(self, rel: float = 1e-12) -> None:
        """Check the coupled-decay invariants to machine precision."""
        checks = {
            "m_eta * m_eps = 1": self.m_eta * self.m_eps - 1.0,
            "m_lambda = m_eta": self.m_lambda - self.m_eta,
            "m_one_minus_beta = m_eta**2": self.m_one_minus_beta - self.m_eta**2,
            "m_steps * m_one_minus_beta = 1": self.m_steps * self.m_one_minus_beta - 1.0,
        }
        for label, err in checks.items():
            if abs(err) > rel:
                raise ValueError(f"multiplier invariant violated: {label} (error {err})")

    def compose(self, other: "SDEMultipliers") -> "SDEMultipliers":
        return SDEMultipliers(
            m_eta=self.m_eta * other.m_eta,
            m_lambda=self.m_lambda * other.m_lambda,
            m_eps=self.m_eps * other.m_eps,
            m_one_minus_beta=self.m_one_minus_beta * other.m_one_minus_beta,
            m_steps=self.m_steps * other.m_steps,
        )


IDENTITY_MULTIPLIERS = SDEMultipliers(1.0, 1.0, 1.0, 1.0, 1.0)


def batch_multipliers(kappa: float, decay_variant: DecayVariant = DecayVariant.ADAMW) -> SDEMultipliers:
    """Multipliers for scaling the batch size by ``kappa`` at fixed tokens.

    Larger batches shrink the gradient noise by sqrt(kappa); restoring the
    diffusion limit requires lr (and coupled decay) to grow by sqrt(kappa)
    while the step count shrinks by kappa.  With decoupled decay the decay
    multiplier is the square of the lr multiplier instead.
    """
    if not kappa > 0.0:
        raise ValueError("kappa must be positive")
    sqrt_k = math.sqrt(kappa)
    m_lambda = kappa if decay_variant is DecayVariant.ADAMLH else sqrt_k
    return SDEMultipliers(
        m_eta=sqrt_k,
        m_lambda=m_lambda,
        m_eps=1.0 / sqrt_k,
        m_one_minus_beta=kappa,
        m_steps=1.0 / kappa,
    )


def horizon_multipliers(m_tokens: float) -> SDEMultipliers:
    """Multipliers for scaling the token horizon by ``m_tokens`` at fixed batch.

    Training longer at the same batch keeps the per-step noise fixed, so the
    learning rate shrinks by sqrt(m_tokens) while the step count grows by
    m_tokens.
    """
    if not m_tokens > 0.0:
        raise ValueError("m_tokens must be positive")
    inv_sqrt = 1.0 / math.sqrt(m_tokens)
    return SDEMultipliers(
        m_eta=inv_sqrt,
        m_lambda=inv_sqrt,
        m_eps=math.sqrt(m_tokens),
        m_one_minus_beta=1.0 / m_tokens,
        m_steps=m_tokens,
    )


def combined_multipliers(m_batch: float, m_tokens: float) -> SDEMultipliers:
    """Joint batch/horizon multipliers: sqrt(batch/tokens) on lr and decay."""
    if not m_batch > 0.0 or not m_tokens > 0.0:
        raise ValueError("batch and token ratios must be positive")
    ratio = m_batch / m_tokens
    sqrt_ratio = math.sqrt(ratio)
    return SDEMultipliers(
        m_eta=sqrt_ratio,
        m_lambda=sqrt_ratio,
        m_eps=1.0 / sqrt_ratio,
        m_one_minus_beta=ratio,
        m_steps=1.0 / ratio,
    )


@dataclass(frozen=True)
class RMSPropWConfig:
    """One Monte-Carlo experiment for the simplified iteration.

    ``grad_direction`` is the fixed signal g; ``noise_scale`` must be
    positive (the noiseless regime is outside the simplified model).
    Results are deterministic given ``seed``: the noise for replica ``r`` at
    step ``i`` is row ``r`` of the i-th (samples, dim) standard-normal block
    drawn from a PCG64 generator seeded with ``seed``, independent of any
    scheduling.
    """

    grad_direction: tuple[float, ...]
    noise_scale: float
    lr: float
    weight_decay: float
    steps: int
    theta0: tuple[float, ...] | None = None
    samples: int = 10000
    seed: int = 0
    decay_variant: DecayVariant = DecayVariant.ADAMW

    def __post_init__(self) -> None:
        if not self.noise_scale > 0.0:
            raise ValueError("noise_scale must be positive")
        if not self.lr > 0.0:
            raise ValueError("lr must be positive")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be nonnegative")
        if self.steps < 1:
            raise ValueError("steps must be a positive integer")
        if self.samples < 1:
            raise ValueError("samples must be a positive integer")
        if self.theta0 is not None and len(self.theta0) != len(self.grad_direction):
            raise ValueError("theta0 dimension must match grad_direction")


@dataclass(frozen=True)
class IterateStats:
    """Per-coordinate statistics of the final iterate over replicas."""

    mean: np.ndarray
    variance: np.ndarray
    samples: int
    diverged: int

    def mean_stderr(self) -> np.ndarray:
        return np.sqrt(self.variance / self.samples)


def simulate_rmspropw(cfg: RMSPropWConfig) -> IterateStats:
    """Run the simplified iteration for all replicas and summarise the endpoint.

    Replicas whose iterate magnitude exceeds ``DIVERGENCE_THRESHOLD`` are
    frozen, excluded from the statistics and counted in ``diverged``.
    """
    g = np.asarray(cfg.grad_direction, dtype=np.float64)
    dim = g.shape[0]
    theta = np.zeros((cfg.samples, dim), dtype=np.float64)
    if cfg.theta0 is not None:
        theta[:] = np.asarray(cfg.theta0, dtype=np.float64)

    rng = np.random.default_rng(cfg.seed)
    drift = g / cfg.noise_scale
    alive = np.ones(cfg.samples, dtype=bool)
    decoupled = cfg.decay_variant is DecayVariant.ADAMLH

    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(cfg.steps):
            noise = rng.standard_normal((cfg.samples, dim))
            if decoupled:
                step = cfg.lr * (drift + noise) + cfg.weight_decay * theta
            else:
                step = cfg.lr * (drift + noise + cfg.weight_decay * theta)
            updated = theta - step
            theta = np.where(alive[:, None], updated, theta)
            alive &= np.all(np.isfinite(theta), axis=1)
            alive &= np.max(np.abs(theta), axis=1) <= DIVERGENCE_THRESHOLD

    kept = theta[alive]
    n_kept = int(alive.sum())
    if n_kept == 0:
        mean = np.full(dim, np.nan)
        var = np.full(dim, np.nan)
    else:
        mean = kept.mean(axis=0)
        var = kept.var(axis=0, ddof=1) if n_kept > 1 else np.zeros(dim)
    return IterateStats(mean=mean, variance=var, samples=n_kept, diverged=cfg.samples - n_kept)


def _scaled_config(cfg: RMSPropWConfig, kappa: float, mults: SDEMultipliers, seed: int) -> RMSPropWConfig:
    return replace(
        cfg,
        noise_scale=cfg.noise_scale / math.sqrt(kappa),
        lr=cfg.lr * mults.m_eta,
        weight_decay=cfg.weight_decay * mults.m_lambda,
        steps=max(1, round(cfg.steps * mults.m_steps)),
        seed=seed,
    )


def compare_stats(a: IterateStats, b: IterateStats, mean_se_tol: float, var_rel_tol: float) -> dict:
    """Per-coordinate agreement of two endpoint distributions."""
    se = np.sqrt(a.variance / a.samples + b.variance / b.samples)
    mean_gap = np.abs(a.mean - b.mean)
    var_gap = np.abs(a.variance - b.variance) / np.abs(a.variance)
    return {
        "mean_gap": mean_gap.tolist(),
        "mean_tolerance": (mean_se_tol * se).tolist(),
        "mean_ok": bool(np.all(mean_gap <= mean_se_tol * se)),
        "variance_rel_gap": var_gap.tolist(),
        "variance_ok": bool(np.all(var_gap <= var_rel_tol)),
    }


def invariance_report(
    base: RMSPropWConfig,
    kappas: tuple[float, ...] = (4.0, 16.0),
    mean_se_tol: float = 3.0,
    var_rel_tol: float = 0.10,
) -> dict:
    """Run the batch-scaling invariance grid plus the misscaled decoupled control.

    For each kappa the batch-scaled run (correct rule) must match the
    reference; the control applies the coupled-decay rule to decoupled-decay
    iterations, which drifts the endpoint mean.
    """
    reference = simulate_rmspropw(base)
    report: dict = {
        "base": {
            "mean": reference.mean.tolist(),
            "variance": reference.variance.tolist(),
            "samples": reference.samples,
            "diverged": reference.diverged,
        },
        "runs": [],
        "all_ok": True,
    }
    for kappa in kappas:
        mults = batch_multipliers(kappa, base.decay_variant)
        scaled = simulate_rmspropw(_scaled_config(base, kappa, mults, seed=base.seed + 1))
        cmp = compare_stats(reference, scaled, mean_se_tol, var_rel_tol)
        cmp.update(kappa=kappa, kind="scaled", mean=scaled.mean.tolist(), variance=scaled.variance.tolist())
        report["runs"].append(cmp)
        report["all_ok"] &= cmp["mean_ok"] and cmp["variance_ok"]

    # control: decoupled iterations scaled with the coupled (sqrt) decay rule
    control_base = replace(base, decay_variant=DecayVariant.ADAMLH)
    control_ref = simulate_rmspropw(control_base)
    kappa = kappas[0]
    wrong = batch_multipliers(kappa, DecayVariant.ADAMW)
    control_scaled = simulate_rmspropw(_scaled_config(control_base, kappa, wrong, seed=base.seed + 1))
    cmp = compare_stats(control_ref, control_scaled, mean_se_tol, var_rel_tol)
    cmp.update(kappa=kappa, kind="decoupled_misscaled_control", mean=control_scaled.mean.tolist())
    report["runs"].append(cmp)
    report["control_drifts"] = not cmp["mean_ok"]
    report["all_ok"] &= report["control_drifts"]
    return report
