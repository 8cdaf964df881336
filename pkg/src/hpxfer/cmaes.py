"""Compact covariance-matrix-adaptation evolution strategy (ask/tell form).

Standard tutorial constants; the asynchronous generation gating lives in
:mod:`hpxfer.search`.  ``tell`` accepts whichever points the gate selected,
which under asynchronous operation may include stragglers sampled from an
older distribution; they are treated as current-generation samples.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["CMAES"]


class CMAES:
    """Minimising (mu/mu_w, lambda) CMA-ES over R^n."""

    def __init__(self, x0: np.ndarray, sigma0: float, population: int):
        if population < 2:
            raise ValueError("population must be at least 2")
        self.mean = np.asarray(x0, dtype=np.float64).copy()
        self.dim = self.mean.shape[0]
        self.sigma = float(sigma0)
        self.population = population
        self.generation = 0

        mu = population // 2
        weights = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
        self.weights = weights / weights.sum()
        self.mu = mu
        self.mu_eff = 1.0 / float(np.sum(self.weights**2))

        n, mu_eff = self.dim, self.mu_eff
        self.c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0)
        self.d_sigma = (
            1.0 + 2.0 * max(0.0, math.sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) + self.c_sigma
        )
        self.c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n)
        self.c_1 = 2.0 / ((n + 1.3) ** 2 + mu_eff)
        self.c_mu = min(
            1.0 - self.c_1,
            2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0) ** 2 + mu_eff),
        )
        self.chi_n = math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n))

        self.path_sigma = np.zeros(n)
        self.path_c = np.zeros(n)
        self.cov = np.eye(n)
        self._decompose()

    def _decompose(self) -> None:
        self.cov = (self.cov + self.cov.T) / 2.0
        eigvals, eigvecs = np.linalg.eigh(self.cov)
        eigvals = np.maximum(eigvals, 1e-20)
        self._basis = eigvecs
        self._scales = np.sqrt(eigvals)
        self._inv_sqrt = eigvecs @ np.diag(1.0 / self._scales) @ eigvecs.T

    def ask(self, rng: np.random.Generator) -> np.ndarray:
        """Sample one candidate from the current distribution."""
        z = rng.standard_normal(self.dim)
        return self.mean + self.sigma * (self._basis @ (self._scales * z))

    def tell(self, points: np.ndarray, losses: np.ndarray) -> None:
        """Update the distribution from one gated batch (population-size rows)."""
        points = np.asarray(points, dtype=np.float64)
        losses = np.asarray(losses, dtype=np.float64)
        if points.shape != (self.population, self.dim):
            raise ValueError(
                f"tell expects {self.population} points of dimension {self.dim}"
            )
        order = np.argsort(losses, kind="stable")
        selected = points[order[: self.mu]]

        old_mean = self.mean
        y = (selected - old_mean) / self.sigma
        y_w = self.weights @ y
        self.mean = old_mean + self.sigma * y_w

        self.path_sigma = (1.0 - self.c_sigma) * self.path_sigma + math.sqrt(
            self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff
        ) * (self._inv_sqrt @ y_w)
        self.generation += 1
        norm_ps = float(np.linalg.norm(self.path_sigma))
        denom = math.sqrt(1.0 - (1.0 - self.c_sigma) ** (2.0 * self.generation))
        h_sigma = 1.0 if norm_ps / denom / self.chi_n < 1.4 + 2.0 / (self.dim + 1.0) else 0.0

        self.path_c = (1.0 - self.c_c) * self.path_c + h_sigma * math.sqrt(
            self.c_c * (2.0 - self.c_c) * self.mu_eff
        ) * y_w

        rank_one = np.outer(self.path_c, self.path_c)
        rank_mu = (self.weights[:, None] * y).T @ y
        correction = (1.0 - h_sigma) * self.c_c * (2.0 - self.c_c)
        self.cov = (
            (1.0 - self.c_1 - self.c_mu) * self.cov
            + self.c_1 * (rank_one + correction * self.cov)
            + self.c_mu * rank_mu
        )
        self.sigma *= math.exp(
            (self.c_sigma / self.d_sigma) * (norm_ps / self.chi_n - 1.0)
        )
        self._decompose()
