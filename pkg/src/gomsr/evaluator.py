"""Fitness computation: MSE, R^2, optional linear scaling, budget accounting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .template import (
    DEFAULT_POLICY,
    Alphabet,
    Genotype,
    ProtectionPolicy,
    Template,
    evaluate,
)

WORST_FITNESS = float("-inf")
SCALE_VARIANCE_FLOOR = 1e-12


class BudgetExhaustedError(RuntimeError):
    """Raised when a fitness evaluation is requested past the budget limit."""


@dataclass
class EvaluationBudget:
    limit: int
    used: int = 0

    def consume(self) -> None:
        if self.used >= self.limit:
            raise BudgetExhaustedError(f"evaluation budget of {self.limit} exhausted")
        self.used += 1

    @property
    def remaining(self) -> int:
        return self.limit - self.used


@dataclass(frozen=True)
class FitnessValue:
    """Training R^2 plus the affine post-scaling that produced it.

    (intercept, slope) is (0, 1) when linear scaling is off. Worst fitness is
    represented as r2 = -inf, never NaN, so plain float comparison orders it
    strictly below any finite value.
    """

    r2: float
    intercept: float = 0.0
    slope: float = 1.0
    eval_cost: int = 1


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    if len(pred) != len(target):
        raise ValueError(f"length mismatch: {len(pred)} vs {len(target)}")
    if len(pred) == 0:
        raise ValueError("need at least one value")
    with np.errstate(over="ignore"):
        diff = pred - target
        return float(np.mean(diff * diff))


def r2(pred: np.ndarray, target: np.ndarray) -> float:
    """1 - MSE/var(target), with the population (divide by N) variance."""
    variance = float(np.var(target))
    return 1.0 - mse(pred, target) / variance


def linear_scale(pred: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    """Least-squares (intercept, slope) mapping pred onto target.

    Degenerate predictions (variance below 1e-12) map every row to the
    target mean: slope 0, intercept mean(target).
    """
    if len(pred) != len(target):
        raise ValueError(f"length mismatch: {len(pred)} vs {len(target)}")
    with np.errstate(over="ignore"):
        var_pred = float(np.var(pred))
        mean_target = float(np.mean(target))
        if not np.isfinite(var_pred) or var_pred < SCALE_VARIANCE_FLOOR:
            return mean_target, 0.0
        mean_pred = float(np.mean(pred))
        cov = float(np.mean((target - mean_target) * (pred - mean_pred)))
    slope = cov / var_pred
    intercept = mean_target - slope * mean_pred
    if not (np.isfinite(slope) and np.isfinite(intercept)):
        return mean_target, 0.0
    return intercept, slope


def fitness(
    g: Genotype,
    t: Template,
    alphabet: Alphabet,
    X: np.ndarray,
    y: np.ndarray,
    *,
    linear_scaling: bool,
    budget: EvaluationBudget,
    policy: ProtectionPolicy = DEFAULT_POLICY,
    mask: np.ndarray | None = None,
) -> FitnessValue:
    """Evaluate g on the training rows and score it; consumes 1 evaluation.

    Non-finite predictions or a non-finite score yield the worst fitness
    (r2 = -inf). Raises BudgetExhaustedError before evaluating when the
    budget is spent.
    """
    budget.consume()
    pred = evaluate(g, t, X, alphabet, policy=policy, mask=mask)
    if not np.isfinite(pred).all():
        return FitnessValue(WORST_FITNESS)
    intercept, slope = (0.0, 1.0)
    if linear_scaling:
        intercept, slope = linear_scale(pred, y)
        with np.errstate(over="ignore"):
            pred = intercept + slope * pred
    score = r2(pred, y)
    if not np.isfinite(score):
        return FitnessValue(WORST_FITNESS, intercept, slope)
    return FitnessValue(score, intercept, slope)
