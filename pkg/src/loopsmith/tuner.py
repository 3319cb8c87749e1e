"""Contextual tuning of the time/accuracy trade-off weight.

A Gaussian process with fixed hyperparameters models the run criterion as a
function of (context, alpha) on a normalized unit cube. Suggestions minimize
a lower confidence bound over a fixed alpha grid, so identical histories give
identical suggestions. Observations are tagged with the criterion that was
active when they were made; switching criteria keeps the history but only
same-criterion observations condition the surrogate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

ALPHA_GRID: tuple[float, ...] = tuple(round(0.1 + 0.01 * k, 2) for k in range(81))
ALPHA_GRID_STEP = 0.01
_ALPHA_SPAN = ALPHA_GRID[-1] - ALPHA_GRID[0]
_STD_FLOOR = 1e-9
_MIDPOINT_ALPHA = 0.5


class Criterion(Enum):
    """What the loop is currently being tuned for."""

    TRACKING_ERROR = "tracking_error"
    COMPUTATION_TIME = "computation_time"


@dataclass(frozen=True, slots=True)
class Context:
    """Operating point the suggestion is conditioned on."""

    velocity: float
    reference: float


@dataclass(frozen=True, slots=True)
class Observation:
    context: Context
    alpha: float
    value: float
    criterion: Criterion


@dataclass(frozen=True, slots=True)
class TunerConfig:
    """Fixed surrogate hyperparameters (no fitting at runtime).

    ``lengthscale`` applies per input dimension on the normalized cube;
    ``noise_variance`` is measurement noise on z-scored observations;
    ``beta`` scales the exploration term of the lower confidence bound;
    ``context_scale`` maps raw context values onto [0, 1].
    """

    lengthscale: float = 0.3
    signal_variance: float = 1.0
    noise_variance: float = 1e-4
    beta: float = 2.0
    context_scale: float = 15.0

    def __post_init__(self) -> None:
        for name in ("lengthscale", "signal_variance", "noise_variance", "beta", "context_scale"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0.0:
                raise ValueError(f"{name} must be finite and > 0, got {value!r}")


@dataclass(frozen=True)
class BoState:
    """Immutable tuner state: configuration plus tagged history."""

    config: TunerConfig
    active_criterion: Criterion
    observations: tuple[Observation, ...] = ()
    seed: int = 0

    def active_observations(self) -> tuple[Observation, ...]:
        return tuple(o for o in self.observations if o.criterion is self.active_criterion)


def make_tuner(
    config: TunerConfig | None = None,
    criterion: Criterion = Criterion.TRACKING_ERROR,
    seed: int = 0,
) -> BoState:
    return BoState(config=config or TunerConfig(), active_criterion=criterion, seed=seed)


def with_criterion(state: BoState, criterion: Criterion) -> BoState:
    """Switch the tuning objective; history is kept, only retagged queries change."""
    return replace(state, active_criterion=criterion)


def observe(state: BoState, context: Context, alpha: float, value: float) -> BoState:
    """Record one measured criterion value for (context, alpha)."""
    if not (ALPHA_GRID[0] <= alpha <= ALPHA_GRID[-1]):
        raise ValueError(f"alpha must lie in [{ALPHA_GRID[0]}, {ALPHA_GRID[-1]}], got {alpha!r}")
    if not math.isfinite(value):
        raise ValueError(f"criterion value must be finite, got {value!r}")
    obs = Observation(context=context, alpha=alpha, value=value, criterion=state.active_criterion)
    return replace(state, observations=state.observations + (obs,))


def _feature_rows(
    config: TunerConfig, contexts: Iterable[Context], alphas: Iterable[float]
) -> np.ndarray:
    rows = [
        (
            ctx.velocity / config.context_scale,
            ctx.reference / config.context_scale,
            (alpha - ALPHA_GRID[0]) / _ALPHA_SPAN,
        )
        for ctx, alpha in zip(contexts, alphas)
    ]
    return np.asarray(rows, dtype=float)


def _kernel(config: TunerConfig, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    sq = np.sum((diff / config.lengthscale) ** 2, axis=-1)
    return config.signal_variance * np.exp(-0.5 * sq)


def _solve_spd(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Cholesky solve with escalating jitter for near-singular kernels."""
    jitter = 0.0
    eye = np.eye(matrix.shape[0])
    for _ in range(8):
        try:
            chol = np.linalg.cholesky(matrix + jitter * eye)
        except np.linalg.LinAlgError:
            jitter = max(jitter * 10.0, 1e-12)
            continue
        y = np.linalg.solve(chol, rhs)
        return np.linalg.solve(chol.T, y)
    raise np.linalg.LinAlgError("kernel matrix is not positive definite")


def gp_posterior(
    train_x: np.ndarray,
    train_y: np.ndarray,
    query_x: np.ndarray,
    config: TunerConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact GP posterior mean and variance at the query rows.

    Observations are z-scored internally (std floored at 1e-9) and the mean
    is mapped back to observation units; the returned variance is likewise in
    squared observation units. With no observations the prior is returned:
    zero mean, ``signal_variance`` everywhere. The variance never falls below
    the noise floor (scaled back to observation units).
    """
    query_x = np.atleast_2d(np.asarray(query_x, dtype=float))
    n = len(train_y)
    if n == 0:
        mean = np.zeros(query_x.shape[0])
        var = np.full(query_x.shape[0], config.signal_variance)
        return mean, var

    train_x = np.atleast_2d(np.asarray(train_x, dtype=float))
    train_y = np.asarray(train_y, dtype=float)
    y_mean = float(np.mean(train_y))
    y_std = max(float(np.std(train_y)), _STD_FLOOR)
    z = (train_y - y_mean) / y_std

    k_train = _kernel(config, train_x, train_x) + config.noise_variance * np.eye(n)
    k_cross = _kernel(config, query_x, train_x)
    alpha_vec = _solve_spd(k_train, z)
    mean_z = k_cross @ alpha_vec
    solved = _solve_spd(k_train, k_cross.T)
    var_z = config.signal_variance - np.einsum("ij,ji->i", k_cross, solved)
    var_z = np.maximum(var_z, config.noise_variance)

    return y_mean + y_std * mean_z, var_z * (y_std**2)


def _standardized_posterior(
    state: BoState, context: Context, alphas: Sequence[float]
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior over the alpha grid in z-score units (for the acquisition)."""
    config = state.config
    active = state.active_observations()
    query_x = _feature_rows(config, [context] * len(alphas), alphas)
    if not active:
        return np.zeros(len(alphas)), np.full(len(alphas), config.signal_variance)
    train_x = _feature_rows(config, [o.context for o in active], [o.alpha for o in active])
    values = np.array([o.value for o in active], dtype=float)
    y_std = max(float(np.std(values)), _STD_FLOOR)
    mean, var = gp_posterior(train_x, values, query_x, config)
    mean_z = (mean - float(np.mean(values))) / y_std
    var_z = var / (y_std**2)
    return mean_z, var_z


def suggest_alpha(state: BoState, context: Context) -> float:
    """Grid point minimizing the lower confidence bound mean - beta * std.

    With an empty same-criterion history the grid midpoint 0.5 is returned.
    Identical state and context always yield the identical suggestion; exact
    acquisition ties resolve to the smallest grid alpha.
    """
    if not state.active_observations():
        return _MIDPOINT_ALPHA
    mean_z, var_z = _standardized_posterior(state, context, ALPHA_GRID)
    acquisition = mean_z - state.config.beta * np.sqrt(var_z)
    return ALPHA_GRID[int(np.argmin(acquisition))]


def evaluate_criterion(report, criterion: Criterion) -> float:
    """Map an episode report onto the scalar the tuner minimizes."""
    if criterion is Criterion.TRACKING_ERROR:
        return float(report.rms_tracking_error)
    if criterion is Criterion.COMPUTATION_TIME:
        return float(report.mean_step_time_ms)
    raise ValueError(f"unknown criterion {criterion!r}")
