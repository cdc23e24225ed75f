"""Fitting Chinchilla-form scaling laws and deriving compute-optimal allocations.

    L(N, D) = E + A / N**alpha + B / D**beta
"""

from __future__ import annotations

import enum
import itertools
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import least_squares

from .rng import generator

# Model sizes and token counts of the reference 6x6 training grid.
GRID_N = (4.2e6, 8.8e6, 20.3e6, 59.0e6, 275.3e6, 1.4e9)
GRID_D = (1e5, 1e6, 5e6, 20e6, 50e6, 100e6)

_EXP_CAP = 700.0
_LOG_EXPONENT_CAP = 2.5
# Box on (E, log A, log B, log alpha, log beta): keeps starts off the flat
# ridge where A and alpha grow together without changing the fit.
_LOWER = np.array([-np.inf, -60.0, -60.0, math.log(1e-3), math.log(1e-3)])
_UPPER = np.array([np.inf, 200.0, 200.0, _LOG_EXPONENT_CAP, _LOG_EXPONENT_CAP])


class FitError(ValueError):
    """Input runs cannot determine a law (too few or degenerate)."""


class ConvergenceError(ArithmeticError):
    """No start of the optimizer reached a finite fit."""


@dataclass(frozen=True)
class RunRecord:
    dataset_id: str
    params_n: float
    tokens_d: float
    final_loss: float

    def __post_init__(self):
        if not (math.isfinite(self.params_n) and self.params_n > 0):
            raise ValueError(f"params_n must be positive and finite, got {self.params_n!r}")
        if not (math.isfinite(self.tokens_d) and self.tokens_d > 0):
            raise ValueError(f"tokens_d must be positive and finite, got {self.tokens_d!r}")
        if not math.isfinite(self.final_loss):
            raise ValueError(f"final_loss must be finite, got {self.final_loss!r}")


@dataclass(frozen=True)
class ScalingLaw:
    e: float
    a: float
    b: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not math.isfinite(self.e):
            raise ValueError("E must be finite")
        for name in ("a", "b", "alpha", "beta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScalingLaw":
        lower = {k.lower(): v for k, v in data.items()}
        return cls(*(float(lower[k]) for k in ("e", "a", "b", "alpha", "beta")))

    def __call__(self, n, d):
        return evaluate_loss(self, n, d)


class ResidualSpace(str, enum.Enum):
    LINEAR = "LINEAR"
    LOG = "LOG"


def default_init_grid() -> list[tuple[float, float, float, float, float]]:
    """108 starts as (E, log A, log B, alpha, beta)."""
    return [
        (e, log_a, log_b, alpha, beta)
        for alpha, beta, log_a, log_b, e in itertools.product(
            (0.25, 0.75, 1.25), (0.25, 0.75, 1.25), (0.0, 2.0), (0.0, 2.0), (-1.0, 0.0, 1.0)
        )
    ]


@dataclass
class FitConfig:
    residual_space: ResidualSpace = ResidualSpace.LINEAR
    huber_delta: float | None = None  # 1e-2 for LINEAR, 1e-3 for LOG
    init_grid: list[tuple[float, float, float, float, float]] = field(default_factory=default_init_grid)
    max_iters: int = 10_000
    tolerance: float = 1e-8

    def __post_init__(self):
        self.residual_space = ResidualSpace(self.residual_space)
        if self.huber_delta is None:
            self.huber_delta = 1e-2 if self.residual_space is ResidualSpace.LINEAR else 1e-3
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be positive")
        if self.tolerance <= 0 or self.max_iters < 1:
            raise ValueError("tolerance and max_iters must be positive")
        if not self.init_grid:
            raise ValueError("init_grid is empty")
        self.init_grid = [tuple(float(v) for v in p) for p in self.init_grid]

    def to_dict(self) -> dict:
        return {
            "residual_space": self.residual_space.value,
            "huber_delta": self.huber_delta,
            "init_grid": [list(p) for p in self.init_grid],
            "max_iters": self.max_iters,
            "tolerance": self.tolerance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FitConfig":
        kwargs = dict(data)
        if "init_grid" in kwargs:
            kwargs["init_grid"] = [tuple(p) for p in kwargs["init_grid"]]
        return cls(**kwargs)


@dataclass
class FitResult:
    law: ScalingLaw
    objective: float
    chosen_init: int
    converged: bool
    num_runs_used: int

    def to_dict(self) -> dict:
        return {
            "law": self.law.to_dict(),
            "objective": self.objective,
            "chosen_init": self.chosen_init,
            "converged": self.converged,
            "num_runs_used": self.num_runs_used,
        }


@dataclass(frozen=True)
class FlopsModel:
    coeff: float = 6.0

    def __post_init__(self):
        if not self.coeff > 0:
            raise ValueError("FLOPs coefficient must be positive")


def evaluate_loss(law: ScalingLaw, n, d):
    """E + A n^-alpha + B d^-beta; accepts scalars or arrays."""
    n_arr, d_arr = np.asarray(n, dtype=float), np.asarray(d, dtype=float)
    if np.any(n_arr <= 0) or np.any(d_arr <= 0):
        raise ValueError("n and d must be positive")
    out = law.e + law.a * n_arr ** -law.alpha + law.b * d_arr ** -law.beta
    return float(out) if out.ndim == 0 else out


def huber(r: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


def _arrays(runs: Iterable[RunRecord]):
    # Sorting makes the fit independent of input order, down to rounding.
    ordered = sorted(runs, key=lambda r: (r.params_n, r.tokens_d, r.final_loss))
    n = np.array([r.params_n for r in ordered])
    d = np.array([r.tokens_d for r in ordered])
    loss = np.array([r.final_loss for r in ordered])
    return n, d, loss


def residuals(law: ScalingLaw, runs: Sequence[RunRecord], space=ResidualSpace.LINEAR) -> np.ndarray:
    n, d, loss = _arrays(runs)
    pred = evaluate_loss(law, n, d)
    if ResidualSpace(space) is ResidualSpace.LOG:
        if np.any(pred <= 0) or np.any(loss <= 0):
            raise ValueError("LOG residuals need positive predicted and observed losses")
        return np.log(pred) - np.log(loss)
    return pred - loss


def huber_objective(law: ScalingLaw, runs: Sequence[RunRecord], config: FitConfig | None = None) -> float:
    """Mean Huber loss of the residuals of ``law`` on ``runs``."""
    config = config or FitConfig()
    r = residuals(law, runs, config.residual_space)
    return float(np.mean(huber(r, config.huber_delta)))


def _check_runs(runs: Sequence[RunRecord], space: ResidualSpace) -> None:
    if len(runs) < 6:
        raise FitError(f"need at least 6 runs, got {len(runs)}")
    if len({r.params_n for r in runs}) < 2:
        raise FitError("runs span a single model size; A and alpha are not identifiable")
    if len({r.tokens_d for r in runs}) < 2:
        raise FitError("runs span a single token count; B and beta are not identifiable")
    if not all(math.isfinite(r.final_loss) for r in runs):
        raise FitError("non-finite loss in runs")
    if space is ResidualSpace.LOG and any(r.final_loss <= 0 for r in runs):
        raise FitError("LOG residuals need positive observed losses")


def _unpack(x: np.ndarray) -> ScalingLaw | None:
    e, log_a, log_b, log_alpha, log_beta = x
    log_alpha, log_beta = min(log_alpha, _LOG_EXPONENT_CAP), min(log_beta, _LOG_EXPONENT_CAP)
    vals = np.exp(np.clip([log_a, log_b, log_alpha, log_beta], -_EXP_CAP, _EXP_CAP))
    if not np.all(np.isfinite(vals)) or np.any(vals <= 0) or not math.isfinite(e):
        return None
    return ScalingLaw(float(e), *(float(v) for v in vals))


def fit_law(runs: Iterable[RunRecord], config: FitConfig | None = None) -> FitResult:
    """Fit a law by multi-start robust least squares.

    Free variables are (E, log A, log B, log alpha, log beta), so A, B, alpha
    and beta stay positive while E is unconstrained. Each start runs a
    trust-region solver with the Huber loss and the analytic Jacobian; the
    lowest final objective wins, ties going to the earliest start.
    """
    config = config or FitConfig()
    runs = list(runs)
    space = config.residual_space
    _check_runs(runs, space)
    n, d, loss = _arrays(runs)
    ln_n, ln_d = np.log(n), np.log(d)
    log_space = space is ResidualSpace.LOG
    log_loss = np.log(loss) if log_space else None

    def terms(x):
        e, log_a, log_b, log_alpha, log_beta = x
        alpha = math.exp(min(log_alpha, _LOG_EXPONENT_CAP))
        beta = math.exp(min(log_beta, _LOG_EXPONENT_CAP))
        tn = np.exp(np.minimum(log_a - alpha * ln_n, _EXP_CAP))
        td = np.exp(np.minimum(log_b - beta * ln_d, _EXP_CAP))
        return e, alpha, beta, tn, td

    def fun(x):
        e, _, _, tn, td = terms(x)
        pred = e + tn + td
        if log_space:
            return np.log(np.where(pred > 0, pred, np.nan)) - log_loss
        return pred - loss

    def jac(x):
        e, alpha, beta, tn, td = terms(x)
        cols = np.column_stack([np.ones_like(tn), tn, td, -alpha * ln_n * tn, -beta * ln_d * td])
        if log_space:
            cols = cols / (e + tn + td)[:, None]
        return cols

    best: tuple[float, int, np.ndarray, bool] | None = None
    for idx, (e0, log_a0, log_b0, alpha0, beta0) in enumerate(config.init_grid):
        x0 = np.array([e0, log_a0, log_b0, math.log(alpha0), math.log(beta0)])
        if not np.all(np.isfinite(fun(x0))):
            continue
        try:
            with np.errstate(all="ignore"), warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = least_squares(
                    fun, np.clip(x0, _LOWER, _UPPER), jac=jac, bounds=(_LOWER, _UPPER),
                    method="trf", loss="huber", f_scale=config.huber_delta, x_scale="jac",
                    ftol=1e-15, xtol=1e-15, gtol=config.tolerance, max_nfev=config.max_iters,
                )
        except (ValueError, np.linalg.LinAlgError):
            continue
        law = _unpack(res.x)
        if law is None or not np.all(np.isfinite(res.fun)):
            continue
        objective = float(np.mean(huber(res.fun, config.huber_delta)))
        if best is None or objective < best[0]:
            best = (objective, idx, res.x, res.status > 0)
    if best is None:
        raise ConvergenceError("no start produced a finite fit")
    objective, idx, x, converged = best
    law = _unpack(x)
    return FitResult(law, huber_objective(law, runs, config), idx, converged, len(runs))


def synth_runs(
    law: ScalingLaw,
    n_grid: Sequence[float] = GRID_N,
    d_grid: Sequence[float] = GRID_D,
    noise_sigma: float = 0.0,
    seed: int = 0,
    dataset_id: str = "synthetic",
) -> list[RunRecord]:
    """Runs on the full ``n_grid x d_grid`` product, loss times exp(N(0, sigma^2))."""
    if not n_grid or not d_grid:
        raise ValueError("grids must be non-empty")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    pairs = [(float(n), float(d)) for n in n_grid for d in d_grid]
    eps = generator(seed).normal(0.0, noise_sigma, len(pairs)) if noise_sigma > 0 else np.zeros(len(pairs))
    return [
        RunRecord(dataset_id, n, d, evaluate_loss(law, n, d) * math.exp(float(z)))
        for (n, d), z in zip(pairs, eps)
    ]


def n_opt(law: ScalingLaw, c: float, flops: FlopsModel = FlopsModel()) -> float:
    """Compute-optimal parameter count for a budget of ``c`` FLOPs."""
    if not c > 0:
        raise ValueError("compute budget must be positive")
    log_n = (
        math.log(law.alpha * law.a / (law.beta * law.b)) + law.beta * math.log(c / flops.coeff)
    ) / (law.alpha + law.beta)
    return math.exp(log_n)


def d_opt(law: ScalingLaw, c: float, flops: FlopsModel = FlopsModel()) -> float:
    return c / (flops.coeff * n_opt(law, c, flops))


def frontier_rows(law: ScalingLaw, budgets: Iterable[float], flops: FlopsModel = FlopsModel()) -> list[dict]:
    rows = []
    for c in budgets:
        n = n_opt(law, c, flops)
        d = d_opt(law, c, flops)
        rows.append({"C": c, "N_opt": n, "D_opt": d, "predicted_loss": evaluate_loss(law, n, d)})
    return rows
