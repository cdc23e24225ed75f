"""Scaling-law parameters as linear functions of compressibility H."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .lawfit import ScalingLaw
from .stats import ols_line

PARAMS = ("E", "A", "B", "alpha", "beta")
_ATTR = {"E": "e", "A": "a", "B": "b", "alpha": "alpha", "beta": "beta"}
POSITIVE = ("A", "B", "alpha", "beta")


class DomainError(ValueError):
    """A predicted parameter that must be positive is not."""

    def __init__(self, param: str, h: float, value: float, zero_h: float | None):
        self.param = param
        self.h = h
        self.value = value
        self.zero_h = zero_h
        where = f"; it crosses zero at h={zero_h:.6g}" if zero_h is not None else ""
        super().__init__(f"{param}(h={h:.6g}) = {value:.6g} is not positive{where}")


@dataclass(frozen=True)
class LinearFit:
    m: float
    n: float
    p: float
    r2: float
    points_used: int
    excluded: tuple[int, ...] = ()

    def __call__(self, h: float) -> float:
        return self.m * h + self.n


@dataclass(frozen=True)
class ParamRegressions:
    fits: Mapping[str, LinearFit]
    exclusion_policy: Mapping[str, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if set(self.fits) != set(PARAMS):
            raise ValueError(f"need exactly one fit per parameter {PARAMS}")

    def __getitem__(self, name: str) -> LinearFit:
        return self.fits[name]

    def to_dict(self) -> dict:
        return {
            "parameters": [
                {
                    "parameter": name,
                    "m": f.m,
                    "n": f.n,
                    "p": f.p,
                    "r2": f.r2,
                    "points_used": f.points_used,
                    "exclusions": list(f.excluded),
                }
                for name, f in ((k, self.fits[k]) for k in PARAMS)
            ]
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "ParamRegressions":
        fits = {}
        policy = {}
        for row in data["parameters"]:
            excluded = tuple(row.get("exclusions", ()))
            fits[row["parameter"]] = LinearFit(
                float(row["m"]), float(row["n"]), float(row.get("p", float("nan"))),
                float(row.get("r2", float("nan"))), int(row.get("points_used", 0)), excluded,
            )
            if excluded:
                policy[row["parameter"]] = excluded
        return cls(fits, policy)

    @classmethod
    def from_lines(cls, lines: Mapping[str, tuple[float, float]]) -> "ParamRegressions":
        """Regressions from bare (slope, intercept) pairs, e.g. published values."""
        return cls({k: LinearFit(m, n, float("nan"), float("nan"), 0) for k, (m, n) in lines.items()})


@dataclass(frozen=True)
class ChinchillaConstants:
    """Reference constants blended in by :func:`blended_law`.

    Defaults are the published Chinchilla fit, not values from this package.
    """

    e_p: float = 1.69
    a_p: float = 406.4
    b_p: float = 410.7
    alpha_p: float = 0.34
    beta_p: float = 0.28

    def __post_init__(self):
        for name in ("a_p", "b_p", "alpha_p", "beta_p"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def as_params(self) -> dict[str, float]:
        return {"E": self.e_p, "A": self.a_p, "B": self.b_p, "alpha": self.alpha_p, "beta": self.beta_p}

    @classmethod
    def from_dict(cls, data: dict) -> "ChinchillaConstants":
        return cls(**{k: float(data[k]) for k in ("e_p", "a_p", "b_p", "alpha_p", "beta_p") if k in data})


@dataclass(frozen=True)
class BlendConfig:
    epsilon: float

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")


def regress_params(
    points: Sequence[tuple[float, ScalingLaw]],
    exclude: Mapping[str, Iterable[int]] | None = None,
) -> ParamRegressions:
    """OLS of every law parameter on h.

    ``exclude`` maps a parameter name to point indices left out of that
    parameter's regression only.
    """
    exclude = {k: tuple(sorted(set(v))) for k, v in (exclude or {}).items() if v}
    unknown = set(exclude) - set(PARAMS)
    if unknown:
        raise ValueError(f"unknown parameters in exclusions: {sorted(unknown)}")
    hs = [float(h) for h, _ in points]
    if len(set(hs)) < 3:
        raise ValueError("need at least 3 points with distinct h")
    fits = {}
    for name in PARAMS:
        skip = set(exclude.get(name, ()))
        bad = [i for i in skip if not 0 <= i < len(points)]
        if bad:
            raise ValueError(f"exclusion index out of range for {name}: {bad}")
        x = [h for i, h in enumerate(hs) if i not in skip]
        y = [getattr(law, _ATTR[name]) for i, (_, law) in enumerate(points) if i not in skip]
        if len(set(x)) < 2:
            raise ValueError(f"{name}: fewer than 2 distinct h after exclusions")
        line = ols_line(x, y)
        fits[name] = LinearFit(line.slope, line.intercept, line.p_value, line.r2, len(x), tuple(sorted(skip)))
    return ParamRegressions(fits, exclude)


def _zero_crossing(m: float, n: float) -> float | None:
    return None if m == 0 else -n / m


def _build(h: float, values: dict[str, float], lines: dict[str, tuple[float, float]]) -> ScalingLaw:
    for name in POSITIVE:
        if not values[name] > 0:
            m, n = lines[name]
            raise DomainError(name, h, values[name], _zero_crossing(m, n))
    return ScalingLaw(values["E"], values["A"], values["B"], values["alpha"], values["beta"])


def law_at(h: float, regs: ParamRegressions) -> ScalingLaw:
    """The law predicted at compressibility ``h``; no clamping."""
    lines = {k: (regs[k].m, regs[k].n) for k in PARAMS}
    return _build(h, {k: m * h + n for k, (m, n) in lines.items()}, lines)


def blended_law(
    h: float, blend: BlendConfig, prime: ChinchillaConstants, regs: ParamRegressions
) -> ScalingLaw:
    """Each parameter is ``(1 - eps) * prime + eps * (m h + n)``."""
    eps = blend.epsilon
    base = prime.as_params()
    values = {}
    lines = {}
    for k in PARAMS:
        m, n = regs[k].m, regs[k].n
        if eps == 0.0:
            values[k] = base[k]
        elif eps == 1.0:
            values[k] = m * h + n
        else:
            values[k] = (1.0 - eps) * base[k] + eps * (m * h + n)
        # The blend is itself a line in h.
        lines[k] = (eps * m, (1.0 - eps) * base[k] + eps * n)
    return _build(h, values, lines)


def crossover_h(regs: ParamRegressions, x: str, y: str) -> float | None:
    """h where the regression lines of parameters ``x`` and ``y`` meet."""
    fx, fy = regs[x], regs[y]
    if fx.m == fy.m:
        return None
    return (fy.n - fx.n) / (fx.m - fy.m)


def frontier_exponent(law: ScalingLaw) -> tuple[float, float]:
    """Growth exponents of (N_opt, D_opt) in the compute budget."""
    total = law.alpha + law.beta
    bn = law.beta / total
    return bn, 1.0 - bn


def regression_lines_csv(regs: ParamRegressions, h_min: float, h_max: float, steps: int) -> str:
    if steps < 2:
        raise ValueError("steps must be >= 2")
    rows = ["h," + ",".join(PARAMS)]
    for h in map(float, np.linspace(h_min, h_max, steps)):
        rows.append(f"{h!r}," + ",".join(repr(regs[k](h)) for k in PARAMS))
    return "\n".join(rows) + "\n"
