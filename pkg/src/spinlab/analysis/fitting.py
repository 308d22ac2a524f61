"""Nonlinear least-squares core shared by every model.

Parameters are optimised in scaled coordinates u = p / scale with a
trust-region reflective solver (scipy) and a central-difference Jacobian of
step 1e-6 in u. Uncertainties come from (J^T J)^-1 scaled by the reduced
chi-square at the optimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np
from scipy.optimize import least_squares

JAC_STEP = 1e-6


@dataclass(frozen=True)
class Model:
    name: str
    params: tuple
    func: Callable  # func(x, **params) -> y
    guess: Callable  # guess(x, y, fixed) -> dict of starting values
    bounds: Mapping = field(default_factory=dict)
    fixed_defaults: Mapping = field(default_factory=dict)
    post: Optional[Callable] = None  # canonical reordering of a solution dict

    def __call__(self, x, **p):
        return self.func(np.asarray(x, dtype=float), **p)


@dataclass(frozen=True)
class ModelSpec:
    model: str
    fixed: Mapping = field(default_factory=dict)
    initial: Mapping = field(default_factory=dict)
    bounds: Mapping = field(default_factory=dict)

    def __post_init__(self):
        overlap = set(self.fixed) & set(self.initial)
        if overlap:
            raise ValueError(f"parameters both fixed and given initial values: {sorted(overlap)}")


@dataclass
class FitResult:
    model: str
    params: dict
    errors: dict
    residual_norm: float
    converged: bool
    covariance: np.ndarray
    free: tuple
    fixed: dict = field(default_factory=dict)
    message: str = ""
    n_points: int = 0

    def __post_init__(self):
        for k, v in self.errors.items():
            if not (v >= 0 or np.isnan(v)):
                raise ValueError(f"negative uncertainty for {k}")

    def __getitem__(self, key):
        return self.params[key]

    def to_block(self) -> str:
        """Flat key=value lines, prefixed ``fit.``."""
        lines = [
            f"fit.model={self.model}",
            f"fit.converged={int(self.converged)}",
            f"fit.residual_norm={self.residual_norm!r}",
            f"fit.n_points={self.n_points}",
        ]
        for k, v in self.params.items():
            lines.append(f"fit.{k}={float(v)!r}")
            if k in self.errors:
                lines.append(f"fit.{k}.err={float(self.errors[k])!r}")
            else:
                lines.append(f"fit.{k}.fixed=1")
        if self.message:
            lines.append(f"fit.message={self.message.replace(chr(10), ' ')}")
        return "\n".join(lines)

    @classmethod
    def from_block(cls, text: str) -> "FitResult":
        kv = {}
        for line in text.splitlines():
            line = line.strip().lstrip("#").strip()
            if line.startswith("fit.") and "=" in line:
                k, _, v = line.partition("=")
                kv[k[4:]] = v
        params, errors, fixed = {}, {}, {}
        for k, v in kv.items():
            if k in ("model", "converged", "residual_norm", "n_points", "message") or "." in k:
                continue
            params[k] = float(v)
            if f"{k}.err" in kv:
                errors[k] = float(kv[f"{k}.err"])
            else:
                fixed[k] = float(v)
        free = tuple(errors)
        return cls(
            kv.get("model", ""),
            params,
            errors,
            float(kv.get("residual_norm", "nan")),
            kv.get("converged", "0") == "1",
            np.full((len(free), len(free)), np.nan),
            free,
            fixed,
            kv.get("message", ""),
            int(kv.get("n_points", "0")),
        )


def as_xy(data):
    """Accept a SweepResult-like object or an (x, y) pair."""
    if hasattr(data, "axis") and hasattr(data, "contrast"):
        x, y = data.axis, data.contrast
    else:
        x, y = data[0], data[1]
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be equal-length 1-D arrays")
    ok = np.isfinite(x) & np.isfinite(y)
    return x[ok], y[ok]


def _scale(v: float, lo: float, hi: float) -> float:
    s = abs(v)
    if s == 0 or not np.isfinite(s):
        finite = [abs(b) for b in (lo, hi) if np.isfinite(b) and b != 0]
        s = min(finite) if finite else 1.0
    return s


def fit(model: Model, data, spec: Optional[ModelSpec] = None, max_nfev: int = 4000) -> FitResult:
    x, y = as_xy(data)
    spec = spec or ModelSpec(model.name)
    unknown = (set(spec.fixed) | set(spec.initial) | set(spec.bounds)) - set(model.params)
    if unknown:
        raise ValueError(f"unknown parameters for {model.name}: {sorted(unknown)}")
    fixed = dict(model.fixed_defaults)
    for k in spec.initial:
        fixed.pop(k, None)
    fixed.update({k: float(v) for k, v in spec.fixed.items()})
    free = tuple(p for p in model.params if p not in fixed)
    if len(x) < 2 * len(free):
        raise ValueError(f"{model.name}: {len(x)} points for {len(free)} free parameters (need >= {2 * len(free)})")

    start = dict(model.guess(x, y, fixed))
    start.update({k: float(v) for k, v in spec.initial.items()})
    bounds = dict(model.bounds)
    bounds.update(spec.bounds)
    lo = np.array([bounds.get(p, (-np.inf, np.inf))[0] for p in free], dtype=float)
    hi = np.array([bounds.get(p, (-np.inf, np.inf))[1] for p in free], dtype=float)
    p0 = np.array([start[p] for p in free], dtype=float)
    p0 = np.clip(p0, lo, hi)
    scale = np.array([_scale(v, a, b) for v, a, b in zip(p0, lo, hi)])
    # keep the start strictly inside the box
    span = np.where(np.isfinite(hi - lo), hi - lo, np.inf)
    p0 = np.clip(p0, lo + 1e-9 * np.minimum(span, scale), hi - 1e-9 * np.minimum(span, scale))

    def unpack(u):
        p = dict(fixed)
        p.update(zip(free, u * scale))
        return p

    def resid(u):
        r = model.func(x, **unpack(u)) - y
        return np.where(np.isfinite(r), r, 1e30)

    def jac(u):
        J = np.empty((len(x), len(u)))
        for i in range(len(u)):
            du = np.zeros_like(u)
            du[i] = JAC_STEP
            J[:, i] = (resid(u + du) - resid(u - du)) / (2 * JAC_STEP)
        return J

    # optimise on residuals of order one so the solver tolerances mean the same for any data unit
    y_scale = float(np.max(np.abs(y))) if len(y) and np.max(np.abs(y)) > 0 else 1.0

    def resid_opt(u):
        return resid(u) / y_scale

    def jac_opt(u):
        return jac(u) / y_scale

    if not free:
        r = resid(np.zeros(0))
        return FitResult(model.name, unpack(np.zeros(0)), {}, float(np.linalg.norm(r)), True, np.zeros((0, 0)), (), fixed, "", len(x))

    try:
        res = least_squares(
            resid_opt, p0 / scale, jac=jac_opt, bounds=(lo / scale, hi / scale), method="trf",
            x_scale="jac", max_nfev=max_nfev, xtol=1e-12, ftol=1e-12, gtol=1e-12,
        )
        u, ok, msg = res.x, bool(res.success), str(res.message)
    except (ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
        u, ok, msg = p0 / scale, False, f"optimizer failed: {exc}"

    r = resid(u)
    norm = float(np.linalg.norm(r))
    ok = ok and np.isfinite(norm) and norm < 1e29
    # covariance in the scaled coordinates (well conditioned), then mapped back
    Ju = jac(u)
    dof = max(len(x) - len(free), 1)
    s2 = norm**2 / dof
    try:
        cov = np.linalg.pinv(Ju.T @ Ju, rcond=1e-15) * s2 * np.outer(scale, scale)
    except np.linalg.LinAlgError:
        cov = np.full((len(free), len(free)), np.nan)
    err = np.sqrt(np.clip(np.diag(cov), 0, None))
    params = unpack(u)
    errors = dict(zip(free, err))
    if model.post is not None:
        params, errors = model.post(params, errors)
    params = {p: float(params[p]) for p in model.params}
    return FitResult(model.name, params, {k: float(v) for k, v in errors.items()}, norm, ok, cov, free, fixed, "" if ok else msg, len(x))


def r_squared(model: Model, result: FitResult, data) -> float:
    x, y = as_xy(data)
    r = y - model.func(x, **result.params)
    tot = np.sum((y - y.mean()) ** 2)
    return float(1 - np.sum(r**2) / tot) if tot > 0 else float("nan")
