"""Scaling fits: effective central charge, chord power laws, correlation lengths, nu.

Every single-exponent form is reduced to linear least squares in transformed
coordinates. Only the exponential decay with an additive offset needs an
iterative solver (multi-start damped Gauss-Newton).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

FIT_KINDS = ("cft_mi", "cft_s2", "powerlaw_chord", "exp_decay", "nu_loglog", "qat_reference")
GN_RTOL = 1e-12
GN_MAX_ITER = 200
COLLINEAR_COND = 1e10
# bounds on xi during the iteration; beyond them the model is numerically degenerate
XI_MIN = 1e-3
XI_MAX_SPAN = 1e6


class FitError(ValueError):
    """The data cannot determine the requested parameters."""


@dataclass
class FitResult:
    kind: str
    parameters: dict[str, float]
    residual_rms: float
    window: tuple[float, float]
    n_points: int
    uncertainties: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def __getitem__(self, name: str) -> float:
        return self.parameters[name]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["window"] = list(self.window)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> FitResult:
        data = dict(data)
        data["window"] = tuple(data["window"])
        return cls(**data)


def chord_log(x: np.ndarray, L: int) -> np.ndarray:
    """``log[(L/pi) sin(pi x / L)]``."""
    return np.log(L / np.pi * np.sin(np.pi * np.asarray(x, dtype=float) / L))


def _select(points, window: tuple[float, float], key=None) -> tuple[np.ndarray, np.ndarray]:
    pts = sorted((float(x), float(y)) for x, y in points)
    key = key or (lambda x: x)
    lo, hi = window
    sel = [(x, y) for x, y in pts if lo <= key(x) <= hi]
    if not sel:
        return np.empty(0), np.empty(0)
    xs, ys = zip(*sel)
    return np.array(xs), np.array(ys)


def _linear_fit(design: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Least squares with residual-rescaled standard errors."""
    n, k = design.shape
    sv = np.linalg.svd(design, compute_uv=False)
    if sv[-1] == 0.0 or sv[0] / sv[-1] > COLLINEAR_COND:
        raise FitError("regressors are collinear or degenerate")
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    rss = float(resid @ resid)
    dof = n - k
    cov = np.linalg.inv(design.T @ design) * (rss / dof if dof > 0 else 0.0)
    return coef, np.sqrt(np.clip(np.diag(cov), 0.0, None)), math.sqrt(rss / n)


def _window_bounds(xs: np.ndarray) -> tuple[float, float]:
    return float(xs.min()), float(xs.max())


def fit_cft_mi(points: Sequence[tuple[float, float]], L: int, window: tuple[float, float] | None = None) -> FitResult:
    """``MI(L_A) = (c_eff / 2) * chord_log(L_A) + beta1``; default window ``[3, L-3]``."""
    window = window or (3, L - 3)
    xs, ys = _select(points, window)
    if len(xs) < 3:
        raise FitError(f"need at least 3 points in window {window}, got {len(xs)}")
    design = np.column_stack([chord_log(xs, L), np.ones_like(xs)])
    (slope, beta1), (dslope, dbeta), rms = _linear_fit(design, ys)
    return FitResult(
        "cft_mi",
        {"c_eff": 2.0 * slope, "beta1": beta1},
        rms,
        _window_bounds(xs),
        len(xs),
        {"c_eff": 2.0 * dslope, "beta1": dbeta},
    )


def fit_cft_s2(points: Sequence[tuple[float, float]], L: int, window: tuple[float, float] | None = None) -> FitResult:
    """``S2(L_A) = alpha0 L_A + (c_eff / 4) chord_log(L_A) + alpha1``; default window ``[3, L-3]``."""
    window = window or (3, L - 3)
    xs, ys = _select(points, window)
    if len(xs) < 4:
        raise FitError(f"need at least 4 points in window {window}, got {len(xs)}")
    design = np.column_stack([xs, chord_log(xs, L) / 4.0, np.ones_like(xs)])
    coef, err, rms = _linear_fit(design, ys)
    names = ("alpha0", "c_eff", "alpha1")
    return FitResult(
        "cft_s2",
        dict(zip(names, map(float, coef))),
        rms,
        _window_bounds(xs),
        len(xs),
        dict(zip(names, map(float, err))),
    )


def fit_powerlaw_chord(
    points: Sequence[tuple[float, float]],
    L: int,
    window: tuple[float, float] | None = None,
    exponent: str = "eta",
) -> FitResult:
    """``C(r) = gamma0 * (pi / (L sin(pi r / L)))**eta`` by regression in log-log coordinates.

    The window applies to the folded distance ``min(r, L - r)`` (default ``[3, L/2]``),
    so reflected input selects the same points. If a non-positive value falls inside
    the window, the window is cut just below the first such distance and a note is
    added.
    """
    window = window or (3, L // 2)
    fold = lambda r: min(r, L - r)  # noqa: E731
    xs, ys = _select(points, window, key=fold)
    notes = []
    if len(xs) and np.any(ys <= 0):
        folded = np.array([fold(x) for x in xs])
        cut = folded[ys <= 0].min()
        keep = folded < cut
        xs, ys = xs[keep], ys[keep]
        notes.append(f"window shrunk below r={cut:g}: non-positive correlator")
        logger.info("power-law window shrunk below r=%g (non-positive values)", cut)
    if len(xs) < 3:
        raise FitError(f"need at least 3 positive points in window {window}, got {len(xs)}")
    u = np.log(np.pi / (L * np.sin(np.pi * xs / L)))
    design = np.column_stack([u, np.ones_like(u)])
    (eta, log_g), (deta, dlog_g), rms = _linear_fit(design, np.log(ys))
    folded = [fold(x) for x in xs]
    return FitResult(
        "powerlaw_chord",
        {exponent: float(eta), "gamma0": math.exp(log_g)},
        rms,
        (float(min(folded)), float(max(folded))),
        len(xs),
        {exponent: float(deta), "gamma0": math.exp(log_g) * float(dlog_g)},
        notes,
    )


# --------------------------------------------------------------------------- exponential decay


def _exp_model(theta: np.ndarray, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a0, xi, a1 = theta
    e = np.exp(-r / xi)
    jac = np.column_stack([e, a0 * e * r / xi**2, np.ones_like(r)])
    return a0 * e + a1, jac


def _gauss_newton(theta: np.ndarray, r: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float, bool]:
    """Levenberg-damped Gauss-Newton on ``sum (model - y)**2`` with ``xi`` kept in a sane range."""
    model, jac = _exp_model(theta, r)
    res = model - y
    cost = float(res @ res)
    xi_max = XI_MAX_SPAN * float(r.max())
    mu = 1e-3
    for _ in range(GN_MAX_ITER):
        jtj = jac.T @ jac
        grad = jac.T @ res
        damp = mu * np.diag(np.diag(jtj) + 1e-300)
        try:
            step = np.linalg.solve(jtj + damp, -grad)
        except np.linalg.LinAlgError:
            return theta, cost, False
        trial = theta + step
        if not (XI_MIN <= trial[1] <= xi_max and np.all(np.isfinite(trial))):
            mu *= 10.0
            continue
        new_model, new_jac = _exp_model(trial, r)
        new_res = new_model - y
        new_cost = float(new_res @ new_res)
        if new_cost <= cost:
            small_step = np.linalg.norm(step) <= GN_RTOL * (np.linalg.norm(theta) + GN_RTOL)
            small_gain = cost - new_cost <= GN_RTOL * cost
            theta, res, jac, cost = trial, new_res, new_jac, new_cost
            mu = max(mu / 3.0, 1e-12)
            if small_step or small_gain or cost == 0.0:
                return theta, cost, True
        else:
            mu *= 3.0
            if mu > 1e12:
                return theta, cost, True
    return theta, cost, False


def _initial_guess(r: np.ndarray, y: np.ndarray, a1: float) -> np.ndarray:
    z = y - a1
    sign = 1.0 if np.mean(z) >= 0 else -1.0
    z = sign * z
    mask = z > 1e-14 * max(np.abs(y).max(), 1e-300)
    span = float(r.max() - r.min()) or 1.0
    if mask.sum() >= 2:
        slope, icpt = np.polyfit(r[mask], np.log(z[mask]), 1)
        xi = -1.0 / slope if slope < 0 else span
        a0 = sign * math.exp(icpt)
    else:
        xi, a0 = span / 2.0, sign * float(np.abs(z).max())
    return np.array([a0, min(max(xi, 1e-3), 1e3 * span), a1])


def fit_exp_decay(points: Sequence[tuple[float, float]], window: tuple[float, float] | None = None) -> FitResult:
    """``C(r) = a0 exp(-r / xi) + a1`` by multi-start damped Gauss-Newton.

    Starts differ in the offset guess (minimum of the data, zero, mean of the
    three farthest points). The lowest-residual solution is returned; if no start
    converges it is still returned with a note.
    """
    if window is None:
        rs = [float(x) for x, _ in points]
        window = (2, max(rs) if rs else 2)
    r, y = _select(points, window)
    if len(r) < 4:
        raise FitError(f"need at least 4 points in window {window}, got {len(r)}")
    scale = max(float(np.abs(y).max()), 1e-300)
    if float(y.max() - y.min()) <= 1e-12 * scale:
        raise FitError("constant data: amplitude vanishes and the correlation length is unidentifiable")

    best = None
    for a1 in (float(y.min()), 0.0, float(np.mean(y[-3:]))):
        theta, cost, ok = _gauss_newton(_initial_guess(r, y, a1), r, y)
        if best is None or cost < best[1]:
            best = (theta, cost, ok)
    theta, cost, ok = best
    a0, xi, a1 = map(float, theta)
    if abs(a0) <= 1e-10 * scale:
        raise FitError("fitted amplitude vanishes; correlation length unidentifiable")
    n = len(r)
    _, jac = _exp_model(theta, r)
    dof = n - 3
    try:
        cov = np.linalg.inv(jac.T @ jac) * (cost / dof if dof > 0 else 0.0)
        err = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        err = np.full(3, np.nan)
    notes = [] if ok else ["no start met the convergence tolerance; best attempt returned"]
    if not ok:
        logger.warning("exponential fit did not converge; returning best attempt")
    return FitResult(
        "exp_decay",
        {"xi": xi, "a0": a0, "a1": a1},
        math.sqrt(cost / n),
        _window_bounds(r),
        n,
        {"xi": float(err[1]), "a0": float(err[0]), "a1": float(err[2])},
        notes,
    )


def fit_nu(points: Sequence[tuple[float, float]]) -> FitResult:
    """Log-log regression of ``xi`` against ``|J/h - 1|``; ``nu`` is the slope magnitude.

    The raw (signed) slope is kept as ``slope``.
    """
    pts = sorted((float(d), float(x)) for d, x in points)
    if len(pts) < 3:
        raise FitError("need at least 3 points")
    d, xi = np.array(pts).T
    if np.any(d <= 0) or np.any(xi <= 0):
        raise FitError("distances and correlation lengths must be positive")
    design = np.column_stack([np.log(d), np.ones_like(d)])
    (slope, icpt), (dslope, dicpt), rms = _linear_fit(design, np.log(xi))
    return FitResult(
        "nu_loglog",
        {"nu": abs(float(slope)), "slope": float(slope), "prefactor": math.exp(icpt)},
        rms,
        (float(d.min()), float(d.max())),
        len(d),
        {"nu": float(dslope), "slope": float(dslope)},
    )


def qat_reference(lam: float) -> tuple[float, float]:
    """Ashkin-Teller critical-line exponents ``(eta_X, nu)`` at coupling ``lam``."""
    if not -1.0 / math.sqrt(2.0) - 1e-15 <= lam <= 1.0:
        raise ValueError(f"lambda={lam} outside [-1/sqrt(2), 1]")
    ac = math.acos(-lam)
    return math.pi / ac, 1.0 / (2.0 - (math.pi / 2.0) / ac)
