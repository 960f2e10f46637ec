"""Escape-rate estimation from trajectory batches.

Launch many trajectories from random points of the sampling domain (the
hypercube intersected with a sphere whose radius grows like sqrt(N)), build
the empirical survival curve q(t) of not-yet-solved runs, and fit the
exponential tail q(t) ~ exp(-kappa*t).  The per-formula hardness is
eta = -log10(kappa) / log10(N).
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dynamics import (ContinuousState, IntegrationStallError, IntegratorConfig,
                       TrajectoryStatus, integrate)
from .formula import Formula
from .util import STREAM_TRAJECTORY, substream

log = logging.getLogger(__name__)

DEFAULT_WINDOW = (0.5, 0.02)


class SamplingError(RuntimeError):
    """Rejection sampling failed to land inside the domain."""


class InsufficientDataError(ValueError):
    """Too few uncensored solve times inside the fit window."""


class FitFailureError(ValueError):
    """Survival tail has a non-decaying slope; formula flagged."""


@dataclass
class SurvivalCurve:
    """Sorted analog solve times plus the censored remainder of a batch."""

    solve_times: np.ndarray
    launched: int
    censored: int
    censor_time: float

    def __post_init__(self):
        self.solve_times = np.sort(np.asarray(self.solve_times, dtype=np.float64))
        if self.solve_times.size and self.solve_times[0] < 0:
            raise ValueError("negative solve time")
        if self.solve_times.size + self.censored != self.launched:
            raise ValueError("solved + censored must equal launched")


@dataclass
class EscapeEstimate:
    kappa: float
    eta: float
    window: tuple[float, float]
    r_squared: float
    stderr_kappa: float
    tau: float
    n: int
    n_points: int


def domain_radius(n: int, k: int) -> float:
    """Radius of the sampling sphere: sqrt(N - 1 + (k-1)^2/(k+1)^2)."""
    return math.sqrt(n - 1 + ((k - 1) / (k + 1)) ** 2)


def batch_size_default(n: int) -> int:
    """Trajectories per formula, stepped down with problem size."""
    if n <= 200:
        return 10_000
    if n <= 400:
        return 5_000
    return 2_000


def escape_config(n: int, **overrides) -> IntegratorConfig:
    """Integrator defaults for escape runs; analog budget grows with N."""
    params = {"t_max": 10.0 * n}
    params.update(overrides)
    return IntegratorConfig(**params)


def sample_initial(f: Formula, seed: int, index: int,
                   max_rejections: int = 10_000) -> ContinuousState:
    """Uniform point of the hypercube conditioned on |s| <= domain radius.

    Deterministic in (seed, index); clause weights start at one (log 0).
    """
    r2 = domain_radius(f.n, f.k) ** 2
    rng = substream(seed, STREAM_TRAJECTORY, index)
    for _ in range(max_rejections):
        s = rng.uniform(-1.0, 1.0, size=f.n)
        if float(s @ s) <= r2:
            return ContinuousState(s=s, log_a=np.zeros(f.m), t=0.0)
    raise SamplingError(f"no point inside the domain after {max_rejections} draws")


def run_batch(f: Formula, n_traj: int, cfg: IntegratorConfig, seed: int,
              workers: int = 1) -> SurvivalCurve:
    """Integrate n_traj trajectories from fresh domain samples.

    Trajectory i uses the RNG stream keyed by (seed, i), so results are a
    deterministic ordered merge no matter how many workers run them.
    TIME_BUDGET, OVERFLOW, and stalled runs all count as censored.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")

    def one(i: int) -> float:
        state = sample_initial(f, seed, i)
        try:
            out = integrate(f, state, cfg)
        except IntegrationStallError as exc:
            log.warning("trajectory %d stalled: %s", i, exc)
            return math.nan
        if out.status is TrajectoryStatus.SOLVED:
            return out.t_solve
        return math.nan

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(n_traj)))
    else:
        results = [one(i) for i in range(n_traj)]

    times = np.array([t for t in results if not math.isnan(t)])
    censored = n_traj - times.size
    return SurvivalCurve(solve_times=times, launched=n_traj,
                         censored=censored, censor_time=cfg.t_max)


def survival_points(curve: SurvivalCurve) -> tuple[np.ndarray, np.ndarray]:
    """Empirical survival step points: after the i-th solve, q = 1 - i/launched."""
    times = curve.solve_times
    q = 1.0 - np.arange(1, times.size + 1) / curve.launched
    return times, q


def fit_kappa(curve: SurvivalCurve, n: int, window: tuple[float, float] = DEFAULT_WINDOW,
              min_points: int = 200) -> EscapeEstimate:
    """Least-squares line through ln q(t) restricted to the survival window.

    The window [q_lo, q_hi] drops the initial transient (default above
    q = 0.5) and the noisy extreme tail (default below q = 0.02); points at
    or past the censor time are never used.
    """
    q_hi, q_lo = window
    if not 0.0 < q_lo < q_hi <= 1.0:
        raise ValueError(f"invalid window {window}; need 0 < q_lo < q_hi <= 1")
    times, q = survival_points(curve)
    mask = (q >= q_lo) & (q <= q_hi) & (times < curve.censor_time) & (q > 0)
    n_points = int(mask.sum())
    if n_points < max(min_points, 3):
        raise InsufficientDataError(
            f"{n_points} survival points inside window {window}, "
            f"need {max(min_points, 3)}")
    x = times[mask]
    y = np.log(q[mask])
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0.0:
        raise FitFailureError("degenerate window: no spread in solve times")
    sxy = float(np.sum((x - xm) * (y - ym)))
    slope = sxy / sxx
    if slope >= 0:
        raise FitFailureError(f"non-decaying survival tail (slope {slope:.3g})")
    resid = y - (ym + slope * (x - xm))
    sse = float(np.sum(resid ** 2))
    sst = float(np.sum((y - ym) ** 2))
    r_squared = 1.0 - sse / sst if sst > 0 else 1.0
    stderr = math.sqrt(sse / (n_points - 2) / sxx) if n_points > 2 else math.inf

    kappa = -slope
    eta = -math.log10(kappa) / math.log10(n)
    return EscapeEstimate(kappa=kappa, eta=eta, window=(q_hi, q_lo),
                          r_squared=r_squared, stderr_kappa=stderr,
                          tau=1.0 / kappa, n=n, n_points=n_points)


def survival_csv(curve: SurvivalCurve) -> str:
    """Two-column CSV (t, empirical survival) for plotting."""
    times, q = survival_points(curve)
    lines = ["t,q"]
    for t, qi in zip(times, q):
        lines.append(f"{float(t)!r},{float(qi)!r}")
    return "\n".join(lines) + "\n"
