"""Ensemble statistics and finite-size scaling over random k-SAT grids.

Collects per-formula hardness estimates on (alpha, N) grids, then derives
the transition diagnostics: hardness histograms, mean-hardness and
rho = P(eta > eta_c) tables, erfc data collapse in y = N^nu z, the
susceptibility d<eta>/d alpha with its power-law divergence exponent, and
the polynomial decay exponent of the escape rate with N.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import curve_fit, minimize_scalar
from scipy.special import erfc

from .dynamics import IntegratorConfig
from .escape import (DEFAULT_WINDOW, FitFailureError, InsufficientDataError,
                     batch_size_default, escape_config, fit_kappa, run_batch)
from .formula import EnsembleSpec, SatStatus, dpll_sat, formula_hash_hex, random_ksat
from .util import canonical_json, fnv1a64

log = logging.getLogger(__name__)

ETA_C = 0.5
ETA_MAX = 1.6
ETA_BIN_WIDTH = 0.025
ETA_RANGE = (0.0, 2.0)
GAMMA_Z_EXCLUDE = 0.02


class NonConvergentFitError(RuntimeError):
    pass


@dataclass
class HardnessRecord:
    alpha: float
    n: int
    m: int
    k: int
    formula_hash: str
    index: int
    seed: int
    kappa: float
    eta: float
    r2: float
    stderr: float
    censored: int
    launched: int

    def to_json(self) -> str:
        return canonical_json(asdict(self))


@dataclass
class HardnessSample:
    records: list[HardnessRecord]
    quarantined: list[dict]

    @property
    def etas(self) -> np.ndarray:
        return np.array([r.eta for r in self.records])


def _instance_traj_seed(seed: int, index: int) -> int:
    return fnv1a64(f"traj:{seed}:{index}".encode("ascii"))


def hardness_ensemble(alpha: float, n: int, j: int, seed: int, *, k: int = 3,
                      n_traj: int | None = None, cfg: IntegratorConfig | None = None,
                      window=DEFAULT_WINDOW, min_points: int = 200,
                      workers: int = 1, dpll_budget: int = 2_000_000,
                      max_attempts: int | None = None) -> HardnessSample:
    """Hardness estimates for the first j certified-satisfiable instances.

    Instance indices are scanned in order; unsatisfiable draws and DPLL
    timeouts are skipped (timeouts logged), fit failures quarantined.  The
    scan cutoff depends only on outcomes in index order, so results are
    identical at any worker count.
    """
    if j < 1:
        raise ValueError("need at least one instance")
    if n_traj is None:
        n_traj = batch_size_default(n)
    if cfg is None:
        cfg = escape_config(n)
    if max_attempts is None:
        max_attempts = 20 * j
    spec = EnsembleSpec(n=n, k=k, alpha=alpha, count=max_attempts, seed=seed)

    def process(idx: int):
        f = random_ksat(spec, idx)
        res = dpll_sat(f, budget=dpll_budget)
        if res.status is SatStatus.TIMEOUT:
            log.warning("alpha=%.3g n=%d idx=%d: DPLL budget exhausted, skipped",
                        alpha, n, idx)
            return ("timeout", idx, None)
        if res.status is SatStatus.UNSAT:
            return ("unsat", idx, None)
        curve = run_batch(f, n_traj, cfg, _instance_traj_seed(seed, idx))
        try:
            est = fit_kappa(curve, n, window=window, min_points=min_points)
        except (InsufficientDataError, FitFailureError) as exc:
            return ("fit_failure", idx, str(exc))
        rec = HardnessRecord(
            alpha=float(alpha), n=n, m=f.m, k=k,
            formula_hash=formula_hash_hex(f), index=idx, seed=seed,
            kappa=est.kappa, eta=est.eta, r2=est.r_squared,
            stderr=est.stderr_kappa, censored=curve.censored,
            launched=curve.launched)
        return ("ok", idx, rec)

    records: list[HardnessRecord] = []
    quarantined: list[dict] = []
    next_idx = 0
    wave = max(1, workers * 2)
    while len(records) < j and next_idx < max_attempts:
        chunk = list(range(next_idx, min(next_idx + wave, max_attempts)))
        next_idx = chunk[-1] + 1
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(process, chunk))
        else:
            outcomes = [process(i) for i in chunk]
        for kind, idx, payload in outcomes:
            if len(records) >= j:
                break
            if kind == "ok":
                records.append(payload)
            elif kind == "fit_failure":
                quarantined.append({"index": idx, "reason": payload})
            elif kind == "timeout":
                quarantined.append({"index": idx, "reason": "dpll_timeout"})
            # unsat draws are skipped silently: the ensemble is over
            # satisfiable formulas
    if len(records) < j:
        raise RuntimeError(
            f"only {len(records)}/{j} certified instances within "
            f"{max_attempts} draws at alpha={alpha}, n={n}")
    return HardnessSample(records=records, quarantined=quarantined)


def eta_histogram(records) -> tuple[np.ndarray, np.ndarray]:
    """Normalized hardness density on fixed bins of width 0.025 over [0, 2]."""
    etas = _etas_of(records)
    if etas.size == 0:
        raise ValueError("empty sample")
    bins = int(round((ETA_RANGE[1] - ETA_RANGE[0]) / ETA_BIN_WIDTH))
    density, edges = np.histogram(etas, bins=bins, range=ETA_RANGE, density=True)
    return edges, density


def _etas_of(records) -> np.ndarray:
    if isinstance(records, HardnessSample):
        return records.etas
    return np.array([r.eta for r in records])


def _group_records(records) -> dict[tuple[float, int], list[HardnessRecord]]:
    if isinstance(records, HardnessSample):
        records = records.records
    groups: dict[tuple[float, int], list[HardnessRecord]] = {}
    for r in records:
        groups.setdefault((r.alpha, r.n), []).append(r)
    return groups


def mean_hardness(records, min_count: int = 50) -> list[dict]:
    """Per-(alpha, n) mean hardness with standard errors."""
    rows = []
    for (alpha, n), group in sorted(_group_records(records).items(),
                                    key=lambda kv: (kv[0][1], kv[0][0])):
        etas = np.array([r.eta for r in group])
        if etas.size < min_count:
            log.warning("grid point alpha=%.3g n=%d has %d records (<%d), excluded",
                        alpha, n, etas.size, min_count)
            continue
        stderr = float(etas.std(ddof=1) / math.sqrt(etas.size)) if etas.size > 1 else 0.0
        rows.append({"alpha": alpha, "n": n, "mean_eta": float(etas.mean()),
                     "stderr": stderr, "sigma": float(etas.std(ddof=1)),
                     "count": int(etas.size)})
    return rows


def rho_fraction(records, eta_c: float = ETA_C, min_count: int = 50) -> list[dict]:
    """Fraction of formulas harder than eta_c, with binomial errors."""
    rows = []
    for (alpha, n), group in sorted(_group_records(records).items(),
                                    key=lambda kv: (kv[0][1], kv[0][0])):
        etas = np.array([r.eta for r in group])
        if etas.size < min_count:
            log.warning("grid point alpha=%.3g n=%d has %d records (<%d), excluded",
                        alpha, n, etas.size, min_count)
            continue
        rho = float(np.mean(etas > eta_c))
        stderr = math.sqrt(rho * (1.0 - rho) / etas.size)
        rows.append({"alpha": alpha, "n": n, "rho": rho, "stderr": stderr,
                     "count": int(etas.size)})
    return rows


@dataclass
class CollapseFit:
    nu: float
    alpha_chi: float
    b: float
    y0: float
    residual: float


def collapse_fit(rho_rows: list[dict], nu_range=(0.2, 1.0), nu_step: float = 0.01,
                 alpha_chi_grid=None, y0_bounds=(-5.0, 5.0)) -> CollapseFit:
    """Grid search (nu, alpha_chi) so rho curves collapse onto b*erfc(-y-y0).

    y = N^nu (alpha - alpha_chi)/alpha_chi.  For each candidate pair the
    offset y0 is optimized and the amplitude b solved in closed form; the
    reported parameters minimize the summed squared residual.
    """
    ns = sorted({row["n"] for row in rho_rows})
    if len(ns) < 2:
        raise ValueError("data collapse needs rho tables for >= 2 values of n")
    alpha = np.array([row["alpha"] for row in rho_rows])
    nn = np.array([row["n"] for row in rho_rows], dtype=np.float64)
    rho = np.array([row["rho"] for row in rho_rows])
    if alpha_chi_grid is None:
        lo, hi = alpha.min(), alpha.max()
        alpha_chi_grid = np.arange(lo + 0.01, hi - 0.01 + 1e-12, 0.01)
    nus = np.arange(nu_range[0], nu_range[1] + 1e-12, nu_step)

    def sse_for(y: np.ndarray, y0: float) -> tuple[float, float]:
        e = erfc(-y - y0)
        denom = float(e @ e)
        if denom == 0.0:
            return float(rho @ rho), 0.0
        b = float(rho @ e) / denom
        resid = rho - b * e
        return float(resid @ resid), b

    best = None
    for nu in nus:
        scale = nn ** nu
        for ac in alpha_chi_grid:
            y = scale * (alpha - ac) / ac
            res = minimize_scalar(lambda y0: sse_for(y, y0)[0],
                                  bounds=y0_bounds, method="bounded",
                                  options={"xatol": 1e-5})
            sse, b = sse_for(y, float(res.x))
            if best is None or sse < best[0]:
                best = (sse, float(nu), float(ac), b, float(res.x))
    sse, nu, ac, b, y0 = best
    return CollapseFit(nu=nu, alpha_chi=ac, b=b, y0=y0, residual=sse)


def susceptibility(mean_rows: list[dict], d_alpha: float) -> list[dict]:
    """d<eta>/d alpha on a uniform alpha grid, per n.

    Central differences at interior points, one-sided at the ends; exact
    for data that is linear in alpha.
    """
    rows = []
    by_n: dict[int, list[dict]] = {}
    for row in mean_rows:
        by_n.setdefault(row["n"], []).append(row)
    for n, group in sorted(by_n.items()):
        group = sorted(group, key=lambda r: r["alpha"])
        a = np.array([r["alpha"] for r in group])
        if a.size < 2:
            raise ValueError(f"need >= 2 alpha points at n={n}")
        gaps = np.diff(a)
        if np.any(np.abs(gaps - d_alpha) > 1e-9 * max(1.0, abs(d_alpha))):
            raise ValueError(f"alpha grid at n={n} is not uniform with step {d_alpha}")
        me = np.array([r["mean_eta"] for r in group])
        chi = np.gradient(me, d_alpha)
        for alpha_i, chi_i in zip(a, chi):
            rows.append({"alpha": float(alpha_i), "n": n, "chi": float(chi_i)})
    return rows


@dataclass
class PowerLawFit:
    exponent: float
    stderr: float
    n_points: int


def _log_slope(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    lx, ly = np.log10(x), np.log10(y)
    xm, ym = lx.mean(), ly.mean()
    sxx = float(np.sum((lx - xm) ** 2))
    slope = float(np.sum((lx - xm) * (ly - ym)) / sxx)
    resid = ly - (ym + slope * (lx - xm))
    dof = lx.size - 2
    stderr = math.sqrt(float(np.sum(resid ** 2)) / dof / sxx) if dof > 0 else math.inf
    return slope, stderr


def fit_gamma(chi_rows: list[dict], alpha_chi: float,
              z_exclude: float = GAMMA_Z_EXCLUDE) -> PowerLawFit:
    """Divergence exponent: chi ~ |z|^(-gamma) with z = (alpha-alpha_chi)/alpha_chi.

    Points inside |z| < z_exclude are dropped (finite size rounds off the
    divergence there), as are non-positive chi values.
    """
    z = np.array([(r["alpha"] - alpha_chi) / alpha_chi for r in chi_rows])
    chi = np.array([r["chi"] for r in chi_rows])
    mask = (np.abs(z) >= z_exclude) & (chi > 0)
    if mask.sum() < 3:
        raise ValueError("need >= 3 usable susceptibility points")
    slope, stderr = _log_slope(np.abs(z[mask]), chi[mask])
    return PowerLawFit(exponent=-slope, stderr=stderr, n_points=int(mask.sum()))


@dataclass
class GaussianFit:
    amplitude: float
    mean: float
    sigma: float


def _truncated_gaussian(x, a, mu, sigma):
    return a / (math.sqrt(2 * math.pi) * sigma) * np.exp(-((x - mu) ** 2) / (2 * sigma ** 2))


def gaussian_fit(edges: np.ndarray, density: np.ndarray,
                 support: tuple[float, float] = (0.0, ETA_MAX)) -> GaussianFit:
    """Fit the bell shape A/(sqrt(2 pi) sigma) exp(-(eta-mu)^2/(2 sigma^2)).

    Performed on the histogram restricted to the bounded hardness support;
    the amplitude is fitted, not forced to one, because truncation to the
    support makes the normalization constant deviate from unity.
    """
    centers = 0.5 * (edges[:-1] + edges[1:])
    mask = (centers > support[0]) & (centers <= support[1])
    occupied = int(np.count_nonzero(density[mask] > 0))
    if occupied < 10:
        raise ValueError(f"histogram has {occupied} occupied bins on support, need 10")
    x, y = centers[mask], density[mask]
    w = y / y.sum()
    mu0 = float(x @ w)
    sigma0 = max(float(math.sqrt(((x - mu0) ** 2) @ w)), ETA_BIN_WIDTH / 2)
    try:
        popt, _ = curve_fit(_truncated_gaussian, x, y, p0=(1.0, mu0, sigma0),
                            bounds=((1e-12, -1.0, 1e-4), (np.inf, 3.0, 5.0)),
                            maxfev=20_000)
    except RuntimeError as exc:
        raise NonConvergentFitError(str(exc)) from exc
    return GaussianFit(amplitude=float(popt[0]), mean=float(popt[1]),
                       sigma=float(popt[2]))


def sigma_scaling(sigma_rows=None, gap_rows=None, eta_c: float = ETA_C) -> dict:
    """Exponent checks on distribution widths.

    sigma_rows: (n, sigma) pairs at fixed z; the log-log slope should be
    close to -nu.  gap_rows: (z, mean_eta) pairs near the transition; the
    slope of log |eta_c - mean| vs log |z| should be close to 1 - gamma.
    """
    out = {}
    if sigma_rows:
        ns = np.array([float(n) for n, _ in sigma_rows])
        sig = np.array([float(s) for _, s in sigma_rows])
        slope, stderr = _log_slope(ns, sig)
        out["sigma_vs_n_slope"] = slope
        out["sigma_vs_n_stderr"] = stderr
    if gap_rows:
        z = np.array([abs(float(zi)) for zi, _ in gap_rows])
        gap = np.array([abs(eta_c - float(me)) for _, me in gap_rows])
        mask = (z > 0) & (gap > 0)
        if mask.sum() >= 3:
            slope, stderr = _log_slope(z[mask], gap[mask])
            out["gap_vs_z_slope"] = slope
            out["gap_vs_z_stderr"] = stderr
    return out


def fit_beta(kappa_by_n) -> PowerLawFit:
    """Decay exponent of the escape rate with N: <log kappa> ~ -beta log N."""
    points = []
    for n, kappas in kappa_by_n:
        kappas = np.asarray(list(kappas), dtype=np.float64)
        if kappas.size == 0 or np.any(kappas <= 0):
            raise ValueError(f"kappa values at n={n} must be positive and non-empty")
        points.append((float(n), float(np.mean(np.log10(kappas)))))
    if len(points) < 3:
        raise ValueError("need kappa data for >= 3 values of n")
    lx = np.log10(np.array([p[0] for p in points]))
    ly = np.array([p[1] for p in points])
    xm, ym = lx.mean(), ly.mean()
    sxx = float(np.sum((lx - xm) ** 2))
    slope = float(np.sum((lx - xm) * (ly - ym)) / sxx)
    resid = ly - (ym + slope * (lx - xm))
    dof = lx.size - 2
    stderr = math.sqrt(float(np.sum(resid ** 2)) / dof / sxx) if dof > 0 else math.inf
    return PowerLawFit(exponent=-slope, stderr=stderr, n_points=lx.size)


# ---------------------------------------------------------------------------
# Record (de)serialization
# ---------------------------------------------------------------------------

def records_to_jsonl(records) -> str:
    if isinstance(records, HardnessSample):
        records = records.records
    return "".join(r.to_json() + "\n" for r in records)


def records_from_jsonl(text: str) -> list[HardnessRecord]:
    records = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        records.append(HardnessRecord(**json.loads(line)))
    return records
