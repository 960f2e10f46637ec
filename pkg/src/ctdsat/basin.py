"""Two-dimensional basin-of-attraction maps and boundary dimension estimates.

A map integrates one trajectory per grid cell, varying only the first two
coordinates over [-1, 1]^2 while all remaining coordinates start from one
fixed random background vector.  Cells are colored by the solution reached
(keyed by assignment content hash); box counting over the inter-basin
boundary quantifies how rough the boundaries are.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (ContinuousState, IntegrationStallError, IntegratorConfig,
                       TrajectoryStatus, integrate)
from .formula import Formula
from .util import STREAM_BASIN, fnv1a64, hash_hex, substream

log = logging.getLogger(__name__)

BOX_SIZES = (1, 2, 4, 8, 16, 32)


class BoxCountError(ValueError):
    """Too few boundary cells for a meaningful dimension estimate."""


@dataclass
class BasinMap:
    """Per-cell solution ids and solve times on an R x R slice of the cube.

    ids[iy, ix] is the 64-bit content hash of the assignment reached from
    cell (ix, iy); censored cells (no solution within budget) are flagged
    separately.  Row iy=0 is the s2 = +1 edge, column ix=0 the s1 = -1 edge.
    """

    ids: np.ndarray
    censored: np.ndarray
    t_solve: np.ndarray
    background: np.ndarray
    bounds: tuple[tuple[float, float], tuple[float, float]]
    assignments: dict[int, np.ndarray] = field(repr=False)
    low_confidence: bool = False

    @property
    def resolution(self) -> int:
        return self.ids.shape[0]


def assignment_id(bits: np.ndarray) -> int:
    """Canonical 64-bit hash of an assignment (its 0/1 character string)."""
    return fnv1a64("".join("1" if b else "0" for b in bits).encode("ascii"))


def cell_centers(resolution: int, lo: float, hi: float) -> np.ndarray:
    return lo + (np.arange(resolution) + 0.5) * (hi - lo) / resolution


def basin_map(f: Formula, resolution: int = 600, background_seed: int = 0,
              cfg: IntegratorConfig | None = None,
              bounds=((-1.0, 1.0), (-1.0, 1.0)), workers: int = 1) -> BasinMap:
    """Integrate one trajectory per grid cell; the caller certifies f is SAT.

    Deterministic in (formula, background_seed, cfg, bounds); rows are
    computed independently, so worker count never changes the result.
    """
    if f.n < 2:
        raise ValueError("basin maps need at least two variables")
    if cfg is None:
        cfg = IntegratorConfig(t_max=10.0 * f.n)
    rng = substream(background_seed, STREAM_BASIN, 0)
    background = rng.uniform(-1.0, 1.0, size=f.n)
    (lo1, hi1), (lo2, hi2) = bounds
    s1s = cell_centers(resolution, lo1, hi1)
    s2s = cell_centers(resolution, hi2, lo2)  # row 0 at the top edge

    def run_row(iy: int):
        row_ids = np.zeros(resolution, dtype=np.uint64)
        row_cen = np.zeros(resolution, dtype=bool)
        row_t = np.full(resolution, np.nan)
        found: dict[int, np.ndarray] = {}
        for ix in range(resolution):
            s = background.copy()
            s[0] = s1s[ix]
            s[1] = s2s[iy]
            state = ContinuousState(s=s, log_a=np.zeros(f.m), t=0.0)
            try:
                out = integrate(f, state, cfg)
            except IntegrationStallError:
                row_cen[ix] = True
                continue
            if out.status is TrajectoryStatus.SOLVED:
                sid = assignment_id(out.solution)
                row_ids[ix] = sid
                row_t[ix] = out.t_solve
                found.setdefault(sid, out.solution)
            else:
                row_cen[ix] = True
        return row_ids, row_cen, row_t, found

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_row, range(resolution)))
    else:
        rows = [run_row(iy) for iy in range(resolution)]

    ids = np.stack([r[0] for r in rows])
    censored = np.stack([r[1] for r in rows])
    t_solve = np.stack([r[2] for r in rows])
    assignments: dict[int, np.ndarray] = {}
    for r in rows:
        for sid, bits in r[3].items():
            assignments.setdefault(sid, bits)

    frac = censored.mean()
    low_confidence = bool(frac > 0.05)
    if low_confidence:
        log.warning("basin map flagged low-confidence: %.1f%% censored cells",
                    100 * frac)
    return BasinMap(ids=ids, censored=censored, t_solve=t_solve,
                    background=background, bounds=bounds,
                    assignments=assignments, low_confidence=low_confidence)


def boundary_cells(bmap: BasinMap | np.ndarray, censored: np.ndarray | None = None) -> np.ndarray:
    """Cells whose 4-neighborhood contains a different basin.

    Censored cells are excluded: they are never boundary themselves and do
    not induce boundary on their neighbors.
    """
    if isinstance(bmap, BasinMap):
        ids, censored = bmap.ids, bmap.censored
    else:
        ids = bmap
        if censored is None:
            censored = np.zeros(ids.shape, dtype=bool)
    ok = ~censored
    out = np.zeros(ids.shape, dtype=bool)
    for axis, shift in ((0, 1), (0, -1), (1, 1), (1, -1)):
        nb_ids = np.roll(ids, shift, axis=axis)
        nb_ok = np.roll(ok, shift, axis=axis)
        differs = (ids != nb_ids) & ok & nb_ok
        # roll wraps around; mask off the wrapped edge
        if axis == 0 and shift == 1:
            differs[0, :] = False
        elif axis == 0 and shift == -1:
            differs[-1, :] = False
        elif axis == 1 and shift == 1:
            differs[:, 0] = False
        else:
            differs[:, -1] = False
        out |= differs
    return out


def box_dimension(boundary: np.ndarray, sizes=BOX_SIZES,
                  min_cells: int = 100) -> tuple[float, float]:
    """Box-counting dimension of a binary boundary grid.

    Counts occupied boxes at the given edge sizes and returns the negated
    log-log slope together with the regression r^2.
    """
    boundary = np.asarray(boundary, dtype=bool)
    n_cells = int(boundary.sum())
    if n_cells < min_cells:
        raise BoxCountError(f"{n_cells} boundary cells, need {min_cells}")
    counts = []
    for size in sizes:
        ny = math.ceil(boundary.shape[0] / size) * size
        nx = math.ceil(boundary.shape[1] / size) * size
        padded = np.zeros((ny, nx), dtype=bool)
        padded[:boundary.shape[0], :boundary.shape[1]] = boundary
        blocks = padded.reshape(ny // size, size, nx // size, size)
        counts.append(int(blocks.any(axis=(1, 3)).sum()))
    x = np.log(np.asarray(sizes, dtype=np.float64))
    y = np.log(np.asarray(counts, dtype=np.float64))
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    resid = y - (ym + slope * (x - xm))
    sst = float(np.sum((y - ym) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / sst if sst > 0 else 1.0
    return -slope, r2


def recolor_by_cluster(bmap: BasinMap, f: Formula, n_cap: int = 24) -> np.ndarray:
    """Map solution ids to solution-cluster indices (-1 for censored cells)."""
    from .clusters import cluster_report, encode_assignment

    report = cluster_report(f, n_cap)
    code_to_cluster: dict[int, int] = {}
    for ci, members in enumerate(report.clusters):
        for i in members:
            code_to_cluster[encode_assignment(report.solutions[i])] = ci
    id_to_cluster = {}
    for sid, bits in bmap.assignments.items():
        code = encode_assignment(bits)
        assert code in code_to_cluster, "map solution missing from enumeration"
        id_to_cluster[sid] = code_to_cluster[code]
    out = np.full(bmap.ids.shape, -1, dtype=np.int32)
    for iy in range(bmap.ids.shape[0]):
        for ix in range(bmap.ids.shape[1]):
            if not bmap.censored[iy, ix]:
                out[iy, ix] = id_to_cluster[int(bmap.ids[iy, ix])]
    return out


# ---------------------------------------------------------------------------
# Renderers (PGM time map, PPM color map, raw CSV)
# ---------------------------------------------------------------------------

def render_time_pgm(bmap: BasinMap) -> bytes:
    """Grayscale P5 image of normalized log solve time; darker is longer."""
    r = bmap.resolution
    gray = np.zeros((r, r), dtype=np.uint8)
    solved = ~bmap.censored
    if solved.any():
        t = bmap.t_solve[solved]
        positive = t[t > 0]
        floor = positive.min() if positive.size else 1.0
        logt = np.log10(np.maximum(t, floor))
        lo, hi = logt.min(), logt.max()
        if hi > lo:
            scaled = (logt - lo) / (hi - lo)
        else:
            scaled = np.zeros_like(logt)
        gray[solved] = np.round(255 * (1.0 - scaled)).astype(np.uint8)
    header = f"P5\n{r} {r}\n255\n".encode("ascii")
    return header + gray.tobytes()


def _palette_color(sid: int) -> tuple[int, int, int]:
    # offset keeps every basin color away from the reserved censored black
    return (40 + (sid & 0xFF) % 216,
            40 + ((sid >> 8) & 0xFF) % 216,
            40 + ((sid >> 16) & 0xFF) % 216)


def render_solution_ppm(bmap: BasinMap) -> bytes:
    """P6 color image keyed by solution id; censored cells are black."""
    r = bmap.resolution
    img = np.zeros((r, r, 3), dtype=np.uint8)
    colors = {sid: _palette_color(sid) for sid in bmap.assignments}
    for iy in range(r):
        for ix in range(r):
            if not bmap.censored[iy, ix]:
                img[iy, ix] = colors[int(bmap.ids[iy, ix])]
    header = f"P6\n{r} {r}\n255\n".encode("ascii")
    return header + img.tobytes()


def map_csv(bmap: BasinMap) -> str:
    (lo1, hi1), (lo2, hi2) = bmap.bounds
    r = bmap.resolution
    s1s = cell_centers(r, lo1, hi1)
    s2s = cell_centers(r, hi2, lo2)
    lines = ["iy,ix,s1,s2,solution,t_solve"]
    for iy in range(r):
        for ix in range(r):
            if bmap.censored[iy, ix]:
                lines.append(f"{iy},{ix},{float(s1s[ix])!r},{float(s2s[iy])!r},,")
            else:
                lines.append(
                    f"{iy},{ix},{float(s1s[ix])!r},{float(s2s[iy])!r},"
                    f"{hash_hex(int(bmap.ids[iy, ix]))},{float(bmap.t_solve[iy, ix])!r}")
    return "\n".join(lines) + "\n"
