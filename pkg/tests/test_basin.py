import numpy as np
import pytest

from ctdsat.basin import (BoxCountError, assignment_id, basin_map,
                          boundary_cells, box_dimension, map_csv,
                          recolor_by_cluster, render_solution_ppm,
                          render_time_pgm)
from ctdsat.dynamics import IntegratorConfig
from ctdsat.formula import make_formula


def sierpinski_carpet(level=6):
    """Synthetic fractal oracle with dimension log 8 / log 3 ~ 1.893."""
    size = 3 ** level
    idx = np.arange(size)
    keep = np.ones(size, dtype=bool)
    grid = np.ones((size, size), dtype=bool)
    for iy in range(size):
        for ix in range(size):
            y, x = iy, ix
            while y or x:
                if y % 3 == 1 and x % 3 == 1:
                    grid[iy, ix] = False
                    break
                y //= 3
                x //= 3
    return grid


@pytest.fixture(scope="module")
def two_unit_clause_map():
    # (x1) and (x2) as 1-literal clauses: unique solution, single basin
    f = make_formula(2, [[(0, 1)], [(1, 1)]], k=1)
    return f, basin_map(f, resolution=16, background_seed=1,
                        cfg=IntegratorConfig(t_max=50))


class TestBasinMap:
    def test_single_attractor_single_color(self, two_unit_clause_map):
        f, bmap = two_unit_clause_map
        assert not bmap.censored.any()
        assert len(bmap.assignments) == 1
        sid = next(iter(bmap.assignments))
        assert np.all(bmap.ids == np.uint64(sid))
        assert bmap.assignments[sid].tolist() == [True, True]

    def test_smoke_map_populates_all_cells(self, example3):
        bmap = basin_map(example3, resolution=4, background_seed=3,
                         cfg=IntegratorConfig(t_max=100))
        assert bmap.ids.shape == (4, 4)
        assert not bmap.censored.any()
        assert np.isfinite(bmap.t_solve).all()

    def test_deterministic_and_worker_invariant(self, example3):
        cfg = IntegratorConfig(t_max=100)
        a = basin_map(example3, resolution=8, background_seed=5, cfg=cfg,
                      workers=1)
        b = basin_map(example3, resolution=8, background_seed=5, cfg=cfg,
                      workers=3)
        assert np.array_equal(a.ids, b.ids)
        assert np.array_equal(a.t_solve, b.t_solve)
        assert np.array_equal(a.background, b.background)

    def test_solutions_verify(self, example3, example3_solutions):
        bmap = basin_map(example3, resolution=8, background_seed=5,
                         cfg=IntegratorConfig(t_max=100))
        wanted = {tuple(map(bool, s)) for s in example3_solutions}
        for bits in bmap.assignments.values():
            assert tuple(map(bool, bits)) in wanted

    def test_recolor_by_cluster(self, example3):
        bmap = basin_map(example3, resolution=8, background_seed=5,
                         cfg=IntegratorConfig(t_max=100))
        colors = recolor_by_cluster(bmap, example3)
        # all four solutions belong to one cluster
        assert set(np.unique(colors)) <= {-1, 0}
        assert (colors == 0).any()


class TestBoundary:
    def test_uniform_map_no_boundary(self):
        ids = np.ones((8, 8), dtype=np.uint64)
        assert not boundary_cells(ids).any()

    def test_half_plane_split(self):
        ids = np.zeros((8, 8), dtype=np.uint64)
        ids[:, 4:] = 1
        boundary = boundary_cells(ids)
        expected = np.zeros((8, 8), dtype=bool)
        expected[:, 3:5] = True
        assert np.array_equal(boundary, expected)

    def test_width_one_stripes_all_boundary(self):
        ids = np.tile(np.arange(8, dtype=np.uint64), (8, 1))
        assert boundary_cells(ids).all()

    def test_censored_cells_excluded(self):
        ids = np.zeros((4, 4), dtype=np.uint64)
        ids[:, 2:] = 1
        censored = np.zeros((4, 4), dtype=bool)
        censored[:, 2:] = True
        boundary = boundary_cells(ids, censored)
        assert not boundary.any()


class TestBoxDimension:
    def test_straight_line(self):
        grid = np.zeros((729, 729), dtype=bool)
        grid[364, :] = True
        dim, r2 = box_dimension(grid)
        assert abs(dim - 1.0) <= 0.05
        assert r2 > 0.99

    def test_smooth_circle(self):
        size = 729
        yy, xx = np.mgrid[0:size, 0:size]
        radius = np.hypot(yy - size / 2, xx - size / 2)
        # sqrt(2)/2 half-width keeps the rasterized ring gap-free
        grid = np.abs(radius - 300) < 0.71
        dim, _ = box_dimension(grid)
        assert 0.95 <= dim <= 1.1

    def test_sierpinski_carpet_boundary(self):
        carpet = sierpinski_carpet(6)
        boundary = boundary_cells(carpet.astype(np.uint64))
        dim, _ = box_dimension(boundary)
        assert abs(dim - np.log(8) / np.log(3)) <= 0.05
        # the filled carpet itself also lands in the fractal band
        dim_filled, _ = box_dimension(carpet)
        assert 1.8 <= dim_filled <= 2.0

    def test_filled_plane_dimension_two(self):
        grid = np.ones((256, 256), dtype=bool)
        dim, _ = box_dimension(grid)
        assert abs(dim - 2.0) <= 0.05

    def test_empty_grid_rejected(self):
        with pytest.raises(BoxCountError):
            box_dimension(np.zeros((64, 64), dtype=bool))


class TestRenderers:
    def test_pgm_and_ppm_headers(self, two_unit_clause_map):
        _, bmap = two_unit_clause_map
        pgm = render_time_pgm(bmap)
        assert pgm.startswith(b"P5\n16 16\n255\n")
        assert len(pgm) == len(b"P5\n16 16\n255\n") + 16 * 16
        ppm = render_solution_ppm(bmap)
        assert ppm.startswith(b"P6\n16 16\n255\n")
        assert len(ppm) == len(b"P6\n16 16\n255\n") + 3 * 16 * 16

    def test_csv_rows(self, two_unit_clause_map):
        _, bmap = two_unit_clause_map
        lines = map_csv(bmap).splitlines()
        assert lines[0] == "iy,ix,s1,s2,solution,t_solve"
        assert len(lines) == 1 + 16 * 16

    def test_assignment_id_is_content_hash(self):
        a = np.array([True, False, True])
        assert assignment_id(a) == assignment_id(a.copy())
        assert assignment_id(a) != assignment_id(np.array([True, True, True]))
