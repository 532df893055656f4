import pytest

from dlasim.arch_model import DeviceSpec, VectorConfig
from dlasim.dse import CSV_HEADER, select_best, sweep_grid, to_csv
from dlasim.errors import NoFeasiblePointError


@pytest.fixture(scope="module")
def grid(alexnet, a10):
    return sweep_grid(alexnet, a10)


def test_grid_order_and_size(grid):
    assert len(grid) == 3 * 12
    assert [(p.cfg.c_vec, p.cfg.k_vec) for p in grid[:2]] == [(4, 8), (4, 16)]
    assert grid[12].cfg.c_vec == 8


def test_best_is_8x48(grid):
    best = select_best(grid)
    ref = next(p for p in grid if (p.cfg.c_vec, p.cfg.k_vec) == (8, 48))
    assert ref.feasible
    assert best.img_per_s_system >= ref.img_per_s_system
    assert best.img_per_s_system <= 1.01 * ref.img_per_s_system
    assert all(best.img_per_s_system >= p.img_per_s_system for p in grid if p.feasible)


def test_odd_multiples_are_zero(grid):
    p = next(p for p in grid if (p.cfg.c_vec, p.cfg.k_vec) == (8, 24))
    assert not p.explored and p.img_per_s_system == 0 and p.perf is None


def test_perf_iff_feasible(grid):
    for p in grid:
        assert (p.perf is not None) == p.feasible


def test_feasibility_monotone(alexnet, a10):
    pts = {(p.cfg.c_vec, p.cfg.k_vec): p for p in sweep_grid(alexnet, a10, k_range=range(8, 193, 8))}
    for (c, k), p in pts.items():
        if not p.resources.feasible and (c, 2 * k) in pts:
            assert not pts[c, 2 * k].resources.feasible


def test_zero_dsp_device(alexnet):
    pts = sweep_grid(alexnet, DeviceSpec("none", 0, 0, 303))
    assert not any(p.feasible for p in pts)
    with pytest.raises(NoFeasiblePointError):
        select_best(pts)
    with pytest.raises(NoFeasiblePointError):
        select_best([])


def test_single_point(alexnet, a10):
    pts = sweep_grid(alexnet, a10, c_range=[8], k_range=[48])
    assert select_best(pts) is pts[0]


def test_tie_break(alexnet, a10):
    from dataclasses import replace
    pts = sweep_grid(alexnet, a10, c_range=[8], k_range=[16, 48])
    a, b = pts
    tied = [replace(b, perf=replace(b.perf, img_per_s_system=1.0)), replace(a, perf=replace(a.perf, img_per_s_system=1.0))]
    assert select_best(tied).cfg.k_vec == 16  # fewer DSPs wins


def test_csv_deterministic(alexnet, a10, grid):
    text = to_csv(grid)
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    assert len(text.splitlines()) == len(grid) + 1
    assert to_csv(sweep_grid(alexnet, a10)) == text


def test_empty_range(alexnet, a10):
    with pytest.raises(ValueError):
        sweep_grid(alexnet, a10, c_range=[])
