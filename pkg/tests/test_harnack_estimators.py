import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from harnack_lab.errors import BadNesting, DegenerateDomain, EmptyHalfBall, HypothesisFailed, NoBoundary
from harnack_lab.gallery import (
    build_grid,
    build_half_plane_grid,
    build_path,
    build_slit_grid,
    build_weighted_lattice_alpha,
)
from harnack_lab.graph_core import build_graph, rescale
from harnack_lab.harnack_estimators import (
    capacitary_width,
    capacity_ratio,
    cone_ratio,
    cw_linear_bound_check,
    ehi_constant,
    ehi_kernel,
    ehi_scan,
    extremal_ray_constant,
    green_comparison,
    harnack_chain_consequence_check,
    hm_decay_check,
    hm_green_bound,
    sphere_exit_probability,
)
from harnack_lab.potential_theory import solve_dirichlet

from conftest import random_graph
from oracles import absorption_probabilities, dense_conductance


def at(g, coord):
    """Vertex of ``g`` at the given coordinates."""
    hit = np.flatnonzero(np.all(np.isclose(g.coords, coord), axis=1))
    return int(hit[0])


def test_extremal_ray_small_matrix():
    K = np.array([[1.0, 2.0], [4.0, 3.0]])
    value, (i, j, col), excluded = extremal_ray_constant(K)
    assert value == 4.0 and (i, j, col) == (1, 0, 0)
    assert len(excluded) == 0


def test_extremal_ray_excludes_vanishing_columns():
    K = np.array([[0.0, 1.0], [1.0, 2.0]])
    value, _, excluded = extremal_ray_constant(K)
    assert value == 2.0 and excluded.tolist() == [0]
    with pytest.raises(DegenerateDomain):
        extremal_ray_constant(np.zeros((2, 2)))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10 ** 6), rows=st.integers(1, 8), cols=st.integers(1, 8))
def test_cone_never_beats_extremal_ray(seed, rows, cols):
    rng = np.random.default_rng(seed)
    K = np.exp(rng.normal(scale=2.0, size=(rows, cols)))
    value, (i, j, col), _ = extremal_ray_constant(K)
    assert K[i, col] / K[j, col] == pytest.approx(value, rel=1e-12)
    for _ in range(20):
        coeffs = rng.exponential(size=cols) * (rng.random(cols) < 0.7)
        if coeffs.sum() == 0:
            continue
        assert cone_ratio(K, coeffs) <= value * (1 + 1e-12)
    e = np.zeros(cols)
    e[col] = 1.0
    assert cone_ratio(K, e) == pytest.approx(value, rel=1e-12)


def test_ehi_on_path4():
    g = build_path(4).graph
    value, witness = ehi_constant(g, 2, 2, 0.5)
    assert value == pytest.approx(3.0, rel=1e-12)
    assert witness == (1, 3, 0)


def test_ehi_rejections():
    g = build_path(4).graph
    with pytest.raises(EmptyHalfBall):
        ehi_kernel(g, 2, 1.5, 0.5)
    with pytest.raises(NoBoundary):
        ehi_kernel(g, 2, 10, 0.5)
    with pytest.raises(ValueError):
        ehi_kernel(g, 2, 2, 1.5)


@pytest.mark.parametrize("seed", range(4))
def test_ehi_kernel_matches_absorption(seed):
    rng = np.random.default_rng(seed)
    g, edges = random_graph(rng, 60, extra=30)
    c = int(rng.integers(g.n))
    kc = ehi_kernel(g, c, 3, 0.5)
    ball = np.flatnonzero(g.distances(c) < 3)
    ref = absorption_probabilities(dense_conductance(g.n, edges), ball, kc.z)
    pos = {int(v): i for i, v in enumerate(ball)}
    assert np.allclose(kc.K, ref[[pos[int(x)] for x in kc.x]], atol=1e-12)


def test_ehi_scan_on_grid_and_witnesses():
    g = build_grid(33, 33).graph
    centers = [at(g, (16, 16)), at(g, (12, 18))]
    res = ehi_scan(g, centers, [4, 8], 0.5)
    assert res.summary == max(e.C_H for e in res.entries)
    assert res.scale_stability <= 2
    for e in res.entries:
        kc = ehi_kernel(g, e.center, e.R, 0.5)
        x1, x2, z = e.witness
        col = list(kc.z).index(z)
        rows = list(kc.x)
        assert kc.K[rows.index(x1), col] / kc.K[rows.index(x2), col] == pytest.approx(e.C_H, rel=1e-9)
    assert ehi_scan(g, centers, [4, 8], 0.5, jobs=2).summary == res.summary


def test_ehi_invariant_under_weight_scaling_and_measure(rng):
    g = build_grid(17, 17).graph
    c = at(g, (8, 8))
    base = ehi_constant(g, c, 4, 0.5)[0]
    assert ehi_constant(rescale(g, 7.5), c, 4, 0.5)[0] == pytest.approx(base, rel=1e-9)
    assert ehi_constant(rescale(g, 1.0, np.exp(rng.normal(size=g.n))), c, 4, 0.5)[0] == pytest.approx(base, rel=1e-9)


def test_transient_alpha_weights_break_ehi():
    inst = build_weighted_lattice_alpha(1, 80, 2.0)
    g = inst.ambient
    o = at(g, (0,))
    vals = [ehi_constant(g, o, R, 0.5)[0] for R in (8, 16, 32)]
    assert vals[0] < vals[1] < vals[2]
    assert vals[-1] > 10


def test_capacity_ratio_bounds():
    inst = build_half_plane_grid(20)
    g = inst.ambient
    V = np.zeros(g.n, dtype=bool)
    x = at(g, (0, 1))
    assert capacity_ratio(g, V, x, 3) == 1.0
    V[:] = True
    assert capacity_ratio(g, V, x, 3) == 0.0
    V[:] = False
    V[g.coords[:, 1] > 0] = True
    q = capacity_ratio(g, V, x, 3)
    assert 0 < q < 1


def test_capacitary_width_monotone_in_eta():
    inst = build_half_plane_grid(24)
    dv = inst.domain
    Vc = dv.interior[dv.delta[dv.interior] < 4]
    V = inst.to_ambient[Vc]
    pts = inst.to_ambient[Vc[:: max(1, len(Vc) // 10)]]
    grid = list(range(1, 20))
    w_small = capacitary_width(inst.ambient, V, 0.05, grid, test_points=pts).w
    w_big = capacitary_width(inst.ambient, V, 0.3, grid, test_points=pts).w
    assert w_big <= w_small
    assert math.isinf(capacitary_width(inst.ambient, np.arange(inst.ambient.n), 0.1, [1, 2],
                                       test_points=pts[:2]).w)
    with pytest.raises(ValueError):
        capacitary_width(inst.ambient, V, 1.5, grid)


@pytest.mark.parametrize("builder", [build_half_plane_grid, build_slit_grid])
def test_width_grows_linearly_near_boundary(builder):
    inst = builder(40)
    xi = inst.vertex_at((0, 0))
    rep = cw_linear_bound_check(inst, 0.1, [2, 4, 8], center=xi, max_points=12)
    assert rep.bounded
    for r, w in rep.widths.items():
        assert 0 < w <= 8 * r


def test_sphere_exit_probability_on_strip():
    g = build_grid(65, 9).graph
    mid = g.coords[:, 1] == 4
    band = np.abs(g.coords[:, 1] - 4) <= 1
    x = at(g, (32, 4))
    assert sphere_exit_probability(g, np.ones(g.n, dtype=bool), x, 4) == 1.0
    p = [sphere_exit_probability(g, band, x, r) for r in (2, 4, 8)]
    assert 1 > p[0] > p[1] > p[2] > 0
    # a one-vertex-wide line is thinner than the band
    assert sphere_exit_probability(g, mid, x, 4) < p[1]


def test_hm_decay_on_strip():
    g = build_grid(129, 17).graph
    band = np.flatnonzero(np.abs(g.coords[:, 1] - 8) <= 1)
    x = at(g, (64, 8))
    fit = hm_decay_check(g, band, x, [4, 8, 12, 16, 24, 32])
    assert not fit.flat
    assert fit.slope < 0
    assert fit.r_squared >= 0.9
    with pytest.raises(DegenerateDomain):
        hm_decay_check(g, band, int(np.setdiff1d(np.arange(g.n), band)[0]), [4])


def test_hm_decay_flat_when_domain_is_everything():
    g = build_grid(33, 33).graph
    fit = hm_decay_check(g, range(g.n), at(g, (16, 16)), [2, 4], width=1.0)
    assert fit.flat


def test_hm_green_bound_finite():
    inst = build_half_plane_grid(60)
    dv = inst.domain
    xi = inst.vertex_at((0, 0))
    rep = hm_green_bound(dv, xi, 4, 5.0, 0.25, frame=inst.frame)
    assert 0 < rep.C4 < math.inf


@pytest.fixture(scope="module")
def grid41():
    return build_grid(41, 41).graph


def test_comparison_a(grid41):
    g = grid41
    res = green_comparison(g, {"kind": "a", "x0": at(g, (20, 20)), "r": 4, "A1": 2, "A2": 2})
    assert res.holds and res.constant >= 1
    with pytest.raises(BadNesting):
        green_comparison(g, {"kind": "a", "x0": at(g, (20, 20)), "r": 4, "A1": 1, "A2": 2})


def test_comparison_b(grid41):
    g = grid41
    res = green_comparison(g, {"kind": "b", "x0": at(g, (20, 20)), "r": 4, "A": 3})
    assert res.holds and res.constant >= 1


def test_comparison_c_and_d(grid41):
    g = grid41
    x0 = at(g, (20, 20))
    assert green_comparison(g, {"kind": "c", "x0": x0, "r": 3, "A1": 2, "A2": 4, "a": 0.5}).holds
    res = green_comparison(g, {"kind": "d", "x0": x0, "r": 3, "A1": 2, "A2": 4})
    assert res.holds and res.constant >= 1
    with pytest.raises(BadNesting):
        green_comparison(g, {"kind": "d", "x0": x0, "r": 3, "A1": 4, "A2": 2})
    with pytest.raises(ValueError):
        green_comparison(g, {"kind": "z", "x0": x0, "r": 3})


def test_chain_consequence_on_path8():
    dv = build_path(8).domain
    u = np.arange(9.0)
    chk = harnack_chain_consequence_check(dv, u, 2, 6, 2.0)
    assert chk.holds and chk.N >= 1
    assert chk.ratio == pytest.approx(3.0)
    with pytest.raises(HypothesisFailed):
        harnack_chain_consequence_check(dv, u - 4, 2, 6, 2.0)
    with pytest.raises(HypothesisFailed):
        harnack_chain_consequence_check(dv, u ** 2, 2, 6, 2.0)


def test_chain_consequence_on_slit():
    inst = build_slit_grid(12)
    dv = inst.domain
    rng = np.random.default_rng(0)
    data = np.zeros(dv.n)
    data[dv.boundary] = rng.random(len(dv.boundary))
    u = solve_dirichlet(dv.graph, dv.interior, data)
    deep = dv.interior[dv.delta[dv.interior] >= 3]
    x1, x2 = (int(v) for v in rng.choice(deep, 2, replace=False))
    assert harnack_chain_consequence_check(dv, u, x1, x2, 2.0).holds


def test_star_graph_ehi_uses_all_columns():
    g = build_graph([(0, i, float(i)) for i in range(1, 5)] + [(i, i + 4, 1.0) for i in range(1, 5)])
    value, (x1, x2, z) = ehi_constant(g, 0, 2, 0.5)
    assert value >= 1 and z in range(5, 9)
