import math

import numpy as np
import pytest
import hypothesis.strategies as st
from hypothesis import given

from helpers import lattice_space
from mmlimit.convergence import (
    bmttb_check,
    cover_csv,
    cover_failure_certificate,
    doubling_csv,
    greedy_cover,
    max_ball_mass,
    pointwise_doubling_profile,
    tangent_sequence,
    uniform_bounded_finiteness,
    weak_approx_failure_certificate,
    wpmgh_discrepancy,
    wpmgh_sequence_check,
)
from mmlimit.gallery import gen_doubling_grid, gen_simplex_sequence, gen_uniform_simplex
from mmlimit.mmspace import CLOSED, LineMetric, PointedSpace, ball_mass


def grid(n, extent=1.0):
    return PointedSpace(LineMetric(np.linspace(0, extent, n)), np.full(n, 1.0 / n), 0)


def test_ubf_profile_on_simplices():
    prof = uniform_bounded_finiteness(gen_simplex_sequence(6), [0.5, 2.0])
    assert prof.table[:, 1].tolist() == [1.0] * 6
    np.testing.assert_allclose(prof.table[:, 0], [1 / i for i in range(1, 7)], rtol=0, atol=1e-15)
    assert prof.sup.tolist() == [1.0, 1.0]


def test_ubf_rejects_bad_radius():
    with pytest.raises(ValueError):
        uniform_bounded_finiteness([grid(3)], [0.0])


@pytest.mark.parametrize("i", [4, 10, 50])
def test_greedy_cover_on_simplex_leaves_one_atom_per_missing_center(i):
    s = gen_uniform_simplex(i)
    rep = greedy_cover(s, 2.0, 1.0)
    assert rep.M == i and rep.residual_mass == 0.0
    for M, resid in enumerate(rep.trace):
        assert resid == math.fsum([1.0 / i] * (i - M))


def test_greedy_cover_respects_target_and_cap():
    s = gen_uniform_simplex(8)
    assert greedy_cover(s, 2.0, 1.0, target_eps=0.5).M == 4
    capped = greedy_cover(s, 2.0, 1.0, max_centers=3)
    assert capped.M == 3 and capped.residual_mass == 0.625


def test_greedy_cover_uses_far_centers_only_when_they_reach():
    s = PointedSpace(LineMetric([0.0, 1.0, 1.9, 5.0]), np.ones(4), 0)
    rep = greedy_cover(s, 1.0, 1.0)
    assert set(rep.centers.tolist()) <= {0, 1, 2}
    assert rep.residual_mass == 0.0


@given(st.integers(0, 10**6), st.floats(1.0, 30.0), st.floats(0.5, 10.0))
def test_greedy_cover_residual_is_uncovered_mass(seed, R, r):
    s, _ = lattice_space(np.random.default_rng(seed), 20)
    rep = greedy_cover(s, R, r)
    B = np.flatnonzero(s.row(s.base) <= R)
    covered = np.zeros(s.n, dtype=bool)
    for c in rep.centers:
        covered |= s.row(c) < r
    assert rep.residual_mass == math.fsum(s.weight[B][~covered[B]].tolist())
    assert all(a >= b for a, b in zip(rep.trace, rep.trace[1:]))


@given(st.integers(0, 10**6), st.floats(1.0, 30.0), st.floats(0.5, 10.0), st.integers(1, 6))
def test_cover_certificate_is_sound(seed, R, r, M):
    # a firing certificate means even the greedy cover with M centers misses more than eps
    s, _ = lattice_space(np.random.default_rng(seed), 16)
    eps = 0.25
    if cover_failure_certificate(s, R, r, M, eps):
        assert greedy_cover(s, R, r, max_centers=M).residual_mass > eps


def test_max_ball_mass_on_simplex():
    best, total = max_ball_mass(gen_uniform_simplex(5), 2.0, 1.0)
    assert best == 0.2 and total == 1.0


def test_weak_approx_certificate_simplex_to_point():
    fires, pay = weak_approx_failure_certificate(gen_uniform_simplex(50), gen_uniform_simplex(1), 2.0, 0.5)
    assert fires and pay["targets"] == 1 and pay["max_ball_mass"] == pytest.approx(0.02)


def test_weak_approx_certificate_stays_quiet_on_self():
    s = grid(9)
    assert not weak_approx_failure_certificate(s, s, 2.0, 0.1)[0]


def test_bmttb_passes_on_a_constant_sequence():
    (res,) = bmttb_check([grid(17)] * 6, [(1.0, 0.25, 0.0)])
    assert res.verdict.ok and res.asymptotic.ok
    assert res.attempted_M == res.M


def test_bmttb_simplices_fail_with_a_certificate():
    (res,) = bmttb_check(gen_simplex_sequence(40), [(2.0, 1.0, 0.25)])
    assert not res.verdict.ok and res.verdict.certified
    cert = res.verdict.details["certificate"]
    assert cert["M"] * cert["max_ball_mass"] < cert["ball_mass"] - cert["eps"]
    assert not res.asymptotic.ok


def test_bmttb_without_certificate_is_inconclusive():
    # greedy takes the heavy middle first and needs three balls where two suffice
    a = PointedSpace(LineMetric([0.0, 3.0]), [1.0, 1.0], 0)
    b = PointedSpace(LineMetric(np.arange(6.0)), [1.0, 1.0, 3.0, 3.0, 1.0, 1.0], 0)
    (res,) = bmttb_check([a, b], [(10.0, 1.5, 0.5)], calibration=1)
    assert res.attempted_M == 2 and res.M == 3
    assert res.reports[1].residual_mass == 1.0
    assert res.verdict.status == "inconclusive"
    assert res.verdict.reason == "greedy-fail (inconclusive)"


def test_bmttb_validates_parameters():
    with pytest.raises(ValueError):
        bmttb_check([grid(3)], [(1.0, 0.0, 0.1)])
    with pytest.raises(ValueError):
        bmttb_check([], [(1.0, 1.0, 0.1)])


def test_bmttb_results_do_not_depend_on_workers(monkeypatch):
    seq = [grid(n) for n in (9, 17, 33, 65)]
    monkeypatch.setenv("MMLIMIT_THREADS", "1")
    a = bmttb_check(seq, [(1.0, 0.1, 0.0), (0.5, 0.2, 0.1)])
    monkeypatch.setenv("MMLIMIT_THREADS", "4")
    b = bmttb_check(seq, [(1.0, 0.1, 0.0), (0.5, 0.2, 0.1)])
    assert cover_csv(a) == cover_csv(b)


def test_cover_csv_header_and_rows():
    res = bmttb_check([gen_uniform_simplex(2)], [(2.0, 1.0, 0.0)])
    lines = cover_csv(res).splitlines()
    assert lines[0] == "R,r,eps,space,M,residual"
    assert lines[1:] == ["2.0,1.0,0.0,0,0,1.0", "2.0,1.0,0.0,0,1,0.5", "2.0,1.0,0.0,0,2,0.0"]


def test_wpmgh_check_on_refining_grids():
    limit = grid(5)
    seq = [grid(4 * k + 1) for k in (2, 4, 8)]
    sched = [(2.0, 0.3), (2.0, 0.3), (2.0, 0.3)]
    v = wpmgh_sequence_check(seq, limit, sched, fam_depth=2, tol=1.0, budget=100)
    assert v.ok
    assert all(s["achieved_eps"] <= 0.3 for s in v.details["stages"])


def test_wpmgh_check_certifies_simplex_to_point():
    seq = gen_simplex_sequence(8)[3:]
    pt = gen_uniform_simplex(1)
    v = wpmgh_sequence_check(seq, pt, [(2.0, 0.25)] * len(seq), fam_depth=1, budget=20)
    assert not v.ok and v.certified


def test_wpmgh_schedule_must_be_monotone():
    with pytest.raises(ValueError):
        wpmgh_sequence_check([grid(3), grid(3)], grid(3), [(2.0, 0.1), (1.0, 0.1)])
    with pytest.raises(ValueError):
        wpmgh_sequence_check([grid(3)], grid(3), [(2.0, 0.1), (2.0, 0.1)])


def test_wpmgh_discrepancy_of_a_space_with_itself_is_tiny():
    s = grid(9)
    score, det = wpmgh_discrepancy(s, s, 2.0, budget=50, fam_depth=2, details=True)
    assert score <= 1e-6 and det["forward_gap"] == 0.0


def test_doubling_profile_on_a_grid():
    s = gen_doubling_grid(1025)
    prof = pointwise_doubling_profile(s, s.base, [2.0**-k for k in range(2, 9)])
    assert prof.infinite_at == []
    # open balls at the smallest scale hold 7 and 15 grid points
    assert prof.summary == 15 / 7


def test_doubling_profile_flags_empty_balls():
    s = PointedSpace(LineMetric([0.0, 1.0]), [0.0, 1.0], 0)
    prof = pointwise_doubling_profile(s, 0, [0.25, 2.0])
    assert prof.infinite_at == [0.25] and prof.ratios[0] == math.inf
    assert doubling_csv(prof).splitlines()[1] == "0.25,inf"


def test_tangent_sequence_normalizes_unit_balls():
    s = gen_doubling_grid(257)
    tg = tangent_sequence(s, s.base, [0.25, 0.125])
    for t in tg.sequence:
        assert ball_mass(t, t.base, 1.0) == pytest.approx(1.0, abs=1e-15)
    assert tg.bmttb[0].verdict.ok


def test_tangent_sequence_of_a_two_scale_space():
    s = gen_doubling_grid(65)
    tg = tangent_sequence(s, 0, [0.5, 0.25])
    assert tg.sequence[0].base == 0
    assert ball_mass(tg.sequence[1], 0, 1.0, CLOSED) >= 1.0


def test_cover_small_cases():
    s = grid(33)
    rep = greedy_cover(s, 2.0, 1.5)
    assert rep.M == 1 and rep.residual_mass == 0.0
    assert greedy_cover(s, 2.0, 0.25, target_eps=0.1).M <= 5
    assert not cover_failure_certificate(s, 2.0, 1.5, 1, 0.0)
    assert not cover_failure_certificate(s, 2.0, 0.01, s.n, 0.0)
    assert cover_failure_certificate(gen_uniform_simplex(10), 2.0, 1.0, 4, 0.5)


@given(st.integers(0, 10**6), st.floats(1e-3, 5.0))
def test_greedy_cover_reaches_zero_with_at_most_n_centers(seed, r):
    s, _ = lattice_space(np.random.default_rng(seed), 15)
    rep = greedy_cover(s, 100.0, r)
    assert rep.residual_mass == 0.0 and rep.M <= s.n


@given(st.integers(0, 10**6), st.integers(-3, 3), st.floats(1.0, 20.0), st.floats(0.5, 8.0))
def test_greedy_cover_is_rescaling_equivariant(seed, k, R, r):
    from mmlimit.mmspace import rescale

    s, _ = lattice_space(np.random.default_rng(seed), 18)
    a = 2.0**k
    lhs = greedy_cover(rescale(s, a), R, r)
    rhs = greedy_cover(s, a * R, a * r)
    assert lhs.centers.tolist() == rhs.centers.tolist()


def test_wpmgh_constant_sequence_passes():
    s = grid(9)
    v = wpmgh_sequence_check([s] * 3, s, [(2.0, 0.5), (3.0, 0.25), (4.0, 0.125)], fam_depth=2)
    assert v.ok and v.details["deltas"][-1] == 0.0


def test_wpmgh_refining_grids_towards_the_finest():
    seq = [PointedSpace(LineMetric(np.linspace(0, 1, 2**i + 1)), np.full(2**i + 1, 1 / (2**i + 1)), 0)
           for i in range(1, 6)]
    sched = [(2.0, 2.0 ** (1 - i)) for i in range(1, 6)]
    v = wpmgh_sequence_check(seq, seq[-1], sched, fam_depth=2, budget=200)
    assert v.ok


def test_wpmgh_discrepancy_is_symmetric_and_finds_relabelings():
    rng = np.random.default_rng(3)
    s, _ = lattice_space(rng, 8)
    perm = np.concatenate([[0], 1 + rng.permutation(7)])
    t = PointedSpace.from_matrix(s.dist[np.ix_(perm, perm)], s.weight[perm], 0)
    assert wpmgh_discrepancy(s, t, 100.0, budget=500, fam_depth=2) <= 1e-6
    a, b = gen_uniform_simplex(10), gen_uniform_simplex(11)
    d_ab = wpmgh_discrepancy(a, b, 2.0, budget=100, fam_depth=1)
    assert d_ab > 0 and d_ab == wpmgh_discrepancy(b, a, 2.0, budget=100, fam_depth=1)


def test_doubling_profile_small_cases():
    pt = gen_uniform_simplex(1)
    assert pointwise_doubling_profile(pt, 0, [0.5, 0.25]).ratios == [1.0, 1.0]
    assert pointwise_doubling_profile(gen_uniform_simplex(7), 0, [0.6]).ratios == [pytest.approx(7.0)]


def test_tangent_sequence_at_scale_one_is_the_normalized_space():
    from mmlimit.mmspace import normalize_at_basepoint

    s = gen_doubling_grid(17)
    tg = tangent_sequence(s, s.base, [1.0])
    t = normalize_at_basepoint(s, 1.0)
    assert np.array_equal(tg.sequence[0].dist, t.dist) and np.array_equal(tg.sequence[0].weight, t.weight)


def test_tangent_sequence_of_a_fixed_simplex_needs_every_atom():
    s = gen_uniform_simplex(40)
    tg = tangent_sequence(s, 0, [0.5, 0.25, 0.125], [(4.0, 1.0, 0.5)])
    assert [sp.dist[0, 1] for sp in tg.sequence] == [2.0, 4.0, 8.0]
    # finitely many atoms always cover, but only with one center per atom
    assert tg.bmttb[0].verdict.ok and tg.bmttb[0].verdict.details["M"] == 40
