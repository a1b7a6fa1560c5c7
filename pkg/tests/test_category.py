import numpy as np
import pytest
import hypothesis.strategies as st
from hypothesis import given

from helpers import lattice_space, linf, random_direct_system
from mmlimit.category import (
    Envelope,
    NotAnObject,
    SystemOfSpaces,
    check_direct_stability,
    direct_limit_stage,
    direct_limit_transition,
    inverse_limit_stage,
    threads,
    verify_morphism,
    verify_system,
)
from mmlimit.gallery import gen_constant_system, gen_inverse_example, gen_merging_chain
from mmlimit.mmspace import LineMetric, PointMap, PointedSpace, support


def line(coords, weights, base=0):
    return PointedSpace(LineMetric(coords), weights, base)


def test_massless_basepoint_is_not_an_object():
    s = line([0.0, 1.0], [0.0, 1.0])
    t = line([0.0], [2.0])
    with pytest.raises(NotAnObject, match="basepoint has zero mass"):
        verify_morphism(PointMap(s, t, [0, 0]))


def test_morphism_conditions_are_named():
    s = line([0.0, 1.0, 2.0], [1.0, 1.0, 1.0])
    t = line([0.0, 3.0], [2.0, 1.0])
    v = verify_morphism(PointMap(s, t, [1, 1, 0]))
    assert v.details["condition"] == "basepoint" and v.certified
    v = verify_morphism(PointMap(s, t, [0, 1, 1]))
    assert v.details["condition"] == "lipschitz"
    v = verify_morphism(PointMap(s, line([0.0], [2.5]), [0, 0, 0]))
    assert v.details["condition"] == "mass"
    v = verify_morphism(PointMap(s, line([0.0], [3.0]), [0, 0, 0]))
    assert v.ok and v.details["equality"]


def test_lipschitz_is_only_checked_on_the_support():
    s = line([0.0, 1.0, 2.0], [1.0, 1.0, 0.0])
    t = line([0.0, 1.0, 9.0], [1.0, 1.0, 0.0])
    assert verify_morphism(PointMap(s, t, [0, 1, 2]))


def test_system_needs_matching_bonds():
    s = line([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        SystemOfSpaces("direct", [s, s], [])
    with pytest.raises(ValueError):
        SystemOfSpaces("sideways", [s], [])


def test_composites_of_direct_and_inverse_systems():
    sys = gen_merging_chain(4)
    assert sys.composite(0, 3).img.tolist() == (np.arange(9) // 8).tolist()
    inv = gen_inverse_example(3, 3)
    comp = inv.composite(0, 2)
    assert comp.src is inv.spaces[2] and comp.dst is inv.spaces[0]
    assert comp.img.tolist() == (inv.bonds[0].img[inv.bonds[1].img]).tolist()


def test_verify_system_reports_the_bad_bond():
    a = line([0.0, 1.0], [1.0, 1.0])
    b = line([0.0, 5.0], [2.0, 2.0])
    sys = SystemOfSpaces("direct", [a, a, b], [PointMap(a, a, [0, 1]), PointMap(a, b, [0, 1])])
    v = verify_system(sys)
    assert not v.ok and v.details["bond"] == 1


def test_merging_chain_is_a_valid_system_with_exact_masses():
    sys = gen_merging_chain(6)
    v = verify_system(sys, composites=True)
    assert v.ok and all(v.details["bond_equality"])
    assert [s.n for s in sys.spaces] == [33, 17, 9, 5, 3, 2]
    assert all(s.total_mass == sys.spaces[0].total_mass for s in sys.spaces)


def _columns_nondecreasing(table):
    return bool((np.diff(table, axis=0) >= 0).all())


def test_merging_chain_base_masses_grow():
    sys = gen_merging_chain(6)
    lim = direct_limit_stage(sys, 6)
    assert len(lim.R_grid) == 5
    assert _columns_nondecreasing(lim.mass_table)


@given(st.integers(0, 10**6))
def test_random_direct_systems_have_growing_base_masses(seed):
    sys = random_direct_system(seed)
    assert verify_system(sys)
    lim = direct_limit_stage(sys, len(sys))
    assert _columns_nondecreasing(lim.mass_table)
    assert lim.verdict.ok


@given(st.integers(0, 10**6))
def test_random_direct_systems_commute_between_stages(seed):
    sys = random_direct_system(seed)
    for N in range(1, len(sys)):
        assert check_direct_stability(sys, N)


@given(st.integers(0, 10**6), st.integers(2, 5))
def test_constant_system_limit_is_the_object(seed, N):
    s, _ = lattice_space(np.random.default_rng(seed), 12)
    lim = direct_limit_stage(gen_constant_system(s, N), N)
    assert lim.carrier.tolist() == support(s).tolist()
    assert np.array_equal(lim.space.dist, s.dist)
    assert np.array_equal(lim.space.weight, s.weight)
    assert lim.space.base == s.base
    assert lim.verdict.ok


def test_constant_inverse_system_limit_is_the_object():
    s, _ = lattice_space(np.random.default_rng(11), 10)
    lim = inverse_limit_stage(gen_constant_system(s, 4, "inverse"), 4)
    assert np.array_equal(lim.space.dist, s.dist)
    assert np.array_equal(lim.space.weight, s.weight)
    assert lim.verdict.ok


def test_direct_transition_maps_carriers():
    sys = gen_merging_chain(4)
    a, b, t = direct_limit_transition(sys, 2)
    assert a.space.n == 5 and b.space.n == 3
    assert t.img.tolist() == [0, 0, 1, 1, 2]


def test_direct_limit_identifies_close_points():
    s = line([0.0, 1e-3, 1.0], [1.0, 1.0, 1.0])
    lim = direct_limit_stage(gen_constant_system(s, 2), 2, tol=1e-2)
    assert lim.space.n == 2 and lim.space.weight.tolist() == [2.0, 1.0]


def test_direct_limit_reports_growing_radii():
    # each stage adds a unit atom away from the base
    spaces = [line([0.0, 1.0], [1.0, float(k)]) for k in range(1, 6)]
    bonds = [PointMap(a, b, [0, 1]) for a, b in zip(spaces, spaces[1:])]
    lim = direct_limit_stage(SystemOfSpaces("direct", spaces, bonds), 5, R_grid=[0.5, 2.0])
    assert lim.verdict.ok and lim.verdict.details["growing_at"] == [2.0]
    assert lim.verdict.details["sup"] == [1.0, 6.0]


def test_direct_limit_rejects_bad_stage():
    with pytest.raises(ValueError):
        direct_limit_stage(gen_merging_chain(3), 4)
    with pytest.raises(ValueError):
        direct_limit_stage(gen_inverse_example(2, 2), 1)


def test_inverse_example_threads():
    sys = gen_inverse_example(3, 4)
    T = threads(sys, 3)
    assert len(T) == 4 * 8
    for t in T:
        for i in range(2):
            assert sys.bonds[i].img[t[i + 1]] == t[i]


def test_inverse_example_fails_with_vanishing_envelope():
    sys = gen_inverse_example(4, 6)
    env = Envelope(2.0, -1.0)
    lim = inverse_limit_stage(sys, 4, r_grid=[1 / 2, 1 / 3, 1 / 4], envelope=env)
    assert not lim.verdict.ok and lim.verdict.certified
    assert (lim.mass_table <= np.array([env(r) for r in lim.r_grid])).all()
    assert lim.base_thread is not None


def test_growing_basepoint_breaks_the_thread():
    sys = gen_inverse_example(3, 4, basepoint="growing")
    v = verify_system(sys)
    assert not v.ok and v.details["condition"] == "basepoint"
    lim = inverse_limit_stage(sys, 3)
    assert lim.verdict.certified and lim.verdict.reason == "basepoints do not form a thread"


def test_envelope_values():
    env = Envelope(2.0, -1.0)
    assert env(0.5) == 1.0 and env(0.25) == 0.25 and env(1 / 3) == 0.5
    assert env.vanishes() and not Envelope(1.0, 0.0).vanishes()
    assert Envelope.from_doc(env.to_dict()) == env


def test_inverse_limit_accepts_plain_callable_envelope():
    sys = gen_inverse_example(3, 3)
    lim = inverse_limit_stage(sys, 3, r_grid=[1 / 2, 1 / 3, 1 / 4], envelope=lambda r: 2.0 ** (2.0 - 1.0 / r))
    assert lim.verdict.certified


def test_inverse_limit_reports_stable_masses():
    pts = np.array([[0, 0], [1, 0], [0, 1]])
    s = PointedSpace.from_matrix(linf(pts), [1.0, 0.5, 0.5])
    lim = inverse_limit_stage(gen_constant_system(s, 3, "inverse"), 3, r_grid=[0.5])
    assert lim.verdict.ok and lim.mass_table[:, 0].tolist() == [1.0, 1.0, 1.0]
