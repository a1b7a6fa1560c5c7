"""Random instances with exact integer geometry, shared by the test modules."""

import numpy as np

from mmlimit.approx import WeakApprox, farthest_point_net
from mmlimit.category import SystemOfSpaces
from mmlimit.mmspace import LineMetric, PointMap, PointedSpace, pushforward


def linf(points):
    p = np.asarray(points, dtype=float)
    return np.abs(p[:, None, :] - p[None, :, :]).max(axis=2)


def lattice_points(rng, n, side=20):
    pts = {(0, 0)}
    while len(pts) < n:
        pts.add(tuple(int(v) for v in rng.integers(-side, side + 1, size=2)))
    rest = sorted(pts - {(0, 0)})
    return np.array([(0, 0)] + rest)


def dyadic_weights(rng, n, zeros=False):
    w = rng.integers(1, 17, size=n) / 16.0
    if zeros and n > 1:
        w[1:][rng.random(n - 1) < 0.2] = 0.0
    return w


def lattice_space(rng, n, side=20, zeros=False):
    """``n`` integer points in the plane with the l-infinity distance, based at the origin."""
    pts = lattice_points(rng, n, side)
    return PointedSpace.from_matrix(linf(pts), dyadic_weights(rng, n, zeros), 0), pts


def snap(X, scale):
    """Nearest-net map from ``X`` onto its farthest-point net at ``scale`` (lowest index on ties).

    Returns the map and the net indices; the target carries the pushed-forward weights.
    """
    net = farthest_point_net(X, np.arange(X.n), scale)
    img = np.argmin(X.block(np.arange(X.n), net), axis=1)
    stub = PointedSpace.from_matrix(X.dist[np.ix_(net, net)], np.ones(net.size), 0)
    w = pushforward(X.weight, PointMap(X, stub, img)).weight
    return PointMap(X, stub.with_weight(w), img), net


def snapped_approximation(seed, n_max=30):
    """A map that is an (R, eps)-approximation by construction, with ``4 eps < R``."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, n_max + 1))
    X, _ = lattice_space(rng, n, side=int(rng.integers(6, 16)))
    eps = float(rng.choice([2.0, 4.0]))
    f, _ = snap(X, eps / 2)
    R = float(4 * eps + rng.integers(1, 12))
    return f, R, eps


def weak_instance(seed, n_max=30):
    """A verified weak approximation between small lattice spaces."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, n_max + 1))
    X, _ = lattice_space(rng, n, side=int(rng.integers(4, 10)))
    eps = float(rng.choice([2.0, 3.0, 4.0]))
    f, net = snap(X, eps / 2)
    R = float(eps + rng.integers(1, 10))
    inside = np.flatnonzero(X.row(X.base) < R)
    # drop a light point from the good set when the budget allows
    good = inside
    light = np.setdiff1d(inside[X.weight[inside] <= eps / 64], net)
    if light.size and rng.random() < 0.5:
        good = np.setdiff1d(inside, light[:1])
    return WeakApprox(f, good, R, eps)


def random_direct_system(seed, stages=None):
    """Chain of lattice spaces whose bonds halve coordinates or include into a larger set."""
    rng = np.random.default_rng(seed)
    stages = int(rng.integers(3, 7)) if stages is None else stages
    pts = lattice_points(rng, int(rng.integers(3, 14)), side=12)
    w = dyadic_weights(rng, len(pts))
    spaces = [PointedSpace.from_matrix(linf(pts), w, 0)]
    bonds = []
    for _ in range(stages - 1):
        if rng.random() < 0.5:
            moved = np.floor_divide(pts, 2)
        else:
            moved = pts.copy()
        keys = {tuple(p): None for p in moved.tolist()}
        for _ in range(int(rng.integers(0, 4))):
            keys.setdefault(tuple(int(v) for v in rng.integers(-12, 13, size=2)), None)
        new_pts = np.array(list(keys))
        index = {tuple(p): k for k, p in enumerate(new_pts.tolist())}
        img = np.array([index[tuple(p)] for p in moved.tolist()])
        stub = PointedSpace.from_matrix(linf(new_pts), np.ones(len(new_pts)), 0)
        nw = pushforward(spaces[-1].weight, PointMap(spaces[-1], stub, img)).weight
        extra = rng.integers(0, 3, size=len(new_pts)) / 8.0
        nw = nw + extra
        nw[nw == 0] = 1.0 / 8
        dst = stub.with_weight(nw)
        bonds.append(PointMap(spaces[-1], dst, img))
        spaces.append(dst)
        pts = new_pts
    return SystemOfSpaces("direct", spaces, bonds)


def cli_inputs(root):
    """Generate the input files for the CLI test matrix under ``root``; returns their paths."""
    from mmlimit.cli import main
    from mmlimit.io import save_json, space_to_doc

    root.mkdir(parents=True, exist_ok=True)
    p = {k: str(root / f"{k}.json") for k in
         ("simplex", "simplices", "inverse", "prokhorov", "grid", "merging", "fine", "coarse", "mu", "nu", "bad")}
    assert main(["gen", "simplex", "--i", "6", "--out", p["simplex"]]) == 0
    assert main(["gen", "simplex", "--i", "12", "--sequence", "--out", p["simplices"]]) == 0
    assert main(["gen", "inverse-example", "--i-max", "4", "--K", "6", "--out", p["inverse"]]) == 0
    assert main(["gen", "prokhorov", "--J", "4", "--N", "3", "--out", p["prokhorov"]]) == 0
    assert main(["gen", "grid", "--points", "65", "--out", p["grid"]]) == 0
    assert main(["gen", "merging-chain", "--levels", "5", "--out", p["merging"]]) == 0
    fine = PointedSpace(LineMetric(np.linspace(0, 1, 17)), np.full(17, 1 / 17), 0)
    coarse = PointedSpace(LineMetric(np.linspace(0, 1, 5)), np.full(5, 0.2), 0)
    save_json(space_to_doc(fine), p["fine"])
    save_json(space_to_doc(coarse), p["coarse"])
    save_json([0.5, 0.5, 0, 0, 0, 0], p["mu"])
    save_json([0, 0.25, 0.75, 0, 0, 0], p["nu"])
    save_json({"dist": [[0, 1, 5], [1, 0, 1], [5, 1, 0]], "weight": [1, 1, 1]}, p["bad"])
    return p


def cli_matrix(p, out):
    """``(argv, expected exit code)`` pairs over the inputs from :func:`cli_inputs`; reports go to ``out``."""
    third = repr(1 / 3)
    rows = [
        (["validate", p["simplex"]], 0),
        (["validate", p["bad"]], 1),
        (["approx", "search", p["fine"], p["coarse"], "--R", "2", "--budget", "200"], 0),
        (["measures", "delta", p["simplex"], "--mu", p["mu"], "--nu", p["nu"], "--depth", "2"], 0),
        (["measures", "cauchy", p["prokhorov"], "--schedule", "0.5", "--depth", "2"], 0),
        (["measures", "limit", p["prokhorov"], "--depth", "2"], 2),
        (["measures", "tight", p["prokhorov"], "--eps", "0.5"], 0),
        (["seq", "ubf", p["simplices"], "--R", "0.5", "2"], 0),
        (["seq", "bmttb", p["simplices"], "--triple", "2", "1", "0.5"], 1),
        (["seq", "tangent", p["grid"], "--point", "32", "--scales", "0.5", "0.25"], 0),
        (["limit", "direct", p["merging"], "--stage", "5"], 0),
        (["limit", "inverse", p["inverse"], "--stage", "4", "--r", "0.5", third, "0.25"], 1),
    ]
    return [(argv + ["--out", str(out)], code) for argv, code in rows]
