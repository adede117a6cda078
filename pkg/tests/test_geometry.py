import json

import numpy as np
import pytest

from dfnflow import (
    BoundaryPortion,
    Fracture,
    FractureNetwork,
    dump_network,
    load_network,
    network_from_dict,
    network_to_dict,
)
from dfnflow.errors import (
    DegenerateFracture,
    NoBoundaryContact,
    OffPlane,
    OverlapError,
    ParseError,
    UnsupportedVersion,
)


def random_convex_fracture(rng, fid=1):
    # random plane, random convex polygon: hull of points on a circle
    normal = rng.normal(size=3)
    normal /= np.linalg.norm(normal)
    t1 = np.cross(normal, [1.0, 0.3, -0.2])
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(normal, t1)
    origin = rng.normal(scale=0.4, size=3)
    ang = np.sort(rng.uniform(0, 2 * np.pi, size=rng.integers(3, 8)))
    if len(ang) < 3 or np.min(np.diff(ang)) < 0.05:
        ang = np.array([0.0, 2.1, 4.2])
    r = rng.uniform(0.8, 2.0)
    pts = origin + r * (
        np.outer(np.cos(ang), t1) + np.outer(np.sin(ang), t2)
    )
    return Fracture(fid, pts)


def unit_square(fid, plane, lo=(0.0, 0.0), hi=(1.0, 1.0), offset=0.0, perm=1.0):
    """Axis-aligned rectangle in one of the coordinate planes."""
    (a0, b0), (a1, b1) = lo, hi
    corners2 = [(a0, b0), (a1, b0), (a1, b1), (a0, b1)]
    ins = {"xy": (0, 1, 2), "xz": (0, 2, 1), "yz": (1, 2, 0)}[plane]
    pts = np.zeros((4, 3))
    for n, (u, v) in enumerate(corners2):
        pts[n, ins[0]] = u
        pts[n, ins[1]] = v
        pts[n, ins[2]] = offset
    return Fracture(fid, pts, perm)


def test_frame_round_trip():
    rng = np.random.default_rng(7)
    for _ in range(50):
        f = random_convex_fracture(rng)
        pts2 = rng.uniform(-1, 1, size=(20, 2))
        back = f.to_local(f.to_global(pts2))
        assert np.max(np.abs(back - pts2)) < 1e-12


def test_to_local_off_plane_raises():
    f = unit_square(1, "xy")
    with pytest.raises(OffPlane):
        f.to_local([0.5, 0.5, 1e-3])
    # within tolerance goes through
    f.to_local([0.5, 0.5, 1e-12])


def test_vertices_ccw_and_frozen():
    f = unit_square(1, "xy")
    v = f.verts2
    area = 0.5 * np.sum(
        v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1]
    )
    assert area > 0
    with pytest.raises(ValueError):
        f.vertices[0, 0] = 99.0


def test_degenerate_inputs_rejected():
    with pytest.raises(DegenerateFracture):
        Fracture(1, [[0, 0, 0], [1, 0, 0], [1, 1, 0.2], [0, 1, 0]])  # non-planar
    with pytest.raises(DegenerateFracture):
        Fracture(1, [[0, 0, 0], [2, 0, 0], [2, 2, 0], [1.2, 0.5, 0]])  # reflex
    with pytest.raises(DegenerateFracture):
        Fracture(1, [[0, 0, 0], [1, 0, 0], [2, 0, 0]])  # zero area
    with pytest.raises(DegenerateFracture):
        Fracture(1, [[0, 0, 0], [1, 0, 0], [1, 1, 0]], permeability=-2.0)
    with pytest.raises(DegenerateFracture):
        Fracture(
            1,
            [[0, 0, 0], [1, 0, 0], [1, 1, 0]],
            permeability=[[1.0, 2.0], [2.0, 1.0]],  # indefinite
        )


def test_axis_aligned_crossing_trace():
    f1 = unit_square(1, "xy", lo=(0, -1), hi=(1, 1))
    f2 = unit_square(2, "xz", lo=(0, -1), hi=(1, 1))
    net = FractureNetwork([f1, f2], require_dirichlet=False)
    assert len(net.traces) == 1
    tr = net.traces[0]
    assert np.allclose(tr.p0, [0, 0, 0], atol=1e-9)
    assert np.allclose(tr.p1, [1, 0, 0], atol=1e-9)
    assert net.t(1, 2) == net.t(2, 1) == 1
    assert tr.on_boundary == frozenset()


def test_trace_membership_oracle():
    # every reported trace point must lie on both parents
    rng = np.random.default_rng(11)
    found = 0
    for _ in range(200):
        fa = random_convex_fracture(rng, 1)
        fb = random_convex_fracture(rng, 2)
        try:
            net = FractureNetwork([fa, fb], require_dirichlet=False)
        except OverlapError:
            continue
        for tr in net.traces:
            found += 1
            probe = tr.point_at(np.linspace(0, 1, 7))
            for f in (fa, fb):
                assert np.all(f.contains(probe, 5 * net.tol_geom))
    assert found > 30


def test_corner_touch_is_no_trace():
    f1 = unit_square(1, "xy")
    f2 = unit_square(2, "xz", lo=(1.0, 0.0), hi=(2.0, 1.0))
    # f2 meets the plane z=0 along y=0, x in (1,2): touches f1 at (1,0,0) only
    net = FractureNetwork([f1, f2], require_dirichlet=False)
    assert net.traces == []


def test_boundary_touching_trace_flagged():
    # f2 stands on the edge y=0 of f1 without crossing it
    f1 = unit_square(1, "xy")
    f2 = unit_square(2, "xz", lo=(0.2, 0.0), hi=(0.8, 1.0))
    net = FractureNetwork([f1, f2], require_dirichlet=False)
    assert len(net.traces) == 1
    tr = net.traces[0]
    assert tr.on_boundary == frozenset({1, 2})
    assert abs(tr.length - 0.6) < 1e-9


def test_coplanar_overlap_raises():
    f1 = unit_square(1, "xy")
    f2 = unit_square(2, "xy", lo=(0.5, 0.5), hi=(1.5, 1.5))
    with pytest.raises(OverlapError):
        FractureNetwork([f1, f2], require_dirichlet=False)


def test_coplanar_disjoint_ok():
    f1 = unit_square(1, "xy")
    f2 = unit_square(2, "xy", lo=(2.0, 0.0), hi=(3.0, 1.0))
    net = FractureNetwork([f1, f2], require_dirichlet=False)
    assert net.traces == []


def test_three_fractures_on_one_line_rejected():
    f1 = unit_square(1, "xy", lo=(0, -1), hi=(1, 1))
    f2 = unit_square(2, "xz", lo=(0, -1), hi=(1, 1))
    f3 = Fracture(3, [[0, -1, -1], [1, -1, -1], [1, 1, 1], [0, 1, 1]])
    with pytest.raises(OverlapError):
        FractureNetwork([f1, f2, f3], require_dirichlet=False)


def test_boundary_completion_partitions():
    f1 = unit_square(1, "xy")
    bc = [BoundaryPortion(1, 3, "dirichlet", 1.0)]
    net = FractureNetwork([f1], bc)
    spans = {}
    for p in net.boundary:
        spans.setdefault(p.edge, []).append(p.span)
    # all four edges fully covered, no overlap
    for k in range(4):
        ivals = sorted(spans[k])
        assert abs(ivals[0][0]) < 1e-12 and abs(ivals[-1][1] - 1.0) < 1e-12
        for (a0, a1), (b0, b1) in zip(ivals, ivals[1:]):
            assert abs(b0 - a1) < 1e-9
    kinds = {p.edge: p.kind for p in net.boundary}
    assert kinds[3] == "dirichlet"
    assert kinds[0] == "neumann"


def test_boundary_gap_respects_trace():
    # boundary trace occupies (0.2, 0.8) of edge 0: the filler must not cover it
    f1 = unit_square(1, "xy")
    f2 = unit_square(2, "xz", lo=(0.2, 0.0), hi=(0.8, 1.0))
    bc = [BoundaryPortion(1, 2, "dirichlet", 1.0)]
    net = FractureNetwork([f1, f2], bc)
    edge0 = sorted(p.span for p in net.boundary if p.fracture == 1 and p.edge == 0)
    assert len(edge0) == 2
    assert abs(edge0[0][1] - 0.2) < 1e-9
    assert abs(edge0[1][0] - 0.8) < 1e-9


def test_overlapping_portions_rejected():
    f1 = unit_square(1, "xy")
    bc = [
        BoundaryPortion(1, 0, "dirichlet", 1.0, (0.0, 0.6)),
        BoundaryPortion(1, 0, "neumann", 0.0, (0.5, 1.0)),
    ]
    with pytest.raises(ParseError):
        FractureNetwork([f1], bc)


def test_portion_validation():
    with pytest.raises(ParseError):
        BoundaryPortion(1, 0, "robin", 1.0)
    with pytest.raises(NoBoundaryContact):
        BoundaryPortion(1, 0, "dirichlet", 1.0, (0.7, 0.7))
    f1 = unit_square(1, "xy")
    with pytest.raises(NoBoundaryContact):
        FractureNetwork([f1], [BoundaryPortion(1, 9, "dirichlet", 1.0)])
    with pytest.raises(NoBoundaryContact):
        FractureNetwork([f1], [BoundaryPortion(5, 0, "dirichlet", 1.0)])


def test_no_dirichlet_rejected():
    f1 = unit_square(1, "xy")
    with pytest.raises(ParseError):
        FractureNetwork([f1], [BoundaryPortion(1, 0, "neumann", 1.0)])


def test_json_round_trip(tmp_path):
    f1 = unit_square(1, "xy", perm=2.5)
    f2 = unit_square(2, "xz", lo=(0, -1), hi=(1, 1), perm=[[2.0, 0.5], [0.5, 1.0]])
    bc = [BoundaryPortion(1, 3, "dirichlet", 1.0, (0.25, 0.75))]
    net = FractureNetwork([f1, f2], bc)
    path = tmp_path / "net.json"
    dump_network(net, path)
    again = load_network(path)
    assert len(again.fractures) == 2
    assert len(again.traces) == len(net.traces)
    for a, b in zip(net.fractures, again.fractures):
        assert np.allclose(a.vertices, b.vertices, atol=1e-14)
        assert np.allclose(a.permeability, b.permeability, atol=1e-14)
    ds = [p for p in again.boundary if p.kind == "dirichlet"]
    assert len(ds) == 1 and ds[0].span == (0.25, 0.75)


def test_json_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ParseError):
        load_network(bad)
    with pytest.raises(UnsupportedVersion):
        network_from_dict({"format": "dfnflow-network", "version": 99, "fractures": [{}]})
    with pytest.raises(ParseError):
        network_from_dict({"format": "something-else"})
    with pytest.raises(ParseError):
        network_from_dict({"format": "dfnflow-network", "version": 1, "fractures": []})


def test_callable_value_not_serializable():
    f1 = unit_square(1, "xy")
    bc = [BoundaryPortion(1, 0, "dirichlet", lambda p: p[0])]
    net = FractureNetwork([f1], bc)
    with pytest.raises(ParseError):
        network_to_dict(net)


def test_trace_param_and_points():
    f1 = unit_square(1, "xy", lo=(0, -1), hi=(1, 1))
    f2 = unit_square(2, "xz", lo=(0, -1), hi=(1, 1))
    net = FractureNetwork([f1, f2], require_dirichlet=False)
    tr = net.traces[0]
    mid = tr.point_at(0.5)
    assert np.allclose(mid, [0.5, 0, 0])
    assert abs(tr.param_of(mid) - 0.5) < 1e-12
    loc = tr.endpoints_local(f1)
    assert loc.shape == (2, 2)
    assert np.allclose(f1.to_global(loc), [tr.p0, tr.p1])
