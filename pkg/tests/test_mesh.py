import filecmp
import warnings

import numpy as np
import pytest

from dfnflow import (
    BoundaryPortion,
    Fracture,
    FractureNetwork,
    agglomerate,
    cut_to_polygons,
    restore_conformity,
    triangulate_network,
)
from dfnflow.errors import (
    EmptyTraceMesh,
    MeshFailure,
    ParseError,
    SliverPolygon,
    UnsupportedVersion,
)
from dfnflow.meshing import (
    EDGE_BOUNDARY,
    EDGE_INTERIOR,
    EDGE_TRACE,
    NetworkMesh,
    build_fracture_mesh,
    dump_mesh,
    export_gmsh,
    export_vtk,
    import_gmsh,
    load_mesh,
)
from dfnflow.meshing.polygonal import _split_loop, _union_loops


def unit_square_net():
    f = Fracture(1, np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float))
    return FractureNetwork([f], boundary=[BoundaryPortion(1, 0, "dirichlet", 0.0)])


def cross_net(lo=-1.0, hi=1.0):
    f1 = Fracture(1, np.array(
        [[lo, lo, 0], [hi, lo, 0], [hi, hi, 0], [lo, hi, 0]], float))
    f2 = Fracture(2, np.array(
        [[0, lo, lo], [0, hi, lo], [0, hi, hi], [0, lo, hi]], float))
    return FractureNetwork(
        [f1, f2], boundary=[BoundaryPortion(1, 3, "dirichlet", 1.0)]
    )


def angle_net(theta):
    f1 = Fracture(1, np.array(
        [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float))
    f2 = Fracture(2, np.array(
        [[0.5, 0.05, -0.5], [0.5, 0.95, -0.5],
         [0.5, 0.95, 1.0], [0.5, 0.05, 1.0]], float))
    d = np.array([np.sin(theta), np.cos(theta), 0.0])
    P = np.array([0.5, 0.5, 0.0])
    lo, hi = P - 0.45 * d, P + 0.45 * d
    f3 = Fracture(3, np.array(
        [[lo[0], lo[1], -0.5], [hi[0], hi[1], -0.5],
         [hi[0], hi[1], 1.0], [lo[0], lo[1], 1.0]], float))
    return FractureNetwork(
        [f1, f2, f3], boundary=[BoundaryPortion(1, 3, "dirichlet", 1.0)]
    )


def min_angle_deg(fm):
    best = 180.0
    for loop in fm.cells:
        p = fm.points[loop]
        n = len(p)
        for k in range(n):
            a, b, c = p[k - 1], p[k], p[(k + 1) % n]
            u, v = a - b, c - b
            cosv = u @ v / (np.linalg.norm(u) * np.linalg.norm(v))
            best = min(best, np.degrees(np.arccos(np.clip(cosv, -1, 1))))
    return best


class TestTriangulate:
    def test_unit_square(self):
        mesh = triangulate_network(unit_square_net(), 0.5)
        fm = mesh.mesh_of(1)
        assert fm.ncells >= 4
        assert abs(fm.cell_area.sum() - 1.0) < 1e-12
        assert all(len(c) == 3 for c in fm.cells)

    def test_quality_no_traces(self):
        mesh = triangulate_network(unit_square_net(), 0.25)
        assert mesh.quality_violations == 0
        assert min_angle_deg(mesh.mesh_of(1)) >= 15.0 - 1e-9

    @pytest.mark.parametrize("conf", ["matching", "conforming", "nonmatching"])
    def test_area_covered(self, conf):
        mesh = triangulate_network(cross_net(), 0.4, conformity=conf)
        for fm in mesh.fracture_meshes:
            rel = abs(fm.cell_area.sum() - fm.fracture.area) / fm.fracture.area
            assert rel < 1e-10

    def test_matching_partitions_identical(self):
        mesh = triangulate_network(cross_net(), 0.4, conformity="matching")
        recs = mesh.trace_sides[1]
        assert len(recs) == 4  # two sides per fracture
        base = recs[0].params
        for r in recs[1:]:
            assert len(r.params) == len(base)
            assert np.max(np.abs(r.params - base)) < 1e-9

    def test_conforming_partitions_differ(self):
        mesh = triangulate_network(cross_net(), 0.4, conformity="conforming")
        n1 = mesh.sides_of(1, fid=1)[0].nintervals
        n2 = mesh.sides_of(1, fid=2)[0].nintervals
        assert n1 != n2  # per-fracture target sizes deliberately differ
        # but within one fracture the two sides agree
        for fid in (1, 2):
            sides = mesh.sides_of(1, fid=fid)
            assert len(sides) == 2
            assert np.allclose(sides[0].params, sides[1].params, atol=1e-9)

    def test_nonmatching_cut_partition(self):
        mesh = triangulate_network(cross_net(), 0.4, conformity="nonmatching")
        for fid in (1, 2):
            sides = mesh.sides_of(1, fid=fid)
            assert len(sides) == 1
            assert sides[0].edges is None  # trace cuts through cell interiors
            assert sides[0].params[0] == 0.0 and sides[0].params[-1] == 1.0
            fm = mesh.mesh_of(fid)
            assert not np.any(fm.edge_kind == EDGE_TRACE)

    def test_trace_edges_doubled(self):
        mesh = triangulate_network(cross_net(), 0.4, conformity="matching")
        fm = mesh.mesh_of(1)
        sel = np.flatnonzero(fm.edge_kind == EDGE_TRACE)
        sides = fm.edge_side[sel]
        assert np.sum(sides == 0) == np.sum(sides == 1)
        assert np.all(np.sum(fm.edge_cells[sel] >= 0, axis=1) == 1)

    def test_small_angle_growth(self):
        # shared trace partitions grade into the wedge, so the matching
        # cell count explodes as the crossing angle vanishes
        n_right = triangulate_network(
            angle_net(np.pi / 2), 0.3, conformity="matching").ncells
        n_small = triangulate_network(
            angle_net(np.pi / 565), 0.3, conformity="matching").ncells
        assert n_small >= 10 * n_right

    def test_small_angle_violations_recorded(self):
        mesh = triangulate_network(angle_net(np.pi / 100), 0.3,
                                   conformity="matching")
        assert mesh.quality_violations > 0

    def test_nonmatching_insensitive_to_angle(self):
        counts = [
            triangulate_network(angle_net(th), 0.25,
                                conformity="nonmatching").ncells
            for th in np.linspace(np.pi / 2, np.pi / 565, 8)
        ]
        assert (max(counts) - min(counts)) / min(counts) < 0.2

    def test_deterministic(self):
        a = triangulate_network(cross_net(), 0.35, conformity="matching")
        b = triangulate_network(cross_net(), 0.35, conformity="matching")
        for fa, fb in zip(a.fracture_meshes, b.fracture_meshes):
            assert np.array_equal(fa.points, fb.points)
            assert all(
                np.array_equal(ca, cb) for ca, cb in zip(fa.cells, fb.cells)
            )

    def test_h_overrides(self):
        mesh = triangulate_network(
            cross_net(), 0.5, conformity="matching", h_overrides={2: 0.2}
        )
        assert mesh.mesh_of(2).ncells > 2 * mesh.mesh_of(1).ncells


class TestValidators:
    def test_missing_trace_edges_rejected(self):
        net = cross_net()
        # non-matching cells do not resolve the trace; reclassifying them
        # as a matching mesh must fail
        nm = triangulate_network(net, 0.5, conformity="nonmatching")
        with pytest.raises(MeshFailure):
            fms = [
                build_fracture_mesh(net, fm.fracture.id, fm.points, fm.cells,
                                    "matching")
                for fm in nm.fracture_meshes
            ]
            NetworkMesh(net, fms, "matching")

    def test_mismatched_partitions_rejected(self):
        net = cross_net()
        m1 = triangulate_network(net, 0.4, "matching").mesh_of(1)
        m2 = triangulate_network(net, 0.28, "matching").mesh_of(2)
        with pytest.raises(MeshFailure):
            NetworkMesh(net, [m1, m2], "matching").validate()

    def test_bad_cell_rejected(self):
        net = unit_square_net()
        pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
        with pytest.raises(MeshFailure):
            fm = build_fracture_mesh(
                net, 1, pts, [np.array([0, 2, 1]), np.array([0, 3, 2])],
                "matching",
            )
            fm.validate(net.tol_geom)


class TestCutToPolygons:
    def test_single_triangle_cut(self):
        # one triangle fracture; the trace chord crosses two of its edges
        f1 = Fracture(1, np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float))
        f2 = Fracture(2, np.array(
            [[0.25, 0, 0], [0.25, 0.75, 0], [0.25, 0.75, -1], [0.25, 0, -1]],
            float))
        net = FractureNetwork(
            [f1, f2], boundary=[BoundaryPortion(1, 0, "dirichlet", 0.0)]
        )
        tr = net.traces[0]
        assert set(tr.on_boundary) == {2}
        pts1 = net.fracture(1).verts2
        fm1 = build_fracture_mesh(net, 1, pts1, [np.array([0, 1, 2])],
                                  "nonmatching")
        pts2 = net.fracture(2).verts2
        fm2 = build_fracture_mesh(net, 2, pts2, [np.array([0, 1, 2, 3])],
                                  "nonmatching")
        nm = NetworkMesh(net, [fm1, fm2], "nonmatching")
        cut = cut_to_polygons(nm)
        sizes = sorted(len(c) for c in cut.mesh_of(1).cells)
        assert sizes == [3, 4]
        assert abs(cut.mesh_of(1).cell_area.sum() - 0.5) < 1e-12

    def test_interior_tips_get_hanging_vertices(self):
        f1 = Fracture(1, np.array(
            [[-1, -1, 0], [1, -1, 0], [1, 1, 0], [-1, 1, 0]], float))
        f2 = Fracture(2, np.array(
            [[0, -0.55, -1], [0, 0.62, -1], [0, 0.62, 1], [0, -0.55, 1]],
            float))
        net = FractureNetwork(
            [f1, f2], boundary=[BoundaryPortion(1, 3, "dirichlet", 1.0)]
        )
        tr = net.traces[0]
        nm = triangulate_network(net, 0.37, conformity="nonmatching")
        cut = cut_to_polygons(nm)
        fm1 = cut.mesh_of(1)
        for p3 in (tr.p0, tr.p1):
            p2 = net.fracture(1).to_local(p3)
            d = np.linalg.norm(fm1.points - p2, axis=1).min()
            assert d < 1e-12
        # both sides present with real mesh edges now
        for fid in (1, 2):
            sides = cut.sides_of(tr.id, fid=fid)
            assert len(sides) == 2
            assert all(s.edges is not None for s in sides)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_random_cut_preserves_area_and_adjacency(self, seed):
        rng = np.random.default_rng(seed)
        ang = rng.uniform(0.3, np.pi / 2)
        off = rng.uniform(-0.3, 0.3)
        d = np.array([np.cos(ang), np.sin(ang), 0.0])
        P = np.array([0.5 + off, 0.5 - off, 0.0])
        lo, hi = P - 2.0 * d, P + 2.0 * d
        f1 = Fracture(1, np.array(
            [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float))
        f2 = Fracture(2, np.array(
            [[lo[0], lo[1], -1], [hi[0], hi[1], -1],
             [hi[0], hi[1], 1], [lo[0], lo[1], 1]], float))
        net = FractureNetwork(
            [f1, f2], boundary=[BoundaryPortion(1, 0, "dirichlet", 0.0)]
        )
        nm = triangulate_network(net, 0.3, conformity="nonmatching")
        cut = cut_to_polygons(nm)  # validates adjacency internally
        for before, after in zip(nm.fracture_meshes, cut.fracture_meshes):
            assert abs(before.cell_area.sum() - after.cell_area.sum()) < 1e-10

    def test_requires_nonmatching(self):
        mesh = triangulate_network(cross_net(), 0.5, conformity="matching")
        with pytest.raises(MeshFailure):
            cut_to_polygons(mesh)

    def test_split_loop_shares_online_vertices(self):
        poly = np.array([[0, 0], [2, 0], [2, 1], [0, 1]], float)
        left, right = _split_loop(poly, np.array([1.0, -5.0]),
                                  np.array([0.0, 1.0]), 1e-12)
        la = np.array(left)
        ra = np.array(right)
        assert abs(abs(_area(la)) + abs(_area(ra)) - 2.0) < 1e-12
        assert _area(la) > 0 and _area(ra) > 0


def _area(p):
    x, y = p[:, 0], p[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


class TestRestoreConformity:
    def test_partitions_become_merged_union(self):
        net = cross_net()
        nm = triangulate_network(net, 0.4, conformity="nonmatching")
        cut = cut_to_polygons(nm)
        before = {
            fid: cut.sides_of(1, fid=fid)[0].params.copy() for fid in (1, 2)
        }
        rc = restore_conformity(cut)
        assert rc.conformity == "matching"
        after = rc.sides_of(1, fid=1)[0].params
        for fid in (1, 2):
            # every original breakpoint survives in the merged partition
            for t in before[fid]:
                assert np.min(np.abs(after - t)) < 1e-9
        base = rc.trace_sides[1][0].params
        for r in rc.trace_sides[1][1:]:
            assert np.allclose(r.params, base, atol=1e-9)

    def test_idempotent(self):
        net = cross_net()
        rc = restore_conformity(
            cut_to_polygons(triangulate_network(net, 0.4, "nonmatching"))
        )
        assert restore_conformity(rc) is rc

    def test_areas_unchanged(self):
        net = cross_net()
        cut = cut_to_polygons(triangulate_network(net, 0.4, "nonmatching"))
        rc = restore_conformity(cut)
        for a, b in zip(cut.fracture_meshes, rc.fracture_meshes):
            assert a.ncells == b.ncells
            assert abs(a.cell_area.sum() - b.cell_area.sum()) < 1e-12

    def test_flat_vertices_only(self):
        # cell vertex count may grow, but inserted vertices are collinear
        # with their neighbors, so each cell's area is unchanged
        net = cross_net()
        cut = cut_to_polygons(triangulate_network(net, 0.4, "nonmatching"))
        rc = restore_conformity(cut)
        fa = np.sort(np.concatenate(
            [fm.cell_area for fm in cut.fracture_meshes]))
        fb = np.sort(np.concatenate(
            [fm.cell_area for fm in rc.fracture_meshes]))
        assert np.max(np.abs(fa - fb)) < 1e-12


class TestAgglomerate:
    def test_threshold_zero_is_identity(self):
        mesh = triangulate_network(cross_net(), 0.4, "matching")
        out = agglomerate(mesh, 0.0)
        assert [fm.ncells for fm in out.fracture_meshes] == [
            fm.ncells for fm in mesh.fracture_meshes
        ]

    def test_full_merge_single_fracture(self):
        mesh = triangulate_network(unit_square_net(), 0.4)
        out = agglomerate(mesh, np.inf)
        assert out.mesh_of(1).ncells == 1
        assert abs(out.mesh_of(1).cell_area.sum() - 1.0) < 1e-10

    def test_never_merges_across_traces(self):
        mesh = triangulate_network(cross_net(), 0.4, "matching")
        out = agglomerate(mesh, np.inf)
        # the trace separates each fracture into two half-polygons
        assert [fm.ncells for fm in out.fracture_meshes] == [2, 2]
        for rec_in, rec_out in zip(mesh.trace_sides[1], out.trace_sides[1]):
            assert np.allclose(rec_in.params, rec_out.params, atol=1e-9)

    def test_reduces_count_and_respects_threshold(self):
        mesh = triangulate_network(cross_net(), 0.3, "matching")
        mean_area = np.mean(np.concatenate(
            [fm.cell_area for fm in mesh.fracture_meshes]))
        out = agglomerate(mesh, 0.6 * mean_area)
        assert out.ncells < mesh.ncells
        for fm_in, fm_out in zip(mesh.fracture_meshes, out.fracture_meshes):
            assert abs(fm_in.cell_area.sum() - fm_out.cell_area.sum()) < 1e-10

    def test_union_loops_helper(self):
        # two quads sharing one edge merge into one hexagon-shaped loop
        la = [0, 1, 2, 3]
        lb = [1, 4, 5, 2]
        out = _union_loops(la, lb)
        assert out is not None and len(out) == 6
        assert set(out) == {0, 1, 2, 3, 4, 5}
        # loops sharing two separated runs are rejected
        assert _union_loops([0, 1, 2, 3, 4, 5], [1, 0, 6, 3, 2, 7]) is None


class TestMeshIO:
    def test_gmsh_roundtrip(self, tmp_path):
        net = cross_net()
        mesh = triangulate_network(net, 0.4, "matching")
        p = tmp_path / "mesh.msh"
        export_gmsh(mesh, p)
        back = import_gmsh(p, net, "matching")
        for a, b in zip(mesh.fracture_meshes, back.fracture_meshes):
            assert a.ncells == b.ncells
            pa = a.fracture.to_global(a.points)
            pb = b.fracture.to_global(b.points)
            assert np.abs(pa - pb).max() == 0.0

    def test_two_triangle_fixture(self, tmp_path):
        msh = """$MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
4
1 0 0 0
2 1 0 0
3 1 1 0
4 0 1 0
$EndNodes
$Elements
2
1 2 2 1 1 1 2 3
2 2 2 1 1 1 3 4
$EndElements
"""
        p = tmp_path / "two.msh"
        p.write_text(msh)
        net = unit_square_net()
        mesh = import_gmsh(p, net, "matching")
        assert mesh.mesh_of(1).ncells == 2
        assert len(mesh.mesh_of(1).points) == 4

    def test_wrong_version_rejected(self, tmp_path):
        p = tmp_path / "bad.msh"
        p.write_text("$MeshFormat\n4.1 0 8\n$EndMeshFormat\n")
        with pytest.raises(UnsupportedVersion):
            import_gmsh(p, unit_square_net())

    def test_parse_error_carries_line_number(self, tmp_path):
        p = tmp_path / "bad.msh"
        p.write_text(
            "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n1\n1 oops 0 0\n"
            "$EndNodes\n"
        )
        with pytest.raises(ParseError, match="line 6"):
            import_gmsh(p, unit_square_net())

    def test_vtk_export_counts(self, tmp_path):
        mesh = triangulate_network(cross_net(), 0.4, "matching")
        p = tmp_path / "mesh.vtk"
        export_vtk(mesh, p, cell_data={"head": np.zeros(mesh.ncells)})
        text = p.read_text().splitlines()
        cells_line = next(ln for ln in text if ln.startswith("CELLS "))
        assert int(cells_line.split()[1]) == mesh.ncells
        assert any(ln.startswith("SCALARS head") for ln in text)
        assert any(ln.startswith("SCALARS fracture") for ln in text)

    def test_json_roundtrip_deterministic(self, tmp_path):
        mesh = triangulate_network(cross_net(), 0.4, "matching")
        p1 = tmp_path / "m1.json"
        p2 = tmp_path / "m2.json"
        dump_mesh(mesh, p1)
        back = load_mesh(p1)
        dump_mesh(back, p2)
        assert filecmp.cmp(p1, p2, shallow=False)
        assert back.conformity == mesh.conformity
        assert back.ncells == mesh.ncells

    def test_polygonal_json_roundtrip(self, tmp_path):
        cut = cut_to_polygons(
            triangulate_network(cross_net(), 0.4, "nonmatching"))
        p = tmp_path / "cut.json"
        dump_mesh(cut, p)
        back = load_mesh(p)
        assert back.ncells == cut.ncells
        assert back.conformity == "conforming"
