import numpy as np
import pytest
from scipy.optimize import minimize

from motionkit.errors import ValidationError
from motionkit.geometry import (
    Capsule,
    TriangleMesh,
    box_mesh,
    capsule_overlap,
    chamfer_distance,
    convex_hull_3d,
    ground_plane,
    hidden_point_removal,
    penetration_depths,
    procrustes_align,
    read_ply_cloud,
    read_ply_mesh,
    segment_segment_distance,
    signed_depths,
    write_ply_cloud,
    write_ply_mesh,
)
from motionkit.rotations import axis_angle_to_matrix, random_rotation


def brute_chamfer(a, b):
    d_ab = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return d_ab.min(axis=1).mean() + d_ab.min(axis=0).mean()


class TestChamfer:
    def test_identical_clouds(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(20, 3))
        assert chamfer_distance(a, a) == 0.0

    def test_single_pair(self):
        a = np.array([[0.0, 0.0, 0.0]])
        b = np.array([[1.0, 0.0, 0.0]])
        assert chamfer_distance(a, b) == pytest.approx(2.0)

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a = rng.normal(size=(10, 3))
            b = rng.normal(size=(10, 3))
            assert chamfer_distance(a, b) == pytest.approx(brute_chamfer(a, b), abs=0)

    def test_symmetry_and_nonnegativity(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            a = rng.normal(size=(rng.integers(1, 15), 3))
            b = rng.normal(size=(rng.integers(1, 15), 3))
            d1 = chamfer_distance(a, b)
            d2 = chamfer_distance(b, a)
            assert d1 == pytest.approx(d2, rel=1e-12)
            assert d1 >= 0

    def test_zero_iff_mutual_subsets(self):
        a = np.array([[0.0, 0, 0], [1.0, 0, 0]])
        b = np.array([[1.0, 0, 0], [0.0, 0, 0], [0.0, 0, 0]])
        assert chamfer_distance(a, b) == 0.0

    def test_empty_cloud_rejected(self):
        with pytest.raises(ValidationError):
            chamfer_distance(np.zeros((0, 3)), np.zeros((1, 3)))


class TestConvexHull:
    def test_cube_corners_plus_centroid(self):
        corners = np.array(
            [[x, y, z] for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)]
        )
        pts = np.vstack([corners, [[0.5, 0.5, 0.5]]])
        hull = convex_hull_3d(pts)
        assert not hull.degenerate
        assert set(hull.vertices) == set(range(8))

    def test_tetrahedron(self):
        pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0], [0.0, 0, 1]])
        hull = convex_hull_3d(pts)
        assert len(hull.vertices) == 4
        assert hull.faces.shape[0] == 4

    def test_containment_and_idempotence(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(200, 3))
        pts /= np.maximum(1.0, np.linalg.norm(pts, axis=1, keepdims=True))
        hull = convex_hull_3d(pts)
        # Every point inside or on all face planes.
        for tri in hull.faces:
            a, b, c = pts[tri]
            n = np.cross(b - a, c - a)
            n /= np.linalg.norm(n)
            side = (pts - a) @ n
            assert side.max() < 1e-9 or side.min() > -1e-9
        hull2 = convex_hull_3d(pts[hull.vertices])
        assert set(hull.vertices[hull2.vertices]) == set(hull.vertices)

    def test_coplanar_flagged_degenerate(self):
        pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0], [1.0, 1, 0], [0.5, 0.5, 0]])
        hull = convex_hull_3d(pts)
        assert hull.degenerate
        assert 4 not in hull.vertices  # interior point of the square

    def test_small_inputs_degenerate(self):
        assert convex_hull_3d(np.array([[1.0, 2, 3]])).degenerate
        two = convex_hull_3d(np.array([[0.0, 0, 0], [1.0, 1, 1]]))
        assert two.degenerate and set(two.vertices) == {0, 1}


class TestHiddenPointRemoval:
    def test_single_point_visible(self):
        vis = hidden_point_removal(np.array([[0.0, 0.0, 1.0]]), np.zeros(3))
        assert list(vis) == [0]

    def test_sphere_against_raycast_oracle(self):
        # 500 uniform sphere samples viewed from (0, 0, 5) at the default radius
        # exponent; the analytic oracle marks front-facing points visible.
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(500, 3))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        view = np.array([0.0, 0.0, 5.0])
        vis = hidden_point_removal(pts, view, 2.0)
        marked = np.zeros(len(pts), dtype=bool)
        marked[vis] = True
        front = np.sum(pts * (view - pts), axis=1) > 0
        assert np.mean(marked == front) >= 0.95

    def test_planar_grid_fully_visible(self):
        g = np.linspace(-1.0, 1.0, 15)
        gx, gy = np.meshgrid(g, g)
        grid = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)
        vis = hidden_point_removal(grid, np.array([0.0, 0.0, 5.0]), 2.0)
        assert vis.size == grid.shape[0]

    def test_scale_invariance_about_viewpoint(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(80, 3)) + [0.0, 0.0, 4.0]
        view = np.array([0.2, -0.1, 0.0])
        vis1 = hidden_point_removal(pts, view, 2.0)
        vis2 = hidden_point_removal(view + 7.5 * (pts - view), view, 2.0)
        assert np.array_equal(vis1, vis2)

    def test_coincident_viewpoint_rejected(self):
        pts = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
        with pytest.raises(ValidationError):
            hidden_point_removal(pts, np.array([0.0, 0.0, 1.0]))


class TestPenetration:
    def test_plane_below_and_above(self):
        plane = ground_plane(5.0)
        d = penetration_depths(np.array([[0.0, 0.0, -0.1], [0.0, 0.0, 0.5]]), plane)
        assert d[0] == pytest.approx(0.1)
        assert d[1] == 0.0

    def test_cube_center(self):
        cube = box_mesh((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
        d = penetration_depths(np.array([[0.0, 0.0, 0.0]]), cube)
        assert d[0] == pytest.approx(0.5)

    def test_outside_convex_box_is_zero(self):
        # Half-space oracle: outside an axis-aligned box, depth must be 0.
        cube = box_mesh((0.5, -0.25, 1.0), (0.8, 1.2, 0.6))
        rng = np.random.default_rng(7)
        pts = rng.uniform(-3.0, 3.0, size=(300, 3))
        lo = np.array([0.1, -0.85, 0.7])
        hi = np.array([0.9, 0.35, 1.3])
        outside = np.any((pts < lo - 1e-9) | (pts > hi + 1e-9), axis=1)
        d = penetration_depths(pts, cube)
        assert np.all(d[outside] == 0.0)
        # And inside, depth equals the distance to the nearest face plane.
        inside = ~outside
        expected = np.minimum((pts - lo).min(axis=1), (hi - pts).min(axis=1))
        assert d[inside] == pytest.approx(expected[inside], abs=1e-12)

    def test_signed_depths_clearance(self):
        plane = ground_plane(5.0)
        s = signed_depths(np.array([[0.0, 0.0, 0.25], [0.0, 0.0, -0.25]]), plane)
        assert s[0] == pytest.approx(-0.25)
        assert s[1] == pytest.approx(0.25)

    def test_matches_per_triangle_bruteforce(self):
        rng = np.random.default_rng(11)
        cube = box_mesh((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
        pts = rng.uniform(-1.0, 1.0, size=(100, 3))
        got = penetration_depths(pts, cube)
        verts, tris, normals = cube.vertices, cube.triangles, cube.normals
        for p, g in zip(pts, got):
            best_d, best_c, best_n = np.inf, None, None
            for tri, nrm in zip(tris, normals):
                c = closest_point_on_triangle(p, verts[tri[0]], verts[tri[1]], verts[tri[2]])
                d = np.linalg.norm(p - c)
                if d < best_d - 1e-15:
                    best_d, best_c, best_n = d, c, nrm
            expected = max(0.0, -np.dot(p - best_c, best_n))
            assert g == pytest.approx(expected, abs=1e-9)


def closest_point_on_triangle(p, a, b, c):
    # Reference implementation: dense sampling of barycentric coordinates.
    best, best_d = None, np.inf
    for u in np.linspace(0, 1, 60):
        for v in np.linspace(0, 1 - u, max(2, int(60 * (1 - u)) + 1)):
            q = a + u * (b - a) + v * (c - a)
            d = np.linalg.norm(p - q)
            if d < best_d:
                best, best_d = q, d
    return best


class TestCapsuleOverlap:
    def test_far_apart(self):
        a = Capsule(np.zeros(3), np.array([1.0, 0, 0]), 0.1)
        b = Capsule(np.array([0.0, 5.0, 0]), np.array([1.0, 5.0, 0]), 0.1)
        assert capsule_overlap(a, b) == 0.0

    def test_parallel_axes(self):
        a = Capsule(np.zeros(3), np.array([1.0, 0, 0]), 0.1)
        b = Capsule(np.array([0.0, 0.15, 0]), np.array([1.0, 0.15, 0]), 0.1)
        assert capsule_overlap(a, b) == pytest.approx(0.05)

    def test_skew_segments_against_grid_search(self):
        rng = np.random.default_rng(13)
        ts = np.linspace(0.0, 1.0, 401)
        for _ in range(15):
            p1, q1, p2, q2 = rng.normal(size=(4, 3))
            a = Capsule(p1, q1, 0.3)
            b = Capsule(p2, q2, 0.4)
            pa = p1 + ts[:, None] * (q1 - p1)
            pb = p2 + ts[:, None] * (q2 - p2)
            dmin = np.min(np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=-1))
            expected = max(0.0, 0.7 - dmin)
            # Grid resolution limits the oracle, not the implementation.
            assert capsule_overlap(a, b) == pytest.approx(expected, abs=2e-3)

    def test_degenerate_point_segments(self):
        p = np.array([0.0, 0.0, 0.0])
        d = segment_segment_distance(p, p, np.array([1.0, 0, 0]), np.array([1.0, 0, 0]))
        assert float(d) == pytest.approx(1.0)


class TestProcrustes:
    def test_exact_similarity_recovered(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=(12, 3))
        R0 = random_rotation(rng)
        t0 = np.array([1.0, -2.0, 0.5])
        y = 2.0 * x @ R0.T + t0
        tf = procrustes_align(x, y)
        assert tf.scale == pytest.approx(2.0)
        assert np.allclose(tf.rotation, R0, atol=1e-12)
        assert np.allclose(tf.translation, t0, atol=1e-12)
        assert tf.residual < 1e-9

    def test_identity(self):
        rng = np.random.default_rng(18)
        x = rng.normal(size=(8, 3))
        tf = procrustes_align(x, x)
        assert tf.scale == pytest.approx(1.0)
        assert np.allclose(tf.rotation, np.eye(3), atol=1e-12)
        assert tf.residual == pytest.approx(0.0, abs=1e-20)

    def test_matches_numerical_minimizer(self):
        rng = np.random.default_rng(19)
        x = rng.normal(size=(10, 3))
        R0 = random_rotation(rng)
        y = x @ R0.T + 0.05 * rng.normal(size=(10, 3))
        tf = procrustes_align(x, y)

        def objective(params):
            s = params[0]
            R = axis_angle_to_matrix(params[1:4])
            t = params[4:]
            return np.sum((s * x @ R.T + t - y) ** 2)

        best = np.inf
        for attempt in range(5):
            x0 = np.concatenate([[1.0], 0.5 * rng.normal(size=3), rng.normal(size=3)])
            res = minimize(objective, x0, method="Nelder-Mead",
                           options={"maxiter": 20000, "xatol": 1e-12, "fatol": 1e-14})
            best = min(best, res.fun)
        assert tf.residual <= best + 1e-6

    def test_residual_not_worse_than_unaligned(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            x = rng.normal(size=(6, 3))
            y = rng.normal(size=(6, 3))
            tf = procrustes_align(x, y)
            assert tf.residual <= np.sum((x - y) ** 2) + 1e-12

    def test_rotation_is_proper(self):
        # Reflection-heavy correspondence still yields det +1.
        x = np.array([[1.0, 0, 0], [0.0, 1, 0], [0.0, 0, 1], [0.0, 0, 0]])
        y = x.copy()
        y[:, 0] *= -1.0
        tf = procrustes_align(x, y)
        assert np.linalg.det(tf.rotation) == pytest.approx(1.0)

    def test_coincident_source_rejected(self):
        x = np.ones((5, 3))
        with pytest.raises(ValidationError):
            procrustes_align(x, np.random.default_rng(0).normal(size=(5, 3)))


class TestPlyIO:
    def test_cloud_roundtrip(self, tmp_path):
        rng = np.random.default_rng(23)
        pts = rng.normal(size=(40, 3))
        path = tmp_path / "cloud.ply"
        write_ply_cloud(pts, path)
        back = read_ply_cloud(path)
        assert np.array_equal(pts, back)

    def test_mesh_roundtrip(self, tmp_path):
        mesh = box_mesh((0.5, 0.0, -1.0), (1.0, 2.0, 0.5))
        path = tmp_path / "mesh.ply"
        write_ply_mesh(mesh, path)
        back = read_ply_mesh(path)
        assert np.array_equal(mesh.vertices, back.vertices)
        assert np.array_equal(mesh.triangles, back.triangles)
        assert np.array_equal(mesh.normals, back.normals)

    def test_rejects_non_ply(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_text("not a ply\n1 2 3\n")
        with pytest.raises(ValidationError):
            read_ply_cloud(path)


class TestMeshValidation:
    def test_bad_normals_rejected(self):
        v = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]])
        t = np.array([[0, 1, 2]])
        with pytest.raises(ValidationError):
            TriangleMesh(v, t, np.array([[0.0, 0.0, 2.0]]))

    def test_index_out_of_range(self):
        v = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]])
        with pytest.raises(ValidationError):
            TriangleMesh.from_triangles(v, np.array([[0, 1, 3]]))
