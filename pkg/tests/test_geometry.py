import numpy as np
import pytest

from sketchplace.errors import (
    ConfigurationError,
    EmptyRegionError,
    FormatError,
    InvalidDepthError,
)
from sketchplace.geometry import (
    CameraModel,
    DepthGrid,
    Sketch,
    enclosed_pixels,
    polygon_area,
    project_pixel,
    project_pixels,
    project_sketch,
    read_depth,
    world_to_pixel,
    write_depth,
)

from helpers import (
    cluster_components,
    oracle_enclosed_pixels,
    random_rotation,
    random_star_polygon,
)


def identity_camera(fx=100.0, fy=100.0, cx=50.0, cy=50.0):
    return CameraModel(fx, fy, cx, cy, np.eye(3), np.zeros(3))


def constant_depth(width, height, z):
    return DepthGrid(width, height,
                     np.full((height, width), z, dtype=np.float32),
                     np.ones((height, width), dtype=bool))


class TestEnclosedPixels:
    def test_square_boundary_inclusive(self):
        sk = Sketch([(0, 0), (4, 0), (4, 4), (0, 4)], "roi")
        px = enclosed_pixels(sk, 10, 10)
        assert len(px) == 25
        assert set(map(tuple, px)) == {(u, v) for u in range(5) for v in range(5)}

    def test_triangle_matches_bruteforce(self):
        verts = [(0, 0), (2, 0), (0, 2)]
        sk = Sketch(verts, "roi")
        got = set(map(tuple, enclosed_pixels(sk, 10, 10)))
        expected = set(oracle_enclosed_pixels(verts, 10, 10))
        assert got == expected
        assert got == {(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (0, 2)}

    def test_two_vertex_polygon_rejected(self):
        sk = Sketch([(0, 0), (3, 3)], "roi")
        with pytest.raises(EmptyRegionError):
            enclosed_pixels(sk, 10, 10)

    def test_zero_area_polygon_rejected(self):
        sk = Sketch([(1, 1), (3, 3), (2, 2)], "roi")
        with pytest.raises(EmptyRegionError):
            enclosed_pixels(sk, 10, 10)

    def test_self_intersection_rejected(self):
        sk = Sketch([(0, 0), (4, 4), (4, 0), (0, 4)], "roi")
        with pytest.raises(EmptyRegionError):
            enclosed_pixels(sk, 10, 10)

    def test_out_of_bounds_rejected(self):
        sk = Sketch([(0, 0), (12, 0), (0, 12)], "roi")
        with pytest.raises(ConfigurationError):
            enclosed_pixels(sk, 10, 10)

    def test_row_major_ordering(self):
        sk = Sketch([(0.5, 0.5), (5.5, 0.5), (5.5, 3.5), (0.5, 3.5)], "roi")
        px = enclosed_pixels(sk, 10, 10)
        flat = px[:, 1] * 10 + px[:, 0]
        assert (np.diff(flat) > 0).all()

    def test_agrees_with_oracle_on_random_polygons(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            verts = random_star_polygon(rng)
            got = set(map(tuple, enclosed_pixels(Sketch(verts, "roi"), 40, 40)))
            expected = set(oracle_enclosed_pixels(verts, 40, 40))
            assert got == expected

    def test_polygon_area_sign(self):
        assert polygon_area([(0, 0), (2, 0), (2, 2), (0, 2)]) == pytest.approx(4.0)


class TestProjectPixel:
    def test_principal_point(self):
        cam = identity_camera()
        np.testing.assert_allclose(project_pixel(cam, 50, 50, 2.0), [0, 0, 2.0])

    def test_offset_pixel(self):
        # (150-50)*1/100 = 1.0 in x, centered in y
        cam = identity_camera()
        np.testing.assert_allclose(project_pixel(cam, 150, 50, 1.0), [1.0, 0.0, 1.0])

    def test_rotation_translation_compose(self):
        # 90 degrees about world z, then shift: R@(0,0,1) + (1,0,0)
        R = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], dtype=float)
        cam = CameraModel(100, 100, 50, 50, R, np.array([1.0, 0, 0]))
        np.testing.assert_allclose(project_pixel(cam, 50, 50, 1.0), [1.0, 0.0, 1.0],
                                   atol=1e-15)

    @pytest.mark.parametrize("z", [0.0, -1.0, np.nan, np.inf])
    def test_invalid_depth(self, z):
        with pytest.raises(InvalidDepthError):
            project_pixel(identity_camera(), 10, 10, z)

    def test_round_trip_100_random(self):
        rng = np.random.default_rng(3)
        cam = identity_camera(fx=123.0, fy=87.0, cx=31.5, cy=44.5)
        for _ in range(100):
            u, v = rng.uniform(0, 100, 2)
            z = rng.uniform(0.1, 10)
            p = project_pixel(cam, u, v, z)
            u2, v2, z2 = world_to_pixel(cam, p)
            assert abs(u2 - u) < 1e-6 and abs(v2 - v) < 1e-6
            assert z2 == pytest.approx(z)

    def test_rigid_motion_equivariance_100_random(self):
        rng = np.random.default_rng(4)
        ident = identity_camera()
        for _ in range(100):
            R = random_rotation(rng)
            t = rng.uniform(-5, 5, 3)
            cam = CameraModel(100, 100, 50, 50, R, t)
            u, v = rng.uniform(0, 100, 2)
            z = rng.uniform(0.1, 5)
            lhs = project_pixel(cam, u, v, z)
            rhs = R @ project_pixel(ident, u, v, z) + t
            np.testing.assert_array_equal(lhs, rhs)


class TestCameraValidation:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(ConfigurationError):
            CameraModel(100, 100, 50, 50, np.eye(3) * 1.001, np.zeros(3))

    def test_rejects_reflection(self):
        with pytest.raises(ConfigurationError):
            CameraModel(100, 100, 50, 50, np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_rejects_bad_focal(self):
        with pytest.raises(ConfigurationError):
            CameraModel(-1, 100, 50, 50, np.eye(3), np.zeros(3))


class TestProjectSketch:
    def test_constant_depth_plane(self):
        cam = identity_camera(cx=4.5, cy=4.5, fx=10, fy=10)
        depth = constant_depth(10, 10, 1.0)
        sk = Sketch([(1, 1), (8, 1), (8, 8), (1, 8)], "roi")
        ps = project_sketch(cam, depth, sk)
        assert ps.label == "roi"
        np.testing.assert_allclose(ps.points[:, 2], 1.0)
        assert len(ps) == 64

    def test_mask_semantics_half_invalid(self):
        cam = identity_camera(cx=4.5, cy=4.5, fx=10, fy=10)
        values = np.full((10, 10), 2.0, dtype=np.float32)
        valid = np.ones((10, 10), dtype=bool)
        valid[:, 5:] = False
        depth = DepthGrid(10, 10, values, valid)
        sk = Sketch([(0, 0), (9, 0), (9, 9), (0, 9)], "roi")
        ps = project_sketch(cam, depth, sk)
        assert len(ps) == 50  # exactly the valid half

    def test_all_invalid_is_error(self):
        cam = identity_camera()
        depth = DepthGrid(10, 10, np.ones((10, 10), dtype=np.float32),
                          np.zeros((10, 10), dtype=bool))
        sk = Sketch([(0, 0), (5, 0), (5, 5), (0, 5)], "roi")
        with pytest.raises(EmptyRegionError):
            project_sketch(cam, depth, sk)

    def test_two_table_depth_scene_gives_two_clusters(self):
        # synthetic scene: two raised patches far apart, camera overhead
        cam = CameraModel(100, 100, 49.5, 49.5, np.diag([1.0, -1.0, -1.0]),
                          np.array([0, 0, 3.0]))
        values = np.full((100, 100), 3.0, dtype=np.float32)
        values[40:60, 10:30] = 2.0
        values[40:60, 70:90] = 2.0
        depth = DepthGrid(100, 100, values, np.ones((100, 100), dtype=bool))
        sk = Sketch([(0, 0), (99, 0), (99, 99), (0, 99)], "roi")
        ps = project_sketch(cam, depth, sk)
        raised = ps.points[ps.points[:, 2] > 0.5]
        clusters = cluster_components(raised, linkage=0.05)
        assert len(clusters) == 2

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(5)
        cam = CameraModel(88, 92, 40, 45, random_rotation(rng), rng.uniform(-1, 1, 3))
        uv = rng.uniform(0, 80, (50, 2))
        z = rng.uniform(0.2, 4.0, 50)
        batch = project_pixels(cam, uv, z)
        for i in range(50):
            np.testing.assert_allclose(batch[i], project_pixel(cam, *uv[i], z[i]),
                                       atol=1e-12)


class TestDepthIO:
    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        values = rng.uniform(0.1, 5.0, (12, 7)).astype(np.float32)
        valid = rng.uniform(size=(12, 7)) > 0.3
        grid = DepthGrid(7, 12, values, valid)
        path = tmp_path / "d.sdid"
        write_depth(path, grid)
        again = read_depth(path)
        assert again.width == 7 and again.height == 12
        np.testing.assert_array_equal(again.valid, valid)
        np.testing.assert_array_equal(again.values[valid], values[valid])
        write_depth(tmp_path / "d2.sdid", again)
        assert (tmp_path / "d.sdid").read_bytes() == (tmp_path / "d2.sdid").read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.sdid"
        p.write_bytes(b"NOPE" + b"\x00" * 12)
        with pytest.raises(FormatError):
            read_depth(p)

    def test_truncated_payload(self, tmp_path):
        import struct

        p = tmp_path / "short.sdid"
        p.write_bytes(b"SDID" + struct.pack("<III", 4, 4, 0) + b"\x00" * 10)
        with pytest.raises(FormatError):
            read_depth(p)

    def test_negative_depth_invalid_on_read(self, tmp_path):
        import struct

        payload = np.array([[1.0, -2.0], [np.nan, 3.0]], dtype="<f4")
        p = tmp_path / "neg.sdid"
        p.write_bytes(b"SDID" + struct.pack("<III", 2, 2, 0) + payload.tobytes())
        grid = read_depth(p)
        np.testing.assert_array_equal(grid.valid, [[True, False], [False, True]])
