import math
import os
import sys
import tempfile
import unittest

import numpy as np

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from file_formats import write_graymap, write_json
from floc_errors import (MissingInputError, OccupiedOriginError,
                         OutOfBoundsError, ValidationError)
from floorplan_core import (TWO_PI, FanSpec, FloorPlan, Pose, angle_difference,
                            canonical_angle, cast_ray, cast_rays, load_floorplan,
                            render_gt_rays, save_floorplan)


def square_room(inner_cells=40, res=0.1):
    """inner_cells x inner_cells free interior, one wall cell around it, interior starting at (0, 0) m"""
    n = inner_cells + 2
    occ = np.ones((n, n), dtype=bool)
    occ[1:-1, 1:-1] = False
    return FloorPlan(occupancy=occ, resolution=res, origin=(-res, -res))


def march(fp, x, y, bearing, max_range, step):
    """Brute-force reference: walk the ray in small steps until a wall cell"""
    c, s = math.cos(bearing), math.sin(bearing)
    t = 0.0
    while t < max_range:
        px, py = x + t * c, y + t * s
        if not fp.in_bounds(px, py):
            return max_range
        row, col = fp.world_to_cell(px, py)
        if fp.occupancy[row, col]:
            return t
        t += step
    return max_range


class TestAngles(unittest.TestCase):

    def test_canonical_range(self):
        """Canonical headings lie in [0, 2pi)"""
        for theta in (-7.0, -0.1, 0.0, 3.0, TWO_PI, 20.0):
            t = canonical_angle(theta)
            self.assertGreaterEqual(t, 0.0)
            self.assertLess(t, TWO_PI)

    def test_wraparound_difference(self):
        """Differences take the short way round"""
        self.assertAlmostEqual(angle_difference(0.01, TWO_PI - 0.01), 0.02, places=9)
        self.assertAlmostEqual(angle_difference(0.0, math.pi), math.pi, places=9)

    def test_thirty_degree_gaps_compare_equal(self):
        """A 30 degree gap has one value wherever it sits on the circle"""
        self.assertEqual(angle_difference(-math.pi / 12, math.pi / 12), angle_difference(0.0, math.pi / 6))
        self.assertEqual(angle_difference(math.pi - math.pi / 12, math.pi + math.pi / 12),
                         angle_difference(0.0, math.pi / 6))

    def test_pose_rotated_full_turn(self):
        """Full turns leave a pose unchanged"""
        p = Pose(1.0, 2.0, 0.3)
        self.assertEqual(p.rotated(TWO_PI), p)
        self.assertEqual(Pose(1.0, 2.0, 0.3 - 2 * TWO_PI), p)


class TestCastRay(unittest.TestCase):

    def setUp(self):
        self.room = square_room()

    def test_center_axis_hit(self):
        """Axis ray from the room center hits at 2 m"""
        depth, hit = cast_ray(self.room, (2.0, 2.0), 0.0, 10.0)
        self.assertTrue(hit)
        self.assertAlmostEqual(depth, 2.0, places=9)

    def test_center_diagonal_hit(self):
        """Diagonal ray hits the corner"""
        depth, hit = cast_ray(self.room, (2.0, 2.0), math.pi / 4, 10.0)
        self.assertTrue(hit)
        self.assertAlmostEqual(depth, 2.0 * math.sqrt(2.0), places=9)

    def test_no_wall_reaches_max_range(self):
        """No wall returns max range without a hit"""
        fp = FloorPlan(occupancy=np.zeros((300, 300), dtype=bool), resolution=0.1)
        depth, hit = cast_ray(fp, (15.0, 15.0), 1.0, 10.0)
        self.assertFalse(hit)
        self.assertEqual(depth, 10.0)

    def test_occupied_origin(self):
        """Rays cannot start inside a wall"""
        with self.assertRaises(OccupiedOriginError):
            cast_ray(self.room, (-0.05, 1.0), 0.0)

    def test_origin_outside(self):
        """Rays cannot start off the map"""
        with self.assertRaises(OutOfBoundsError):
            cast_ray(self.room, (50.0, 1.0), 0.0)

    def test_batch_matches_single(self):
        """Batched casting equals one-by-one casting"""
        rng = np.random.default_rng(3)
        origins = rng.uniform(0.1, 3.9, size=(20, 2))
        bearings = rng.uniform(0, TWO_PI, size=20)
        depths, hits = cast_rays(self.room, origins, bearings, 10.0)
        for k in range(20):
            d, h = cast_ray(self.room, origins[k], bearings[k], 10.0)
            self.assertEqual(d, depths[k])
            self.assertEqual(h, hits[k])

    def test_marching_oracle(self):
        """DDA depth within one cell of a res/20 marching reference on a cluttered map"""
        rng = np.random.default_rng(11)
        occ = rng.random((60, 80)) < 0.08
        occ[0, :] = occ[-1, :] = True
        occ[:, 0] = occ[:, -1] = True
        fp = FloorPlan(occupancy=occ, resolution=0.1)
        free = fp.free_cells()
        for _ in range(60):
            row, col = free[rng.integers(free.shape[0])]
            x = (col + rng.uniform(0.05, 0.95)) * 0.1
            y = (row + rng.uniform(0.05, 0.95)) * 0.1
            bearing = rng.uniform(0, TWO_PI)
            depth, _ = cast_ray(fp, (x, y), bearing, 5.0)
            ref = march(fp, x, y, bearing, 5.0, 0.1 / 20)
            self.assertLessEqual(abs(depth - ref), 0.1)

    def test_marching_oracle_many_maps(self):
        """10 maps x 100 free poses x 40 bearings, marching vectorized per map"""
        rng = np.random.default_rng(21)
        fan = FanSpec(n_rays=40, fov=2 * math.pi * 39 / 40)
        t = np.arange(0.0, 5.0, 0.1 / 20)
        for _ in range(10):
            occ = rng.random((60, 80)) < 0.06
            occ[0, :] = occ[-1, :] = True
            occ[:, 0] = occ[:, -1] = True
            fp = FloorPlan(occupancy=occ, resolution=0.1)
            free = fp.free_cells()
            cells = free[rng.integers(free.shape[0], size=100)]
            xs = (cells[:, 1] + rng.uniform(0.05, 0.95, 100)) * 0.1
            ys = (cells[:, 0] + rng.uniform(0.05, 0.95, 100)) * 0.1
            thetas = rng.uniform(0, TWO_PI, 100)
            bearings = (thetas[:, None] + fan.offsets()[None, :]).ravel()
            origins = np.repeat(np.stack([xs, ys], axis=1), 40, axis=0)
            depths, _ = cast_rays(fp, origins, bearings, 5.0)

            px = origins[:, :1] + t[None, :] * np.cos(bearings)[:, None]
            py = origins[:, 1:] + t[None, :] * np.sin(bearings)[:, None]
            cols = np.clip(np.floor(px / 0.1).astype(int), 0, 79)
            rows = np.clip(np.floor(py / 0.1).astype(int), 0, 59)
            hit = occ[rows, cols]
            ref = np.where(hit.any(axis=1), t[np.argmax(hit, axis=1)], 5.0)
            self.assertLessEqual(float(np.max(np.abs(depths - ref))), 0.1)

    def test_removing_wall_never_shortens(self):
        """Opening walls never shortens a ray"""
        rng = np.random.default_rng(5)
        occ = np.ones((30, 30), dtype=bool)
        occ[1:-1, 1:-1] = False
        occ[10:14, 15:18] = True
        before = FloorPlan(occupancy=occ, resolution=0.1)
        opened = occ.copy()
        opened[10:14, 15:18] = False
        after = FloorPlan(occupancy=opened, resolution=0.1)
        origins = np.tile([[0.55, 1.25]], (50, 1))
        bearings = rng.uniform(-1.0, 1.0, size=50)
        d0, _ = cast_rays(before, origins, bearings)
        d1, _ = cast_rays(after, origins, bearings)
        self.assertTrue(np.all(d1 >= d0))


class TestRenderRays(unittest.TestCase):

    def setUp(self):
        self.room = square_room()

    def test_gibson_fan(self):
        """A 40-ray 108 degree fan stays inside the room"""
        fan = render_gt_rays(self.room, Pose(2.0, 2.0, 0.0), n_rays=40, fov=math.radians(108))
        self.assertEqual(fan.n_rays, 40)
        self.assertTrue(np.all(fan.depths > 0))
        self.assertTrue(np.all(fan.depths <= 2.0 * math.sqrt(2.0) + 1e-9))

    def test_two_ray_endpoints(self):
        """Two rays sit at the fan edges"""
        offsets = FanSpec(n_rays=2, fov=0.2).offsets()
        self.assertEqual(list(offsets), [-0.1, 0.1])

    def test_full_turn_identical(self):
        """A full turn renders the same fan"""
        a = render_gt_rays(self.room, Pose(1.3, 2.1, 0.7))
        b = render_gt_rays(self.room, Pose(1.3, 2.1, 0.7 + TWO_PI))
        self.assertEqual(a, b)

    def test_symmetric_room_palindrome(self):
        """A centered fan in a square room is symmetric"""
        fan = render_gt_rays(self.room, Pose(2.0, 2.0, 0.0), n_rays=31)
        np.testing.assert_allclose(fan.depths, fan.depths[::-1], atol=1e-9)

    def test_image_column_spacing(self):
        """Image-column offsets follow the pinhole columns"""
        spec = FanSpec(n_rays=5, fov=math.radians(90), spacing="image-column")
        offsets = spec.offsets()
        self.assertAlmostEqual(offsets[0], -math.pi / 4, places=12)
        self.assertAlmostEqual(offsets[1], -math.atan(0.5), places=12)
        self.assertEqual(offsets[2], 0.0)

    def test_invalid_fan(self):
        """One ray is not a fan"""
        with self.assertRaises(ValidationError):
            FanSpec(n_rays=1)


class TestLoadFloorplan(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = self.tmp.name

    def tearDown(self):
        self.tmp.cleanup()

    def test_extent_from_resolution(self):
        """Extent is pixels times resolution"""
        path = os.path.join(self.dir, "map.pgm")
        write_graymap(path, np.full((200, 200), 255, dtype=np.uint8))
        write_json(os.path.join(self.dir, "map.json"), {"resolution_m": 0.1})
        fp = load_floorplan(path)
        self.assertAlmostEqual(fp.extent_m[0], 20.0)
        self.assertAlmostEqual(fp.extent_m[1], 20.0)

    def test_structured3d_resolution(self):
        """A 0.02 m resolution is kept"""
        path = os.path.join(self.dir, "map.pgm")
        write_graymap(path, np.full((10, 10), 255, dtype=np.uint8))
        write_json(os.path.join(self.dir, "map.json"), {"resolution_m": 0.02})
        self.assertEqual(load_floorplan(path).resolution, 0.02)

    def test_negative_resolution(self):
        """Negative resolution is rejected"""
        path = os.path.join(self.dir, "map.pgm")
        write_graymap(path, np.full((10, 10), 255, dtype=np.uint8))
        write_json(os.path.join(self.dir, "map.json"), {"resolution_m": -1})
        with self.assertRaises(ValidationError):
            load_floorplan(path)

    def test_missing_metadata(self):
        """A map without its metadata file is a missing input"""
        path = os.path.join(self.dir, "map.pgm")
        write_graymap(path, np.full((10, 10), 255, dtype=np.uint8))
        with self.assertRaises(MissingInputError):
            load_floorplan(path)

    def test_save_then_load_keeps_texture(self):
        """Saved maps load back with texture and origin"""
        occ = np.zeros((12, 9), dtype=bool)
        occ[0, :] = True
        tex = np.arange(108, dtype=np.uint8).reshape(12, 9) % 7
        fp = FloorPlan(occupancy=occ, resolution=0.1, origin=(1.0, -2.0), texture=tex)
        path = os.path.join(self.dir, "world.pgm")
        save_floorplan(fp, path)
        back = load_floorplan(path)
        np.testing.assert_array_equal(back.occupancy, occ)
        np.testing.assert_array_equal(back.texture, tex)
        self.assertEqual(back.origin, (1.0, -2.0))


if __name__ == "__main__":
    unittest.main(verbosity=2)
