import os
import sys
import tempfile
import unittest

import numpy as np

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from disambiguator import (DisambigConfig, Localizer, build_dpm, export_result,
                           fuse_and_select)
from file_formats import read_json
from floc_errors import EmptyDomainError, ValidationError
from floorplan_core import FanSpec, Pose
from pose_scoring import Candidate, CandidateSet, GtRayTable, PoseGrid, PoseGridSpec
from synth_bench import (NoiseSpec, OracleSignatureEmbedder, WorldSpec, generate_world,
                         room_of, simulate_observation)

FAN = FanSpec(n_rays=40)
GRID = PoseGridSpec(cell_stride=0.1, n_orientations=36)


def candidates(scores, indices=None):
    indices = indices or [(0, i, 0) for i in range(len(scores))]
    return CandidateSet([Candidate(pose=Pose(0.1 * idx[1], 0.1 * idx[0], 0.0), score=s, index=idx)
                         for s, idx in zip(scores, indices)])


class TestBuildDpm(unittest.TestCase):

    def test_identical_crops_uniform(self):
        """Identical crops share the mass evenly"""
        q = np.array([0.6, 0.8])
        dpm = build_dpm(q, np.tile(q, (4, 1)))
        np.testing.assert_allclose(dpm, 0.25)

    def test_two_crop_example(self):
        """Orthogonal pair at temperature 1 gives e/(e+1) and 1/(e+1)"""
        dpm = build_dpm(np.array([1.0, 0.0]), np.array([[1.0, 0.0], [0.0, 1.0]]), temperature=1.0)
        np.testing.assert_allclose(dpm, [0.7311, 0.2689], atol=1e-4)

    def test_small_temperature_one_hot(self):
        """A tiny temperature puts all mass on the best crop"""
        dpm = build_dpm(np.array([1.0, 0.0]), np.array([[1.0, 0.0], [0.0, 1.0]]), temperature=0.01)
        self.assertGreater(dpm[0], 1.0 - 1e-12)

    def test_sums_to_one(self):
        """DPM is a distribution"""
        rng = np.random.default_rng(0)
        crops = rng.normal(size=(30, 8))
        crops /= np.linalg.norm(crops, axis=1, keepdims=True)
        self.assertAlmostEqual(build_dpm(crops[0], crops, 0.3).sum(), 1.0, places=12)

    def test_non_unit_rejected(self):
        """The query must be unit norm"""
        with self.assertRaises(ValidationError):
            build_dpm(np.array([2.0, 0.0]), np.array([[1.0, 0.0]]))

    def test_dimension_mismatch(self):
        """Query and crops must share a dimension"""
        with self.assertRaises(ValidationError):
            build_dpm(np.array([1.0, 0.0]), np.array([[1.0, 0.0, 0.0]]))

    def test_empty_crops(self):
        """No crops, no distribution"""
        with self.assertRaises(EmptyDomainError):
            build_dpm(np.array([1.0, 0.0]), np.zeros((0, 2)))


class TestFusion(unittest.TestCase):

    def setUp(self):
        self.cands = candidates([0.6, 0.4])
        self.dpm = [0.2, 0.8]

    def test_w_zero_follows_dafpm(self):
        """w = 0 keeps the ray ranking"""
        pose, fused, k = fuse_and_select(self.cands, self.dpm, DisambigConfig(w=0.0))
        self.assertEqual(k, 0)
        np.testing.assert_allclose(fused, [0.6, 0.4])
        self.assertEqual(pose, self.cands[0].pose)

    def test_w_one_follows_dpm(self):
        """w = 1 keeps the similarity ranking"""
        _, fused, k = fuse_and_select(self.cands, self.dpm, DisambigConfig(w=1.0))
        self.assertEqual(k, 1)
        np.testing.assert_allclose(fused, self.dpm)

    def test_half_weight_example(self):
        """Equal weights average the two distributions"""
        _, fused, k = fuse_and_select(candidates([0.7, 0.3]), [0.2, 0.8], DisambigConfig(w=0.5))
        np.testing.assert_allclose(fused, [0.45, 0.55])
        self.assertEqual(k, 1)

    def test_dafpm_renormalized_over_candidates(self):
        """DAFPM scores are renormalized over the top-X before fusing"""
        _, fused, _ = fuse_and_select(candidates([0.02, 0.02]), [0.5, 0.5], DisambigConfig(w=0.0))
        np.testing.assert_allclose(fused, [0.5, 0.5])

    def test_fused_sums_to_one_and_is_linear(self):
        """Fusion is a convex combination"""
        rng = np.random.default_rng(1)
        cands = candidates(list(rng.random(12)))
        dpm = rng.random(12)
        dpm /= dpm.sum()
        f0 = fuse_and_select(cands, dpm, DisambigConfig(w=0.0))[1]
        f1 = fuse_and_select(cands, dpm, DisambigConfig(w=1.0))[1]
        for w in (0.1, 0.35, 0.8):
            fw = fuse_and_select(cands, dpm, DisambigConfig(w=w))[1]
            self.assertAlmostEqual(fw.sum(), 1.0, places=12)
            np.testing.assert_allclose(fw, (1 - w) * f0 + w * f1, atol=1e-14)

    def test_tie_goes_to_lower_index(self):
        """Equal fused scores resolve to the lower grid index"""
        cands = candidates([0.5, 0.5], indices=[(5, 0, 0), (1, 3, 2)])
        _, _, k = fuse_and_select(cands, [0.5, 0.5], DisambigConfig(w=0.5))
        self.assertEqual(k, 1)

    def test_length_mismatch(self):
        """Score vectors must line up"""
        with self.assertRaises(ValidationError):
            fuse_and_select(self.cands, [1.0])

    def test_config_bounds(self):
        """w outside [0, 1] and x < 1 are rejected"""
        with self.assertRaises(ValidationError):
            DisambigConfig(w=1.5)
        with self.assertRaises(ValidationError):
            DisambigConfig(x=0)
        with self.assertRaises(ValidationError):
            DisambigConfig(softmax_temperature=0.0)


class TestLocalizerTwinRooms(unittest.TestCase):
    """The query sits in room 1; the ray map alone cannot tell it from room 0"""

    @classmethod
    def setUpClass(cls):
        cls.world = generate_world(WorldSpec(extent_m=(7.0, 4.0), room_size_m=3.0, n_gt_poses=10), FAN)
        cls.fp = cls.world.floorplan
        cls.table = GtRayTable.build(PoseGrid(cls.fp, GRID), FAN, threads=2)
        cls.oracle = OracleSignatureEmbedder(dim=16, fan=FAN)
        cls.query_pose = cls.world.gt_poses[1]
        cls.pred, cls.signature = simulate_observation(cls.fp, cls.query_pose,
                                                       NoiseSpec(sigma_d=0.0, dropout=0.0), FAN)

    def localizer(self, w, x=10):
        return Localizer(self.fp, self.oracle, self.oracle, DisambigConfig(w=w, x=x),
                         table=self.table, threads=2)

    def test_query_is_in_second_room(self):
        """The fixture query is a room-1 pose"""
        self.assertEqual(room_of(self.world, self.query_pose.x, self.query_pose.y), 1)

    def test_rays_only_pick_first_room(self):
        """Rays alone land on the room-0 mirror"""
        result = self.localizer(0.0).localize(self.pred, self.signature)
        self.assertEqual(room_of(self.world, result.pose.x, result.pose.y), 0)
        grid = self.table.grid
        self.assertEqual(grid.index_of(result.pose),
                         grid.index_of(self.world.mirror_poses(self.query_pose)[0]))

    def test_rays_only_without_query(self):
        """Without a query DPM is uniform"""
        result = self.localizer(0.0).localize(self.pred)
        np.testing.assert_allclose(result.dpm, 1.0 / len(result.candidates))
        self.assertIsNone(result.query_embedding)

    def test_similarity_resolves_room(self):
        """Similarity moves the answer into room 1"""
        result = self.localizer(0.5).localize(self.pred, self.signature)
        self.assertEqual(room_of(self.world, result.pose.x, result.pose.y), 1)
        self.assertAlmostEqual(result.fused.sum(), 1.0, places=9)
        self.assertEqual(len(result.candidates), 10)

    def test_precomputed_query_embedding(self):
        """A signature and its embedding localize identically"""
        q = self.oracle.embed(self.signature)
        a = self.localizer(0.5).localize(self.pred, self.signature)
        b = self.localizer(0.5).localize(self.pred, q)
        self.assertEqual(a.pose, b.pose)
        np.testing.assert_array_equal(a.dpm, b.dpm)

    def test_weight_needs_query(self):
        """w > 0 without a query is rejected"""
        with self.assertRaises(ValidationError):
            self.localizer(0.5).localize(self.pred)

    def test_threads_do_not_change_result(self):
        """Thread count does not change the fused scores"""
        one = Localizer(self.fp, self.oracle, self.oracle, DisambigConfig(w=0.5, x=10),
                        table=self.table, threads=1).localize(self.pred, self.signature)
        many = self.localizer(0.5).localize(self.pred, self.signature)
        np.testing.assert_array_equal(one.fused, many.fused)

    def test_export(self):
        """Export writes the pose, DAFPM and candidate table"""
        result = self.localizer(0.5).localize(self.pred, self.signature)
        with tempfile.TemporaryDirectory() as d:
            export_result(result, d)
            for name in ("pose.json", "dafpm.dpmf", "dafpm.pgm", "candidates.csv"):
                self.assertTrue(os.path.isfile(os.path.join(d, name)), name)
            doc = read_json(os.path.join(d, "pose.json"))
            self.assertEqual(doc["n_candidates"], 10)
            with open(os.path.join(d, "candidates.csv"), encoding="utf-8") as fh:
                self.assertEqual(len(fh.read().splitlines()), 11)


class TestWallSideQuery(unittest.TestCase):
    """A query in the free cell row along room 0's bottom wall of the default world"""

    @classmethod
    def setUpClass(cls):
        cls.world = generate_world(WorldSpec(n_gt_poses=2), FAN)
        cls.fp = cls.world.floorplan
        room = cls.world.rooms[0]
        row = room.rows[1] - 1
        occ = cls.fp.occupancy
        col = next(c for c in range(room.cols[0] + 16, room.cols[1] - 1)
                   if not occ[row, c] and occ[row + 1, c])
        cls.query_pose = Pose((col + 0.5) * 0.1, (row + 0.5) * 0.1, 0.0)
        cls.table = GtRayTable.build(PoseGrid(cls.fp, GRID), FAN, threads=2)
        cls.oracle = OracleSignatureEmbedder(fan=FAN)

    def test_localizes_into_its_room(self):
        """Every top-100 crop embeds and the fused answer stays in room 0"""
        pred, signature = simulate_observation(self.fp, self.query_pose, NoiseSpec(), FAN)
        result = Localizer(self.fp, self.oracle, self.oracle, DisambigConfig(w=0.5, x=100),
                           table=self.table, threads=2).localize(pred, signature)
        self.assertEqual(len(result.candidates), 100)
        self.assertEqual(result.dpm.shape, (100,))
        self.assertTrue(np.all(np.isfinite(result.fused)))
        self.assertEqual(room_of(self.world, result.pose.x, result.pose.y), 0)


if __name__ == "__main__":
    unittest.main(verbosity=2)
