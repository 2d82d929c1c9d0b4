import math
import os
import sys
import tempfile
import unittest
from dataclasses import replace

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from benchmark_sweep import (ABLATION_HEADER, SWEEP_HEADER, _ablated, parse_values,
                             prepare_benchmark, run_benchmark, summarize, sweep,
                             train_on_twin_worlds, training_dataset, write_sweep_csv)
from disambiguator import DisambigConfig
from file_formats import read_csv
from floc_errors import ConfigurationError
from run_config import RunConfig
from synth_bench import room_of


def small_config():
    return RunConfig({
        "world": {"extent_m": [7.0, 4.0], "room_size_m": 3.0, "n_gt_poses": 10},
        "grid": {"cell_stride_m": 0.1, "n_orientations": 36},
        "disambig": {"x": 10},
        "oracle": {"dim": 8},
        "benchmark": {"n_queries": 4, "duplicate_margin_m": 0.0},
        "train": {"n_worlds": 2, "anchors_per_world": 6, "epochs": 3},
        "mining": {"n_cross": 2},
    })


class TestParseValues(unittest.TestCase):

    def test_numbers(self):
        """Values parse as floats, x as integers"""
        self.assertEqual(parse_values("w", "0, 0.5,1"), [0.0, 0.5, 1.0])
        self.assertEqual(parse_values("x", "10,100"), [10, 100])

    def test_ablation_names(self):
        """Ablation values stay names"""
        self.assertEqual(parse_values("ablation", "none,no_ori"), ["none", "no_ori"])

    def test_bad_input(self):
        """Empty lists, fractional x and words are config errors"""
        with self.assertRaises(ConfigurationError):
            parse_values("w", " , ")
        with self.assertRaises(ConfigurationError):
            parse_values("x", "2.5")
        with self.assertRaises(ConfigurationError):
            parse_values("crop_m", "big")


class TestAblationConfig(unittest.TestCase):

    def test_each_ablation(self):
        """Each ablation zeroes exactly its mining ingredient"""
        cfg = small_config()
        self.assertEqual(_ablated(cfg, "no_inner").mining_spec().n_inner, 0)
        self.assertEqual(_ablated(cfg, "no_ori").mining_spec().n_ori, 0)
        self.assertEqual(_ablated(cfg, "no_pos_pert").perturb_spec().pos_b, 0.0)
        self.assertEqual(_ablated(cfg, "no_ang_pert").perturb_spec().ang_b, 0.0)
        self.assertEqual(_ablated(cfg, "none").to_dict(), cfg.to_dict())

    def test_source_untouched(self):
        """Ablating copies the config"""
        cfg = small_config()
        _ablated(cfg, "no_inner")
        self.assertEqual(cfg.mining_spec().n_inner, 1)

    def test_unknown(self):
        """Unknown ablations are config errors"""
        with self.assertRaises(ConfigurationError):
            _ablated(small_config(), "no_walls")

    def test_training_dataset_size(self):
        """Two worlds of six anchors each"""
        dataset = training_dataset(small_config())
        self.assertEqual(len(dataset), 12)
        self.assertEqual(len({id(fp) for fp, _ in dataset}), 2)


class TestBenchmark(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.cfg = small_config()
        cls.bench = prepare_benchmark(cls.cfg, threads=2)

    def test_queries_alternate_rooms(self):
        """Benchmark queries alternate rooms"""
        rooms = [room_of(self.bench.world, q.x, q.y) for q in self.bench.queries]
        self.assertEqual(rooms, [0, 1, 0, 1])

    def test_rays_only_confuses_twins(self):
        """At w = 0 every room-1 query lands in room 0"""
        run = run_benchmark(self.bench, self.cfg, DisambigConfig(w=0.0, x=10))
        self.assertEqual(run.room_hits, [True, False, True, False])
        self.assertEqual(len(run.dafpm_only), 4)

    def test_dafpm_only_is_the_rays_only_answer(self):
        """The recorded DAFPM-only pose is what w = 0 returns"""
        fused = run_benchmark(self.bench, self.cfg, DisambigConfig(w=0.5, x=10))
        rays_only = run_benchmark(self.bench, self.cfg, DisambigConfig(w=0.0, x=10))
        self.assertEqual(fused.dafpm_only, [r.predicted for r in rays_only.records])
        self.assertEqual(fused.dafpm_only, rays_only.dafpm_only)

    def test_sweep_over_w(self):
        """A w sweep reports one row per value with room accuracy last"""
        header, rows = sweep(self.cfg, "w", [0.0, 0.5], threads=1)
        self.assertEqual(header, SWEEP_HEADER)
        self.assertEqual([r[1] for r in rows], [0.0, 0.5])
        self.assertEqual(rows[0][2], 4)
        self.assertEqual(rows[0][-1], 0.5)
        self.assertLessEqual(rows[0][-1], rows[1][-1])

    def test_sweep_threads_identical(self):
        """Threads do not change sweep rows"""
        _, one = sweep(self.cfg, "w", [0.5], threads=1)
        _, two = sweep(self.cfg, "w", [0.5], threads=2)
        self.assertEqual(one, two)

    def test_unknown_param(self):
        """Unknown sweep parameters are config errors"""
        with self.assertRaises(ConfigurationError):
            sweep(self.cfg, "gamma", [1.0])

    def test_csv(self):
        """Sweep rows round-trip through CSV"""
        header, rows = sweep(self.cfg, "x", [1], threads=2)
        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, "sweep.csv")
            write_sweep_csv(path, header, rows)
            back = read_csv(path)
        self.assertEqual(len(back), 1)
        self.assertEqual(back[0]["param"], "x")


class TestAblationSweep(unittest.TestCase):

    def test_rows(self):
        """Ablation rows report anchors and finite losses"""
        header, rows = sweep(small_config(), "ablation", ["none", "no_ori"], threads=2)
        self.assertEqual(header, ABLATION_HEADER)
        self.assertEqual([r[1] for r in rows], ["none", "no_ori"])
        for row in rows:
            self.assertEqual(row[2], 12)
            self.assertTrue(math.isfinite(row[3]) and math.isfinite(row[4]))


class TestTrainedEmbedder(unittest.TestCase):

    def test_trains_against_the_run_oracle(self):
        """The trained width is oracle.dim and the embedder remembers that oracle"""
        result = train_on_twin_worlds(small_config(), threads=2)
        self.assertEqual(result.embedder.dim, 8)
        self.assertEqual(result.embedder.anchor_oracle, {"dim": 8, "seed": 7})
        self.assertEqual(result.embedder.front_end.kind, "rays")

    def test_train_dim_is_not_a_key(self):
        """The trained width cannot be set apart from the oracle"""
        with self.assertRaises(ConfigurationError):
            RunConfig({"train": {"dim": 8}})


SLOW = os.environ.get("FLOC_SLOW_TESTS")


@unittest.skipUnless(SLOW, "set FLOC_SLOW_TESTS=1 for the full-scale twin-rooms runs")
class TestFullScaleTwinRooms(unittest.TestCase):
    """Default config: 200 queries on the 12 x 6 m twin-rooms world"""

    @classmethod
    def setUpClass(cls):
        cls.cfg = RunConfig()
        cls.bench = prepare_benchmark(cls.cfg, threads=4)

    def row(self, w, sigma_d=0.0):
        noise = replace(self.cfg.noise_spec(), sigma_d=sigma_d)
        run = run_benchmark(self.bench, self.cfg, DisambigConfig(w=w, x=100), noise=noise, threads=4)
        return summarize("w", w, run)

    def test_query_count(self):
        """The default world yields the full 200 queries"""
        self.assertEqual(len(self.bench.queries), 200)

    def test_rays_only_is_a_coin_flip(self):
        """w = 0 gets about half the rooms right"""
        room_accuracy = self.row(0.0)[-1]
        self.assertGreaterEqual(room_accuracy, 0.4)
        self.assertLessEqual(room_accuracy, 0.6)

    def test_fusion_resolves_rooms(self):
        """w = 0.5 gets 95% of rooms and 90% within 0.5 m and 30 degrees"""
        row = self.row(0.5)
        self.assertGreaterEqual(row[-1], 0.95)
        self.assertGreaterEqual(row[SWEEP_HEADER.index("recall_0.5m_30deg")], 0.9)

    def test_fusion_gain_under_depth_noise(self):
        """At sigma_d = 0.1 m fusion adds 20 points of recall at 0.5 m"""
        col = SWEEP_HEADER.index("recall_0.5m")
        gain = self.row(0.5, sigma_d=0.1)[col] - self.row(0.0, sigma_d=0.1)[col]
        self.assertGreaterEqual(gain, 0.20)


@unittest.skipUnless(SLOW, "set FLOC_SLOW_TESTS=1 for full-scale training")
class TestFullScaleTraining(unittest.TestCase):

    def test_held_out_retrieval(self):
        """Six training worlds of 100 anchors reach 90% top-1 retrieval among 32"""
        result = train_on_twin_worlds(RunConfig(), threads=4)
        self.assertGreaterEqual(result.retrieval, 0.9)


if __name__ == "__main__":
    unittest.main(verbosity=2)
