import csv

import numpy as np
import pytest

from hgmflow import data as dt
from hgmflow import experiments as ex
from hgmflow.config import ModelConfig, RunConfig, TrainConfig, config_hash


@pytest.fixture(scope="module")
def tiny_pair():
    spec = dt.SynthSpec(
        n_classes=2, dim=4, modes_per_class=2,
        n_train_per_class=96, n_test_normal_per_class=24,
        n_test_anomaly_per_class=24, seed=11,
    )
    return dt.generate_synthetic(spec)


def tiny_config():
    return RunConfig(
        model=ModelConfig(n_blocks=2, hidden=8, pos_dim=4),
        train=TrainConfig(epochs=3, batch_size=32, lr=1e-3,
                          warmup_epochs=1, n_intra=3, eval_every=2, seed=5),
    )


@pytest.fixture(scope="module")
def two_variant_runs(tiny_pair):
    train_ds, test_ds = tiny_pair
    return ex.compare_variants(
        train_ds, test_ds, tiny_config(),
        variants=("single-center", "full"), seeds=(0,),
    )


class TestRunVariant:
    def test_fields_and_ranges(self, two_variant_runs):
        for run in two_variant_runs:
            assert 0.0 <= run.auroc <= 1.0
            assert 0.0 <= run.logp_overlap <= 1.0
            assert np.isfinite(run.final_total)

    def test_trajectory_epochs_follow_eval_cadence(self, two_variant_runs):
        # epochs=3, eval_every=2: evals after epoch 1 and at the final epoch.
        for run in two_variant_runs:
            assert [e for e, _ in run.trajectory] == [1, 2]
            assert all(0.0 <= a <= 1.0 for _, a in run.trajectory)

    def test_deterministic(self, tiny_pair, two_variant_runs):
        train_ds, test_ds = tiny_pair
        again = ex.run_variant(train_ds, test_ds, tiny_config(), "single-center", 0)
        first = next(r for r in two_variant_runs if r.variant == "single-center")
        assert again.auroc == first.auroc
        assert again.logp_overlap == first.logp_overlap
        assert again.trajectory == first.trajectory

    def test_row_shape(self, two_variant_runs):
        row = two_variant_runs[0].row()
        assert set(row) == {"variant", "seed", "auroc", "logp_overlap", "final_total"}


class TestCompareVariants:
    def test_order_and_count(self, two_variant_runs):
        assert [(r.variant, r.seed) for r in two_variant_runs] == [
            ("single-center", 0), ("full", 0),
        ]

    def test_unknown_variant_rejected(self, tiny_pair):
        train_ds, test_ds = tiny_pair
        with pytest.raises(KeyError):
            ex.compare_variants(train_ds, test_ds, tiny_config(),
                                variants=("no-such-variant",), seeds=(0,))


class TestMedians:
    def test_median_of_three_seeds(self):
        runs = [
            ex.VariantRun("full", s, auroc=a, logp_overlap=o)
            for s, a, o in [(0, 0.9, 0.3), (1, 0.7, 0.1), (2, 0.8, 0.2)]
        ]
        med = ex.median_by_variant(runs)
        assert med["full"]["auroc"] == pytest.approx(0.8)
        assert med["full"]["logp_overlap"] == pytest.approx(0.2)
        assert med["full"]["n_seeds"] == 3

    def test_groups_by_variant(self):
        runs = [
            ex.VariantRun("a", 0, auroc=0.5, logp_overlap=0.5),
            ex.VariantRun("b", 0, auroc=1.0, logp_overlap=0.0),
        ]
        med = ex.median_by_variant(runs)
        assert med["a"]["auroc"] == 0.5
        assert med["b"]["auroc"] == 1.0


class TestCompareCsv:
    def test_roundtrip(self, tmp_path, two_variant_runs):
        path = tmp_path / "compare.csv"
        ex.write_compare_csv(path, two_variant_runs)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(two_variant_runs)
        for row, run in zip(rows, two_variant_runs):
            assert row["variant"] == run.variant
            assert float(row["auroc"]) == pytest.approx(run.auroc, abs=1e-6)
            assert float(row["logp_overlap"]) == pytest.approx(run.logp_overlap, abs=1e-6)


class TestBenchmarkConfig:
    def test_frozen_preset(self):
        cfg = ex.benchmark_config()
        assert cfg.model.n_blocks == 2
        assert cfg.model.hidden == 8
        assert cfg.model.pos_dim == 4
        assert cfg.train.epochs == 100
        assert cfg.train.batch_size == 64
        assert cfg.train.lr == pytest.approx(1e-3)
        assert cfg.train.warmup_epochs == 5
        assert cfg.train.lr_drop_epochs == (48, 57, 88)
        assert cfg.score.normalization == "minmax"
        assert cfg.score.entropy_sign == "negated"
        assert cfg.score.image_score == "max"

    def test_hash_stable_across_calls(self):
        assert config_hash(ex.benchmark_config()) == config_hash(ex.benchmark_config())


@pytest.fixture(scope="module")
def report(tiny_pair):
    train_ds, test_ds = tiny_pair
    return ex.mapping_report(
        train_ds, test_ds, tiny_config(),
        variants=("single-center", "full"), seeds=(0,),
    )


class TestMappingReport:
    def test_keys(self, report):
        assert set(report) == {
            "config_hash", "variants", "seeds", "runs",
            "trajectories", "medians", "checks",
        }

    def test_hash_matches_config(self, report):
        assert report["config_hash"] == config_hash(tiny_config())

    def test_checks_are_booleans(self, report):
        assert set(report["checks"]) == {
            "full_beats_single_center", "single_center_overlap_higher",
        }
        for value in report["checks"].values():
            assert isinstance(value, bool)

    def test_trajectory_keys(self, report):
        assert set(report["trajectories"]) == {
            "single-center/seed0", "full/seed0",
        }

    def test_text_rendering(self, tmp_path, report):
        path = tmp_path / "report.txt"
        ex.write_report_text(path, report)
        text = path.read_text()
        assert "single-center" in text
        assert "full" in text
        assert "config_hash" in text
        for ok in report["checks"].values():
            assert ("pass" if ok else "fail") in text
