import numpy as np
import pytest

from hgmflow import data as dt
from hgmflow import scoring as sc
from hgmflow.flow import init_flow
from hgmflow.prior import init_prior


class TestNormalizeLevel:
    def test_exp_shift_values(self):
        v = np.array([0.0, -1.0, -3.0])
        out = sc.normalize_level(v)
        np.testing.assert_allclose(out, np.exp([0.0, -1.0, -3.0]), rtol=1e-12)

    def test_max_maps_to_one(self):
        rng = np.random.default_rng(0)
        v = rng.normal(size=500) * 40.0
        out = sc.normalize_level(v)
        assert out.max() == pytest.approx(1.0)
        assert np.all(out > 0.0)
        assert np.all(out <= 1.0)

    def test_shift_invariant_ranks(self):
        rng = np.random.default_rng(1)
        v = rng.normal(size=200)
        a = sc.normalize_level(v)
        b = sc.normalize_level(v + 1234.5)
        np.testing.assert_allclose(a, b, rtol=1e-9)

    def test_minmax(self):
        v = np.array([2.0, 4.0, 6.0])
        out = sc.normalize_level(v, scheme="minmax")
        np.testing.assert_allclose(out, [0.0, 0.5, 1.0])

    def test_degenerate_warns_and_returns_ones(self):
        v = np.full(7, 3.25)
        with pytest.warns(RuntimeWarning):
            out = sc.normalize_level(v)
        np.testing.assert_array_equal(out, np.ones(7))

    def test_rank_preserved(self):
        rng = np.random.default_rng(2)
        v = rng.normal(size=300)
        for scheme in ("exp-shift", "minmax"):
            out = sc.normalize_level(v, scheme=scheme)
            np.testing.assert_array_equal(np.argsort(v), np.argsort(out))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            sc.normalize_level(np.zeros(0))

    def test_unknown_scheme(self):
        with pytest.raises(ValueError, match="scheme"):
            sc.normalize_level(np.zeros(3), scheme="bogus")


class TestBilinearResize:
    def test_two_by_two_gradient(self):
        maps = np.array([[[0.0, 1.0], [0.0, 1.0]]])
        out = sc.bilinear_resize(maps, (4, 4))
        expected_row = np.array([0.0, 1 / 3, 2 / 3, 1.0])
        for r in range(4):
            np.testing.assert_allclose(out[0, r], expected_row, atol=1e-12)

    def test_constant_stays_constant(self):
        maps = np.full((2, 3, 5), 2.5)
        out = sc.bilinear_resize(maps, (9, 11))
        np.testing.assert_allclose(out, 2.5)

    def test_one_by_one_broadcast(self):
        maps = np.array([[[4.0]]])
        out = sc.bilinear_resize(maps, (6, 7))
        assert out.shape == (1, 6, 7)
        np.testing.assert_allclose(out, 4.0)

    def test_identity_when_same_size(self):
        rng = np.random.default_rng(3)
        maps = rng.normal(size=(2, 5, 4))
        out = sc.bilinear_resize(maps, (5, 4))
        np.testing.assert_allclose(out, maps, atol=1e-12)

    def test_corner_values_preserved(self):
        rng = np.random.default_rng(4)
        maps = rng.normal(size=(1, 3, 3))
        out = sc.bilinear_resize(maps, (7, 7))
        assert out[0, 0, 0] == pytest.approx(maps[0, 0, 0])
        assert out[0, 0, -1] == pytest.approx(maps[0, 0, -1])
        assert out[0, -1, 0] == pytest.approx(maps[0, -1, 0])
        assert out[0, -1, -1] == pytest.approx(maps[0, -1, -1])


def build_untrained(dataset, y, m=1, seed=0):
    d = dataset.levels[0].d
    model = init_flow(d, pos_dim=4, n_blocks=2, hidden=16, seed=seed)
    prior = init_prior(y, d, n_intra=m, seed=seed + 1)
    return [model], [prior]


def single_class_dataset(n_anom=40, n_norm=120, seed=9):
    spec = dt.SynthSpec(
        n_classes=1, dim=4, modes_per_class=1,
        n_train_per_class=10,
        n_test_normal_per_class=n_norm,
        n_test_anomaly_per_class=n_anom,
        seed=seed,
    )
    _, test = dt.generate_synthetic(spec)
    return test


class TestScoreDataset:
    def test_shapes_and_range(self):
        test = single_class_dataset()
        models, priors = build_untrained(test, y=1)
        res = sc.score_dataset(models, priors, test, labels=test.labels)
        n = test.n
        assert res.s.shape == (n, 1, 1)
        assert res.s_l.shape == (n, 1, 1)
        assert res.s_e.shape == (n, 1, 1)
        assert res.image_scores.shape == (n,)
        for arr in (res.s_l, res.s_e, res.s):
            assert np.all(arr >= 0.0) and np.all(arr <= 1.0)

    def test_single_class_rank_identical_to_neg_logp(self):
        test = single_class_dataset()
        models, priors = build_untrained(test, y=1)
        res = sc.score_dataset(models, priors, test, labels=test.labels)
        # One class: the posterior-entropy factor is neutral, so the final
        # score must order images exactly like the negated log-density.
        neg_logp = -res.image_logp
        assert np.array_equal(np.argsort(neg_logp), np.argsort(res.image_scores))
        np.testing.assert_array_equal(res.s_e, 1.0)

    def test_score_is_product(self):
        test = single_class_dataset()
        models, priors = build_untrained(test, y=1)
        res = sc.score_dataset(models, priors, test, labels=test.labels)
        np.testing.assert_allclose(res.s, res.s_l * res.s_e, rtol=1e-12)

    def test_low_density_scores_higher(self):
        test = single_class_dataset()
        models, priors = build_untrained(test, y=1)
        res = sc.score_dataset(models, priors, test, labels=test.labels)
        lp = res.level_logp[0][:, 0, 0]
        s = res.image_scores
        lo, hi = np.argmin(lp), np.argmax(lp)
        assert s[lo] > s[hi]

    def test_multi_class_with_inferred_labels(self):
        spec = dt.SynthSpec(
            n_classes=3, dim=4, modes_per_class=1,
            n_train_per_class=10, n_test_normal_per_class=50,
            n_test_anomaly_per_class=20, seed=11,
        )
        _, test = dt.generate_synthetic(spec)
        models, priors = build_untrained(test, y=3)
        res = sc.score_dataset(models, priors, test, infer_class=True)
        assert res.labels.shape == (test.n,)
        assert res.labels.min() >= 0 and res.labels.max() < 3
        assert np.all(np.isfinite(res.image_scores))

    def test_grid_dataset_with_upsampling(self):
        spec = dt.SynthSpec(
            n_classes=2, dim=4, modes_per_class=1,
            n_train_per_class=4, n_test_normal_per_class=4,
            n_test_anomaly_per_class=4, grid_h=2, grid_w=2, seed=12,
        )
        _, test = dt.generate_synthetic(spec)
        models, priors = build_untrained(test, y=2)
        res = sc.score_dataset(
            models, priors, test, labels=test.labels, target_hw=(8, 8)
        )
        assert res.s.shape == (test.n, 8, 8)
        assert np.all(res.s >= 0) and np.all(res.s <= 1)

    def test_topq_image_score(self):
        from hgmflow.config import ScoreConfig

        spec = dt.SynthSpec(
            n_classes=1, dim=4, modes_per_class=1,
            n_train_per_class=4, n_test_normal_per_class=10,
            n_test_anomaly_per_class=10, grid_h=4, grid_w=4, seed=13,
        )
        _, test = dt.generate_synthetic(spec)
        models, priors = build_untrained(test, y=1)
        res_max = sc.score_dataset(models, priors, test, labels=test.labels)
        cfg = ScoreConfig(image_score="topq", top_q=0.25)
        res_topq = sc.score_dataset(
            models, priors, test, score_cfg=cfg, labels=test.labels
        )
        flat = res_topq.s.reshape(test.n, -1)
        k = max(1, int(round(0.25 * flat.shape[1])))
        expected = np.sort(flat, axis=1)[:, -k:].mean(axis=1)
        np.testing.assert_allclose(res_topq.image_scores, expected, rtol=1e-12)
        np.testing.assert_allclose(
            res_max.image_scores, res_max.s.reshape(test.n, -1).max(axis=1)
        )
        assert np.all(res_topq.image_scores <= res_max.image_scores + 1e-12)

    def test_export_score_maps(self, tmp_path):
        test = single_class_dataset(n_anom=5, n_norm=5)
        models, priors = build_untrained(test, y=1)
        res = sc.score_dataset(models, priors, test, labels=test.labels)
        out = tmp_path / "maps"
        sc.export_score_maps(out, res, anomaly_flags=test.anomaly_flags)
        assert (out / "s.npy").exists()
        assert (out / "s_l.npy").exists()
        assert (out / "s_e.npy").exists()
        loaded = np.load(out / "s.npy")
        np.testing.assert_array_equal(loaded, res.s.astype(np.float32))
        csv = (out / "image_scores.csv").read_text().strip().splitlines()
        assert len(csv) == test.n + 1
        assert csv[0] == "image_id,class,label_is_anomalous,image_score"
        assert csv[1].split(",")[2] in {"0", "1"}

    def test_export_without_flags_leaves_column_blank(self, tmp_path):
        test = single_class_dataset(n_anom=2, n_norm=3)
        models, priors = build_untrained(test, y=1)
        res = sc.score_dataset(models, priors, test, labels=test.labels)
        sc.export_score_maps(tmp_path, res)
        rows = (tmp_path / "image_scores.csv").read_text().strip().splitlines()
        assert rows[1].split(",")[2] == ""


class TestPosModeFor:
    def test_auto_picks_zeros_for_single_location(self):
        assert sc.pos_mode_for("auto", 1, 1) == "zeros"
        assert sc.pos_mode_for("auto", 4, 4) == "sinusoidal"

    def test_explicit_passthrough(self):
        assert sc.pos_mode_for("zeros", 8, 8) == "zeros"
        assert sc.pos_mode_for("sinusoidal", 1, 1) == "sinusoidal"
