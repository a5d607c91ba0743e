import numpy as np
import pytest

from resae.data import generate_simulated
from resae.evaluation import (
    classification_metrics,
    compare,
    grid_search,
    r2,
    residual_sensitivity,
    rmse_and_nrmse,
    roc_auc,
)
from resae.training import TrainConfig, make_spec


def pairwise_auc_oracle(labels, scores):
    """P(score_pos > score_neg) + 0.5 P(equal), by exhaustive enumeration."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


class TestR2:
    def test_exact_fit_is_one(self):
        y = np.array([1.0, 2.0, 3.0])
        assert r2(y, y.copy()) == 1.0

    def test_mean_predictor_is_zero(self):
        y = np.array([1.0, 2.0, 3.0, 7.0])
        assert r2(y, np.full(4, y.mean())) == 0.0

    def test_direct_arithmetic(self):
        assert r2(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 4.0])) == pytest.approx(0.5)

    def test_constant_observations_rejected(self):
        with pytest.raises(ValueError, match="constant"):
            r2(np.array([2.0, 2.0]), np.array([1.0, 3.0]))

    def test_needs_two_observations(self):
        with pytest.raises(ValueError):
            r2(np.array([1.0]), np.array([1.0]))


class TestRmse:
    def test_exact_fit(self):
        assert rmse_and_nrmse(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == (0.0, 0.0)

    def test_direct_arithmetic(self):
        rmse, nrmse = rmse_and_nrmse(np.array([0.0, 2.0]), np.array([1.0, 1.0]))
        assert rmse == pytest.approx(1.0)
        assert nrmse == pytest.approx(0.5)

    def test_scaling_homogeneity(self):
        rng = np.random.default_rng(0)
        y, p = rng.normal(size=30), rng.normal(size=30)
        rmse, nrmse = rmse_and_nrmse(y, p)
        rmse_c, nrmse_c = rmse_and_nrmse(3.0 * y, 3.0 * p)
        assert rmse_c == pytest.approx(3.0 * rmse)
        assert nrmse_c == pytest.approx(nrmse)

    def test_affine_shift_invariance_of_nrmse(self):
        rng = np.random.default_rng(1)
        y, p = rng.normal(size=30), rng.normal(size=30)
        _, nrmse = rmse_and_nrmse(y, p)
        _, nrmse_shift = rmse_and_nrmse(y + 10.0, p + 10.0)
        assert nrmse_shift == pytest.approx(nrmse)

    def test_zero_range_reports_absent(self):
        rmse, nrmse = rmse_and_nrmse(np.array([2.0, 2.0]), np.array([1.0, 3.0]))
        assert nrmse is None


class TestAuc:
    def test_perfect_separation(self):
        assert roc_auc(np.array([1, 1, 0, 0]), np.array([0.9, 0.8, 0.3, 0.1])) == 1.0

    def test_matches_pairwise_oracle_on_random_cases(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            n = int(rng.integers(4, 40))
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            scores = np.round(rng.normal(size=n), 1)   # rounded to force ties
            assert roc_auc(labels, scores) == pytest.approx(
                pairwise_auc_oracle(labels, scores))

    def test_uniform_scores_give_half(self):
        labels = np.array([1, 0, 1, 0, 1, 0])
        assert roc_auc(labels, np.full(6, 0.5)) == 0.5

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(3)
        labels = rng.integers(0, 2, size=50)
        labels[0], labels[1] = 0, 1
        scores = rng.uniform(0.1, 2.0, size=50)
        assert roc_auc(labels, scores) == pytest.approx(roc_auc(labels, scores ** 3))

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            roc_auc(np.ones(4), np.arange(4.0))


class TestClassificationMetrics:
    def test_perfect_one_hot(self):
        y = np.array([0.0, 1.0, 2.0])
        p = np.eye(3)
        acc, ce, auc = classification_metrics(y, p)
        assert acc == 1.0
        assert ce == pytest.approx(0.0, abs=1e-9)
        assert auc == 1.0

    def test_uniform_binary_is_chance(self):
        y = np.array([0.0, 1.0, 0.0, 1.0])
        p = np.full((4, 2), 0.5)
        acc, ce, auc = classification_metrics(y, p)
        assert auc == 0.5
        assert ce == pytest.approx(np.log(2.0))

    def test_unnormalized_rows_rejected(self):
        with pytest.raises(ValueError, match="sum to 1"):
            classification_metrics(np.array([0.0]), np.array([[0.7, 0.7]]))

    def test_single_class_auc_absent(self):
        acc, ce, auc = classification_metrics(np.array([1.0, 1.0]),
                                              np.array([[0.2, 0.8], [0.4, 0.6]]))
        assert acc == 1.0
        assert auc is None

    def test_multiclass_macro_auc(self):
        y = np.array([0.0, 1.0, 2.0, 0.0, 1.0, 2.0])
        rng = np.random.default_rng(5)
        raw = rng.uniform(0.1, 1.0, size=(6, 3))
        p = raw / raw.sum(axis=1, keepdims=True)
        _, _, auc = classification_metrics(y, p)
        expected = np.mean([pairwise_auc_oracle((y == c).astype(int), p[:, c])
                            for c in (0, 1, 2)])
        assert auc == pytest.approx(expected)


def tiny_cfg(**kw):
    base = dict(batch_size=32, max_epochs=10, learning_rate=2e-3, seed=1)
    base.update(kw)
    return TrainConfig(**base)


class TestCompare:
    def test_report_structure_and_paired_counts(self):
        ds = generate_simulated(n=150, seed=0)
        spec = make_spec(ds, (6, 3), dropout_rate=0.0)
        report = compare(ds, spec, tiny_cfg(), n_seeds=3)
        assert len(report.runs) == 6
        assert report.seeds == [1, 2, 3]
        res = report.arm_runs("residual")
        reg = report.arm_runs("regular")
        assert [r.seed for r in res] == [r.seed for r in reg]
        for a, b in zip(res, reg):
            assert a.parameter_count == b.parameter_count
        d = report.to_dict()
        assert d["summary"]["residual"]["n_runs"] == 3
        assert "nrmse" in d["definitions"]

    def test_non_convergent_arm_recorded_not_fatal(self):
        ds = generate_simulated(n=150, seed=0)
        spec = make_spec(ds, (6, 3), dropout_rate=0.0, use_batchnorm=False,
                         residual_post_op="activation")
        with np.errstate(all="ignore"):
            report = compare(ds, spec, tiny_cfg(optimizer="sgd", learning_rate=1e12),
                             n_seeds=1)
        assert all(not r.converged for r in report.runs)
        assert report.summary["residual"]["n_non_convergent"] == 1
        assert report.summary["residual"]["test_r2"]["mean"] is None

    def test_runs_csv(self, tmp_path):
        ds = generate_simulated(n=150, seed=0)
        spec = make_spec(ds, (6, 3), dropout_rate=0.0)
        report = compare(ds, spec, tiny_cfg(), n_seeds=1)
        path = tmp_path / "runs.csv"
        report.write_runs_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0].startswith("seed,arm,converged")
        assert len(lines) > 1


class TestGridSearch:
    def test_singleton_grid_returns_that_config(self):
        ds = generate_simulated(n=150, seed=0)
        spec = make_spec(ds, (6, 3), dropout_rate=0.0)
        result = grid_search(ds, spec, tiny_cfg(), {"batch_sizes": [32]}, n_seeds=1)
        assert len(result.cells) == 1
        assert result.best().batch_size == 32

    def test_deterministic_ranking(self):
        ds = generate_simulated(n=150, seed=0)
        spec = make_spec(ds, (6, 3), dropout_rate=0.0)
        a = grid_search(ds, spec, tiny_cfg(), {"batch_sizes": [16, 64]}, n_seeds=2)
        b = grid_search(ds, spec, tiny_cfg(), {"batch_sizes": [16, 64]}, n_seeds=2)
        assert [c.label for c in a.cells] == [c.label for c in b.cells]
        assert [c.mean_val_metric for c in a.cells] == [c.mean_val_metric for c in b.cells]

    def test_factorial_cell_count_and_curve(self, tmp_path):
        ds = generate_simulated(n=150, seed=0)
        spec = make_spec(ds, (6, 3), dropout_rate=0.0)
        result = grid_search(ds, spec, tiny_cfg(),
                             {"batch_sizes": [16, 32], "output_options": [1, 2]},
                             n_seeds=1)
        assert len(result.cells) == 4
        curve = result.batch_size_curve()
        assert [b for b, _ in curve] == sorted(b for b, _ in curve)
        result.write_cells_csv(tmp_path / "grid.csv")
        assert (tmp_path / "grid.csv").read_text().startswith("rank,")

    def test_empty_axis_rejected(self):
        ds = generate_simulated(n=150, seed=0)
        spec = make_spec(ds, (6, 3))
        with pytest.raises(ValueError):
            grid_search(ds, spec, tiny_cfg(), {"batch_sizes": []}, n_seeds=1)


class Testsensitivity:
    def test_rows_cover_all_counts_and_match_arm_identities(self):
        ds = generate_simulated(n=150, seed=0)
        spec = make_spec(ds, (6, 3), dropout_rate=0.0)
        cfg = tiny_cfg()
        sens = residual_sensitivity(ds, spec, cfg, n_seeds=2)
        assert [row.n_shortcuts for row in sens.rows] == [0, 1, 2]
        report = compare(ds, spec, cfg, n_seeds=2)
        # identical seeds and splits: count 0 IS the regular arm, full count the residual arm
        reg = [r.test.r2 for r in report.arm_runs("regular")]
        res = [r.test.r2 for r in report.arm_runs("residual")]
        zero = [r.test.r2 for r in sens.rows[0].runs]
        full = [r.test.r2 for r in sens.rows[-1].runs]
        np.testing.assert_array_equal(zero, reg)
        np.testing.assert_array_equal(full, res)

    def test_requires_two_pairs(self):
        ds = generate_simulated(n=150, seed=0)
        spec = make_spec(ds, (6,))
        with pytest.raises(ValueError):
            residual_sensitivity(ds, spec, tiny_cfg(), n_seeds=1)

    def test_csv(self, tmp_path):
        ds = generate_simulated(n=150, seed=0)
        spec = make_spec(ds, (6, 3), dropout_rate=0.0)
        sens = residual_sensitivity(ds, spec, tiny_cfg(), n_seeds=1)
        sens.write_csv(tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().strip().splitlines()
        assert lines[0] == "n_shortcuts,mean_test_r2,mean_test_rmse"
        assert len(lines) == 4
