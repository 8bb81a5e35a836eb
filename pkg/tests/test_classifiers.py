"""
Test suite for longtail_model/classifiers.py
Tests LDA/MDA decision rules, EM-fitted generic MDA, empirical error and memorization scores
"""
import math
import sys
import os

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from longtail_model.bounds import lda_error_formula
from longtail_model.classifiers import (
    GenericMdaClassifier, LdaClassifier, LearnerSpec, MdaClassifier, empirical_error, fit_generic_mda,
    fit_interpolating_mda, fit_lda, fit_mda, generic_mda_classify, lda_classify, mda_classify,
    memorization_score, memorization_scores, oracle_lda, oracle_mda
)
from longtail_model.estimators import EmConfig, GmmModel
from longtail_model.genmodel import MAJORITY, MINORITY, Dataset, ModelParams, make_params, sample_dataset
from longtail_model.numerics import rng_new, rng_split

D, MU_NORM, SIGMA, P = 50, 2.0, 1.0, 0.9


@pytest.fixture(scope='module')
def default_params():
    return make_params(D, MU_NORM, SIGMA, P)


@pytest.fixture(scope='module')
def small_train():
    params = make_params(5, 2.0, 1.0, 0.8)
    return sample_dataset(params, 60, rng_new(21))


def exact_moment_dataset(mu, p, n=10):
    """Rows whose sum is exactly 2 n (1 - p) mu, labels alternating."""
    X = np.tile(2 * (1 - p) * np.asarray(mu), (n, 1))
    y = np.where(np.arange(n) % 2 == 0, 1, -1)
    return Dataset(X, y, np.where(y == 1, 0, 1))


class TestLda:
    """Equidistance rule with ties toward +1"""

    def test_center_is_positive(self):
        """Test the positive center is labelled +1"""
        model = LdaClassifier([1.0, 2.0], [-1.0, 0.0])
        assert lda_classify(model, [1.0, 2.0]) == 1

    def test_midpoint_tie(self):
        """Test a point equidistant from both centers goes to +1"""
        model = LdaClassifier([1.0, 1.0], [-1.0, -1.0])
        assert model.decision_statistic([0.0, 0.0]) == 0.0
        assert lda_classify(model, [0.0, 0.0]) == 1

    def test_minority_point_misclassified(self, default_params):
        """Test oracle LDA puts the minority center on the positive side"""
        model = oracle_lda(default_params)
        assert np.allclose(model.mu_minus, -0.6 * default_params.mu)
        assert lda_classify(model, 3 * default_params.mu) == 1

    def test_equal_centers_rejected(self):
        """Test coincident class centers are rejected"""
        with pytest.raises(ValueError, match="must differ"):
            LdaClassifier([1.0, 1.0], [1.0, 1.0])

    def test_dimension_mismatch(self):
        """Test a query of the wrong dimension is rejected"""
        with pytest.raises(ValueError, match="Dimension mismatch"):
            lda_classify(LdaClassifier([1.0, 0.0], [0.0, 1.0]), [1.0, 2.0, 3.0])

    def test_batch_prediction(self):
        """Test row-wise prediction on a batch of points"""
        model = LdaClassifier([1.0], [-1.0])
        assert np.array_equal(model.predict(np.array([[2.0], [-2.0], [0.0]])), [1, -1, 1])

    def test_orthogonal_shift_invariance(self):
        """Test moving a point orthogonally to the center axis keeps its statistic"""
        gen = np.random.default_rng(4)
        model = LdaClassifier(gen.standard_normal(6), gen.standard_normal(6))
        axis = model.mu_plus - model.mu_minus
        for _ in range(20):
            x = gen.standard_normal(6) * 3
            v = gen.standard_normal(6)
            v -= (v @ axis) / (axis @ axis) * axis
            assert model.decision_statistic(x + v) == pytest.approx(model.decision_statistic(x), abs=1e-8)

    def test_fit_recovers_oracle(self):
        """Test fitting on exact-moment rows recovers both oracle centers"""
        mu, p = np.array([1.0, -2.0, 0.5]), 0.8
        model = fit_lda(exact_moment_dataset(mu, p), 1.0, p)
        assert np.allclose(model.mu_plus, mu, atol=1e-12)
        assert np.allclose(model.mu_minus, -(4 * p - 3) * mu, atol=1e-12)

    def test_fit_at_three_quarters(self):
        """Test the fitted negative center collapses to 0 at p=3/4"""
        model = fit_lda(exact_moment_dataset([1.0, 1.0], 0.75), 1.0, 0.75)
        assert np.allclose(model.mu_minus, 0.0)

    def test_fitted_agrees_with_oracle(self, default_params):
        """Test fitted and oracle LDA agree on most test points"""
        train = sample_dataset(default_params, 7000, rng_new(1))
        test = sample_dataset(default_params, 10_000, rng_new(2))
        fitted = fit_lda(train, SIGMA, P).predict(test.X)
        oracle = oracle_lda(default_params).predict(test.X)
        # estimation noise in mu_hat (norm ~0.45) moves the boundary through ~1% of the mass
        assert np.mean(fitted == oracle) >= 0.97


class TestMda:
    """Log-space mixture discriminant rule"""

    @pytest.fixture
    def model(self):
        mu = np.array([2.0, 0.0])
        return MdaClassifier(mu, 1.0, 0.9)

    def test_center_positive(self, model):
        """Test the positive center is labelled +1"""
        assert mda_classify(model, model.mu) == 1

    def test_minority_point_negative(self, model):
        """Test the minority center is labelled -1"""
        assert mda_classify(model, 3 * model.mu) == -1

    def test_majority_point_negative(self, model):
        """Test the majority center is labelled -1"""
        assert mda_classify(model, -model.mu) == -1

    def test_thresholds(self, model):
        """Test the two projection thresholds at sigma=1, p=0.9"""
        lower, upper = model.thresholds()
        assert lower == pytest.approx(math.log(0.9) / 2)
        assert upper == pytest.approx(1.1513, abs=1e-4)

    def test_log_space_matches_density_rule(self):
        """Test the log-space rule agrees with the direct density comparison"""
        gen = np.random.default_rng(8)
        model = MdaClassifier(gen.standard_normal(5), 1.3, 0.85)
        X = gen.standard_normal((10_000, 5)) * 3
        assert np.array_equal(model.predict(X), model.predict_by_density(X))

    def test_scale_equivariance(self, default_params):
        """Test scaling points, mean and sigma together leaves predictions unchanged"""
        X = sample_dataset(default_params, 2000, rng_new(3)).X
        c = 3.7
        scaled = ModelParams(c * default_params.mu, c * SIGMA, P)
        assert np.array_equal(oracle_mda(default_params).predict(X), oracle_mda(scaled).predict(c * X))
        assert np.array_equal(oracle_lda(default_params).predict(X), oracle_lda(scaled).predict(c * X))

    def test_fit_recovers_oracle(self):
        """Test fitting on exact-moment rows recovers the oracle mean"""
        mu, p = np.array([0.5, 1.5]), 0.9
        model = fit_mda(exact_moment_dataset(mu, p), 1.0, p)
        assert np.allclose(model.mu, mu, atol=1e-12)

    def test_fitted_classifies_minority_center(self, default_params):
        """Test fitted MDA labels the minority center -1"""
        train = sample_dataset(default_params, 7000, rng_new(1))
        model = fit_mda(train, SIGMA, P)
        assert mda_classify(model, 3 * default_params.mu) == -1

    def test_fit_on_empty_dataset(self):
        """Test fitting on an empty dataset is rejected"""
        with pytest.raises(ValueError, match="non-empty"):
            fit_mda(Dataset(np.empty((0, 2)), [], []), 1.0, 0.9)

    def test_invalid_parameters(self):
        """Test invalid p and sigma are rejected"""
        with pytest.raises(ValueError, match="p must lie"):
            MdaClassifier([1.0], 1.0, 1.0)
        with pytest.raises(ValueError, match="sigma"):
            MdaClassifier([1.0], -1.0, 0.9)


class TestGenericMda:
    """Mixture-vs-mixture log-density comparison"""

    def test_identical_models_tie_positive(self):
        """Test identical class models send every point to +1"""
        model = GmmModel([0.4, 0.6], [[0.0, 1.0], [2.0, -1.0]], [1.0, 0.5])
        classifier = GenericMdaClassifier(model, model)
        X = np.random.default_rng(1).standard_normal((50, 2)) * 4
        assert np.all(classifier.predict(X) == 1)

    def test_single_components_reduce_to_sign(self):
        """Test one equal-variance component per class reduces to a sign rule"""
        mu = np.array([1.0, -0.5, 2.0])
        classifier = GenericMdaClassifier(GmmModel([1.0], [mu], [0.8]), GmmModel([1.0], [-mu], [0.8]))
        X = np.random.default_rng(2).standard_normal((100, 3)) * 2
        assert np.array_equal(classifier.predict(X), np.where(X @ mu >= 0, 1, -1))

    def test_true_layout_at_minority_center(self):
        """Test the true mixture layout labels the minority center -1"""
        mu = np.full(4, 1.0)
        f_plus = GmmModel([1.0], [mu], [1.0])
        f_minus = GmmModel([0.9, 0.1], [-mu, 3 * mu], [1.0, 1.0])
        assert generic_mda_classify(GenericMdaClassifier(f_plus, f_minus), 3 * mu) == -1
        assert mda_classify(MdaClassifier(mu, 1.0, 0.9), 3 * mu) == -1

    def test_dimension_disagreement(self):
        """Test class models of different dimension are rejected"""
        with pytest.raises(ValueError, match="disagree on dimension"):
            GenericMdaClassifier(GmmModel([1.0], [[0.0]], [1.0]), GmmModel([1.0], [[0.0, 0.0]], [1.0]))

    def test_single_gaussians_match_lda(self):
        """Test equal-variance single-Gaussian fits reproduce LDA"""
        gen = np.random.default_rng(5)
        Z = gen.standard_normal((80, 3))
        m1, m2 = np.array([1.0, 0.0, 0.5]), np.array([-1.0, 0.5, 0.0])
        # reflected copies share their spread exactly, so the fitted variances agree
        X = np.vstack([Z + m1, -Z + m2])
        y = np.repeat([1, -1], 80)
        dataset = Dataset(X, y, np.where(y == 1, 0, 1))
        model = fit_generic_mda(dataset, 1, 1, EmConfig(restarts=1), rng_new(3))
        assert model.f_plus.variances[0] == pytest.approx(model.f_minus.variances[0], abs=1e-6)
        lda = LdaClassifier(X[:80].mean(axis=0), X[80:].mean(axis=0))
        points = gen.standard_normal((100, 3)) * 3
        assert np.array_equal(model.predict(points), lda.predict(points))

    def test_well_specified_fit_separates_sample(self):
        """Test a (1, 2) fit at large separation nearly separates its sample"""
        params = make_params(D, 6.0, SIGMA, P)
        train = sample_dataset(params, 300, rng_new(31))
        model = fit_generic_mda(train, 1, 2, EmConfig(), rng_new(32))
        assert empirical_error(model, train).error <= 0.02

    def test_overparameterized_fit_interpolates(self, default_params):
        """Test a (31, 31) fit nearly interpolates its sample"""
        train = sample_dataset(default_params, 300, rng_new(33))
        model = fit_generic_mda(train, 31, 31, EmConfig(restarts=2), rng_new(34))
        assert empirical_error(model, train).error <= 0.01

    def test_single_gaussian_per_class_misses_minority(self, default_params):
        """Test a (1, 1) fit misclassifies most minority training points"""
        train = sample_dataset(default_params, 300, rng_new(33))
        model = fit_generic_mda(train, 1, 1, EmConfig(restarts=1), rng_new(34))
        report = empirical_error(model, train)
        assert report.error > 0
        assert report.by_subpopulation[(-1, MINORITY)][1] > 0.5

    def test_class_too_small(self):
        """Test a class with fewer points than components is rejected"""
        dataset = Dataset([[0.0], [1.0], [2.0]], [1, -1, -1], [0, 1, 1])
        with pytest.raises(ValueError, match="fewer than k_plus=2"):
            fit_generic_mda(dataset, 2, 1, EmConfig(), rng_new(1))

    def test_class_absent(self):
        """Test a dataset missing one class is rejected"""
        dataset = Dataset([[0.0], [1.0]], [-1, -1], [1, 1])
        with pytest.raises(ValueError, match="absent"):
            fit_generic_mda(dataset, 1, 1, EmConfig(), rng_new(1))

    def test_interpolating_fit_reproduces_labels(self, small_train):
        """Test the interpolating learner reproduces every training label"""
        model = fit_interpolating_mda(small_train, 0.01)
        assert np.array_equal(model.predict(small_train.X), small_train.y)


class TestEmpiricalError:
    """Misclassification rate with subpopulation breakdown"""

    @pytest.fixture
    def testset(self):
        y = np.array([1] * 70 + [-1] * 30)
        k = np.where(y == 1, 0, MAJORITY)
        k[-5:] = MINORITY
        return Dataset(np.zeros((100, 2)), y, k)

    def test_constant_classifier(self, testset):
        """Test the error breakdown of an all-positive classifier"""
        report = empirical_error(lambda X: np.ones(len(X), dtype=int), testset)
        assert report.error == 0.30
        assert report.by_subpopulation[(1, 0)] == (70, 0.0)
        assert report.by_subpopulation[(-1, MAJORITY)] == (25, 1.0)
        assert report.by_subpopulation[(-1, MINORITY)] == (5, 1.0)
        assert float(report) == 0.30

    def test_negation_complements(self, default_params):
        """Test a classifier and its negation have errors summing to 1"""
        test = sample_dataset(default_params, 500, rng_new(5))
        model = oracle_lda(default_params)
        e = empirical_error(model, test).error
        flipped = empirical_error(lambda X: -model.predict(X), test).error
        assert e + flipped == pytest.approx(1.0, abs=1e-12)

    def test_separated_oracle_mda(self):
        """Test oracle MDA is nearly perfect at large separation"""
        params = make_params(D, 6.0, SIGMA, P)
        train = sample_dataset(params, 1000, rng_new(6))
        assert empirical_error(oracle_mda(params), train).error <= 0.001

    def test_oracle_lda_matches_closed_form(self, default_params):
        """Test oracle LDA error lies within 3 standard errors of the closed form"""
        test = sample_dataset(default_params, 100_000, rng_new(7))
        expected = lda_error_formula(default_params.nu, P)
        band = 3 * math.sqrt(expected * (1 - expected) / test.n)
        assert abs(empirical_error(oracle_lda(default_params), test).error - expected) <= band

    def test_empty_testset(self):
        """Test an empty test set is rejected"""
        with pytest.raises(ValueError, match="non-empty test set"):
            empirical_error(lambda X: X, Dataset(np.empty((0, 1)), [], []))


class TestLearnerSpec:
    """Learner kinds and validation"""

    def test_unknown_kind(self):
        """Test an unknown learner kind is rejected"""
        with pytest.raises(ValueError, match="Unknown learner kind"):
            LearnerSpec('logistic')

    def test_invalid_hyperparameters(self):
        """Test invalid p, component counts and interpolation variance are rejected"""
        with pytest.raises(ValueError, match="p must lie"):
            LearnerSpec('fitted_lda', p=0.4)
        with pytest.raises(ValueError, match="at least 1"):
            LearnerSpec('generic_mda', k_plus=0)
        with pytest.raises(ValueError, match="interp_variance"):
            LearnerSpec('interpolating_mda', interp_variance=0.0)

    def test_generic_needs_stream(self, small_train):
        """Test the generic learner refuses to fit without a random stream"""
        with pytest.raises(ValueError, match="random stream"):
            LearnerSpec('generic_mda').fit(small_train)

    def test_fit_dispatch(self, small_train):
        """Test each kind fits the expected classifier type"""
        assert isinstance(LearnerSpec('fitted_lda', p=0.8).fit(small_train), LdaClassifier)
        assert isinstance(LearnerSpec('fitted_mda', p=0.8).fit(small_train), MdaClassifier)
        assert isinstance(LearnerSpec('interpolating_mda').fit(small_train), GenericMdaClassifier)
        assert LearnerSpec('fitted_mda').deterministic
        assert not LearnerSpec('generic_mda').deterministic


class TestMemorization:
    """Leave-one-out memorization scores"""

    @pytest.mark.parametrize('kind', ['fitted_lda', 'fitted_mda', 'interpolating_mda'])
    def test_deterministic_scores_are_indicators(self, small_train, kind):
        """Test deterministic learners score in {-1, 0, 1}"""
        learner = LearnerSpec(kind, p=0.8)
        scores = [memorization_score(learner, small_train, i, 1, rng_new(0)) for i in range(small_train.n)]
        assert set(scores) <= {-1.0, 0.0, 1.0}

    def test_lda_score_is_indicator_difference(self, small_train):
        """Test the LDA score equals the with/without correctness difference"""
        learner = LearnerSpec('fitted_lda', p=0.8)
        for i in (0, 7, 33):
            x, y = small_train.X[i], small_train.y[i]
            with_i = fit_lda(small_train, 1.0, 0.8).predict(x) == y
            without_i = fit_lda(small_train.without(i), 1.0, 0.8).predict(x) == y
            assert memorization_score(learner, small_train, i, 5, rng_new(0)) == float(with_i) - float(without_i)

    @pytest.mark.parametrize('kind', ['fitted_lda', 'fitted_mda', 'interpolating_mda'])
    def test_vectorized_scores_match_retraining(self, small_train, kind):
        """Test vectorized scores equal pointwise retraining"""
        learner = LearnerSpec(kind, p=0.8)
        expected = [memorization_score(learner, small_train, i, 1, rng_new(0)) for i in range(small_train.n)]
        assert np.array_equal(memorization_scores(learner, small_train), expected)

    def test_generic_scores_are_restart_fractions(self, small_train):
        """Test generic scores are multiples of 1/restarts and reproducible"""
        learner = LearnerSpec('generic_mda', k_plus=1, k_minus=2, em_config=EmConfig(restarts=1))
        stream = rng_split(rng_new(4), 2)
        score = memorization_score(learner, small_train, 5, 4, stream)
        assert -1.0 <= score <= 1.0
        assert score * 4 == pytest.approx(round(score * 4))
        assert memorization_score(learner, small_train, 5, 4, stream) == score

    def test_generic_vectorized_matches_pointwise(self, small_train):
        """Test vectorized generic scores equal pointwise scores on split streams"""
        learner = LearnerSpec('generic_mda', k_plus=1, k_minus=1, em_config=EmConfig(restarts=1))
        y = small_train.y
        subset = small_train.subset(np.concatenate([np.flatnonzero(y == 1)[:6], np.flatnonzero(y == -1)[:6]]))
        stream = rng_new(6)
        scores = memorization_scores(learner, subset, 2, stream)
        expected = [memorization_score(learner, subset, i, 2, rng_split(stream, i)) for i in range(subset.n)]
        assert np.array_equal(scores, expected)

    def test_interpolating_scores_single_out_minority(self, default_params):
        """Test the interpolating learner scores minority points higher than majority points"""
        train = sample_dataset(default_params, 1000, rng_new(12))
        scores = memorization_scores(LearnerSpec('interpolating_mda'), train)
        assert scores[train.k == MINORITY].mean() > scores[train.k == MAJORITY].mean() + 0.1

    def test_single_minority_point_pinned(self, default_params):
        """Test the lone minority point of a 200-point exact-center sample scores 0 under fitted MDA"""
        mu = default_params.mu
        X = np.vstack([np.tile(mu, (100, 1)), np.tile(-mu, (99, 1)), 3 * mu])
        dataset = Dataset(X, [1] * 100 + [-1] * 100, [0] * 100 + [MAJORITY] * 99 + [MINORITY])
        learner = LearnerSpec('fitted_mda')
        # mu_hat is 0.1 mu with the point and mu / 39.8 without; both rules put 3 mu on the positive side
        assert fit_mda(dataset, SIGMA, P).predict(3 * mu) == 1
        assert fit_mda(dataset.without(199), SIGMA, P).predict(3 * mu) == 1
        assert memorization_score(learner, dataset, 199, 1, rng_new(0)) == 0.0
        assert memorization_scores(learner, dataset)[199] == 0.0

    def test_single_minority_point_seeded(self, default_params):
        """Test brute-force retraining and both score paths agree on a seeded sample with one minority point"""
        pool = sample_dataset(default_params, 2000, rng_new(31))
        rows = np.concatenate([np.flatnonzero(pool.y == 1)[:100], np.flatnonzero(pool.k == MAJORITY)[:99],
                               np.flatnonzero(pool.k == MINORITY)[:1]])
        dataset = pool.subset(rows)
        assert dataset.n == 200 and np.sum(dataset.k == MINORITY) == 1
        x, y = dataset.X[199], dataset.y[199]
        expected = (float(fit_mda(dataset, SIGMA, P).predict(x) == y)
                    - float(fit_mda(dataset.without(199), SIGMA, P).predict(x) == y))
        learner = LearnerSpec('fitted_mda')
        assert memorization_score(learner, dataset, 199, 1, rng_new(0)) == expected
        assert memorization_scores(learner, dataset)[199] == expected

    def test_index_out_of_range(self, small_train):
        """Test an out-of-range index is rejected"""
        with pytest.raises(ValueError, match="out of range"):
            memorization_score(LearnerSpec('fitted_lda', p=0.8), small_train, small_train.n, 1, rng_new(0))

    def test_restarts_must_be_positive(self, small_train):
        """Test zero restarts are rejected"""
        with pytest.raises(ValueError, match="restarts"):
            memorization_score(LearnerSpec('fitted_lda', p=0.8), small_train, 0, 0, rng_new(0))
