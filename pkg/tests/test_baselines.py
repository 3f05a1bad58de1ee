import numpy as np
import pytest
from sklearn.svm import OneClassSVM as LibsvmOneClass

from icagan_bsd.baselines import OneClassSVM, fit, rbf, rbf_matrix, score
from icagan_bsd.exceptions import DataError, ShapeError


@pytest.fixture
def blob():
    return np.random.default_rng(0).normal(size=(500, 2))


class TestRbf:
    def test_identity(self):
        x = np.array([0.3, -1.2, 4.0])
        assert rbf(x, x, 0.7) == 1.0

    def test_hand_value(self):
        assert rbf([0.0, 0.0], [1.0, 0.0], 1.0) == pytest.approx(0.367879, abs=1e-6)

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        x, y = rng.normal(size=(2, 5))
        assert rbf(x, y, 0.3) == rbf(y, x, 0.3)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            rbf([1.0, 2.0], [1.0], 1.0)

    def test_kernel_matrix_psd(self):
        X = np.random.default_rng(2).normal(size=(60, 4))
        eig = np.linalg.eigvalsh(rbf_matrix(X, X, 0.5))
        assert eig.min() >= -1e-10


class TestFit:
    def test_identical_points_inside(self):
        X = np.ones((20, 3))
        m = fit(X, nu=0.2)
        assert all(score(m, x) >= -1e-12 for x in X)

    def test_dual_feasibility(self, blob):
        est = OneClassSVM(nu=0.1).fit(blob)
        C = 1 / (0.1 * len(blob))
        assert est.dual_coef_.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(est.dual_coef_ >= 0) and np.all(est.dual_coef_ <= C + 1e-15)

    @pytest.mark.parametrize("nu", [0.05, 0.1, 0.3])
    def test_nu_property(self, blob, nu):
        est = OneClassSVM(nu=nu).fit(blob)
        assert np.mean(est.decision_function(blob) < 0) <= nu + 0.05
        assert len(est.dual_coef_) / len(blob) >= nu - 1e-9

    def test_matches_libsvm(self, blob):
        est = OneClassSVM(nu=0.2).fit(blob)
        ref = LibsvmOneClass(nu=0.2, gamma=est.gamma_, tol=1e-9).fit(blob)
        # libsvm scales the dual so that sum(alpha) = nu * n
        ours = est.decision_function(blob)
        theirs = ref.decision_function(blob) / (0.2 * len(blob))
        assert np.max(np.abs(ours - theirs)) < 5e-4

    def test_interior_support_vector_on_boundary(self, blob):
        est = OneClassSVM(nu=0.1, tol=1e-8).fit(blob)
        C = 1 / (0.1 * len(blob))
        free = (est.dual_coef_ > 1e-9 * C) & (est.dual_coef_ < C * (1 - 1e-9))
        assert free.any()
        assert np.allclose(est.decision_function(est.support_vectors_[free]), 0.0, atol=1e-6)

    def test_far_point_scores_minus_rho(self, blob):
        est = OneClassSVM(nu=0.1).fit(blob)
        assert est.decision_function([[1e4, -1e4]])[0] == pytest.approx(-est.rho_)

    def test_permutation_invariant(self, blob):
        a = OneClassSVM(nu=0.1, tol=1e-10).fit(blob)
        perm = np.random.default_rng(3).permutation(len(blob))
        b = OneClassSVM(nu=0.1, tol=1e-10).fit(blob[perm])
        assert np.max(np.abs(a.decision_function(blob) - b.decision_function(blob))) < 1e-6

    def test_too_few_windows(self):
        with pytest.raises(DataError):
            fit(np.ones((5, 80)))

    def test_score_dim_mismatch(self, blob):
        m = fit(blob)
        with pytest.raises(ShapeError):
            score(m, np.ones(3))

    def test_json_round_trip(self, blob, tmp_path):
        est = OneClassSVM(nu=0.1).fit(blob)
        est.save(tmp_path / "svm.json")
        back = OneClassSVM.load(tmp_path / "svm.json")
        assert np.array_equal(back.decision_function(blob), est.decision_function(blob))
        assert set(est.to_dict()) == {"sv", "alpha", "rho", "gamma", "nu"}

    def test_predict_convention(self, blob):
        est = OneClassSVM(nu=0.1).fit(blob)
        assert set(np.unique(est.predict(blob))) <= {-1, 1}
        assert est.predict([[50.0, 50.0]])[0] == -1
