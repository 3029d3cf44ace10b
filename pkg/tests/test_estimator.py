import numpy as np
import pytest
import scipy.linalg

from regpca import (ConfigError, NumericError, RegressedPCA, eval_alpha, eval_beta,
                    first_stage, fit_factors, fix_factor_signs, from_arrays, rotation,
                    select_k_ratio, select_k_threshold)
from regpca.estimator import (FactorFit, ManagedPanel, fit_from_dict, fit_to_dict,
                              managed_eigenvalues)
from regpca.sieve import linear_spec, quadratic_spec

from conftest import exact_factor_panel, make_panel, random_unbalanced_panel


def charpoly_roots(smat):
    """Eigenvalues via the Faddeev-LeVerrier characteristic polynomial.

    Independent of the symmetric eigensolver used in production code.
    """
    n = smat.shape[0]
    coeffs = [1.0]
    aux = np.zeros_like(smat)
    for k in range(1, n + 1):
        aux = smat @ aux + coeffs[-1] * np.eye(n)
        coeffs.append(-np.trace(smat @ aux) / k)
    return np.sort(np.roots(coeffs).real)[::-1]


def nullspace_vector(smat, lam):
    _, _, vt = np.linalg.svd(smat - lam * np.eye(smat.shape[0]))
    return vt[-1]


def managed_with_spectrum(eigenvalues, n_periods, seed=0):
    """ManagedPanel whose demeaned second-moment matrix has given spectrum."""
    lam = np.asarray(eigenvalues, float)
    d = lam.size
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((n_periods, d))
    raw -= raw.mean(axis=0)
    q, _ = np.linalg.qr(raw)  # columns orthonormal, each summing to zero
    ytilde = (q * np.sqrt(lam * n_periods)).T
    spec = quadratic_spec(d // 2) if d % 2 == 0 else linear_spec(d, include_intercept=False)
    return ManagedPanel(ytilde=ytilde, n_obs=np.full(n_periods, 50), spec=spec, nbar=50)


class TestFirstStage:
    def test_exact_fit_recovered(self, rng):
        spec = linear_spec(1)
        panel, a, b, f = exact_factor_panel(rng, spec, n_periods=4, n_assets=30, k=1)
        managed = first_stage(panel, spec)
        target = a[:, None] + b @ f.T
        assert np.allclose(managed.ytilde, target, atol=1e-10)

    def test_hand_solved_regression(self):
        # rows (1, 0), (1, 1), (1, 2) against y = (1, 2, 3) -> coefficients (1, 1)
        panel = make_panel([[1.0, 2.0, 3.0]], [[[0.0], [1.0], [2.0]]])
        spec = linear_spec(1, domain=(-10.0, 10.0))
        managed = first_stage(panel, spec)
        assert np.allclose(managed.ytilde[:, 0], [1.0, 1.0])

    def test_mask_equals_deleted_rows(self, rng):
        spec = linear_spec(2)
        panel = random_unbalanced_panel(rng, 3, 10, 2, min_obs=6)
        managed = first_stage(panel, spec)
        for t in range(3):
            keep = panel.mask[t]
            x = np.hstack([np.ones((keep.sum(), 1)), panel.characteristics[t][keep]])
            ref, *_ = np.linalg.lstsq(x, panel.returns[t][keep], rcond=None)
            assert np.allclose(managed.ytilde[:, t], ref, atol=1e-10)

    def test_normal_equations_hold(self, rng):
        spec = quadratic_spec(2)
        chars = rng.standard_normal((3, 12, 2))
        panel = make_panel(rng.standard_normal((3, 12)), chars)
        managed = first_stage(panel, spec)
        from regpca.sieve import design_matrices
        phi = design_matrices(spec, panel)
        for t in range(3):
            grad = phi[t].T @ (panel.returns[t] - phi[t] @ managed.ytilde[:, t])
            assert np.allclose(grad, 0.0, atol=1e-9)

    def test_nbar_and_counts(self, rng):
        panel = random_unbalanced_panel(rng, 4, 9, 1, min_obs=4)
        managed = first_stage(panel, linear_spec(1))
        assert managed.nbar == int(panel.n_obs.max())
        assert np.array_equal(managed.n_obs, panel.n_obs)

    def test_too_few_observations(self, rng):
        panel = make_panel([[1.0, 2.0, 0.0]], [[[0.1, 0.2], [0.3, 0.4], [0.0, 0.0]]],
                           mask=[[True, True, False]])
        with pytest.raises(NumericError, match="basis dimension"):
            first_stage(panel, linear_spec(2))

    def test_singular_gram(self):
        # two identical characteristics make the Gram singular
        chars = np.array([[[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]]])
        panel = make_panel([[1.0, 2.0, 3.0]], chars)
        with pytest.raises(NumericError, match="condition"):
            first_stage(panel, linear_spec(2, include_intercept=False))


class TestFitFactors:
    def test_closed_form_two_periods(self, rng):
        spec = linear_spec(2)
        panel, *_ = exact_factor_panel(rng, spec, n_periods=2, n_assets=40, k=1, noise=0.05)
        managed = first_stage(panel, spec)
        fit = fit_factors(managed, 1)
        diff = managed.ytilde[:, 0] - managed.ytilde[:, 1]
        direction = diff / np.linalg.norm(diff)
        align = abs(direction @ fit.b_hat[:, 0])
        assert align == pytest.approx(1.0, abs=1e-10)

    def test_noiseless_recovery(self, rng):
        spec = linear_spec(2)
        panel, a, b, f = exact_factor_panel(rng, spec, n_periods=12, n_assets=40, k=2)
        fit = fit_factors(first_stage(panel, spec), 2)
        assert np.allclose(fit.a_hat, a, atol=1e-8)
        angles = scipy.linalg.subspace_angles(fit.b_hat, b)
        assert angles.max() <= 1e-8

    def test_noiseless_managed_residual(self, rng):
        # exact factor structure leaves no residual around the rank-k fit
        spec = linear_spec(2)
        panel, *_ = exact_factor_panel(rng, spec, n_periods=10, n_assets=40, k=2)
        managed = first_stage(panel, spec)
        fit = fit_factors(managed, 2)
        resid = managed.ytilde - fit.a_hat[:, None] - fit.b_hat @ fit.f_hat.T
        assert np.linalg.norm(resid) <= 1e-8 * np.linalg.norm(managed.ytilde)

    def test_eigen_oracle(self, rng):
        # 4x3 coefficient panel: two nonzero eigenvalues, two exact zeros.
        ytilde = rng.standard_normal((4, 3))
        managed = ManagedPanel(ytilde=ytilde, n_obs=np.full(3, 9), spec=quadratic_spec(2), nbar=9)
        fit = fit_factors(managed, 2)
        yc = ytilde - ytilde.mean(axis=1, keepdims=True)
        smat = yc @ yc.T / 3
        lam = charpoly_roots(smat)
        # polynomial root-finding resolves the zero eigenvalues only to ~1e-8
        assert np.allclose(fit.eigenvalues[:2], lam[:2], atol=1e-10 * abs(lam[0]))
        assert np.abs(fit.eigenvalues[2:]).max() <= 1e-10
        assert np.abs(lam[2:]).max() <= 1e-7
        for k in range(2):
            v = nullspace_vector(smat, fit.eigenvalues[k])
            assert abs(v @ fit.b_hat[:, k]) == pytest.approx(1.0, abs=1e-8)

    def test_invariants_random_fits(self, rng):
        for _ in range(40):
            d = int(rng.integers(2, 7))
            t = int(rng.integers(d + 1, d + 6))
            k = int(rng.integers(1, d))
            ytilde = rng.standard_normal((d, t))
            spec = linear_spec(d, include_intercept=False)
            managed = ManagedPanel(ytilde=ytilde, n_obs=np.full(t, 20), spec=spec, nbar=20)
            fit = fit_factors(managed, k)
            assert np.allclose(fit.b_hat.T @ fit.b_hat, np.eye(k), atol=1e-10)
            assert np.allclose(fit.a_hat @ fit.b_hat, 0.0, atol=1e-10)
            fc = fit.f_hat - fit.f_hat.mean(axis=0)
            cov = fc.T @ fc / t
            off = cov - np.diag(np.diag(cov))
            assert np.abs(off).max() <= 1e-8
            assert np.all(np.diff(np.diag(cov)) <= 1e-12)
            yc = ytilde - ytilde.mean(axis=1, keepdims=True)
            smat = yc @ yc.T / t
            assert np.allclose(smat @ fit.b_hat, fit.b_hat * fit.eigenvalues[:k], atol=1e-8)

    def test_sign_rule_deterministic(self, rng):
        ytilde = rng.standard_normal((4, 6))
        managed = ManagedPanel(ytilde=ytilde, n_obs=np.full(6, 9), spec=quadratic_spec(2), nbar=9)
        fit = fit_factors(managed, 2)
        lead = np.argmax(np.abs(fit.b_hat), axis=0)
        assert np.all(fit.b_hat[lead, np.arange(2)] > 0)

    def test_preconditions(self, rng):
        managed = ManagedPanel(ytilde=rng.standard_normal((3, 3)),
                               n_obs=np.full(3, 9), spec=linear_spec(3, include_intercept=False),
                               nbar=9)
        with pytest.raises(ConfigError):
            fit_factors(managed, 4)  # k exceeds basis dimension
        with pytest.raises(ConfigError):
            fit_factors(managed, 3)  # needs T >= k+1

    def test_scale_equivariance(self, rng):
        spec = linear_spec(2)
        panel = random_unbalanced_panel(rng, 6, 25, 2, min_obs=10)
        scaled = from_arrays(3.0 * panel.returns, panel.characteristics, panel.mask)
        f1 = fit_factors(first_stage(panel, spec), 2)
        f2 = fit_factors(first_stage(scaled, spec), 2)
        assert np.allclose(f2.a_hat, 3.0 * f1.a_hat, atol=1e-10)
        assert np.allclose(np.abs(f2.b_hat), np.abs(f1.b_hat), atol=1e-10)
        assert np.allclose(f2.eigenvalues, 9.0 * f1.eigenvalues, atol=1e-10)
        assert select_k_ratio(first_stage(scaled, spec)) == select_k_ratio(first_stage(panel, spec))


class TestFittedFunctions:
    def dummy_fit(self, a, b, spec):
        a = np.asarray(a, float)
        b = np.asarray(b, float)
        return FactorFit(k=b.shape[1], a_hat=a, b_hat=b,
                         f_hat=np.zeros((b.shape[1] + 1, b.shape[1])),
                         eigenvalues=np.zeros(a.size), spec=spec)

    def test_zero_alpha(self):
        spec = linear_spec(2)
        fit = self.dummy_fit(np.zeros(3), np.eye(3)[:, :1], spec)
        for z in ([0.0, 0.0], [0.3, -0.4]):
            assert eval_alpha(fit, z) == 0.0

    def test_hand_dot_product(self):
        spec = linear_spec(2)
        fit = self.dummy_fit([0.5, 1.0, -1.0], np.eye(3)[:, :1], spec)
        assert eval_alpha(fit, [0.2, 0.3]) == pytest.approx(0.4, abs=1e-12)

    def test_beta_shape(self, rng):
        spec = quadratic_spec(2)
        fit = self.dummy_fit(np.zeros(4), rng.standard_normal((4, 2)), spec)
        assert eval_beta(fit, [0.1, 0.2]).shape == (2,)

    def test_mean_component_identity_across_k(self, rng):
        spec = linear_spec(2)
        panel = random_unbalanced_panel(rng, 8, 30, 2, min_obs=12)
        managed = first_stage(panel, spec)
        ybar = managed.ytilde.mean(axis=1)
        zs = rng.uniform(-0.5, 0.5, (5, 2))
        from regpca.sieve import eval_basis
        for k in range(1, managed.total_dim):
            fit = fit_factors(managed, k)
            fbar = fit.f_hat.mean(axis=0)
            for z in zs:
                lhs = eval_alpha(fit, z) + eval_beta(fit, z) @ fbar
                assert lhs == pytest.approx(float(eval_basis(spec, z) @ ybar), abs=1e-10)


class TestRotation:
    def test_self_rotation_identity(self, rng):
        spec = linear_spec(2)
        panel = random_unbalanced_panel(rng, 7, 25, 2, min_obs=10)
        fit = fit_factors(first_stage(panel, spec), 2)
        assert np.allclose(rotation(fit.f_hat, fit), np.eye(2), atol=1e-10)

    def test_scalar_scaling(self, rng):
        spec = linear_spec(2)
        panel = random_unbalanced_panel(rng, 7, 25, 2, min_obs=10)
        fit = fit_factors(first_stage(panel, spec), 1)
        h = rotation(2.0 * fit.f_hat, fit)
        assert h.shape == (1, 1) and h[0, 0] == pytest.approx(2.0, abs=1e-10)

    def test_noiseless_alignment(self, rng):
        spec = linear_spec(2)
        panel, a, b, f = exact_factor_panel(rng, spec, n_periods=10, n_assets=40, k=2)
        fit = fit_factors(first_stage(panel, spec), 2)
        h = rotation(f, fit)
        assert np.allclose(fit.b_hat, b @ h, atol=1e-8)
        assert np.allclose(fit.f_hat, np.linalg.solve(h, f.T).T, atol=1e-8)


class TestFixFactorSigns:
    def fit_with_means(self, rng, means):
        spec = linear_spec(2)
        panel = random_unbalanced_panel(rng, 8, 25, 2, min_obs=10)
        fit = fit_factors(first_stage(panel, spec), len(means))
        signs = np.where(fit.f_hat.mean(axis=0) * np.asarray(means) < 0, -1.0, 1.0)
        return FactorFit(k=fit.k, a_hat=fit.a_hat, b_hat=fit.b_hat * signs,
                         f_hat=fit.f_hat * signs, eigenvalues=fit.eigenvalues, spec=fit.spec)

    def test_negative_mean_flipped(self, rng):
        fit = self.fit_with_means(rng, [-1.0, -1.0])
        fixed = fix_factor_signs(fit)
        assert np.all(fixed.f_hat.mean(axis=0) >= 0)
        assert np.array_equal(fixed.a_hat, fit.a_hat)

    def test_identity_when_positive(self, rng):
        fit = self.fit_with_means(rng, [1.0, 1.0])
        assert fix_factor_signs(fit) is fit

    def test_common_component_unchanged(self, rng):
        fit = self.fit_with_means(rng, [-1.0, 1.0])
        fixed = fix_factor_signs(fit)
        assert np.array_equal(fixed.b_hat @ fixed.f_hat.T, fit.b_hat @ fit.f_hat.T)


class TestSelectK:
    def test_constructed_spectrum(self):
        managed = managed_with_spectrum([10.0, 5.0, 0.1, 0.05, 0.01, 0.005], n_periods=9)
        assert np.allclose(managed_eigenvalues(managed),
                           [10.0, 5.0, 0.1, 0.05, 0.01, 0.005], atol=1e-10)
        assert select_k_ratio(managed) == 2

    def test_ratio_enumeration_oracle(self, rng):
        for _ in range(25):
            lam = np.sort(rng.uniform(0.01, 10.0, 6))[::-1]
            managed = managed_with_spectrum(lam, n_periods=9, seed=int(rng.integers(1 << 30)))
            floor = 1e-14 * lam[0]
            ratios = [lam[k] / max(lam[k + 1], floor) for k in range(3)]
            assert select_k_ratio(managed) == int(np.argmax(ratios)) + 1

    def test_threshold_counting(self):
        managed = managed_with_spectrum([3.0, 2.0, 0.01], n_periods=8)
        assert select_k_threshold(managed, 0.2) == 2
        assert select_k_threshold(managed, 10.0) == 0

    def test_threshold_default_uses_log_n(self):
        lam = [3.0, 2.0, 0.01]
        managed = managed_with_spectrum(lam, n_periods=8)
        # nbar = 50 -> threshold 1/log(50) ~ 0.2556
        assert select_k_threshold(managed) == 2

    def test_noiseless_selects_true_k(self, rng):
        spec = linear_spec(3)
        panel, *_ = exact_factor_panel(rng, spec, n_periods=15, n_assets=60, k=2, noise=1e-6)
        managed = first_stage(panel, spec)
        assert select_k_ratio(managed) == 2
        assert select_k_threshold(managed, 1e-3) == 2


class TestSerialization:
    def test_round_trip(self, rng):
        spec = linear_spec(2)
        panel = random_unbalanced_panel(rng, 6, 25, 2, min_obs=10)
        fit = fit_factors(first_stage(panel, spec), 2)
        back = fit_from_dict(fit_to_dict(fit))
        assert back.k == fit.k and back.spec == fit.spec
        assert np.array_equal(back.a_hat, fit.a_hat)
        assert np.array_equal(back.b_hat, fit.b_hat)
        assert np.array_equal(back.f_hat, fit.f_hat)
        assert np.array_equal(back.eigenvalues, fit.eigenvalues)


class TestRegressedPCA:
    def test_fit_attributes_and_params(self, rng):
        spec = linear_spec(2)
        panel, *_ = exact_factor_panel(rng, spec, n_periods=10, n_assets=40, k=2, noise=0.01)
        est = RegressedPCA(spec=spec, n_factors=2).fit(panel)
        assert est.n_factors_ == 2
        assert est.b_hat_.shape == (spec.total_dim, 2)
        params = est.get_params()
        assert params["n_factors"] == 2
        clone = RegressedPCA(**params).fit(panel)
        assert np.array_equal(clone.b_hat_, est.b_hat_)

    def test_auto_selection(self, rng):
        spec = linear_spec(3)
        panel, *_ = exact_factor_panel(rng, spec, n_periods=15, n_assets=80, k=2, noise=0.01)
        est = RegressedPCA(spec=spec).fit(panel)
        assert est.n_factors_ == 2

    def test_transform_matches_factors(self, rng):
        spec = linear_spec(2)
        panel = random_unbalanced_panel(rng, 8, 30, 2, min_obs=12)
        est = RegressedPCA(spec=spec, n_factors=2).fit(panel)
        assert np.allclose(est.transform(panel), est.f_hat_, atol=1e-12)

    def test_alpha_beta_methods(self, rng):
        spec = linear_spec(2)
        panel = random_unbalanced_panel(rng, 8, 30, 2, min_obs=12)
        est = RegressedPCA(spec=spec, n_factors=1).fit(panel)
        z = [0.1, -0.2]
        assert est.alpha(z) == pytest.approx(eval_alpha(est.result_, z))
        assert np.allclose(est.beta(z), eval_beta(est.result_, z))

    def test_unfitted_raises(self):
        with pytest.raises(ConfigError, match="not fitted"):
            RegressedPCA().transform(None)
