"""Two-step latent factor estimation on a managed coefficient panel.

Step one regresses each period's cross-section of returns on the sieve
basis of that period's characteristics, producing one coefficient vector
per period (a "managed portfolio" return vector).  Step two extracts
factors by eigendecomposition of the column-demeaned coefficient panel:
loadings are the top eigenvectors, factors are the projections of the
coefficient columns onto them, and the intercept coefficients are the
residual of the time-average after removing the loading span.

Everything operates on the small sieve dimension (J*M + intercept), never
on the asset dimension, so fits stay cheap even for very wide panels.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator

from ._validation import as_float_array, positive_int, require
from .errors import ConfigError, NumericError
from .panel import Panel
from .sieve import SieveSpec, design_matrices, eval_basis, linear_spec

# Gram matrices with a larger spread of eigenvalues are treated as singular.
MAX_GRAM_CONDITION = 1e12

# Adjacent eigenvalues closer than this (relative to the top one) make the
# extracted loadings numerically ill-determined; flagged, not fatal.
EIGENGAP_RTOL = 1e-12

# Denominator floor in the adjacent-eigenvalue-ratio criterion.
RATIO_FLOOR_RTOL = 1e-14


@dataclass(frozen=True, eq=False)
class ManagedPanel:
    """First-stage coefficient panel.

    Attributes
    ----------
    ytilde : (total_dim, T) array; column t holds the period-t regression
        coefficients.
    n_obs : (T,) int array of per-period observation counts.
    spec : the sieve specification used in the regressions.
    nbar : the single N used in scale-sensitive statistics (max_t N_t).
    """

    ytilde: np.ndarray
    n_obs: np.ndarray
    spec: SieveSpec
    nbar: int

    @property
    def n_periods(self) -> int:
        return self.ytilde.shape[1]

    @property
    def total_dim(self) -> int:
        return self.ytilde.shape[0]


@dataclass(frozen=True, eq=False)
class FactorFit:
    """Complete estimation result for a given number of factors.

    Construction guarantees (up to solver tolerance): orthonormal loading
    columns, intercept coefficients orthogonal to the loadings, and factor
    sample covariance diagonal with descending entries.
    """

    k: int
    a_hat: np.ndarray
    b_hat: np.ndarray
    f_hat: np.ndarray
    eigenvalues: np.ndarray
    spec: SieveSpec
    eigengap_warning: bool = False

    @property
    def n_periods(self) -> int:
        return self.f_hat.shape[0]


def _solve_gram(gram: np.ndarray, rhs: np.ndarray, t: int) -> np.ndarray:
    """Solve the (symmetric PSD) normal equations for one period.

    Uses a Cholesky solve, falling back to a pivoted orthogonal
    factorization if the Gram matrix is not numerically positive definite.
    """
    evals = np.linalg.eigvalsh(gram)
    lam_min, lam_max = evals[0], evals[-1]
    cond = lam_max / lam_min if lam_min > 0 else np.inf
    if lam_max <= 0 or cond > MAX_GRAM_CONDITION:
        raise NumericError(
            f"singular or ill-conditioned Gram matrix at period {t}: "
            f"condition estimate {cond:.3e}"
        )
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(gram, lower=True), rhs)
    except scipy.linalg.LinAlgError:
        sol, _, _, _ = scipy.linalg.lstsq(gram, rhs, lapack_driver="gelsy")
        return sol


def first_stage(panel: Panel, spec: SieveSpec, row_weights=None) -> ManagedPanel:
    """Run the per-period cross-sectional regressions.

    Parameters
    ----------
    panel : Panel with at least total_dim observed assets in every period.
    spec : sieve basis specification.
    row_weights : optional per-asset (N,) or per-period (T, N) positive
        weights applied to each observation's contribution (weighted
        least squares).  Reserved hook for GLS-style first stages; the
        weighted bootstrap uses it with per-asset draws.

    Returns
    -------
    ManagedPanel with one coefficient column per period.
    """
    require(spec.n_chars == panel.n_chars,
            f"spec expects {spec.n_chars} characteristics, panel has {panel.n_chars}")
    d = spec.total_dim
    n_obs = panel.n_obs
    if np.any(n_obs < d):
        t_bad = int(np.argmax(n_obs < d))
        raise NumericError(
            f"period {t_bad} has N_t = {int(n_obs[t_bad])} < basis dimension {d}"
        )
    phi = design_matrices(spec, panel)
    if row_weights is None:
        phi_w = phi
    else:
        w = as_float_array(row_weights, "row_weights")
        if w.ndim == 1:
            w = np.broadcast_to(w, (panel.n_periods, panel.n_assets))
        if w.shape != (panel.n_periods, panel.n_assets):
            raise ConfigError(f"row_weights must have shape (N,) or (T, N), got {w.shape}")
        if np.any(w <= 0):
            raise ConfigError("row_weights must be strictly positive")
        phi_w = phi * w[:, :, None]

    ytilde = np.empty((d, panel.n_periods))
    for t in range(panel.n_periods):
        gram = phi_w[t].T @ phi[t]
        rhs = phi_w[t].T @ panel.returns[t]
        ytilde[:, t] = _solve_gram(gram, rhs, t)
    return ManagedPanel(ytilde=ytilde, n_obs=n_obs.astype(int), spec=spec,
                        nbar=int(n_obs.max()))


def _demeaned(ytilde: np.ndarray):
    ybar = ytilde.mean(axis=1)
    return ybar, ytilde - ybar[:, None]


def managed_eigenvalues(managed: ManagedPanel) -> np.ndarray:
    """Descending eigenvalues of the demeaned coefficient second-moment matrix."""
    _, yc = _demeaned(managed.ytilde)
    smat = yc @ yc.T / managed.n_periods
    try:
        evals = np.linalg.eigvalsh(smat)
    except np.linalg.LinAlgError as err:
        raise NumericError(f"eigensolver failure: {err}") from None
    return evals[::-1].copy()


def fit_factors(managed: ManagedPanel, k: int) -> FactorFit:
    """Extract k factors from a managed panel by eigendecomposition.

    Loading columns are sign-fixed so that each column's largest-magnitude
    entry is positive, making results reproducible across platforms.
    """
    k = positive_int(k, "k")
    d, n_periods = managed.ytilde.shape
    require(k <= d, f"k = {k} exceeds basis dimension {d}")
    require(n_periods >= k + 1, f"need at least k+1 = {k + 1} periods, got {n_periods}")
    ybar, yc = _demeaned(managed.ytilde)
    smat = yc @ yc.T / n_periods
    try:
        evals, evecs = np.linalg.eigh(smat)
    except np.linalg.LinAlgError as err:
        raise NumericError(f"eigensolver failure: {err}") from None
    evals = evals[::-1].copy()
    evecs = evecs[:, ::-1]

    b_hat = evecs[:, :k].copy()
    lead = np.argmax(np.abs(b_hat), axis=0)
    flip = b_hat[lead, np.arange(k)] < 0
    b_hat[:, flip] *= -1.0

    a_hat = ybar - b_hat @ (b_hat.T @ ybar)
    f_hat = managed.ytilde.T @ b_hat
    gap_warning = bool(k < d and (evals[k - 1] - evals[k]) < EIGENGAP_RTOL * max(evals[0], 0.0))
    return FactorFit(k=k, a_hat=a_hat, b_hat=b_hat, f_hat=f_hat,
                     eigenvalues=evals, spec=managed.spec,
                     eigengap_warning=gap_warning)


def eval_alpha(fit: FactorFit, z) -> float:
    """Fitted intercept function at a single characteristics vector."""
    return float(eval_basis(fit.spec, z) @ fit.a_hat)


def eval_beta(fit: FactorFit, z) -> np.ndarray:
    """Fitted loading function (length k) at a single characteristics vector."""
    return eval_basis(fit.spec, z) @ fit.b_hat


def rotation(f_true: np.ndarray, fit: FactorFit) -> np.ndarray:
    """K x K matrix aligning the fitted loadings/factors with a reference.

    For reference factors F the alignment targets are b_hat ~ B @ H and
    f_hat ~ F @ inv(H'), where H projects the demeaned reference factors
    onto the demeaned fitted ones.
    """
    f_true = as_float_array(f_true, "f_true", ndim=2)
    if f_true.shape != fit.f_hat.shape:
        raise ConfigError(
            f"f_true must have shape {fit.f_hat.shape}, got {f_true.shape}"
        )
    fhat_c = fit.f_hat - fit.f_hat.mean(axis=0)
    ftrue_c = f_true - f_true.mean(axis=0)
    gram = fhat_c.T @ fhat_c
    cross = ftrue_c.T @ fhat_c
    try:
        return np.linalg.solve(gram, cross.T).T
    except np.linalg.LinAlgError:
        raise NumericError("demeaned fitted factors are rank deficient") from None


def fix_factor_signs(fit: FactorFit) -> FactorFit:
    """Negate factor/loading column pairs so every factor has nonnegative mean.

    The fitted common component is unchanged because the signs cancel in
    the product; exact-zero means are left as-is.
    """
    means = fit.f_hat.mean(axis=0)
    signs = np.where(means < 0, -1.0, 1.0)
    if np.all(signs == 1.0):
        return fit
    return replace(fit, b_hat=fit.b_hat * signs, f_hat=fit.f_hat * signs)


def select_k_ratio(managed: ManagedPanel) -> int:
    """Pick the number of factors maximizing adjacent eigenvalue ratios.

    Searches 1 <= k <= total_dim // 2; ties break toward the smallest k.
    Denominators below RATIO_FLOOR_RTOL * lambda_1 are floored so a
    numerically zero tail cannot dominate the criterion.
    """
    d = managed.total_dim
    require(d >= 2, f"ratio selector needs basis dimension >= 2, got {d}")
    require(managed.n_periods >= 2, "ratio selector needs at least 2 periods")
    lam = managed_eigenvalues(managed)
    if lam[0] <= 0:
        raise NumericError("degenerate spectrum: largest eigenvalue is not positive")
    kmax = d // 2
    floor = RATIO_FLOOR_RTOL * lam[0]
    ratios = lam[:kmax] / np.maximum(lam[1:kmax + 1], floor)
    return int(np.argmax(ratios)) + 1


def select_k_threshold(managed: ManagedPanel, lambda_nt: float | None = None) -> int:
    """Count eigenvalues at or above a threshold (default 1 / log(nbar))."""
    if lambda_nt is None:
        lambda_nt = 1.0 / np.log(managed.nbar)
    require(lambda_nt > 0, f"lambda_nt must be positive, got {lambda_nt!r}")
    lam = managed_eigenvalues(managed)
    return int(np.sum(lam >= lambda_nt))


def fit_to_dict(fit: FactorFit) -> dict:
    """JSON-ready representation; loading matrix stored column-major."""
    return {
        "k": fit.k,
        "a_hat": fit.a_hat.tolist(),
        "b_hat": [fit.b_hat[:, j].tolist() for j in range(fit.k)],
        "f_hat": fit.f_hat.tolist(),
        "eigenvalues": fit.eigenvalues.tolist(),
        "spec": fit.spec.to_dict(),
    }


def fit_from_dict(data: dict) -> FactorFit:
    try:
        spec = SieveSpec.from_dict(data["spec"])
        b_cols = [np.asarray(col, dtype=float) for col in data["b_hat"]]
        fit = FactorFit(
            k=int(data["k"]),
            a_hat=np.asarray(data["a_hat"], dtype=float),
            b_hat=np.column_stack(b_cols),
            f_hat=np.asarray(data["f_hat"], dtype=float),
            eigenvalues=np.asarray(data["eigenvalues"], dtype=float),
            spec=spec,
        )
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"invalid factor fit payload: {err}") from None
    return fit


class RegressedPCA(BaseEstimator):
    """Sklearn-style front end for the two-step factor estimator.

    Parameters
    ----------
    spec : SieveSpec or None
        Basis specification; None uses a linear basis with intercept over
        the panel's characteristics.
    n_factors : int or None
        Number of factors; None selects it with ``select``.
    select : {"ratio", "threshold"}
        Selector used when n_factors is None.
    lambda_nt : float or None
        Threshold for the "threshold" selector (None: 1 / log(nbar)).
    positive_mean_factors : bool
        Re-sign factors so each has nonnegative sample mean.

    Attributes (after fit)
    ----------------------
    result_ : FactorFit with the full estimation output.
    a_hat_, b_hat_, f_hat_, eigenvalues_, n_factors_, spec_, managed_.
    """

    def __init__(self, spec=None, n_factors=None, select="ratio",
                 lambda_nt=None, positive_mean_factors=False):
        self.spec = spec
        self.n_factors = n_factors
        self.select = select
        self.lambda_nt = lambda_nt
        self.positive_mean_factors = positive_mean_factors

    def fit(self, panel: Panel, y=None):
        spec = self.spec if self.spec is not None else linear_spec(panel.n_chars)
        managed = first_stage(panel, spec)
        if self.n_factors is not None:
            k = self.n_factors
        elif self.select == "ratio":
            k = select_k_ratio(managed)
        elif self.select == "threshold":
            k = select_k_threshold(managed, self.lambda_nt)
            if k == 0:
                raise NumericError("threshold selector found no factors")
        else:
            raise ConfigError(f"select must be 'ratio' or 'threshold', got {self.select!r}")
        result = fit_factors(managed, k)
        if self.positive_mean_factors:
            result = fix_factor_signs(result)
        self.spec_ = spec
        self.managed_ = managed
        self.result_ = result
        self.n_factors_ = result.k
        self.a_hat_ = result.a_hat
        self.b_hat_ = result.b_hat
        self.f_hat_ = result.f_hat
        self.eigenvalues_ = result.eigenvalues
        return self

    def _check_fitted(self):
        if not hasattr(self, "result_"):
            raise ConfigError("estimator is not fitted; call fit first")

    def transform(self, panel: Panel) -> np.ndarray:
        """Factor estimates for each period of ``panel`` under the fitted loadings."""
        self._check_fitted()
        managed = first_stage(panel, self.spec_)
        return managed.ytilde.T @ self.b_hat_

    def alpha(self, z) -> float:
        self._check_fitted()
        return eval_alpha(self.result_, z)

    def beta(self, z) -> np.ndarray:
        self._check_fitted()
        return eval_beta(self.result_, z)
