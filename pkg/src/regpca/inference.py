"""Weighted-bootstrap inference for the factor model.

Each asset gets one i.i.d. unit-exponential multiplier, reused across all
of its periods so the resampling preserves serial dependence.  A bootstrap
replicate reruns the first-stage regressions with those row weights and
then rebuilds the intercept/loading estimates around the *original* factor
estimates; reusing the original factors pins the rotation so bootstrap and
sample estimates are centered on the same target.

Three tests are provided: the zero-pricing-error test, joint significance
tests for selected basis rows, and a specification test comparing the
fitted functions against linear-in-characteristics null estimates.

Draw b always consumes the random stream derived from (seed, b), so any
parallel or batched execution schedule reproduces the sequential results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_level, positive_int, require
from .errors import NumericError
from .estimator import FactorFit, first_stage
from .panel import Panel
from .sieve import SieveSpec, design_matrices

# Variance of the unit-exponential multiplier weights.
OMEGA0 = 1.0


@dataclass(frozen=True, eq=False)
class BootstrapDraw:
    """One bootstrap replicate of the coefficient estimates.

    ``gamma_star``/``gamma_mat_star`` hold the linear-null estimates and are
    populated by the linearity test only.
    """

    a_star: np.ndarray
    b_star: np.ndarray
    gamma_star: np.ndarray | None = None
    gamma_mat_star: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class TestReport:
    """Outcome of a bootstrap test at nominal size ``level``."""

    statistic: float
    boot_stats: np.ndarray
    critical_value: float
    p_value: float
    level: float
    reject: bool
    n_boot: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "critical_value": self.critical_value,
            "p_value": self.p_value,
            "level": self.level,
            "reject": self.reject,
            "n_boot": self.n_boot,
            "seed": self.seed,
            "boot_stats": self.boot_stats.tolist(),
        }


def weight_rng(seed: int, draw: int) -> np.random.Generator:
    """Generator for bootstrap draw ``draw`` under root ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(draw,)))


def draw_weights(n: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. unit-exponential weights via the inverse CDF."""
    n = positive_int(n, "n")
    u = rng.random(n)
    return -np.log1p(-u)


def _weight_matrix(n_assets: int, n_boot: int, seed: int) -> np.ndarray:
    wmat = np.empty((n_boot, n_assets))
    for b in range(n_boot):
        wmat[b] = draw_weights(n_assets, weight_rng(seed, b))
    return wmat


def _batched_wls(design: np.ndarray, y: np.ndarray, wmat: np.ndarray) -> np.ndarray:
    """Weighted per-period regressions for every draw.

    design: (T, N, d) zero-filled design; y: (T, N); wmat: (B, N).
    Returns coefficients with shape (B, d, T).
    """
    n_boot = wmat.shape[0]
    n_periods, n_assets, d = design.shape
    out = np.empty((n_boot, d, n_periods))
    for t in range(n_periods):
        xt = design[t]
        outer = (xt[:, :, None] * xt[:, None, :]).reshape(n_assets, d * d)
        gram = (wmat @ outer).reshape(n_boot, d, d)
        rhs = wmat @ (xt * y[t][:, None])
        try:
            sol = np.linalg.solve(gram, rhs[:, :, None])
        except np.linalg.LinAlgError:
            bad = _first_singular(gram)
            raise NumericError(
                f"singular weighted Gram matrix at period {t} (draw {bad})"
            ) from None
        out[:, :, t] = sol[:, :, 0]
    return out


def _first_singular(mats: np.ndarray) -> int:
    for b in range(mats.shape[0]):
        try:
            np.linalg.solve(mats[b], np.zeros(mats.shape[-1]))
        except np.linalg.LinAlgError:
            return b
    return -1


def _factor_projector(fit: FactorFit) -> np.ndarray:
    """(T, K) matrix P with coefficients @ P = demeaned-factor regression slopes."""
    fc = fit.f_hat - fit.f_hat.mean(axis=0)
    gram = fc.T @ fc
    try:
        return np.linalg.solve(gram, fc.T).T
    except np.linalg.LinAlgError:
        raise NumericError("demeaned fitted factor Gram matrix is singular") from None


def _bootstrap_ab(ystar: np.ndarray, proj: np.ndarray):
    """Loading/intercept replicates plus factor-mean coefficients per draw.

    ystar: (B, d, T); proj: (T, K).  Returns (a_star (B, d),
    b_star (B, d, K), coef (B, K)) where coef solves the b_star
    least-squares projection of the time-averaged coefficients.
    """
    b_star = ystar @ proj
    ybar_star = ystar.mean(axis=2)
    btb = np.swapaxes(b_star, 1, 2) @ b_star
    rhs = np.swapaxes(b_star, 1, 2) @ ybar_star[:, :, None]
    try:
        coef = np.linalg.solve(btb, rhs)[:, :, 0]
    except np.linalg.LinAlgError:
        bad = _first_singular(btb)
        raise NumericError(f"singular bootstrap loading Gram (draw {bad})") from None
    a_star = ybar_star - (b_star @ coef[:, :, None])[:, :, 0]
    return a_star, b_star, coef


def _check_fit(panel: Panel, spec: SieveSpec, fit: FactorFit) -> None:
    require(fit.spec == spec, "fit was produced under a different sieve spec")
    require(fit.f_hat.shape[0] == panel.n_periods,
            f"fit covers {fit.f_hat.shape[0]} periods, panel has {panel.n_periods}")


def bootstrap_fit(panel: Panel, spec: SieveSpec, fit: FactorFit, weights) -> BootstrapDraw:
    """One bootstrap replicate of the intercept and loading estimates.

    ``weights`` is the per-asset positive multiplier vector (length N).
    With all weights equal to one this reproduces the sample estimates
    exactly (up to solver roundoff).
    """
    _check_fit(panel, spec, fit)
    weights = np.asarray(weights, dtype=float)
    require(weights.shape == (panel.n_assets,),
            f"weights must have shape ({panel.n_assets},), got {weights.shape}")
    require(bool(np.all(weights > 0)), "weights must be strictly positive")
    managed_star = first_stage(panel, spec, row_weights=weights)
    proj = _factor_projector(fit)
    a_star, b_star, _ = _bootstrap_ab(managed_star.ytilde[None, :, :], proj)
    return BootstrapDraw(a_star=a_star[0], b_star=b_star[0])


def _quantile_report(statistic: float, boot: np.ndarray, level: float,
                     n_boot: int, seed: int) -> TestReport:
    """Finite-B critical value and p-value with exact level under exchangeability."""
    k = math.ceil((n_boot + 1) * (1.0 - level))
    require(k <= n_boot,
            f"n_boot = {n_boot} too small for level {level}: needs at least "
            f"{math.ceil(1.0 / level) - 1} draws")
    critical = float(np.sort(boot)[k - 1])
    p_value = float((1 + np.sum(boot >= statistic)) / (n_boot + 1))
    return TestReport(
        statistic=float(statistic),
        boot_stats=boot,
        critical_value=critical,
        p_value=p_value,
        level=level,
        reject=bool(statistic > critical),
        n_boot=n_boot,
        seed=int(seed),
    )


def alpha_test(panel: Panel, spec: SieveSpec, fit: FactorFit,
               n_boot: int = 499, level: float = 0.05, seed: int = 0) -> TestReport:
    """Test that the pricing-error function is identically zero.

    The statistic is N*T times the squared norm of the intercept
    coefficients; its null distribution is estimated by the centered
    bootstrap replicates scaled the same way.
    """
    level = check_level(level)
    n_boot = positive_int(n_boot, "n_boot")
    _check_fit(panel, spec, fit)
    scale = int(panel.n_obs.max()) * panel.n_periods
    phi = design_matrices(spec, panel)
    wmat = _weight_matrix(panel.n_assets, n_boot, seed)
    ystar = _batched_wls(phi, panel.returns, wmat)
    a_star, _, _ = _bootstrap_ab(ystar, _factor_projector(fit))
    statistic = scale * float(fit.a_hat @ fit.a_hat)
    boot = scale * ((a_star - fit.a_hat) ** 2).sum(axis=1) / OMEGA0
    return _quantile_report(statistic, boot, level, n_boot, seed)


def coefficient_test(panel: Panel, spec: SieveSpec, fit: FactorFit,
                     target: str, rows, n_boot: int = 499, level: float = 0.05,
                     seed: int = 0) -> TestReport:
    """Joint significance test for selected basis rows.

    target "alpha" tests the selected intercept coefficients, "beta" the
    selected loading rows (jointly across factors).  Testing every loading
    row at once is disallowed: the factor structure requires full-rank
    loadings, so a global zero-loading null is outside the model.
    """
    level = check_level(level)
    n_boot = positive_int(n_boot, "n_boot")
    _check_fit(panel, spec, fit)
    require(target in ("alpha", "beta"), f"target must be 'alpha' or 'beta', got {target!r}")
    rows = np.unique(np.asarray(rows, dtype=int))
    require(rows.size > 0, "row selection is empty")
    d = spec.total_dim
    require(bool((rows >= 0).all() and (rows < d).all()),
            f"row indices must lie in [0, {d})")
    if target == "beta":
        require(rows.size < d, "testing all loading rows jointly is not supported")

    scale = int(panel.n_obs.max()) * panel.n_periods
    phi = design_matrices(spec, panel)
    wmat = _weight_matrix(panel.n_assets, n_boot, seed)
    ystar = _batched_wls(phi, panel.returns, wmat)
    a_star, b_star, _ = _bootstrap_ab(ystar, _factor_projector(fit))
    if target == "alpha":
        statistic = scale * float(np.sum(fit.a_hat[rows] ** 2))
        boot = scale * ((a_star[:, rows] - fit.a_hat[rows]) ** 2).sum(axis=1) / OMEGA0
    else:
        statistic = scale * float(np.sum(fit.b_hat[rows, :] ** 2))
        diff = b_star[:, rows, :] - fit.b_hat[rows, :]
        boot = scale * (diff ** 2).sum(axis=(1, 2)) / OMEGA0
    return _quantile_report(statistic, boot, level, n_boot, seed)


def _null_design(panel: Panel, include_intercept: bool) -> np.ndarray:
    """Raw-characteristic design for the linear null, zero-filled like the sieve."""
    zmat = panel.characteristics.copy()
    if include_intercept:
        ones = np.ones((panel.n_periods, panel.n_assets, 1))
        zmat = np.concatenate([ones, zmat], axis=2)
    zmat[~panel.mask] = 0.0
    return zmat


def linearity_test(panel: Panel, spec: SieveSpec, fit: FactorFit,
                   n_boot: int = 499, level: float = 0.05, seed: int = 0) -> TestReport:
    """Specification test of jointly linear intercept and loading functions.

    Linear-null estimates are built from per-period regressions on the raw
    characteristics (intercept column included iff the sieve has one) but
    reuse the unrestricted factor estimates, so null and alternative share
    one rotation.  The statistic aggregates squared gaps between the null
    and fitted functions over all observed (asset, period) pairs, scaled
    by the per-characteristic basis size.
    """
    level = check_level(level)
    n_boot = positive_int(n_boot, "n_boot")
    _check_fit(panel, spec, fit)
    require(spec.kind != "linear",
            "linearity test is undefined for a linear sieve: null equals alternative")
    j_per_char = spec.basis_per_char
    d = spec.total_dim

    phi = design_matrices(spec, panel)
    zmat = _null_design(panel, spec.include_intercept)
    mz = zmat.shape[2]
    proj = _factor_projector(fit)
    fbar = fit.f_hat.mean(axis=0)
    unit = np.ones((1, panel.n_assets))

    # Null point estimates share the bootstrap code path (unit weights).
    try:
        vecy = _batched_wls(zmat, panel.returns, unit)[0]
    except NumericError:
        raise NumericError("singular raw-characteristic Gram matrix") from None
    gamma_mat = vecy @ proj
    gamma = vecy.mean(axis=1) - gamma_mat @ fbar

    # All (i, t) sums collapse onto one cross-moment matrix of the stacked
    # null and sieve regressors; masked pairs contribute zero rows.
    x_all = np.concatenate([zmat, phi], axis=2).reshape(-1, mz + d)
    xtx = x_all.T @ x_all
    v0 = np.concatenate([gamma, -fit.a_hat])
    v_mat0 = np.vstack([gamma_mat, -fit.b_hat])
    statistic = (v0 @ xtx @ v0 + np.trace(v_mat0.T @ xtx @ v_mat0)) / j_per_char

    wmat = _weight_matrix(panel.n_assets, n_boot, seed)
    ystar = _batched_wls(phi, panel.returns, wmat)
    vecystar = _batched_wls(zmat, panel.returns, wmat)
    a_star, b_star, coef = _bootstrap_ab(ystar, _factor_projector(fit))
    gamma_mat_star = vecystar @ proj
    gamma_star = vecystar.mean(axis=2) - (gamma_mat_star @ coef[:, :, None])[:, :, 0]

    dv = np.concatenate([gamma_star - gamma, -(a_star - fit.a_hat)], axis=1)
    dv_mat = np.concatenate(
        [gamma_mat_star - gamma_mat, -(b_star - fit.b_hat)], axis=1
    )
    boot = (
        np.einsum("bi,ij,bj->b", dv, xtx, dv)
        + np.einsum("bik,ij,bjk->b", dv_mat, xtx, dv_mat)
    ) / (j_per_char * OMEGA0)
    return _quantile_report(statistic, boot, level, n_boot, seed)
