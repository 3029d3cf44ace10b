"""Goodness-of-fit and out-of-sample portfolio diagnostics.

In-sample fit is summarized by six R-squared measures: pooled, averaged
over assets, and averaged over periods, each with and without the
intercept function.  Out-of-sample variants refit the model on expanding
windows.  Two trading diagnostics complete the suite: a pure-intercept
("arbitrage") portfolio whose weights come from the previous window's
intercept estimate, and the expanding-window mean-variance-efficient
combination of realized out-of-sample factors.

All sums run over observed (asset, period) pairs only; the zero-fill
convention makes that automatic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import positive_int, require
from .errors import NumericError
from .estimator import FactorFit, first_stage, fit_factors
from .panel import Panel
from .sieve import SieveSpec, design_matrices, design_matrix


@dataclass(frozen=True)
class R2Suite:
    """Six in-sample fit measures; the f-variants drop the intercept function."""

    r2_total: float
    r2_tn: float
    r2_nt: float
    r2f_total: float
    r2f_tn: float
    r2f_nt: float

    def as_dict(self) -> dict:
        return {
            "r2_total": self.r2_total,
            "r2_tn": self.r2_tn,
            "r2_nt": self.r2_nt,
            "r2f_total": self.r2f_total,
            "r2f_tn": self.r2f_tn,
            "r2f_nt": self.r2f_nt,
        }


@dataclass(frozen=True)
class R2Triple:
    """Pooled / per-asset-averaged / per-period-averaged R-squared."""

    total: float
    by_asset: float
    by_period: float

    def as_dict(self) -> dict:
        return {"total": self.total, "by_asset": self.by_asset, "by_period": self.by_period}


@dataclass(frozen=True, eq=False)
class PortfolioSeries:
    """Per-period portfolio returns with annualized summary statistics."""

    returns: np.ndarray
    ann_mean: float
    ann_std: float
    sharpe: float
    periods_per_year: float


def _r2_triple(resid: np.ndarray, rets: np.ndarray) -> R2Triple:
    """The three fit ratios from zero-filled residual and return matrices.

    Per-asset and per-period averages skip rows/columns with a zero
    return denominator (never observed in the evaluation range).
    """
    den = float((rets ** 2).sum())
    if den <= 0:
        raise NumericError("all returns in the evaluation range are zero")
    total = 1.0 - float((resid ** 2).sum()) / den

    num_i = (resid ** 2).sum(axis=0)
    den_i = (rets ** 2).sum(axis=0)
    use_i = den_i > 0
    by_asset = 1.0 - float(np.mean(num_i[use_i] / den_i[use_i]))

    num_t = (resid ** 2).sum(axis=1)
    den_t = (rets ** 2).sum(axis=1)
    use_t = den_t > 0
    by_period = 1.0 - float(np.mean(num_t[use_t] / den_t[use_t]))
    return R2Triple(total, by_asset, by_period)


def _fitted_components(panel: Panel, fit: FactorFit):
    phi = design_matrices(fit.spec, panel)
    alpha_mat = phi @ fit.a_hat
    beta_all = phi @ fit.b_hat
    return alpha_mat, beta_all


def r2_insample(panel: Panel, fit: FactorFit) -> R2Suite:
    """In-sample fit of the estimated factor model on its own panel."""
    require(fit.f_hat.shape[0] == panel.n_periods,
            "fit does not cover the panel's periods")
    alpha_mat, beta_all = _fitted_components(panel, fit)
    common_f = np.einsum("tnk,tk->tn", beta_all, fit.f_hat)
    with_alpha = _r2_triple(panel.returns - alpha_mat - common_f, panel.returns)
    without = _r2_triple(panel.returns - common_f, panel.returns)
    return R2Suite(
        r2_total=with_alpha.total, r2_tn=with_alpha.by_asset, r2_nt=with_alpha.by_period,
        r2f_total=without.total, r2f_tn=without.by_asset, r2f_nt=without.by_period,
    )


def _expanding_fits(panel: Panel, spec: SieveSpec, k: int, t0: int):
    """Yield (t, fit on periods < t) for each evaluation period t >= t0."""
    k = positive_int(k, "k")
    t0 = positive_int(t0, "t0")
    require(t0 >= k + 2, f"burn-in t0 = {t0} too small: need t0 >= k + 2 = {k + 2}")
    require(t0 < panel.n_periods,
            f"burn-in t0 = {t0} leaves no evaluation periods (T = {panel.n_periods})")
    for t in range(t0, panel.n_periods):
        try:
            window_fit = fit_factors(first_stage(panel.window(0, t), spec), k)
        except NumericError as err:
            raise NumericError(f"infeasible expanding window ending before period {t}: {err}") from None
        yield t, window_fit


def oos_predict(panel: Panel, spec: SieveSpec, k: int, t0: int) -> R2Triple:
    """Out-of-sample predictive fit using expanding-window estimates.

    The period-t prediction combines the window's fitted functions with the
    window's average factor estimate, evaluated at period-t characteristics.
    """
    preds = np.zeros_like(panel.returns)
    for t, fit_w in _expanding_fits(panel, spec, k, t0):
        phi_t = design_matrix(spec, panel, t)
        lam = fit_w.f_hat.mean(axis=0)
        preds[t] = phi_t @ (fit_w.a_hat + fit_w.b_hat @ lam)
    resid = (panel.returns - preds)[t0:]
    return _r2_triple(resid, panel.returns[t0:])


def oos_factor_fit(panel: Panel, spec: SieveSpec, k: int, t0: int):
    """Realized out-of-sample factors and the fit they deliver.

    For each t >= t0 the realized factor return is the cross-sectional
    regression of intercept-adjusted period-t returns on the window's
    fitted loadings.  Returns (factors with shape (T - t0, k), R2Triple).
    """
    factors = np.empty((panel.n_periods - t0, int(k)))
    resid = np.zeros_like(panel.returns)
    for t, fit_w in _expanding_fits(panel, spec, k, t0):
        phi_t = design_matrix(spec, panel, t)
        alpha_t = phi_t @ fit_w.a_hat
        beta_t = phi_t @ fit_w.b_hat
        # Zero-filled rows drop unobserved assets from both moment sums.
        gram = beta_t.T @ beta_t
        try:
            f_real = np.linalg.solve(gram, beta_t.T @ (panel.returns[t] - alpha_t))
        except np.linalg.LinAlgError:
            raise NumericError(f"singular loading Gram matrix at period {t}") from None
        factors[t - t0] = f_real
        resid[t] = panel.returns[t] - beta_t @ f_real
    return factors, _r2_triple(resid[t0:], panel.returns[t0:])


def _annualize(rets: np.ndarray, periods_per_year: float) -> PortfolioSeries:
    require(rets.size >= 2, "need at least 2 portfolio returns to annualize")
    ann_mean = periods_per_year * float(rets.mean())
    ann_std = math.sqrt(periods_per_year) * float(rets.std(ddof=1))
    sharpe = ann_mean / ann_std if ann_std > 0 else math.nan
    return PortfolioSeries(returns=rets, ann_mean=ann_mean, ann_std=ann_std,
                           sharpe=sharpe, periods_per_year=periods_per_year)


def arbitrage_portfolio(panel: Panel, spec: SieveSpec, k: int, t0: int,
                        periods_per_year: float = 12.0) -> PortfolioSeries:
    """Pure-intercept strategy from expanding-window estimates.

    Period-t weights are the design-matrix rows mapped through the inverse
    Gram onto the window's intercept coefficients, so the realized payoff
    estimates the squared norm of the intercept coefficient vector.
    Assets unobserved at t get zero weight.
    """
    rets = np.empty(panel.n_periods - t0)
    for t, fit_w in _expanding_fits(panel, spec, k, t0):
        phi_t = design_matrix(spec, panel, t)
        gram = phi_t.T @ phi_t
        try:
            omega = phi_t @ np.linalg.solve(gram, fit_w.a_hat)
        except np.linalg.LinAlgError:
            raise NumericError(f"singular design Gram matrix at period {t}") from None
        rets[t - t0] = panel.returns[t] @ omega
    return _annualize(rets, periods_per_year)


def mve_portfolio(factors: np.ndarray, min_history: int | None = None,
                  periods_per_year: float = 12.0) -> PortfolioSeries:
    """Expanding-window mean-variance-efficient combination of factor returns.

    At each step the weights solve the sample-moment mean-variance problem
    on all prior realizations (covariance denominator: count - 1); the
    position is then held for one period.
    """
    factors = np.asarray(factors, dtype=float)
    if factors.ndim == 1:
        factors = factors[:, None]
    n, k = factors.shape
    if min_history is None:
        min_history = k + 2
    require(min_history >= k + 2,
            f"min_history must be at least k + 2 = {k + 2}")
    require(n > min_history,
            f"need more than {min_history} factor observations, got {n}")
    rets = np.empty(n - min_history)
    for tau in range(min_history, n):
        hist = factors[:tau]
        mu = hist.mean(axis=0)
        dev = hist - mu
        cov = dev.T @ dev / (tau - 1)
        try:
            w = np.linalg.solve(cov, mu)
        except np.linalg.LinAlgError:
            raise NumericError(f"singular factor covariance at step {tau}") from None
        rets[tau - min_history] = w @ factors[tau]
    return _annualize(rets, periods_per_year)
