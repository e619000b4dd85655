"""Second-stage (domestic versus imports) estimation on annual series.

Monthly import price indices aggregate to calendar years by a
value-weighted harmonic mean; the domestic-to-import value ratio is then
regressed on the log domestic/import relative price. Unit-root and
cointegration pretests decide whether estimation runs in levels or first
differences. Standard errors are heteroskedasticity-robust only (no
autocorrelation kernel at the annual frequency).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .critical_values import adf_critical_values, engle_granger_critical_values
from .errors import EstimationError, MissingDataError, WeakInstrumentError
from .panel_econometrics import (AggregateSeries, DeltaEstimate, FeEstimate,
                                 IvDiagnostics, _solve_ols, hac_vcov,
                                 iv_diagnostics, ols, tsls, within_transform)
from .periods import Month


@dataclass
class AnnualSeries:
    """Calendar-year inputs to the second-stage regression (logs).

    H is the log domestic-to-import value ratio, R the log domestic
    price, Q the log annualized import price index.
    """

    years: np.ndarray
    H: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    import_value: np.ndarray
    qhat_annual: np.ndarray

    def __post_init__(self):
        diffs = np.diff(self.years)
        if diffs.size and not np.all(diffs == 1):
            raise ValueError("years must be contiguous")


def weighted_harmonic_mean(values: np.ndarray, weights: np.ndarray) -> float:
    """sum(w) / sum(w/v); lies between min(v) and max(v), fixed on constants."""
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if np.any(v <= 0) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("need positive values and nonnegative weights")
    return float(w.sum() / (w / v).sum())


def annualize(aggregates: AggregateSeries,
              monthly_weights: dict[Month, float],
              domestic_years: np.ndarray,
              domestic_price: np.ndarray,
              domestic_quantity: np.ndarray) -> AnnualSeries:
    """Aggregate monthly indices to years and build the annual regression data.

    The annual index is the import-value-weighted harmonic mean of the
    monthly index. Every domestic year must have all 12 months of index
    and weight data; gaps are an error.
    """
    q_by_month = dict(zip(aggregates.periods, aggregates.q))
    years = np.asarray(domestic_years, dtype=int)
    gaps: list[str] = []
    qhat = np.empty(years.size)
    totals = np.empty(years.size)
    for k, year in enumerate(years):
        months = [Month(int(year), mm) for mm in range(1, 13)]
        missing = [str(m) for m in months
                   if m not in q_by_month or m not in monthly_weights]
        if missing:
            gaps.extend(missing)
            continue
        w = np.array([monthly_weights[m] for m in months])
        q = np.array([q_by_month[m] for m in months])
        qhat[k] = weighted_harmonic_mean(q, w)
        totals[k] = w.sum()
    if gaps:
        raise MissingDataError(f"missing months for annualization: {gaps}")
    r = np.asarray(domestic_price, dtype=float)
    z = np.asarray(domestic_quantity, dtype=float)
    if np.any(r <= 0) or np.any(z <= 0):
        raise ValueError("domestic prices and quantities must be positive")
    h = r * z / totals
    return AnnualSeries(years=years, H=np.log(h), R=np.log(r),
                        Q=np.log(qhat), import_value=totals, qhat_annual=qhat)


# ---------------------------------------------------------------------------
# pretests

@dataclass
class AdfResult:
    """Dickey-Fuller regression t-statistic with finite-sample critical values."""

    statistic: float
    lags: int
    nobs: int
    trend: str
    critical_values: dict[float, float]

    def rejects_unit_root(self, level: float = 0.05) -> bool:
        return self.statistic < self.critical_values[level]


def _dickey_fuller_design(y: np.ndarray, lags: int, trend: str,
                          trim: int) -> tuple[np.ndarray, np.ndarray]:
    """Regressand/regressors of the ADF regression, trimming ``trim`` rows.

    Column 0 is the lagged level; its t-statistic is the test statistic.
    """
    dy = np.diff(y)
    rows = dy.size - trim
    dep = dy[trim:]
    cols = [y[trim:-1]]
    for j in range(1, lags + 1):
        cols.append(dy[trim - j:-j])
    if trend in ("c", "ct"):
        cols.append(np.ones(rows))
    if trend == "ct":
        cols.append(np.arange(rows, dtype=float))
    return dep, np.column_stack(cols)


def _ols_tstat(dep: np.ndarray, X: np.ndarray) -> tuple[float, float]:
    """Classical t statistic on column 0, plus the regression AIC."""
    names = [f"x{j}" for j in range(X.shape[1])]
    beta = _solve_ols(X, dep, names)
    resid = dep - X @ beta
    n, k = X.shape
    ssr = float(resid @ resid)
    if n <= k:
        raise EstimationError("too few observations for the test regression")
    sigma2 = ssr / (n - k)
    xtx_inv = np.linalg.inv(X.T @ X)
    if ssr <= 0 or sigma2 * xtx_inv[0, 0] <= 0:
        return -math.inf, -math.inf
    tstat = beta[0] / math.sqrt(sigma2 * xtx_inv[0, 0])
    aic = n * math.log(ssr / n) + 2 * k
    return float(tstat), aic


def adf_test(series: np.ndarray, trend: str = "c",
             lags: int | None = None, max_lags: int = 4) -> AdfResult:
    """Augmented Dickey-Fuller test; the null is a unit root.

    With ``lags=None`` the augmentation order is chosen by AIC over
    0..``max_lags`` on a common sample, then the statistic is computed on
    the longest sample the chosen order allows.
    """
    y = np.asarray(series, dtype=float)
    probe = max_lags if lags is None else lags
    if y.size < probe + 10:
        raise EstimationError(
            f"series too short for ADF with {probe} lags: {y.size}")
    if lags is None:
        best = (math.inf, 0)
        for p in range(0, max_lags + 1):
            dep_p, X_p = _dickey_fuller_design(y, p, trend, max_lags)
            _, aic = _ols_tstat(dep_p, X_p)
            if aic < best[0]:
                best = (aic, p)
        lags = best[1]
    dep, X = _dickey_fuller_design(y, lags, trend, lags)
    stat, _ = _ols_tstat(dep, X)
    nobs = dep.size
    return AdfResult(statistic=stat, lags=lags, nobs=nobs, trend=trend,
                     critical_values=adf_critical_values(nobs, trend))


@dataclass
class EngleGrangerResult:
    """Residual-based cointegration test; the null is no cointegration."""

    statistic: float
    nobs: int
    critical_values: dict[float, float]
    slope: float
    intercept: float

    def cointegrated(self, level: float = 0.05) -> bool:
        return self.statistic < self.critical_values[level]


def engle_granger(y: np.ndarray, x: np.ndarray, max_lags: int = 4,
                  ) -> EngleGrangerResult:
    """Two-step cointegration test: static regression, then ADF on residuals.

    The residual regression carries no deterministic terms; critical
    values are the two-variable cointegration surface. Identical series
    give a degenerate residual and count as the strongest possible
    rejection of no cointegration.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.shape != x.shape:
        raise ValueError("series must have equal length")
    X = np.column_stack([np.ones(y.size), x])
    coef = _solve_ols(X, y, ["const", "x"])
    resid = y - X @ coef
    scale = max(float(np.abs(y).max()), 1.0)
    if float(np.abs(resid).max()) < 1e-12 * scale:
        return EngleGrangerResult(
            statistic=-math.inf, nobs=y.size,
            critical_values=engle_granger_critical_values(y.size),
            slope=float(coef[1]), intercept=float(coef[0]))
    adf = adf_test(resid, trend="nc", max_lags=max_lags)
    return EngleGrangerResult(
        statistic=adf.statistic, nobs=adf.nobs,
        critical_values=engle_granger_critical_values(adf.nobs),
        slope=float(coef[1]), intercept=float(coef[0]))


LEVELS_SPEC = "levels"
DIFFERENCES_SPEC = "first_differences"


@dataclass
class SpecSelection:
    mode: str
    reasons: list[str] = field(default_factory=list)


def select_spec(dep_levels: AdfResult, dep_diffs: AdfResult,
                reg_levels: AdfResult, reg_diffs: AdfResult,
                eg: EngleGrangerResult | None,
                level: float = 0.05) -> SpecSelection:
    """Map pretest outcomes to a levels or first-differences specification.

    Stationary levels -> levels; I(1) with cointegration -> levels; I(1)
    without cointegration -> first differences. Anything unclear warns
    and defaults to first differences.
    """
    dep_stat = dep_levels.rejects_unit_root(level)
    reg_stat = reg_levels.rejects_unit_root(level)
    if dep_stat and reg_stat:
        return SpecSelection(LEVELS_SPEC, ["both variables stationary in levels"])
    both_i1 = (not dep_stat and not reg_stat
               and dep_diffs.rejects_unit_root(level)
               and reg_diffs.rejects_unit_root(level))
    if both_i1:
        if eg is not None and eg.cointegrated(level):
            return SpecSelection(LEVELS_SPEC, ["I(1) variables, cointegrated"])
        return SpecSelection(DIFFERENCES_SPEC,
                             ["I(1) variables, no cointegration"])
    warnings.warn("conflicting stationarity pretests; defaulting to first "
                  "differences", stacklevel=2)
    return SpecSelection(DIFFERENCES_SPEC, ["conflicting pretests (default)"])


# ---------------------------------------------------------------------------
# second-stage estimation

@dataclass
class SecondStageResult:
    """Macro-substitution estimates with the estimator-selection audit trail."""

    mode: str
    ls: FeEstimate
    iv: FeEstimate | None
    diagnostics: IvDiagnostics | None
    chosen: str
    eta: DeltaEstimate
    rho: DeltaEstimate
    beta: DeltaEstimate | None
    nobs: int
    iv_weak: bool = False
    notes: list[str] = field(default_factory=list)


def estimate_second(annual: AnnualSeries, mode: str,
                    alpha: float = 0.05,
                    weak_f_floor: float = 10.0,
                    min_obs: int = 10) -> SecondStageResult:
    """Estimate the domestic-import substitution equation.

    Both least squares and the instrumented fit are computed; the
    endogeneity test picks the one carried into the elasticity transform
    (IV is suppressed entirely when the weak-identification statistic
    falls below ``weak_f_floor``). The instruments are the annualized
    import index in logs and levels (first differences thereof in the
    differenced specification). The domestic preference weight is only
    identified in levels, where the intercept has a structural meaning.
    """
    if mode == LEVELS_SPEC:
        dep = annual.H
        reg = annual.R - annual.Q
        Z = np.column_stack([annual.Q, np.exp(annual.Q)])
    elif mode == DIFFERENCES_SPEC:
        dep = np.diff(annual.H)
        reg = np.diff(annual.R - annual.Q)
        Z = np.column_stack([np.diff(annual.Q), np.diff(np.exp(annual.Q))])
    else:
        raise ValueError(f"unknown specification {mode!r}")
    n = dep.size
    if n < min_obs:
        raise EstimationError(f"need at least {min_obs} annual observations, have {n}")

    names = ["lnrq", "const"]
    const = np.ones(n)
    X = np.column_stack([reg, const])
    fit_ls = ols(dep, X, names)
    hac_vcov(fit_ls, bandwidth=1)

    notes: list[str] = []
    fit_iv = None
    diag = None
    iv_weak = False
    chosen = "LS"
    try:
        fit_iv = tsls(dep, reg.reshape(-1, 1), const.reshape(-1, 1), Z, names)
    except WeakInstrumentError as err:
        iv_weak = True
        notes.append(f"instruments unusable ({err}); IV suppressed, run the "
                     "feedback-channel regression")
    if fit_iv is not None:
        hac_vcov(fit_iv, bandwidth=1)
        diag = iv_diagnostics(fit_iv, bandwidth=1)
        iv_weak = diag.kp_wald_f.statistic < weak_f_floor
        if iv_weak:
            notes.append(
                f"weak identification: KP Wald F {diag.kp_wald_f.statistic:.3f} "
                f"below floor {weak_f_floor:g}; IV suppressed, run the "
                "feedback-channel regression")
        elif (diag.endogeneity.p_value is not None
              and diag.endogeneity.p_value < alpha):
            chosen = "IV"

    fit = fit_iv if chosen == "IV" else fit_ls
    eta = DeltaEstimate(estimate=fit.param("lnrq"), se=fit.se("lnrq"))
    rho = DeltaEstimate(estimate=1.0 - eta.estimate, se=eta.se)
    beta = None
    if mode == LEVELS_SPEC:
        phi = fit.param("const")
        se_phi = fit.se("const")
        b = 1.0 / (1.0 + math.exp(-phi))
        beta = DeltaEstimate(estimate=b, se=b * (1.0 - b) * se_phi)
    return SecondStageResult(
        mode=mode, ls=fit_ls, iv=None if iv_weak else fit_iv,
        diagnostics=diag, chosen=chosen, eta=eta, rho=rho, beta=beta,
        nobs=n, iv_weak=iv_weak, notes=notes)


# ---------------------------------------------------------------------------
# feedback-channel regression

@dataclass
class ChannelTestResult:
    """Zero-slope test deciding whether an endogeneity channel is present."""

    slope: float
    se: float
    p_value: float
    df: int
    channel_present: bool
    intercept: float | None = None
    intercept_se: float | None = None
    intercept_p: float | None = None


def channel_test(dependent: np.ndarray, regressor: np.ndarray, mode: str,
                 entities: np.ndarray | None = None,
                 alpha: float = 0.05) -> ChannelTestResult:
    """Simple regression probing the feedback channel between two price parts.

    ``fe`` mode demeans both variables within entities; ``diff`` mode
    first-differences them and fits an intercept. Standard errors are
    classical (the one regression in the protocol reported without
    robustness), with t-distribution p-values on the residual degrees of
    freedom.
    """
    y = np.asarray(dependent, dtype=float)
    x = np.asarray(regressor, dtype=float)
    keep = np.isfinite(y) & np.isfinite(x)
    y, x = y[keep], x[keep]
    if mode == "fe":
        if entities is None:
            raise ValueError("fe mode requires entity codes")
        ent = np.asarray(entities)[keep]
        n_groups = np.unique(ent).size
        yd = within_transform(y.reshape(-1, 1), ent)[:, 0]
        xd = within_transform(x.reshape(-1, 1), ent)[:, 0]
        X = xd.reshape(-1, 1)
        dep = yd
        df = y.size - n_groups - 1
        names = ["slope"]
    elif mode == "diff":
        dy = np.diff(y)
        dx = np.diff(x)
        X = np.column_stack([dx, np.ones(dx.size)])
        dep = dy
        df = dy.size - 2
        names = ["slope", "const"]
    else:
        raise ValueError(f"unknown channel test mode {mode!r}")
    if df < 1:
        raise EstimationError("not enough observations for the channel test")
    beta = _solve_ols(X, dep, names)
    resid = dep - X @ beta
    sigma2 = float(resid @ resid) / df
    cov = sigma2 * np.linalg.inv(X.T @ X)
    se = math.sqrt(cov[0, 0])
    p = 2.0 * float(stats.t.sf(abs(beta[0] / se), df)) if se > 0 else 0.0
    result = ChannelTestResult(slope=float(beta[0]), se=se, p_value=p, df=df,
                               channel_present=p < alpha)
    if mode == "diff":
        se_c = math.sqrt(cov[1, 1])
        result.intercept = float(beta[1])
        result.intercept_se = se_c
        result.intercept_p = (2.0 * float(stats.t.sf(abs(beta[1] / se_c), df))
                              if se_c > 0 else 0.0)
    return result
