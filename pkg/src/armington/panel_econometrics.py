"""Fixed-effects panel estimation with time dummies and HAC inference.

The within estimator removes entity effects by demeaning and is
algebraically identical to least squares on entity dummies. Two-stage
least squares runs on the within-transformed data with the excluded
instruments demeaned the same way. Covariances use a Bartlett-kernel
(Newey-West) estimator applied within entities only: a bandwidth of b
weights lag j by 1 - j/b for j = 0..b-1, so bandwidth 1 is the
heteroskedasticity-robust special case.

Alongside the slope on log price, the fit carries every time-dummy
coefficient (base period = last period); those differences, divided by
the price coefficient, exponentiate into the import price-index series,
with delta-method standard errors from the joint HAC covariance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import stats

from .errors import (CollinearityError, EstimationError, WeakInstrumentError)
from .periods import Month
from .trade_data import PanelDataset

LS = "LS"
IV = "IV"


# ---------------------------------------------------------------------------
# linear algebra primitives

def _solve_ols(X: np.ndarray, y: np.ndarray, names: list[str]) -> np.ndarray:
    """Least-squares coefficients with an explicit rank diagnosis.

    Tries normal equations first (the designs here are well conditioned);
    on Cholesky failure falls back to a pivoted QR that raises
    ``CollinearityError`` naming the redundant columns.
    """
    n, k = X.shape
    if n >= k:
        gram = X.T @ X
        try:
            chol = scipy.linalg.cho_factor(gram, check_finite=False)
            # factor diag ~ sqrt(pivot): ratios under sqrt(eps) mean the
            # normal equations cannot certify full rank; use the QR path
            diag = np.diag(chol[0])
            if diag.min() > 1e-7 * max(diag.max(), 1e-300):
                return scipy.linalg.cho_solve(chol, X.T @ y, check_finite=False)
        except scipy.linalg.LinAlgError:
            pass
    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(n, k) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < k:
        raise CollinearityError([names[j] for j in piv[rank:]])
    beta_piv = scipy.linalg.solve_triangular(R, Q.T @ y)
    beta = np.empty_like(beta_piv)
    beta[piv] = beta_piv
    return beta


def within_transform(M: np.ndarray, entities: np.ndarray) -> np.ndarray:
    """Subtract entity means from every column of ``M``."""
    M = np.atleast_2d(M.T).T if M.ndim == 1 else M
    codes, inverse = np.unique(entities, return_inverse=True)
    counts = np.bincount(inverse).astype(float)
    sums = np.zeros((codes.size, M.shape[1]))
    np.add.at(sums, inverse, M)
    return M - (sums / counts[:, None])[inverse]


def time_dummies(times: np.ndarray, base: int | None = None,
                 ) -> tuple[np.ndarray, list[int]]:
    """Dummy matrix for every period except the base (default: last).

    Returns the matrix and the list of period codes matching its columns.
    """
    levels = np.unique(times)
    if base is None:
        base = int(levels[-1])
    keep = [int(t) for t in levels if t != base]
    D = np.zeros((times.size, len(keep)))
    for j, t in enumerate(keep):
        D[times == t, j] = 1.0
    return D, keep


# ---------------------------------------------------------------------------
# estimates

@dataclass
class FeEstimate:
    """Coefficients of a within (FE) fit, plus the arrays inference needs.

    ``params``/``names`` hold the price coefficient first, then the
    time-dummy coefficients (differences against the base period). The
    base-period intercept is recovered from grand means. ``cov`` is
    filled in by :func:`hac_vcov`.
    """

    params: np.ndarray
    names: list[str]
    resid: np.ndarray
    nobs: int
    estimator: str
    entities: np.ndarray
    times: np.ndarray
    design: np.ndarray                 # transformed regressors, fit order
    intercept: float = 0.0
    cov: np.ndarray | None = None
    bread: np.ndarray | None = None    # inverse of X'X (or Xhat'Xhat)
    scores_base: np.ndarray | None = None  # rows whose outer products feed HAC
    ydd: np.ndarray | None = None      # transformed dependent variable
    endog: np.ndarray | None = None    # transformed endogenous regressors
    exog: np.ndarray | None = None     # transformed included exogenous
    zexcl: np.ndarray | None = None    # transformed excluded instruments

    def param(self, name: str) -> float:
        return float(self.params[self.names.index(name)])

    def se(self, name: str) -> float:
        if self.cov is None:
            raise EstimationError("covariance not computed; call hac_vcov first")
        j = self.names.index(name)
        return math.sqrt(max(self.cov[j, j], 0.0))


def _check_entity_sizes(entities: np.ndarray) -> None:
    _, counts = np.unique(entities, return_counts=True)
    if counts.min() < 2:
        raise EstimationError("every entity needs at least 2 observations "
                              "for the within transformation")


def within_fe_ls(y: np.ndarray, X: np.ndarray, names: list[str],
                 entities: np.ndarray, times: np.ndarray) -> FeEstimate:
    """Within (entity-demeaned) least squares.

    Identical to least squares with entity dummies; the grand intercept is
    recovered as ybar - xbar' beta.
    """
    _check_entity_sizes(entities)
    yd = within_transform(y.reshape(-1, 1), entities)[:, 0]
    Xd = within_transform(X, entities)
    beta = _solve_ols(Xd, yd, names)
    resid = yd - Xd @ beta
    intercept = float(y.mean() - X.mean(axis=0) @ beta)
    return FeEstimate(
        params=beta, names=list(names), resid=resid, nobs=y.size,
        estimator=LS, entities=entities.copy(), times=times.copy(),
        design=Xd, intercept=intercept,
        bread=np.linalg.inv(Xd.T @ Xd), scores_base=Xd, ydd=yd,
        endog=np.empty((y.size, 0)), exog=Xd, zexcl=np.empty((y.size, 0)))


def within_fe_2sls(y: np.ndarray, x_endog: np.ndarray, X_exog: np.ndarray,
                   Z_excl: np.ndarray, names: list[str],
                   entities: np.ndarray, times: np.ndarray) -> FeEstimate:
    """Within 2SLS: endogenous columns first in ``names``.

    The instrument set is the demeaned excluded instruments plus the
    demeaned included exogenous regressors. With the endogenous columns
    instrumenting themselves this reduces to :func:`within_fe_ls`.
    """
    if Z_excl.ndim == 1:
        Z_excl = Z_excl.reshape(-1, 1)
    if x_endog.ndim == 1:
        x_endog = x_endog.reshape(-1, 1)
    if Z_excl.shape[1] < x_endog.shape[1]:
        raise WeakInstrumentError(
            f"{Z_excl.shape[1]} instruments cannot identify "
            f"{x_endog.shape[1]} endogenous regressors")
    _check_entity_sizes(entities)
    yd = within_transform(y.reshape(-1, 1), entities)[:, 0]
    Xend = within_transform(x_endog, entities)
    Xex = within_transform(X_exog, entities)
    Zd = within_transform(Z_excl, entities)

    Zfull = np.hstack([Zd, Xex])
    znames = [f"z{j}" for j in range(Zd.shape[1])] + [f"w{j}" for j in range(Xex.shape[1])]
    try:
        first = _solve_ols(Zfull, Xend, znames)
    except CollinearityError as err:
        raise WeakInstrumentError(
            f"first-stage design rank deficient: {err.columns}") from err
    fitted = Zfull @ first
    Xhat = np.hstack([fitted, Xex])
    X = np.hstack([Xend, Xex])
    try:
        beta = _solve_ols(Xhat, yd, names)
    except CollinearityError as err:
        raise WeakInstrumentError(
            "projected endogenous regressors are collinear with the "
            f"exogenous block: {err.columns}") from err
    resid = yd - X @ beta
    intercept = float(y.mean() - np.hstack([x_endog, X_exog]).mean(axis=0) @ beta)
    return FeEstimate(
        params=beta, names=list(names), resid=resid, nobs=y.size,
        estimator=IV, entities=entities.copy(), times=times.copy(),
        design=X, intercept=intercept,
        bread=np.linalg.inv(Xhat.T @ Xhat), scores_base=Xhat, ydd=yd,
        endog=Xend, exog=Xex, zexcl=Zd)


def _default_codes(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.zeros(n, dtype=int), np.arange(n)


def ols(y: np.ndarray, X: np.ndarray, names: list[str],
        entities: np.ndarray | None = None,
        times: np.ndarray | None = None) -> FeEstimate:
    """Plain least squares (no demeaning); include a constant column in X."""
    ent, tim = _default_codes(y.size)
    if entities is not None:
        ent = entities
    if times is not None:
        tim = times
    beta = _solve_ols(X, y, names)
    resid = y - X @ beta
    return FeEstimate(
        params=beta, names=list(names), resid=resid, nobs=y.size,
        estimator=LS, entities=ent, times=tim, design=X,
        bread=np.linalg.inv(X.T @ X), scores_base=X, ydd=y,
        endog=np.empty((y.size, 0)), exog=X, zexcl=np.empty((y.size, 0)))


def tsls(y: np.ndarray, x_endog: np.ndarray, X_exog: np.ndarray,
         Z_excl: np.ndarray, names: list[str],
         entities: np.ndarray | None = None,
         times: np.ndarray | None = None) -> FeEstimate:
    """Plain 2SLS (no demeaning); endogenous columns first in ``names``."""
    if x_endog.ndim == 1:
        x_endog = x_endog.reshape(-1, 1)
    if Z_excl.ndim == 1:
        Z_excl = Z_excl.reshape(-1, 1)
    if Z_excl.shape[1] < x_endog.shape[1]:
        raise WeakInstrumentError(
            f"{Z_excl.shape[1]} instruments cannot identify "
            f"{x_endog.shape[1]} endogenous regressors")
    ent, tim = _default_codes(y.size)
    if entities is not None:
        ent = entities
    if times is not None:
        tim = times
    Zfull = np.hstack([Z_excl, X_exog])
    znames = [f"z{j}" for j in range(Zfull.shape[1])]
    try:
        first = _solve_ols(Zfull, x_endog, znames)
    except CollinearityError as err:
        raise WeakInstrumentError(
            f"first-stage design rank deficient: {err.columns}") from err
    Xhat = np.hstack([Zfull @ first, X_exog])
    X = np.hstack([x_endog, X_exog])
    try:
        beta = _solve_ols(Xhat, y, names)
    except CollinearityError as err:
        raise WeakInstrumentError(
            "projected endogenous regressors are collinear with the "
            f"exogenous block: {err.columns}") from err
    resid = y - X @ beta
    return FeEstimate(
        params=beta, names=list(names), resid=resid, nobs=y.size,
        estimator=IV, entities=ent, times=tim, design=X,
        bread=np.linalg.inv(Xhat.T @ Xhat), scores_base=Xhat, ydd=y,
        endog=x_endog, exog=X_exog, zexcl=Z_excl)


# ---------------------------------------------------------------------------
# HAC covariance

def bartlett_weights(bandwidth: int) -> np.ndarray:
    """Kernel weights 1 - j/b for lags j = 0..b-1, strictly decreasing."""
    if bandwidth < 1:
        raise ValueError("bandwidth must be >= 1")
    j = np.arange(bandwidth)
    return 1.0 - j / bandwidth


def hac_score_cov(scores: np.ndarray, entities: np.ndarray, times: np.ndarray,
                  bandwidth: int) -> np.ndarray:
    """Kernel-weighted sum of score outer products, within entities only.

    ``scores`` rows are per-observation moment contributions (regressor
    times residual). Lags count positions within an entity's time-ordered
    observations.
    """
    w = bartlett_weights(bandwidth)
    order = np.lexsort((times, entities))
    g = scores[order]
    ent = np.asarray(entities)[order]
    k = g.shape[1]
    S = np.zeros((k, k))
    starts = np.flatnonzero(np.r_[True, ent[1:] != ent[:-1]])
    bounds = np.r_[starts, ent.size]
    longest = int(np.max(np.diff(bounds)))
    if bandwidth > longest:
        warnings.warn(
            f"HAC bandwidth {bandwidth} exceeds longest entity series "
            f"({longest}); extra lags are vacuous", stacklevel=2)
    for a, b in zip(bounds[:-1], bounds[1:]):
        block = g[a:b]
        S += block.T @ block
        for j in range(1, min(bandwidth, block.shape[0])):
            gamma = block[j:].T @ block[:-j]
            S += w[j] * (gamma + gamma.T)
    return S


def _floor_psd(S: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((S + S.T) / 2.0)
    if vals.min() < -1e-10 * max(vals.max(), 1.0):
        warnings.warn("HAC covariance not PSD; flooring negative eigenvalues",
                      stacklevel=3)
    if vals.min() < 0:
        vals = np.clip(vals, 0.0, None)
        S = (vecs * vals) @ vecs.T
    return S


def hac_vcov(fit: FeEstimate, bandwidth: int = 5) -> np.ndarray:
    """Sandwich covariance with a within-entity Bartlett kernel.

    Stores the matrix on ``fit.cov`` and returns it. The meat uses the
    projected regressors for IV fits and the raw design for LS.
    """
    scores = fit.scores_base * fit.resid[:, None]
    S = hac_score_cov(scores, fit.entities, fit.times, bandwidth)
    S = _floor_psd(S)
    cov = fit.bread @ S @ fit.bread
    fit.cov = (cov + cov.T) / 2.0
    return fit.cov


# ---------------------------------------------------------------------------
# instrument diagnostics

@dataclass
class TestStat:
    statistic: float
    p_value: float | None
    df: int | None = None


@dataclass
class IvDiagnostics:
    """The four instrument tests reported with every 2SLS fit.

    Hansen J is identically zero (p-value not applicable) when the model
    is exactly identified.
    """

    kp_lm: TestStat
    kp_wald_f: TestStat
    hansen_j: TestStat
    endogeneity: TestStat


def _partial_out(W: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Residuals of each column of M on W (no intercept; W already centered)."""
    if W.shape[1] == 0:
        return M.copy()
    coef, *_ = np.linalg.lstsq(W, M, rcond=None)
    return M - W @ coef


def _gmm_j(Z: np.ndarray, x: np.ndarray, y: np.ndarray, S: np.ndarray,
           ) -> tuple[float, np.ndarray]:
    """Efficient-GMM criterion for moments Z'(y - x beta) with weight S^-1."""
    Sinv = np.linalg.pinv(S)
    A = x.T @ Z
    beta = np.linalg.solve(A @ Sinv @ A.T, A @ Sinv @ (Z.T @ y))
    gbar = Z.T @ (y - x @ beta)
    return float(gbar @ Sinv @ gbar), beta


def iv_diagnostics(fit: FeEstimate, bandwidth: int = 5) -> IvDiagnostics:
    """Underidentification, weak identification, overidentification, and
    endogeneity tests for a single-endogenous-regressor 2SLS fit.

    All four use the same within-entity kernel weighting as the fit's
    covariance. Implemented for one endogenous regressor (the only case
    this pipeline produces).
    """
    if fit.estimator != IV:
        raise EstimationError("diagnostics require an IV fit")
    if fit.endog is None or fit.endog.shape[1] != 1:
        raise NotImplementedError("diagnostics implemented for exactly one "
                                  "endogenous regressor")
    ent, tim = fit.entities, fit.times
    y = _partial_out(fit.exog, fit.ydd.reshape(-1, 1))[:, 0]
    x = _partial_out(fit.exog, fit.endog)[:, 0]
    Z = _partial_out(fit.exog, fit.zexcl)
    L = Z.shape[1]

    # underidentification: score test of zero first-stage coefficients
    m = Z.T @ x
    S0 = _floor_psd(hac_score_cov(Z * x[:, None], ent, tim, bandwidth))
    lm = float(m @ np.linalg.pinv(S0) @ m)
    kp_lm = TestStat(lm, float(stats.chi2.sf(lm, L)), L)

    # weak identification: Wald form with first-stage residual scores
    ZtZ = Z.T @ Z
    pi = np.linalg.solve(ZtZ, Z.T @ x)
    v = x - Z @ pi
    Spi = _floor_psd(hac_score_cov(Z * v[:, None], ent, tim, bandwidth))
    Vpi = np.linalg.inv(ZtZ) @ Spi @ np.linalg.inv(ZtZ)
    wald = float(pi @ np.linalg.solve(Vpi, pi))
    kp_wald_f = TestStat(wald / L, None, L)

    # overidentification: efficient-GMM J at kernel-weighted optimum
    x2 = x.reshape(-1, 1)
    beta_2sls = np.linalg.lstsq(Z @ pi.reshape(-1, 1), y, rcond=None)[0].item()
    e_2sls = y - beta_2sls * x
    if L == 1:
        hansen = TestStat(0.0, None, 0)
    else:
        Sz = _floor_psd(hac_score_cov(Z * e_2sls[:, None], ent, tim, bandwidth))
        j_stat, _ = _gmm_j(Z, x2, y, Sz)
        hansen = TestStat(j_stat, float(stats.chi2.sf(j_stat, L - 1)), L - 1)

    # endogeneity: difference of J statistics, common covariance estimate
    Zf = np.hstack([Z, x2])
    ef = y - x * np.linalg.lstsq(x2, y, rcond=None)[0].item()
    Sf = _floor_psd(hac_score_cov(Zf * ef[:, None], ent, tim, bandwidth))
    j_full, _ = _gmm_j(Zf, x2, y, Sf)
    j_sub, _ = _gmm_j(Z, x2, y, Sf[:L, :L])
    c_stat = max(j_full - j_sub, 0.0)
    endog = TestStat(c_stat, float(stats.chi2.sf(c_stat, 1)), 1)

    return IvDiagnostics(kp_lm=kp_lm, kp_wald_f=kp_wald_f, hansen_j=hansen,
                         endogeneity=endog)


# ---------------------------------------------------------------------------
# derived quantities

@dataclass
class DeltaEstimate:
    estimate: float
    se: float


def delta_sigma(fit: FeEstimate, price_name: str = "lnp") -> DeltaEstimate:
    """Substitution elasticity from the price coefficient: 1 minus slope.

    An affine map, so the standard error carries over unchanged.
    """
    gamma = fit.param(price_name)
    return DeltaEstimate(estimate=1.0 - gamma, se=fit.se(price_name))


@dataclass
class AggregateSeries:
    """Retrieved price-index series, standardized to 1 at the base period."""

    periods: list[Month]
    q: np.ndarray
    se: np.ndarray
    base: Month

    def __post_init__(self):
        if np.any(self.q <= 0):
            raise ValueError("price index must be positive")


def recover_aggregates(fit: FeEstimate, price_name: str = "lnp",
                       dummy_prefix: str = "d:") -> AggregateSeries:
    """Price-index levels exp(-(mu_t - mu_base)/gamma) from dummy coefficients.

    Delta-method standard errors use the joint HAC covariance of each
    dummy coefficient with the price slope; the base period is exactly 1
    with zero standard error.
    """
    if fit.cov is None:
        raise EstimationError("covariance not computed; call hac_vcov first")
    gamma = fit.param(price_name)
    if gamma == 0.0:
        raise EstimationError("price coefficient is zero; aggregates undefined")
    gi = fit.names.index(price_name)
    var_g = fit.cov[gi, gi]

    periods: list[Month] = []
    qs: list[float] = []
    ses: list[float] = []
    dummy_months = []
    for j, name in enumerate(fit.names):
        if not name.startswith(dummy_prefix):
            continue
        month = Month.parse(name[len(dummy_prefix):])
        d = fit.params[j]
        q = math.exp(-d / gamma)
        grad = np.array([-q / gamma, q * d / gamma ** 2])
        sub = np.array([[fit.cov[j, j], fit.cov[j, gi]],
                        [fit.cov[gi, j], var_g]])
        var = float(grad @ sub @ grad)
        dummy_months.append((month, q, math.sqrt(max(var, 0.0))))
    base = Month.from_index(int(np.max(fit.times)))
    dummy_months.append((base, 1.0, 0.0))
    dummy_months.sort(key=lambda rec: rec[0])
    for month, q, se in dummy_months:
        periods.append(month)
        qs.append(q)
        ses.append(se)
    return AggregateSeries(periods=periods, q=np.array(qs), se=np.array(ses),
                           base=base)


# ---------------------------------------------------------------------------
# panel-level interface

@dataclass
class PanelArrays:
    """Numeric views of a panel dataset in a fixed row order."""

    S: np.ndarray
    P: np.ndarray
    C: np.ndarray
    E: np.ndarray
    entities: np.ndarray       # integer codes
    times: np.ndarray          # month indices
    entity_labels: list[str]
    months: list[Month]


def panel_arrays(panel: PanelDataset) -> PanelArrays:
    obs = panel.observations
    labels = sorted({o.country for o in obs})
    label_code = {c: i for i, c in enumerate(labels)}
    months = sorted({o.period for o in obs})
    return PanelArrays(
        S=np.array([o.S for o in obs]),
        P=np.array([o.P for o in obs]),
        C=np.array([o.C for o in obs]),
        E=np.array([o.E for o in obs]),
        entities=np.array([label_code[o.country] for o in obs]),
        times=np.array([o.period.index for o in obs]),
        entity_labels=labels,
        months=months)


def build_instruments(panel: PanelDataset, mode: str = "jfy_mean") -> np.ndarray:
    """Instrument set: log exchange rate plus a cumulated transform of it.

    ``jfy_mean`` (default) pairs E with the log of the running within-JFY
    mean of the rate; ``jfy_sum`` uses the running within-JFY sum;
    ``rolling12`` uses a trailing 12-month mean; ``none`` returns the
    exchange rate alone (exactly identified). Rows lacking any rate in
    the window come out NaN and are dropped from instrumented fits.
    """
    obs = panel.observations
    if mode == "none":
        return np.array([o.E for o in obs]).reshape(-1, 1)
    cum = np.full(len(obs), np.nan)
    state: dict[tuple[str, int], list[float]] = {}
    rolling: dict[str, list[float]] = {}
    for idx, o in enumerate(obs):  # observations sorted by (country, period)
        rate = math.exp(o.E) if math.isfinite(o.E) else None
        if mode in ("jfy_mean", "jfy_sum"):
            key = (o.country, o.period.jfy)
            bucket = state.setdefault(key, [])
            if rate is not None:
                bucket.append(rate)
            if bucket:
                agg = sum(bucket) / (len(bucket) if mode == "jfy_mean" else 1.0)
                cum[idx] = math.log(agg)
        elif mode == "rolling12":
            window = rolling.setdefault(o.country, [])
            if rate is not None:
                window.append(rate)
                del window[:-12]
            if window:
                cum[idx] = math.log(sum(window) / len(window))
        else:
            raise ValueError(f"unknown instrument mode {mode!r}")
    E = np.array([o.E for o in obs])
    return np.column_stack([E, cum])


@dataclass
class FirstStageFit:
    """Everything the report needs from one meat's first-stage estimation."""

    meat: str
    ls: FeEstimate
    iv: FeEstimate | None
    diagnostics: IvDiagnostics | None
    chosen: str
    delta: DeltaEstimate
    aggregates: AggregateSeries | None
    nobs_ls: int
    nobs_iv: int | None
    instrument_names: list[str]
    iv_weak: bool = False
    notes: list[str] = field(default_factory=list)


def _fit_design(arr: PanelArrays, keep: np.ndarray):
    S = arr.S[keep]
    P = arr.P[keep]
    ent = arr.entities[keep]
    tim = arr.times[keep]
    D, dummy_codes = time_dummies(tim)
    names = ["lnp"] + [f"d:{Month.from_index(c)}" for c in dummy_codes]
    return S, P, ent, tim, D, names


def estimate_first_stage(panel: PanelDataset, bandwidth: int = 5,
                         instrument_mode: str = "jfy_mean",
                         weak_f_floor: float = 10.0,
                         alpha: float = 0.05) -> FirstStageFit:
    """Run FE least squares and FE 2SLS on one meat panel.

    Least squares uses every observation; the instrumented fit drops rows
    with unavailable instruments (both counts are reported). The
    endogeneity test picks the estimate carried into the elasticity
    transform, unless the weak-identification statistic falls below
    ``weak_f_floor``, in which case the IV route is suppressed and the
    caller should run the feedback-channel regression instead.
    """
    arr = panel_arrays(panel)
    Zall = build_instruments(panel, instrument_mode)

    keep_ls = np.ones(arr.S.size, dtype=bool)
    S, P, ent, tim, D, names = _fit_design(arr, keep_ls)
    ls = within_fe_ls(S, np.column_stack([P, D]), names, ent, tim)
    hac_vcov(ls, bandwidth)

    keep_iv = np.all(np.isfinite(Zall), axis=1)
    notes: list[str] = []
    iv = None
    diag = None
    nobs_iv = None
    iv_weak = False
    chosen = LS
    if keep_iv.sum() >= 2:
        S2, P2, ent2, tim2, D2, names2 = _fit_design(arr, keep_iv)
        Z2 = Zall[keep_iv]
        try:
            iv = within_fe_2sls(S2, P2, D2, Z2, names2, ent2, tim2)
        except WeakInstrumentError as err:
            iv_weak = True
            notes.append(f"instruments unusable ({err}); IV suppressed, run "
                         "the feedback-channel regression")
        if iv is not None:
            hac_vcov(iv, bandwidth)
            diag = iv_diagnostics(iv, bandwidth)
            nobs_iv = iv.nobs
            if diag.kp_wald_f.statistic < weak_f_floor:
                iv_weak = True
                notes.append(
                    f"weak identification: KP Wald F "
                    f"{diag.kp_wald_f.statistic:.3f} below floor {weak_f_floor:g}; "
                    "IV suppressed, run the feedback-channel regression")
            elif (diag.endogeneity.p_value is not None
                  and diag.endogeneity.p_value < alpha):
                chosen = IV
    else:
        notes.append("instruments unavailable; least squares only")

    chosen_fit = iv if chosen == IV else ls
    delta = delta_sigma(chosen_fit)
    aggregates = recover_aggregates(chosen_fit)
    second_name = {"jfy_mean": "ln_fx_jfy_mean", "jfy_sum": "ln_fx_jfy_sum",
                   "rolling12": "ln_fx_roll12", "none": None}[instrument_mode]
    return FirstStageFit(
        meat=panel.meat, ls=ls, iv=None if iv_weak else iv,
        diagnostics=diag, chosen=chosen, delta=delta, aggregates=aggregates,
        nobs_ls=ls.nobs, nobs_iv=nobs_iv,
        instrument_names=["ln_fx"] + ([second_name] if second_name else []),
        iv_weak=iv_weak, notes=notes)
