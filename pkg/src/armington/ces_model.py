"""Two-stage CES price aggregation and a synthetic-economy simulator.

The simulator draws exchange rates (stationary AR(1) in logs, independent
of all demand shocks), preference shocks, and supply shocks, then solves a
per-(country, month) equilibrium in closed form: import demand is
CES-consistent so that the log-share regression with time dummies is
exactly correctly specified, while log FOB prices move along an
upward-sloping inverse supply curve. A positive inverse supply slope feeds
demand shocks into prices, reproducing the simultaneity that biases least
squares; a zero slope makes prices exogenous. Ground truth (elasticities,
weights, shock-inclusive price indices) is retained for estimator
validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from .periods import Month
from .trade_data import PanelDataset, PanelObservation

MAX_REDRAWS = 100


@dataclass(frozen=True)
class FirstStageParams:
    """Import-stage elasticity and preference weights (weights sum to 1)."""

    sigma: float
    alpha: tuple[float, ...]

    def __post_init__(self):
        if self.sigma <= 0 or self.sigma == 1.0:
            raise ValueError(f"sigma must be positive and != 1, got {self.sigma}")
        if any(a < 0 for a in self.alpha):
            raise ValueError("alpha weights must be nonnegative")
        if abs(sum(self.alpha) - 1.0) > 1e-9:
            raise ValueError(f"alpha weights must sum to 1, got {sum(self.alpha)}")

    @property
    def gamma(self) -> float:
        return 1.0 - self.sigma


@dataclass(frozen=True)
class SecondStageParams:
    """Domestic-vs-import elasticity and domestic preference weight."""

    rho: float
    beta: float

    def __post_init__(self):
        if self.rho <= 0 or self.rho == 1.0:
            raise ValueError(f"rho must be positive and != 1, got {self.rho}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")

    @property
    def eta(self) -> float:
        return 1.0 - self.rho

    @property
    def phi(self) -> float:
        """Intercept of the domestic-to-import value-ratio equation."""
        if self.beta in (0.0, 1.0):
            raise ValueError("phi undefined for degenerate beta")
        return math.log(self.beta / (1.0 - self.beta))


def price_index(prices: Sequence[float], params: FirstStageParams) -> float:
    """Dual CES price index q = (sum_i alpha_i p_i^(1-sigma))^(1/(1-sigma)).

    Homogeneous of degree one in prices.
    """
    p = np.asarray(prices, dtype=float)
    if p.shape != (len(params.alpha),):
        raise ValueError("prices and alpha must have equal length")
    if np.any(p <= 0):
        raise ValueError("prices must be positive")
    a = np.asarray(params.alpha)
    expo = 1.0 - params.sigma
    return float(np.sum(a * p ** expo) ** (1.0 / expo))


def shares(prices: Sequence[float], params: FirstStageParams) -> np.ndarray:
    """Expenditure shares s_i = alpha_i (p_i / q)^(1-sigma); sum to one."""
    p = np.asarray(prices, dtype=float)
    q = price_index(p, params)
    a = np.asarray(params.alpha)
    return a * (p / q) ** (1.0 - params.sigma)


def demand_quantities(prices: Sequence[float], params: FirstStageParams,
                      import_expenditure: float) -> np.ndarray:
    """Quantities demanded given total import expenditure q*y."""
    p = np.asarray(prices, dtype=float)
    return import_expenditure * shares(p, params) / p


def _weighted_power(weight: float, base: float, expo: float) -> float:
    # zero weight kills the term even when base**expo would overflow/NaN
    return 0.0 if weight == 0.0 else weight * base ** expo


def dual_price_index(r: float, q: float, params: SecondStageParams) -> float:
    """Top-level dual index v combining domestic price r and import index q."""
    expo = 1.0 - params.rho
    inner = (_weighted_power(params.beta, r, expo)
             + _weighted_power(1.0 - params.beta, q, expo))
    return inner ** (1.0 / expo)


def duality_check(prices: Sequence[float], r: float, u: float,
                  first: FirstStageParams, second: SecondStageParams) -> float:
    """Max relative residual of the expenditure identities.

    Generates (z, y, x_i) from the model's demand functions at utility
    ``u`` and evaluates both accounting identities: total expenditure
    v*u = r*z + q*y, and import expenditure q*y = sum_i p_i x_i.
    """
    p = np.asarray(prices, dtype=float)
    q = price_index(p, first)
    v = dual_price_index(r, q, second)
    money = v * u
    expo = 1.0 - second.rho
    z = money * _weighted_power(second.beta, r / v, expo) / r
    y = money * _weighted_power(1.0 - second.beta, q / v, expo) / q
    x = demand_quantities(p, first, q * y)

    res_total = abs(money - (r * z + q * y)) / money
    import_spend = q * y
    if import_spend > 0:
        res_import = abs(import_spend - float(np.dot(p, x))) / import_spend
    else:
        res_import = float(np.dot(p, x))
    return max(res_total, res_import)


@dataclass(frozen=True)
class SimConfig:
    """Synthetic-economy dimensions and shock/process parameters.

    ``inverse_supply_slope`` is d(log FOB price)/d(log quantity); zero
    means perfectly elastic supply and hence exogenous prices.
    ``tariff`` is ``exempt`` or ``ad_valorem:<r>`` (regimes whose log
    factor does not depend on the realized price).
    """

    n_countries: int = 10
    n_months: int = 300
    start: Month = Month(1996, 1)
    demand_shock_sd: float = 0.6
    supply_shock_sd: float = 0.3
    domestic_shock_sd: float = 0.05
    fx_autocorr: float = 0.9
    fx_innovation_sd: float = 0.06
    inverse_supply_slope: float = 0.5
    fob_level: float = 6.0
    fob_level_spread: float = 0.3
    fob_trend_sd: float = 0.02
    cif_markup: float = 0.05
    cif_markup_sd: float = 0.02
    demand_scale: float = 15.0
    domestic_price_level: float = 7.0
    domestic_price_autocorr: float = 0.8
    domestic_price_sd: float = 0.08
    tariff: str = "ad_valorem:0.043"

    def __post_init__(self):
        if self.n_countries < 2 or self.n_months < 2:
            raise ValueError("need at least 2 countries and 2 months")
        for name in ("demand_shock_sd", "supply_shock_sd", "domestic_shock_sd",
                     "fx_innovation_sd", "fob_trend_sd", "cif_markup_sd",
                     "domestic_price_sd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.inverse_supply_slope < 0:
            raise ValueError("inverse_supply_slope must be nonnegative")
        for name in ("fx_autocorr", "domestic_price_autocorr"):
            if not abs(getattr(self, name)) < 1.0:
                raise ValueError(f"{name} must be inside (-1, 1)")
        self.tariff_log_factor()  # validate the regime spec early

    def tariff_log_factor(self) -> float:
        spec = self.tariff.strip()
        if spec == "exempt":
            return 0.0
        kind, _, params = spec.partition(":")
        if kind == "ad_valorem":
            return math.log1p(float(params))
        raise ValueError(f"unsupported simulator tariff regime {self.tariff!r}")


@dataclass
class GroundTruth:
    """Everything an estimator-validation oracle needs about one draw."""

    sigma: float
    rho: float
    alpha: tuple[float, ...]
    beta: float
    gamma: float
    eta: float
    phi: float
    periods: list[Month]
    q_index: np.ndarray          # shock-inclusive CES index, last period = 1
    monthly_import_value: np.ndarray
    years: list[int] = field(default_factory=list)
    annual_Q: np.ndarray | None = None
    annual_R: np.ndarray | None = None
    demand_shocks: np.ndarray | None = None
    supply_shocks: np.ndarray | None = None


@dataclass
class SimulatedEconomy:
    panel: PanelDataset
    truth: GroundTruth
    fx: dict[tuple[str, Month], float]
    domestic: "pd.DataFrame | None"
    tariff_T: float


def _country_names(n: int) -> list[str]:
    return [f"C{i:02d}" for i in range(1, n + 1)]


def simulate_panel(cfg: SimConfig, first: FirstStageParams,
                   second: SecondStageParams | None = None,
                   seed: int | np.random.Generator = 0) -> SimulatedEconomy:
    """Draw one synthetic economy and assemble its estimation panel.

    Within each month the market clears in closed form. Demand is
    CES-consistent with reference price level p_ref:

        ln x = scale + ln alpha_i + eps + (gamma - 1)(P - p_ref)

    and inverse supply is centered at each country's typical quantity:

        f = f0_i + k * (ln x - scale - ln alpha_i) + w

    with k the inverse supply slope. Substituting gives the log FOB price

        f = (f0 + w + k*eps + k*(gamma-1)*(E+D+T-p_ref)) / (1 + k*sigma)

    so d f / d eps = k/(1+k*sigma) > 0 exactly when supply is finitely
    elastic. Non-finite draws (overflow in the exponentials) are redrawn
    up to a fixed cap.

    When ``second`` is given, annual domestic data consistent with the
    domestic-to-import value-ratio equation is generated for complete
    calendar years, using the last-period-normalized import index (the
    same convention the estimation pipeline uses).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n, J = cfg.n_countries, cfg.n_months
    if len(first.alpha) != n:
        raise ValueError("alpha length must equal n_countries")
    if any(a == 0 for a in first.alpha):
        raise ValueError("simulator requires strictly positive alpha weights")
    gamma = first.gamma
    sigma = first.sigma
    kappa = cfg.inverse_supply_slope
    T_log = cfg.tariff_log_factor()
    p_ref = cfg.fob_level + cfg.cif_markup + T_log
    months = [cfg.start.shift(t) for t in range(J)]
    countries = _country_names(n)
    ln_alpha = np.log(np.asarray(first.alpha))

    f0 = cfg.fob_level + cfg.fob_level_spread * rng.standard_normal(n)
    # optional common random-walk drift in FOB costs: moves the true index
    trend = np.cumsum(cfg.fob_trend_sd * rng.standard_normal(J)) if cfg.fob_trend_sd else np.zeros(J)

    # stationary AR(1) log exchange rates, one independent chain per country
    E = np.empty((n, J))
    stat_sd = cfg.fx_innovation_sd / math.sqrt(1.0 - cfg.fx_autocorr ** 2)
    E[:, 0] = stat_sd * rng.standard_normal(n)
    for t in range(1, J):
        E[:, t] = (cfg.fx_autocorr * E[:, t - 1]
                   + cfg.fx_innovation_sd * rng.standard_normal(n))

    eps = np.empty((n, J))
    w_sup = np.empty((n, J))
    P = np.empty((n, J))
    C = np.empty((n, J))
    ln_x = np.empty((n, J))
    denom = 1.0 + kappa * sigma
    for t in range(J):
        for _ in range(MAX_REDRAWS):
            e_t = cfg.demand_shock_sd * rng.standard_normal(n)
            w_t = cfg.supply_shock_sd * rng.standard_normal(n)
            delta_t = cfg.cif_markup + cfg.cif_markup_sd * rng.standard_normal(n)
            wedge = E[:, t] + delta_t + T_log
            f_t = (f0 + trend[t] + w_t + kappa * e_t
                   + kappa * (gamma - 1.0) * (wedge - p_ref)) / denom
            P_t = f_t + wedge
            lx_t = (cfg.demand_scale + ln_alpha + e_t
                    + (gamma - 1.0) * (P_t - p_ref))
            if np.all(np.isfinite(P_t)) and np.all(np.isfinite(np.exp(lx_t))):
                break
        else:
            raise RuntimeError(f"month {months[t]}: no finite draw in {MAX_REDRAWS} tries")
        eps[:, t], w_sup[:, t] = e_t, w_t
        P[:, t], C[:, t], ln_x[:, t] = P_t, P_t - T_log, lx_t

    x = np.exp(ln_x)
    w_val = np.exp(P + ln_x)                   # post-tariff values
    total_w = w_val.sum(axis=0)
    shares_panel = w_val / total_w

    observations = []
    fx_map: dict[tuple[str, Month], float] = {}
    for i, country in enumerate(countries):
        for t, month in enumerate(months):
            p = float(P[i, t])
            c = float(C[i, t])
            observations.append(PanelObservation(
                country=country, period=month,
                S=float(np.log(shares_panel[i, t])), P=p,
                C=c, T=p - c, E=float(E[i, t]),
                x=float(x[i, t]), w=float(w_val[i, t])))
            fx_map[(country, month)] = float(np.exp(E[i, t]))
    panel = PanelDataset(meat="synthetic", observations=observations)

    # shock-inclusive CES index; the time-dummy retrieval targets this series
    log_q_pow = logsumexp(ln_alpha[:, None] + eps + (1.0 - sigma) * P, axis=0)
    log_q_tilde = log_q_pow / (1.0 - sigma)
    q_tilde = np.exp(log_q_tilde - log_q_tilde[-1])
    q_index = q_tilde

    truth = GroundTruth(
        sigma=sigma, rho=second.rho if second else float("nan"),
        alpha=first.alpha, beta=second.beta if second else float("nan"),
        gamma=gamma, eta=second.eta if second else float("nan"),
        phi=second.phi if second and 0 < second.beta < 1 else float("nan"),
        periods=months, q_index=q_index, monthly_import_value=total_w,
        demand_shocks=eps, supply_shocks=w_sup)

    domestic = None
    if second is not None:
        years = sorted({m.year for m in months
                        if sum(1 for mm in months if mm.year == m.year) == 12})
        if years:
            R = np.empty(len(years))
            stat_r = cfg.domestic_price_sd / math.sqrt(1.0 - cfg.domestic_price_autocorr ** 2)
            level = cfg.domestic_price_level
            R[0] = level + stat_r * rng.standard_normal()
            for k in range(1, len(years)):
                R[k] = (level + cfg.domestic_price_autocorr * (R[k - 1] - level)
                        + cfg.domestic_price_sd * rng.standard_normal())
            Q = np.empty(len(years))
            import_value = np.empty(len(years))
            for k, year in enumerate(years):
                sel = np.array([m.year == year for m in months])
                wts = total_w[sel]
                Q[k] = math.log(wts.sum() / (wts / q_index[sel]).sum())
                import_value[k] = wts.sum()
            nu = cfg.domestic_shock_sd * rng.standard_normal(len(years))
            H = second.phi + second.eta * (R - Q) + nu
            z = np.exp(H) * import_value / np.exp(R)
            domestic = pd.DataFrame({
                "year": years,
                "price_jpy_per_kg": np.exp(R),
                "quantity_kg": z,
            })
            truth.years = years
            truth.annual_Q = Q
            truth.annual_R = R

    return SimulatedEconomy(panel=panel, truth=truth, fx=fx_map,
                            domestic=domestic, tariff_T=T_log)
