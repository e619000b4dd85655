"""Configuration-driven commands tying the pipeline stages together.

Each command reads a flat ``key = value`` config file, performs one stage
(ingestion, tariff evaluation, simulation, estimation), and writes
deterministic text and CSV reports; every number in a report comes from
an operation in the library modules, never from inline computation here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import ces_model, panel_econometrics as pe, tariff_engine, timeseries, trade_data
from .errors import ArmingtonError, MissingDataError
from .periods import Month

_INT_KEYS = {"min_obs", "hac_bandwidth", "seed", "sim_n_countries", "sim_n_months"}
_FLOAT_KEYS = {"pork_split_threshold", "pretest_alpha", "weak_f_floor",
               "sim_sigma", "sim_rho", "sim_beta", "sim_demand_shock_sd",
               "sim_supply_shock_sd", "sim_domestic_shock_sd", "sim_fx_autocorr",
               "sim_fx_innovation_sd", "sim_inverse_supply_slope"}


@dataclass
class RunConfig:
    """Paths and tuning knobs for one reproducible run."""

    transactions: str = ""
    fx: str = ""
    schedule: str = ""
    quota: str = ""
    domestic: str = ""
    output_dir: str = "out"
    meat: str = "beef"
    pork_split_threshold: float = 0.8
    min_obs: int = 9
    hac_bandwidth: int = 5
    instrument_mode: str = "jfy_mean"
    pretest_alpha: float = 0.05
    weak_f_floor: float = 10.0
    seed: int = 0
    sim_n_countries: int = 10
    sim_n_months: int = 300
    sim_start: str = "1996-01"
    sim_sigma: float = 4.0
    sim_rho: float = 1.2
    sim_beta: float = 0.55
    sim_demand_shock_sd: float = 0.6
    sim_supply_shock_sd: float = 0.3
    sim_domestic_shock_sd: float = 0.05
    sim_fx_autocorr: float = 0.9
    sim_fx_innovation_sd: float = 0.06
    sim_inverse_supply_slope: float = 0.5
    sim_tariff: str = "ad_valorem:0.043"

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        values: dict[str, object] = {}
        base = Path(path).resolve().parent
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ArmingtonError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ArmingtonError(f"{path}:{lineno}: unknown config key {key!r}")
            if key in _INT_KEYS:
                values[key] = int(value)
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            else:
                values[key] = value
        cfg = cls(**values)
        # paths are relative to the config file
        for key in ("transactions", "fx", "schedule", "quota", "domestic", "output_dir"):
            val = getattr(cfg, key)
            if val and not Path(val).is_absolute():
                setattr(cfg, key, str(base / val))
        return cfg

    def require(self, *keys: str) -> None:
        missing = [k for k in keys if not getattr(self, k)]
        if missing:
            raise ArmingtonError(f"config missing required keys: {missing}")
        for k in keys:
            if k in ("transactions", "fx", "schedule", "quota", "domestic"):
                p = Path(getattr(self, k))
                if not p.exists():
                    raise ArmingtonError(f"config key {k} points at missing file {p}")


def _fmt(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "."
    return f"{x:.6f}"


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# ingestion and tariff evaluation

def load_meat_inputs(cfg: RunConfig, meat: str):
    records = trade_data.read_transactions_csv(cfg.transactions)
    group = trade_data.MeatGroup.default(meat)
    aggregates = trade_data.aggregate_items(records, group)
    breakdown = trade_data.aggregate_item_quantities(records, group)
    return records, group, aggregates, breakdown


def compute_tariffs(cfg: RunConfig, meat: str):
    """Effective log tariff factor per (country, month) plus the audit trail."""
    _, _, aggregates, breakdown = load_meat_inputs(cfg, meat)
    schedule = tariff_engine.RateSchedule.read_csv(cfg.schedule)
    quotas = tariff_engine.read_quota_csv(cfg.quota) if cfg.quota else []
    calc = tariff_engine.TariffCalculator(schedule, quotas)
    tariffs: dict[tuple[str, Month], float] = {}
    audit_rows: list[dict] = []
    countries = sorted({c for c, _ in breakdown})
    for country in countries:
        months = sorted(m for c, m in breakdown if c == country)
        for month in months:
            items = breakdown[(country, month)]
            volumes = {g: x for g, (v, x) in items.items()}
            resolved = calc.resolve_month(country, month, volumes)
            key = (country, month)
            if key not in aggregates:
                continue
            agg = aggregates[key]
            values = {g: v for g, (v, x) in items.items()}
            T = tariff_engine.blended_T(agg.cif, values, volumes, resolved.rates)
            tariffs[key] = T
            audit_rows.append({
                "country": country, "period": str(month),
                "cif_jpy_per_kg": agg.cif, "T": T,
                "applied": ";".join(sorted(set(resolved.labels.values()))),
            })
    return tariffs, pd.DataFrame(audit_rows)


def build_meat_panel(cfg: RunConfig, meat: str) -> trade_data.PanelDataset:
    _, _, aggregates, _ = load_meat_inputs(cfg, meat)
    tariffs, _ = compute_tariffs(cfg, meat)
    fx = trade_data.read_fx_csv(cfg.fx)
    return trade_data.build_panel(meat, aggregates, tariffs, fx)


def cmd_ingest(cfg: RunConfig) -> Path:
    """Aggregate transactions to (country, month) CIF totals for the meat."""
    cfg.require("transactions")
    _, _, aggregates, _ = load_meat_inputs(cfg, cfg.meat)
    rows = [{"country": c, "period": str(m), "value_jpy": a.value,
             "quantity_kg": a.quantity, "cif_jpy_per_kg": a.cif}
            for (c, m), a in sorted(aggregates.items(),
                                    key=lambda kv: (kv[0][0], kv[0][1]))]
    path = _out(cfg) / f"aggregates_{cfg.meat}.csv"
    pd.DataFrame(rows).to_csv(path, index=False, float_format="%.6f")
    return path


def cmd_tariff(cfg: RunConfig) -> Path:
    """Write the per-(country, month) effective tariff table with audit labels."""
    cfg.require("transactions", "schedule")
    _, audit = compute_tariffs(cfg, cfg.meat)
    path = _out(cfg) / f"tariff_{cfg.meat}.csv"
    audit.sort_values(["country", "period"]).to_csv(
        path, index=False, float_format="%.10f")
    return path


# ---------------------------------------------------------------------------
# simulation

def cmd_simulate(cfg: RunConfig) -> dict[str, Path]:
    """Draw a synthetic economy and write pipeline-consumable files."""
    out = _out(cfg)
    start = Month.parse(cfg.sim_start)
    sim_cfg = ces_model.SimConfig(
        n_countries=cfg.sim_n_countries, n_months=cfg.sim_n_months,
        start=start, demand_shock_sd=cfg.sim_demand_shock_sd,
        supply_shock_sd=cfg.sim_supply_shock_sd,
        domestic_shock_sd=cfg.sim_domestic_shock_sd,
        fx_autocorr=cfg.sim_fx_autocorr,
        fx_innovation_sd=cfg.sim_fx_innovation_sd,
        inverse_supply_slope=cfg.sim_inverse_supply_slope,
        tariff=cfg.sim_tariff)
    weights = np.arange(1, cfg.sim_n_countries + 1, dtype=float)
    alpha = tuple(weights / weights.sum())
    first = ces_model.FirstStageParams(sigma=cfg.sim_sigma, alpha=alpha)
    second = ces_model.SecondStageParams(rho=cfg.sim_rho, beta=cfg.sim_beta)
    econ = ces_model.simulate_panel(sim_cfg, first, second, seed=cfg.seed)

    group = trade_data.MeatGroup.default(cfg.meat)
    item_id = min(group.items)
    tx_rows = [{"period": str(o.period), "country": o.country,
                "item_id": item_id, "value_jpy": math.exp(o.C) * o.x,
                "quantity_kg": o.x}
               for o in econ.panel.observations]
    fx_rows = [{"period": str(m), "country": c, "jpy_per_lcu": r}
               for (c, m), r in sorted(econ.fx.items(),
                                       key=lambda kv: (kv[0][0], kv[0][1]))]
    end = start.shift(cfg.sim_n_months - 1)
    if cfg.sim_tariff.strip() == "exempt":
        kind, params = "exempt", ""
    else:
        kind, params = "ad_valorem", f"r={cfg.sim_tariff.split(':', 1)[1]}"
    schedule_rows = [{"country_selector": "*", "item_selector": "*",
                      "from": str(start), "to": str(end), "kind": kind,
                      "params": params, "priority": 100,
                      "label": "synthetic baseline"}]

    paths = {
        "transactions": out / "transactions.csv",
        "fx": out / "fx.csv",
        "schedule": out / "schedule.csv",
        "domestic": out / "domestic.csv",
        "truth": out / "truth.json",
        "config": out / "synthetic.cfg",
    }
    pd.DataFrame(tx_rows).to_csv(paths["transactions"], index=False,
                                 float_format="%.6f")
    pd.DataFrame(fx_rows).to_csv(paths["fx"], index=False, float_format="%.8f")
    pd.DataFrame(schedule_rows).to_csv(paths["schedule"], index=False)
    if econ.domestic is not None:
        econ.domestic.to_csv(paths["domestic"], index=False, float_format="%.6f")
    truth = econ.truth
    payload = {
        "sigma": truth.sigma, "rho": truth.rho, "beta": truth.beta,
        "gamma": truth.gamma, "eta": truth.eta, "phi": truth.phi,
        "alpha": list(truth.alpha), "seed": cfg.seed,
        "tariff_T": econ.tariff_T,
        "q_index": {str(m): float(q) for m, q in zip(truth.periods, truth.q_index)},
        "annual_Q": ({str(y): float(q) for y, q in zip(truth.years, truth.annual_Q)}
                     if truth.annual_Q is not None else {}),
    }
    paths["truth"].write_text(json.dumps(payload, indent=1, sort_keys=True),
                              encoding="utf-8")
    lines = [
        f"transactions = {paths['transactions'].name}",
        f"fx = {paths['fx'].name}",
        f"schedule = {paths['schedule'].name}",
        f"domestic = {paths['domestic'].name}",
        f"output_dir = .",
        f"meat = {cfg.meat}",
        f"min_obs = {cfg.min_obs}",
        f"hac_bandwidth = {cfg.hac_bandwidth}",
        f"instrument_mode = {cfg.instrument_mode}",
        f"seed = {cfg.seed}",
    ]
    paths["config"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    return paths


# ---------------------------------------------------------------------------
# estimation reports

def _render_test(name: str, label: str, stat) -> str:
    p = f" ({_fmt(stat.p_value)})" if stat.p_value is not None else ""
    return f"  {name:<28s}{label:<28s}{_fmt(stat.statistic):>12s}{p}"


def render_first_stage(fit: pe.FirstStageFit,
                       channel: timeseries.ChannelTestResult | None) -> str:
    lines = []
    lines.append(f"== First-stage estimation [{fit.meat}] ==")
    ls_se = fit.ls.se("lnp")
    lines.append(f"{'':14s}{'FE (LS)':>24s}{'FE (IV)':>24s}")
    iv_cell = ("." if fit.iv is None
               else f"{_fmt(fit.iv.param('lnp'))} ({_fmt(fit.iv.se('lnp'))})")
    lines.append(f"  {'lnp':<12s}{_fmt(fit.ls.param('lnp'))+' ('+_fmt(ls_se)+')':>24s}"
                 f"{iv_cell:>24s}")
    iv_obs = "." if fit.nobs_iv is None else f"{fit.nobs_iv:,}"
    lines.append(f"  {'obs.':<12s}{fit.nobs_ls:>24,}{iv_obs:>24s}")
    lines.append(f"  Delta method: sigma = {_fmt(fit.delta.estimate)} "
                 f"({_fmt(fit.delta.se)})   [based on FE ({fit.chosen})]")
    if fit.diagnostics is not None and not fit.iv_weak:
        lines.append(f"--- Tests for 2SLS FE (IV) estimation --- instruments: "
                     f"{' '.join(fit.instrument_names)}")
        d = fit.diagnostics
        lines.append(_render_test("Underidentification", "Kleibergen-Paap rk LM", d.kp_lm))
        lines.append(_render_test("Weak identification", "Kleibergen-Paap rk Wald F",
                                  d.kp_wald_f))
        lines.append(_render_test("Overidentification", "Hansen J", d.hansen_j))
        lines.append(_render_test("Endogeneity", "C statistic", d.endogeneity))
    if channel is not None:
        lines.append("--- Test regression --- dependent: ln_fx, regressor: ln_cif_minus_fx (FE)")
        lines.append(f"  slope {_fmt(channel.slope)} ({_fmt(channel.se)})  "
                     f"p={_fmt(channel.p_value)}  "
                     f"channel={'present' if channel.channel_present else 'absent'}")
    for note in fit.notes:
        lines.append(f"  note: {note}")
    return "\n".join(lines) + "\n"


def render_second_stage(res: timeseries.SecondStageResult, meat: str,
                        selection: timeseries.SpecSelection,
                        channel: timeseries.ChannelTestResult | None) -> str:
    lines = []
    lines.append(f"== Second-stage estimation [{meat}] -- {res.mode} ==")
    lines.append(f"  spec selection: {'; '.join(selection.reasons)}")
    label = "d.lnrq" if res.mode == timeseries.DIFFERENCES_SPEC else "lnrq"
    iv_cell = ("." if res.iv is None
               else f"{_fmt(res.iv.param('lnrq'))} ({_fmt(res.iv.se('lnrq'))})")
    lines.append(f"{'':14s}{'LS':>24s}{'IV':>24s}")
    lines.append(f"  {label:<12s}"
                 f"{_fmt(res.ls.param('lnrq'))+' ('+_fmt(res.ls.se('lnrq'))+')':>24s}"
                 f"{iv_cell:>24s}")
    iv_const = ("." if res.iv is None
                else f"{_fmt(res.iv.param('const'))} ({_fmt(res.iv.se('const'))})")
    lines.append(f"  {'const':<12s}"
                 f"{_fmt(res.ls.param('const'))+' ('+_fmt(res.ls.se('const'))+')':>24s}"
                 f"{iv_const:>24s}")
    lines.append(f"  {'obs.':<12s}{res.nobs:>24,}")
    lines.append(f"  Delta method: rho = {_fmt(res.rho.estimate)} "
                 f"({_fmt(res.rho.se)})   [based on {res.chosen}]")
    if res.beta is not None:
        lines.append(f"  Delta method: beta = {_fmt(res.beta.estimate)} "
                     f"({_fmt(res.beta.se)})")
    else:
        lines.append("  beta: not identified in first differences")
    if res.diagnostics is not None and not res.iv_weak:
        lines.append("--- Tests for 2SLS (IV) estimation --- instruments: "
                     "ln_aggregate aggregate")
        d = res.diagnostics
        lines.append(_render_test("Underidentification", "Kleibergen-Paap rk LM", d.kp_lm))
        lines.append(_render_test("Weak identification", "Kleibergen-Paap rk Wald F",
                                  d.kp_wald_f))
        lines.append(_render_test("Overidentification", "Hansen J", d.hansen_j))
        lines.append(_render_test("Endogeneity", "C statistic", d.endogeneity))
    if channel is not None:
        lines.append("--- Test regression --- dependent: d.ln_domestic_price, "
                     "regressor: d.ln_aggregate")
        lines.append(f"  slope {_fmt(channel.slope)} ({_fmt(channel.se)})  "
                     f"p={_fmt(channel.p_value)}  "
                     f"channel={'present' if channel.channel_present else 'absent'}")
        if channel.intercept is not None:
            lines.append(f"  const {_fmt(channel.intercept)} "
                         f"({_fmt(channel.intercept_se)})  p={_fmt(channel.intercept_p)}")
    for note in res.notes:
        lines.append(f"  note: {note}")
    return "\n".join(lines) + "\n"


def first_stage_csv(fit: pe.FirstStageFit,
                    channel: timeseries.ChannelTestResult | None = None,
                    ) -> pd.DataFrame:
    rows = [
        {"section": "ls", "name": "lnp", "value": fit.ls.param("lnp"),
         "se": fit.ls.se("lnp"), "pvalue": None},
        {"section": "ls", "name": "obs", "value": fit.nobs_ls, "se": None,
         "pvalue": None},
    ]
    if fit.iv is not None:
        rows.append({"section": "iv", "name": "lnp", "value": fit.iv.param("lnp"),
                     "se": fit.iv.se("lnp"), "pvalue": None})
        rows.append({"section": "iv", "name": "obs", "value": fit.nobs_iv,
                     "se": None, "pvalue": None})
    rows.append({"section": "delta", "name": "sigma", "value": fit.delta.estimate,
                 "se": fit.delta.se, "pvalue": None})
    if fit.diagnostics is not None and not fit.iv_weak:
        d = fit.diagnostics
        for name, st in (("kp_lm", d.kp_lm), ("kp_wald_f", d.kp_wald_f),
                         ("hansen_j", d.hansen_j), ("endogeneity", d.endogeneity)):
            rows.append({"section": "test", "name": name, "value": st.statistic,
                         "se": None, "pvalue": st.p_value})
    if channel is not None:
        rows.append({"section": "channel", "name": "slope",
                     "value": channel.slope, "se": channel.se,
                     "pvalue": channel.p_value})
    return pd.DataFrame(rows)


def second_stage_csv(res: timeseries.SecondStageResult,
                     channel: timeseries.ChannelTestResult | None = None,
                     ) -> pd.DataFrame:
    rows = [
        {"section": "ls", "name": "lnrq", "value": res.ls.param("lnrq"),
         "se": res.ls.se("lnrq"), "pvalue": None},
        {"section": "ls", "name": "const", "value": res.ls.param("const"),
         "se": res.ls.se("const"), "pvalue": None},
        {"section": "meta", "name": "obs", "value": res.nobs, "se": None,
         "pvalue": None},
        {"section": "delta", "name": "rho", "value": res.rho.estimate,
         "se": res.rho.se, "pvalue": None},
    ]
    if res.iv is not None:
        rows.insert(2, {"section": "iv", "name": "lnrq",
                        "value": res.iv.param("lnrq"), "se": res.iv.se("lnrq"),
                        "pvalue": None})
    if res.beta is not None:
        rows.append({"section": "delta", "name": "beta",
                     "value": res.beta.estimate, "se": res.beta.se, "pvalue": None})
    if res.diagnostics is not None and not res.iv_weak:
        d = res.diagnostics
        for name, st in (("kp_lm", d.kp_lm), ("kp_wald_f", d.kp_wald_f),
                         ("hansen_j", d.hansen_j), ("endogeneity", d.endogeneity)):
            rows.append({"section": "test", "name": name, "value": st.statistic,
                         "se": None, "pvalue": st.p_value})
    if channel is not None:
        rows.append({"section": "channel", "name": "slope",
                     "value": channel.slope, "se": channel.se,
                     "pvalue": channel.p_value})
    return pd.DataFrame(rows)


def aggregates_csv(series: pe.AggregateSeries) -> pd.DataFrame:
    return pd.DataFrame({
        "period": [str(m) for m in series.periods],
        "qhat": series.q,
        "se": series.se,
    })


@dataclass
class FirstStageOutput:
    fit: pe.FirstStageFit
    channel: timeseries.ChannelTestResult | None
    panel_full: trade_data.PanelDataset
    panel_fitted: trade_data.PanelDataset


def run_first_stage(cfg: RunConfig, panel_full: trade_data.PanelDataset,
                    ) -> FirstStageOutput:
    """Sparse-filter, fit, and (if instruments fail) run the channel test."""
    filtered = trade_data.filter_sparse(panel_full, cfg.min_obs)
    fit = pe.estimate_first_stage(
        filtered, bandwidth=cfg.hac_bandwidth,
        instrument_mode=cfg.instrument_mode,
        weak_f_floor=cfg.weak_f_floor, alpha=cfg.pretest_alpha)
    channel = None
    if fit.iv_weak:
        arr = pe.panel_arrays(filtered)
        channel = timeseries.channel_test(
            arr.E, arr.C - arr.E, mode="fe", entities=arr.entities,
            alpha=cfg.pretest_alpha)
        # endogeneity channel absent -> keep LS (already the default choice)
    return FirstStageOutput(fit=fit, channel=channel, panel_full=panel_full,
                            panel_fitted=filtered)


def run_second_stage(cfg: RunConfig, first_out: FirstStageOutput):
    """Annualize, pretest, and estimate the domestic-import equation."""
    cfg.require("domestic")
    dom = pd.read_csv(cfg.domestic)
    required = ["year", "price_jpy_per_kg", "quantity_kg"]
    missing = [c for c in required if c not in dom.columns]
    if missing:
        raise MissingDataError(f"domestic CSV missing columns {missing}")
    dom = dom.sort_values("year")
    weights: dict[Month, float] = {}
    for o in first_out.panel_full.observations:
        weights[o.period] = weights.get(o.period, 0.0) + o.w
    aggregates = first_out.fit.aggregates
    annual = timeseries.annualize(
        aggregates, weights, dom["year"].to_numpy(),
        dom["price_jpy_per_kg"].to_numpy(), dom["quantity_kg"].to_numpy())

    dep = annual.H
    reg = annual.R - annual.Q
    # short annual samples force a smaller augmentation search
    lag_cap = max(0, min(4, dep.size - 1 - 10))
    selection = timeseries.select_spec(
        timeseries.adf_test(dep, max_lags=lag_cap),
        timeseries.adf_test(np.diff(dep), max_lags=lag_cap),
        timeseries.adf_test(reg, max_lags=lag_cap),
        timeseries.adf_test(np.diff(reg), max_lags=lag_cap),
        timeseries.engle_granger(dep, reg, max_lags=lag_cap),
        level=cfg.pretest_alpha)
    result = timeseries.estimate_second(
        annual, selection.mode, alpha=cfg.pretest_alpha,
        weak_f_floor=cfg.weak_f_floor)
    channel = None
    if result.iv_weak:
        channel = timeseries.channel_test(annual.R, annual.Q, mode="diff",
                                          alpha=cfg.pretest_alpha)
    return annual, selection, result, channel


def _meat_panels(cfg: RunConfig) -> list[tuple[str, trade_data.PanelDataset, bool]]:
    """(label, panel, run_second_stage) triples; pork is split in two."""
    panel = build_meat_panel(cfg, cfg.meat)
    if cfg.meat != "pork":
        return [(cfg.meat, panel, True)]
    regular, prime = trade_data.split_pork(panel, cfg.pork_split_threshold)
    out = []
    if regular.observations:
        out.append(("pork_regular", regular, True))
    if prime.observations:
        out.append(("pork_prime", prime, False))
    return out


def cmd_estimate_first(cfg: RunConfig) -> list[Path]:
    """First-stage panel estimation; writes reports and the index series."""
    cfg.require("transactions", "fx", "schedule")
    written = []
    out = _out(cfg)
    for label, panel, _ in _meat_panels(cfg):
        res = run_first_stage(cfg, panel)
        text = render_first_stage(res.fit, res.channel)
        (out / f"first_stage_{label}.txt").write_text(text, encoding="utf-8")
        first_stage_csv(res.fit, res.channel).to_csv(
            out / f"first_stage_{label}.csv", index=False, float_format="%.6f")
        aggregates_csv(res.fit.aggregates).to_csv(
            out / f"qhat_{label}.csv", index=False, float_format="%.8f")
        written += [out / f"first_stage_{label}.txt",
                    out / f"first_stage_{label}.csv", out / f"qhat_{label}.csv"]
    return written


def cmd_estimate_second(cfg: RunConfig) -> list[Path]:
    """Annual second-stage estimation with stationarity pretests."""
    cfg.require("transactions", "fx", "schedule", "domestic")
    written = []
    out = _out(cfg)
    for label, panel, do_second in _meat_panels(cfg):
        if not do_second:
            continue
        first = run_first_stage(cfg, panel)
        annual, selection, result, channel = run_second_stage(cfg, first)
        text = render_second_stage(result, label, selection, channel)
        (out / f"second_stage_{label}.txt").write_text(text, encoding="utf-8")
        second_stage_csv(result, channel).to_csv(
            out / f"second_stage_{label}.csv", index=False, float_format="%.6f")
        written += [out / f"second_stage_{label}.txt",
                    out / f"second_stage_{label}.csv"]
    return written


def cmd_report(cfg: RunConfig) -> Path:
    """Full pipeline: first stage, aggregates, second stage, one text report."""
    cfg.require("transactions", "fx", "schedule")
    out = _out(cfg)
    sections = []
    for label, panel, do_second in _meat_panels(cfg):
        first = run_first_stage(cfg, panel)
        sections.append(render_first_stage(first.fit, first.channel))
        aggregates_csv(first.fit.aggregates).to_csv(
            out / f"qhat_{label}.csv", index=False, float_format="%.8f")
        first_stage_csv(first.fit, first.channel).to_csv(
            out / f"first_stage_{label}.csv", index=False, float_format="%.6f")
        if do_second and cfg.domestic:
            annual, selection, result, channel = run_second_stage(cfg, first)
            sections.append(render_second_stage(result, label, selection, channel))
            second_stage_csv(result, channel).to_csv(
                out / f"second_stage_{label}.csv", index=False,
                float_format="%.6f")
    report = "\n".join(sections)
    path = out / f"report_{cfg.meat}.txt"
    path.write_text(report, encoding="utf-8")
    return path
