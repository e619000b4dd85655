"""Two-stage import substitution elasticities with full tariff accounting.

Pipeline: monthly transaction ingestion -> effective tariffs under ad
valorem, gate-price, and quota regimes -> fixed-effects panel estimation
of the import-source substitution elasticity with price-index retrieval
from time dummies -> annual time-series estimation of the
domestic-versus-imports elasticity. A synthetic-economy simulator with
known parameters backs the estimator test suite.
"""

from .ces_model import (FirstStageParams, SecondStageParams, SimConfig,
                        duality_check, price_index, shares, simulate_panel)
from .errors import ArmingtonError
from .panel_econometrics import (AggregateSeries, FeEstimate, IvDiagnostics,
                                 delta_sigma, estimate_first_stage, hac_vcov,
                                 iv_diagnostics, recover_aggregates,
                                 within_fe_2sls, within_fe_ls)
from .periods import Month
from .tariff_engine import (BASELINE_PORK_GPS, GpsBoundary, QuotaLedger,
                            QuotaSchedule, Rate, RateSchedule, effective_T,
                            gps_duty, scale_for_carcass, trq_resolve)
from .timeseries import (AnnualSeries, SecondStageResult, adf_test, annualize,
                         channel_test, engle_granger, estimate_second,
                         select_spec)
from .trade_data import (MeatGroup, PanelDataset, PanelObservation,
                         TransactionRecord, aggregate_items, build_panel,
                         compute_shares, filter_sparse, split_pork)

__version__ = "0.1.0"
