"""Hazard-rate estimation toolkit for right-censored survival data.

Estimators: closed-form oracles (Nelson-Aalen, Kaplan-Meier, piecewise
MLE), kernel and presmoothed-kernel smoothing, penalized B-spline Poisson
regression, Bayesian multiresolution and discrete Markov-beta samplers, a
time-varying-coefficient Cox model, and the two-sample short/long-term
hazard-ratio model; plus a simulation benchmark harness comparing them by
per-bin and integrated bias/RMSE.
"""

from .chains import MCMCControl, PosteriorChains, autocorrelation, gelman_rubin
from .data import (
    HazardCurve,
    OccExpTable,
    SurvDataset,
    SurvRecord,
    TimeGrid,
    bin_occurrence_exposure,
    kaplan_meier,
    log_hazard_ratio,
    nelson_aalen,
    piecewise_mle,
    predict_hazard,
)
from .dbeta import DBetaPriors, DiscreteSurvData, discretize, fit_markov_beta, survival_chains
from .formula import FormulaError, ModelFormula, parse_formula, render_formula
from .kernel import (
    BandwidthSpec,
    BoundarySpec,
    KernelSpec,
    bootstrap_bandwidth,
    kernel_hazard,
    presmooth_indicator,
    presmoothed_hazard,
)
from .mrh import MRHPriors, MRHTree, continue_chain, fit_mrh, summarize_chains
from .simulate import (
    MetricsTable,
    SimConfig,
    TrueHazardSpec,
    bias,
    generate_dataset,
    integrated_metrics,
    rmse,
    run_benchmark,
)
from .spline import SplineBasisSpec, SplineFit, fit_spline_hazard, to_baseline
from .timevar import SmootherSpec, TestReport, TVCoxFit, decumulate, fit_timevar, test_effects
from .yp import YPFit, fit_yp, hazard_ratio_at

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
