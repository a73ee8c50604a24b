"""Two-sample short-term / long-term hazard ratio model.

For a binary group indicator, the treatment-group hazard is modelled as

    lambda_T(t) = theta1 * theta2 / (theta1 + (theta2 - theta1) S_C(t)) * lambda_C(t)

so the hazard ratio moves monotonically from theta1 at t = 0 (where
S_C = 1) toward theta2 as the control survival S_C decays — the natural
parameterization for crossing hazards.  S_C is profiled by the control
product-limit estimator and (theta1, theta2) maximize the resulting
pseudo-likelihood on the log scale by bounded quasi-Newton.  Pointwise
intervals come from the inverse observed pseudo-information via the delta
method on log hr(t); simultaneous bands rescale the pointwise width by
the 95th percentile of a resampled standardized supremum (never below the
pointwise normal quantile, so the band always contains the interval).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm

from .data import HazardCurve, SurvDataset, TimeGrid, kaplan_meier
from .formula import ModelFormula

__all__ = ["YPFit", "fit_yp", "hazard_ratio_at"]

_Z975 = float(norm.ppf(0.975))


@dataclass
class YPFit:
    """Fitted short/long-term hazard-ratio model."""

    theta1: float
    theta2: float
    hr: HazardCurve  # log hr(t) on the control event-time grid
    hr_values: np.ndarray
    pointwise_lo: np.ndarray
    pointwise_hi: np.ndarray
    band_lo: np.ndarray
    band_hi: np.ndarray
    s_control: HazardCurve
    se_log_hr: np.ndarray
    cov_log_theta: np.ndarray
    log_lik: float

    @property
    def times(self) -> np.ndarray:
        return self.hr.grid.edges[1:]


def _log_hr(psi1, psi2, s):
    """log of theta1*theta2/(theta1 + (theta2-theta1) s) for psi=log theta."""
    t1, t2 = np.exp(psi1), np.exp(psi2)
    return psi1 + psi2 - np.log(t1 * (1.0 - s) + t2 * s)


def _group_column(data: SurvDataset, formula: ModelFormula | None, group_col):
    if formula is not None:
        if len(formula.nph_terms) != 1 or formula.ph_terms:
            raise ValueError("model needs exactly one NPH term and nothing else")
        return data.column(formula.nph_terms[0])
    if group_col is not None:
        return data.column(group_col)
    if data.strata is not None and len(data.stratum_labels()) == 2:
        labels = data.stratum_labels()
        return (data.strata == labels[1]).astype(float)
    raise ValueError("no binary group indicator available")


def fit_yp(
    data: SurvDataset,
    formula: ModelFormula | None = None,
    group_col: str | None = None,
    max_iter: int = 200,
    init: tuple[float, float] | None = None,
    bounds: tuple[float, float] = (1e-3, 1e3),
    n_band_resamples: int = 1000,
    seed: int = 0,
) -> YPFit:
    """Estimate (theta1, theta2) and the hazard-ratio curve.

    The group indicator must be binary with at least one event per group;
    level 0 is the control group whose survival is profiled.
    """
    group = _group_column(data, formula, group_col)
    levels = np.unique(group)
    if levels.size != 2:
        raise ValueError("group indicator must take exactly two values")
    ctrl_mask = group == levels[0]
    ctrl, trt = data.subset(ctrl_mask), data.subset(~ctrl_mask)
    if ctrl.n_events == 0 or trt.n_events == 0:
        raise ValueError("each group needs at least one event")

    s_ctrl = kaplan_meier(ctrl)
    ev_times = s_ctrl.grid.edges[1:]  # distinct control event times
    # Nelson-Aalen increments of the control group at its event times
    order = np.sort(ctrl.times)
    d_k = np.array([(ctrl.times[ctrl.events == 1] == t).sum() for t in ev_times])
    y_k = ctrl.times.size - np.searchsorted(order, ev_times, side="left")
    dLambda = d_k / y_k
    # left-continuous control survival at each event time (S before the drop)
    s_minus = np.concatenate([[1.0], s_ctrl.values[:-1]])

    # treatment events: attach the left-continuous control survival S(t-)
    t_times, t_events = trt.times, trt.events
    ev_t = t_times[t_events == 1]
    idx = np.searchsorted(ev_times, ev_t, side="left") - 1
    s_at_event = np.where(idx >= 0, s_ctrl.values[np.clip(idx, 0, None)], 1.0)
    # exposure: number of treatment subjects still at risk at each control event
    n_at = t_times.size - np.searchsorted(np.sort(t_times), ev_times, side="left")

    def neg_loglik(psi):
        log_hr_ev = _log_hr(psi[0], psi[1], s_minus)
        log_hr_obs = _log_hr(psi[0], psi[1], s_at_event)
        cum = float(np.sum(np.exp(log_hr_ev) * dLambda * n_at))
        return -(float(np.sum(log_hr_obs)) - cum)

    lo, hi = np.log(bounds[0]), np.log(bounds[1])
    if init is None:
        rate_c = ctrl.n_events / ctrl.total_time
        rate_t = trt.n_events / trt.total_time
        psi0 = np.clip(np.log(rate_t / rate_c), lo, hi)
        start = np.array([psi0, psi0])
    else:
        start = np.clip(np.log(np.asarray(init, dtype=float)), lo, hi)
    res = minimize(
        neg_loglik,
        start,
        method="L-BFGS-B",
        bounds=[(lo, hi), (lo, hi)],
        options={"maxiter": max_iter},
    )
    if not res.success and res.status != 1:  # status 1 = hit maxiter cleanly
        raise RuntimeError(f"YP fit failed to converge: {res.message}")
    psi = res.x
    theta1, theta2 = float(np.exp(psi[0])), float(np.exp(psi[1]))

    cov = _information_inverse(neg_loglik, psi)
    s_plus = s_ctrl.values  # right-continuous S at event times
    log_hr_curve = _log_hr(psi[0], psi[1], s_plus)
    grad = _log_hr_grad(psi, s_plus)
    se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", grad, cov, grad), 0.0))

    rng = np.random.default_rng(seed)
    draws = rng.multivariate_normal(psi, cov, size=n_band_resamples)
    sup = np.zeros(n_band_resamples)
    safe_se = np.maximum(se, 1e-12)
    for i, ps in enumerate(draws):
        sup[i] = np.max(np.abs(_log_hr(ps[0], ps[1], s_plus) - log_hr_curve) / safe_se)
    q_band = max(float(np.quantile(sup, 0.95)), _Z975)

    hr_vals = np.exp(log_hr_curve)
    pw_lo, pw_hi = np.exp(log_hr_curve - _Z975 * se), np.exp(log_hr_curve + _Z975 * se)
    band_lo, band_hi = np.exp(log_hr_curve - q_band * se), np.exp(log_hr_curve + q_band * se)
    hr_curve = HazardCurve(
        TimeGrid(s_ctrl.grid.edges),
        log_hr_curve,
        kind="log_ratio",
        lower=log_hr_curve - _Z975 * se,
        upper=log_hr_curve + _Z975 * se,
    )
    lo_t, hi_t = min(theta1, theta2), max(theta1, theta2)
    assert np.all(hr_vals >= lo_t - 1e-9) and np.all(hr_vals <= hi_t + 1e-9)
    return YPFit(
        theta1=theta1,
        theta2=theta2,
        hr=hr_curve,
        hr_values=hr_vals,
        pointwise_lo=pw_lo,
        pointwise_hi=pw_hi,
        band_lo=band_lo,
        band_hi=band_hi,
        s_control=s_ctrl,
        se_log_hr=se,
        cov_log_theta=cov,
        log_lik=float(-res.fun),
    )


def _step_eval(xs, ys, at, before):
    """Right-continuous step lookup: ys[k] on [xs[k], xs[k+1])."""
    idx = np.searchsorted(xs, at, side="right") - 1
    out = np.where(idx >= 0, ys[np.clip(idx, 0, ys.size - 1)], before)
    return out


def _information_inverse(neg_loglik, psi, h=1e-5):
    """Inverse of the numeric Hessian of the negative log-likelihood."""
    k = psi.size
    hess = np.zeros((k, k))
    f0 = neg_loglik(psi)
    for i in range(k):
        for j in range(i, k):
            ei, ej = np.zeros(k), np.zeros(k)
            ei[i], ej[j] = h, h
            fpp = neg_loglik(psi + ei + ej)
            fpm = neg_loglik(psi + ei - ej)
            fmp = neg_loglik(psi - ei + ej)
            fmm = neg_loglik(psi - ei - ej)
            hess[i, j] = hess[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h * h)
    _ = f0
    try:
        return np.linalg.inv(hess)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(hess)


def _log_hr_grad(psi, s):
    """d log hr / d (psi1, psi2) at survival levels s."""
    t1, t2 = np.exp(psi[0]), np.exp(psi[1])
    denom = t1 * (1.0 - s) + t2 * s
    return np.column_stack([1.0 - t1 * (1.0 - s) / denom, 1.0 - t2 * s / denom])


def hazard_ratio_at(fit: YPFit, t: float) -> tuple[float, float, float]:
    """hr(t) with its pointwise interval.

    At t=0 this is exactly theta1 (S_C(0)=1); as S_C decays toward zero
    the ratio approaches theta2.
    """
    tmax = fit.hr.grid.stop
    if t < 0 or t > tmax:
        raise ValueError(f"time {t} outside the fitted range [0, {tmax}]")
    ev_times = fit.hr.grid.edges[1:]
    s = float(_step_eval(ev_times, fit.s_control.values, np.array([t]), before=1.0)[0])
    psi = np.log([fit.theta1, fit.theta2])
    log_hr = float(_log_hr(psi[0], psi[1], np.array([s]))[0])
    g = _log_hr_grad(psi, np.array([s]))[0]
    se = float(np.sqrt(max(float(g @ fit.cov_log_theta @ g), 0.0)))
    return (
        float(np.exp(log_hr)),
        float(np.exp(log_hr - _Z975 * se)),
        float(np.exp(log_hr + _Z975 * se)),
    )
