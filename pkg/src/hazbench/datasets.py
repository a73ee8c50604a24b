"""Deterministic synthetic study datasets for smoke tests and examples.

Both generators imitate the headline summary statistics of well-known
public study datasets without shipping any real records: a lung-cancer
style cohort (228 patients, 28% censored, median observed failure 256
days, range 5..1022) and a myocardial-infarction style cohort (1877
patients, about half censored, with CHF/VF/diabetes style factors).
"""

from __future__ import annotations

import numpy as np

from .data import SurvDataset

__all__ = ["make_cancer_like", "make_trace_like"]


def make_cancer_like(seed: int = 2260) -> SurvDataset:
    """228 subjects, exactly 64 censored (28% when rounded), median
    observed failure time exactly 256 days, times spanning 5..1022."""
    rng = np.random.default_rng(seed)
    n, n_events = 228, 164
    ev = np.sort(np.round(rng.gamma(1.6, 220.0, n_events)))
    ev = np.clip(ev, 5.0, 1022.0)
    # force the advertised summary statistics exactly
    ev[0], ev[-1] = 5.0, 1022.0
    mid = n_events // 2
    ev[mid - 1] = ev[mid] = 256.0
    ev = np.sort(ev)
    cens = np.round(rng.uniform(20.0, 1010.0, n - n_events))
    times = np.concatenate([ev, cens])
    events = np.concatenate([np.ones(n_events, dtype=int), np.zeros(n - n_events, dtype=int)])

    sex = rng.integers(0, 2, n).astype(float)
    wl_q = rng.integers(1, 5, n)  # weight-loss quartile 1..4
    ecog = rng.choice([0, 1, 2], size=n, p=(0.35, 0.45, 0.20))
    cov = np.column_stack(
        [
            sex,
            (wl_q == 2).astype(float),
            (wl_q == 3).astype(float),
            (wl_q == 4).astype(float),
            (ecog == 0).astype(float),
            (ecog == 2).astype(float),
        ]
    )
    names = ("sex", "wl_q2", "wl_q3", "wl_q4", "ecog_0", "ecog_23")
    order = rng.permutation(n)
    return SurvDataset(times[order], events[order], cov[order], names)


def make_trace_like(seed: int = 1877, n: int = 1877) -> SurvDataset:
    """Myocardial-infarction style cohort with CHF/VF/diabetes factors.

    Built-in proportional effects (diabetes around 0.34 on the log scale)
    and non-proportional CHF/VF group hazards; roughly half censored over
    an 8.5-year horizon.
    """
    rng = np.random.default_rng(seed)
    chf = (rng.uniform(size=n) < 0.35).astype(float)
    vf = (rng.uniform(size=n) < 0.07).astype(float)
    diabetes = (rng.uniform(size=n) < 0.11).astype(float)
    gender = rng.integers(0, 2, n).astype(float)
    age_q = rng.integers(0, 4, n)
    horizon = 8.5

    # base rate rises with CHF/VF early, converging later (crossing-ish)
    base = 0.075 + 0.10 * chf + 0.16 * vf
    risk = np.exp(0.34 * diabetes + 0.22 * gender + 0.25 * (age_q >= 2))
    t_fail = rng.exponential(1.0, n) / (base * risk)
    censor = np.minimum(rng.uniform(2.0, 14.0, n), horizon)
    times = np.maximum(np.minimum(t_fail, censor), 0.01)
    events = (t_fail <= censor).astype(int)
    cov = np.column_stack(
        [
            chf,
            vf,
            diabetes,
            gender,
            (age_q == 1).astype(float),
            (age_q == 2).astype(float),
            (age_q == 3).astype(float),
        ]
    )
    names = ("chf", "vf", "diabetes", "gender", "age_q2", "age_q3", "age_q4")
    return SurvDataset(times, events, cov, names)
