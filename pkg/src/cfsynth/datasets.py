"""Seeded synthetic datasets for demos, tests and evaluation protocols.

The census-style generator bakes in a known education -> age dependence
and a rare marital-status category (~3%), the two structures the causal
and rare-value protocols need. Everything is a pure function of its seed.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from .seeding import spawn_rng

EDUCATION_LEVELS = ["School", "HS-grad", "Some-college", "Assoc", "Bachelors",
                    "Masters", "Doctorate"]
EDUCATION_RAW = {
    # raw values that preprocessing merges into the canonical levels
    "Assoc": ["Assoc-voc", "Assoc-acdm"],
    "School": ["11th", "9th", "7th-8th", "5th-6th", "1st-4th"],
}
MARITAL_LEVELS = ["Married", "Never-married", "Divorced", "Widowed"]


def make_moons(n: int = 500, noise: float = 0.1, seed: int = 0) -> pd.DataFrame:
    """Two interleaved half circles; label +1 for the lower moon."""
    rng = spawn_rng(seed, "moons")
    half = n // 2
    t1 = rng.uniform(0, np.pi, half)
    t2 = rng.uniform(0, np.pi, n - half)
    upper = np.c_[np.cos(t1), np.sin(t1)]
    lower = np.c_[1 - np.cos(t2), 0.5 - np.sin(t2)]
    pts = np.vstack([upper, lower]) + rng.normal(0, noise, (n, 2))
    label = np.array([-1] * half + [1] * (n - half))
    order = rng.permutation(n)
    return pd.DataFrame({"x1": pts[order, 0], "x2": pts[order, 1],
                         "label": label[order]})


def make_circles(n: int = 500, noise: float = 0.08, seed: int = 0) -> pd.DataFrame:
    """Concentric circles; label +1 for the inner circle."""
    rng = spawn_rng(seed, "circles")
    half = n // 2
    t = rng.uniform(0, 2 * np.pi, n)
    radius = np.concatenate([np.full(half, 1.0), np.full(n - half, 0.45)])
    pts = np.c_[radius * np.cos(t), radius * np.sin(t)] + rng.normal(0, noise, (n, 2))
    label = np.array([-1] * half + [1] * (n - half))
    order = rng.permutation(n)
    return pd.DataFrame({"x1": pts[order, 0], "x2": pts[order, 1],
                         "label": label[order]})


def make_census(n: int = 12000, seed: int = 0, raw_education: bool = False,
                widowed_share: float = 0.03) -> pd.DataFrame:
    """Census-style income table with a planted causal mechanism.

    education (ordinal, 7 levels) -> age through a noisy monotone map:
    higher education implies entering the workforce later and, in this
    synthetic economy, observed at older ages. Income depends on education,
    age and hours with additive noise, then thresholded to a binary label.
    ``raw_education`` emits pre-merge values (Assoc-voc, 11th, ...) so the
    preprocessing rules have something to do.
    """
    rng = spawn_rng(seed, "census")
    edu_idx = rng.choice(len(EDUCATION_LEVELS), size=n,
                         p=[0.18, 0.30, 0.18, 0.10, 0.14, 0.07, 0.03])
    # age depends on education through a noisy, heteroscedastic, partly
    # confounded channel: near-gaussian and hard to orient from raw data,
    # the way real census tables are
    cohort = rng.normal(0, 1, n)
    base_age = 24.0 + 2.4 * edu_idx + 0.15 * edu_idx**2 + 3.0 * cohort
    spread = 4.0 + 1.1 * edu_idx
    age = np.clip(base_age + spread * rng.normal(0, 1, n), 17.0, 90.0)

    hours = np.clip(rng.normal(40, 9, n) + 1.5 * (edu_idx >= 4), 5, 90)

    marital_p = np.array([0.55, 0.25, 0.20 - widowed_share, widowed_share])
    marital = rng.choice(MARITAL_LEVELS, size=n, p=marital_p / marital_p.sum())

    score = (0.55 * edu_idx + 0.045 * (age - 38) - 0.00055 * (age - 38) ** 2
             + 0.03 * (hours - 40) + 0.6 * (marital == "Married")
             + rng.logistic(0, 0.8, n))
    label = np.where(score > 2.2, ">50K", "<=50K")

    education = np.array(EDUCATION_LEVELS, dtype=object)[edu_idx]
    if raw_education:
        out = education.copy()
        for canonical, raws in EDUCATION_RAW.items():
            mask = np.nonzero(education == canonical)[0]
            out[mask] = rng.choice(raws, size=len(mask))
        education = out

    return pd.DataFrame({
        "age": np.round(age, 1),
        "education": education,
        "hours": np.round(hours, 1),
        "marital": marital,
        "income": label,
    })


def anm_pair(mechanism: str, n: int = 500, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """A cause-effect pair b = g(a) + noise with non-Gaussian ingredients,
    for direction-recovery checks."""
    rng = spawn_rng(seed, "anm-pair", mechanism)
    a = rng.uniform(-2, 2, n)
    noise = rng.uniform(-1, 1, n) ** 3  # non-gaussian, zero mean
    if mechanism == "cubic":
        b = a**3 + noise
    elif mechanism == "tanh":
        b = np.tanh(2 * a) * 3 + 0.5 * noise
    elif mechanism == "exp":
        b = np.exp(0.7 * a) + 0.5 * noise
    elif mechanism == "sine":
        b = np.sin(2.0 * a) + 2.0 * a + 0.5 * noise
    else:
        raise ValueError(f"unknown mechanism {mechanism!r}")
    return a, b
