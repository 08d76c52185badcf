"""Piecewise-linear PDU power model over three equal-width CPU regimes.

Each regime gets its own recency-weighted least-squares line, refit daily
on the trailing seven days of cleaned PDU telemetry.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import DomainError, TrainingError
from .fleet_sim import PERIODS_PER_DAY, Dataset
from .preprocess import usable

log = logging.getLogger(__name__)

REGIMES = ("low", "medium", "high")
WINDOW_DAYS = 7
MIN_REGIME_SAMPLES = 30


@dataclass(frozen=True)
class PerPduModel:
    pdu_id: str
    cpu_min: float
    cpu_max: float
    coefficients: Mapping[str, tuple[float, float]]
    trained_day: int
    fallback_flags: Mapping[str, bool] = field(default_factory=dict)

    @property
    def lam(self) -> float:
        return (self.cpu_max - self.cpu_min) / 3.0

    def regime_index(self, u) -> np.ndarray:
        """0/1/2 for low/medium/high. The lower boundary belongs to low."""
        u = np.asarray(u, dtype=np.float64)
        lo = self.cpu_min + self.lam
        hi = self.cpu_min + 2 * self.lam
        return np.where(u <= lo, 0, np.where(u < hi, 1, 2))

    def predict(self, u) -> np.ndarray:
        return predict_per_pdu(self, u)

    def to_dict(self) -> dict:
        return {
            "pdu_id": self.pdu_id,
            "cpu_min": self.cpu_min,
            "cpu_max": self.cpu_max,
            "coefficients": {r: list(self.coefficients[r]) for r in REGIMES},
            "trained_day": self.trained_day,
            "fallback_flags": {r: bool(self.fallback_flags.get(r, False)) for r in REGIMES},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PerPduModel":
        return cls(
            pdu_id=d["pdu_id"],
            cpu_min=d["cpu_min"],
            cpu_max=d["cpu_max"],
            coefficients={r: tuple(d["coefficients"][r]) for r in REGIMES},
            trained_day=d["trained_day"],
            fallback_flags=dict(d["fallback_flags"]),
        )


def segment_regime(u_cpu, model: PerPduModel):
    """Regime name for a scalar CPU usage, or an array of names."""
    idx = model.regime_index(u_cpu)
    if idx.ndim == 0:
        return REGIMES[int(idx)]
    return np.asarray(REGIMES)[idx]


def recency_weights(day_age) -> np.ndarray:
    """1/(1+d) for samples d days before the training day."""
    return 1.0 / (1.0 + np.asarray(day_age, dtype=np.float64))


def weighted_line(x, y, w) -> tuple[float, float]:
    """Weighted least-squares (intercept, slope) with slope clamped at 0.

    A negative unconstrained slope is replaced by the weighted mean level.
    Zero spread in ``x`` also gives a flat line.
    """
    W = w.sum()
    xm = (w * x).sum() / W
    ym = (w * y).sum() / W
    dx = x - xm
    sxx = (w * dx * dx).sum()
    if sxx <= 0:
        return float(ym), 0.0
    beta = (w * dx * (y - ym)).sum() / sxx
    if beta < 0:
        return float(ym), 0.0
    return float(ym - beta * xm), float(beta)


def fit_per_pdu(cpu, power, day_age, pdu_id: str = "", trained_day: int = 0) -> PerPduModel:
    """Fit the three regime lines on a training window.

    ``day_age`` gives each sample's age in days relative to the training
    day (0..6). Regimes with fewer than MIN_REGIME_SAMPLES samples reuse the
    line fitted on the whole window and are flagged.
    """
    x = np.asarray(cpu, dtype=np.float64)
    y = np.asarray(power, dtype=np.float64)
    age = np.asarray(day_age)
    if len(x) == 0:
        raise TrainingError(f"{pdu_id or 'PDU'}: empty training window")
    if np.any((age < 0) | (age >= WINDOW_DAYS)):
        raise TrainingError("sample ages must lie in 0..6 days")
    w = recency_weights(age)
    model = PerPduModel(pdu_id, float(x.min()), float(x.max()), {}, trained_day)
    regime = model.regime_index(x)
    global_line = weighted_line(x, y, w)
    coefs, flags = {}, {}
    for r, name in enumerate(REGIMES):
        sel = regime == r
        if np.count_nonzero(sel) < MIN_REGIME_SAMPLES:
            coefs[name] = global_line
            flags[name] = True
        else:
            coefs[name] = weighted_line(x[sel], y[sel], w[sel])
            flags[name] = False
    return PerPduModel(pdu_id, model.cpu_min, model.cpu_max, coefs, trained_day, flags)


def predict_per_pdu(model: PerPduModel, u_cpu):
    """alpha_r + beta_r * u with r the regime of u; below cpu_min the low
    line extrapolates, above cpu_max the high line does."""
    u = np.asarray(u_cpu, dtype=np.float64)
    if np.any(u < 0):
        raise DomainError("CPU usage must be non-negative")
    idx = model.regime_index(u)
    alpha = np.array([model.coefficients[r][0] for r in REGIMES])
    beta = np.array([model.coefficients[r][1] for r in REGIMES])
    out = alpha[idx] + beta[idx] * u
    return float(out) if out.ndim == 0 else out


def boundary_jumps(model: PerPduModel) -> tuple[float, float]:
    """Prediction discontinuity at the low/medium and medium/high boundaries."""
    out = []
    for r, b in ((0, model.cpu_min + model.lam), (1, model.cpu_min + 2 * model.lam)):
        a0, b0 = model.coefficients[REGIMES[r]]
        a1, b1 = model.coefficients[REGIMES[r + 1]]
        out.append(abs((a1 + b1 * b) - (a0 + b0 * b)))
    return out[0], out[1]


def continuity_ok(model: PerPduModel, max_power: float, tolerance: float = 0.10) -> bool:
    return max(boundary_jumps(model)) <= tolerance * max_power


def envelope_ok(model: PerPduModel, idle_power: float, max_power: float) -> bool:
    """Predictions at cpu_min and cpu_max within [0.5*idle, 1.5*max]."""
    p = predict_per_pdu(model, np.array([model.cpu_min, model.cpu_max]))
    return bool(np.all((p >= 0.5 * idle_power) & (p <= 1.5 * max_power)))


def training_window(dataset: Dataset, pdu_index: int, train_day: int):
    """Usable (cpu, power, day_age) samples of days train_day-6 .. train_day."""
    first = max(dataset.first_day, train_day - WINDOW_DAYS + 1)
    sl = dataset.days_slice(first, train_day)
    cpu = dataset.pdu_cpu[pdu_index, sl]
    power = dataset.pdu_power[pdu_index, sl]
    ok = usable(dataset.pdu_flags[pdu_index, sl]) & ~np.isnan(cpu) & ~np.isnan(power)
    day = first + np.arange(sl.stop - sl.start) // PERIODS_PER_DAY
    return cpu[ok], power[ok], (train_day - day)[ok]


class ModelStore:
    """Per-PDU models by training day; earlier days are kept for drift checks."""

    def __init__(self):
        self.by_day: dict[int, dict[str, PerPduModel]] = {}
        self.skipped: dict[int, list[str]] = {}

    def __getitem__(self, day: int) -> dict[str, PerPduModel]:
        return self.by_day[day]

    def __contains__(self, day: int) -> bool:
        return day in self.by_day

    def days(self) -> list[int]:
        return sorted(self.by_day)

    def drift(self, pdu_id: str, day: int) -> dict[str, tuple[float, float]]:
        """Relative change of (alpha, beta) per regime versus the previous day."""
        cur = self.by_day[day][pdu_id]
        prev = self.by_day[day - 1][pdu_id]
        out = {}
        for r in REGIMES:
            (a1, b1), (a0, b0) = cur.coefficients[r], prev.coefficients[r]
            out[r] = (
                abs(a1 - a0) / max(abs(a0), 1e-12),
                abs(b1 - b0) / max(abs(b0), 1e-12) if b0 or b1 else 0.0,
            )
        return out


def daily_retrain(dataset: Dataset, day: int, store: ModelStore | None = None) -> dict[str, PerPduModel]:
    """Train one model per PDU on the seven days ending at ``day``.

    The result predicts day ``day + 1``. PDUs without usable data are
    skipped and listed in ``store.skipped[day]``.
    """
    models, skipped = {}, []
    for i, pdu_id in enumerate(dataset.pdu_ids):
        cpu, power, age = training_window(dataset, i, day)
        if len(cpu) == 0:
            log.warning("%s: no usable data for day %d; skipped", pdu_id, day)
            skipped.append(pdu_id)
            continue
        models[pdu_id] = fit_per_pdu(cpu, power, age, pdu_id, day)
    if store is not None:
        store.by_day[day] = models
        store.skipped[day] = skipped
    return models
