"""Outlier handling that turns raw telemetry into training data.

Steps, in order: linear interpolation of short gaps, EWMA smoothing of
implausible CPU jumps, the power/CPU rate filter, and the PDU low-power
filter. Each step records its effect in a per-sample flag byte, and later
passes honour earlier flags, so cleaning is idempotent.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ConfigError, ContractError
from .fleet_sim import PERIODS_PER_DAY, Dataset

log = logging.getLogger(__name__)

MISSING = np.uint8(1)
INTERPOLATED = np.uint8(2)
SMOOTHED = np.uint8(4)
REMOVED_RATE = np.uint8(8)
REMOVED_LOW = np.uint8(16)
UNUSABLE = MISSING | REMOVED_RATE | REMOVED_LOW


@dataclass(frozen=True)
class CleaningConfig:
    jump_threshold: float = 0.30
    rate_ratio: float = 20.0
    median_fraction: float = 0.80
    max_gap: int = 3
    ewma_alpha: float = 0.3
    # normalised power change below which the rate rule never fires (meter noise)
    rate_floor: float = 0.10
    smooth_machine_cpu: bool = False

    def __post_init__(self):
        for name in ("jump_threshold", "rate_ratio", "median_fraction", "max_gap", "ewma_alpha"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.median_fraction >= 1:
            raise ConfigError("median_fraction must be below 1")
        if self.ewma_alpha > 1:
            raise ConfigError("ewma_alpha must lie in (0, 1]")
        if self.rate_floor < 0:
            raise ConfigError("rate_floor must be non-negative")


@dataclass
class CleaningReport:
    n_input: int = 0
    n_interpolated: int = 0
    n_smoothed: int = 0
    n_removed_rate: int = 0
    n_removed_low: int = 0
    n_missing: int = 0
    per_pdu: dict = field(default_factory=dict)
    machine: dict = field(default_factory=dict)

    @property
    def n_removed(self) -> int:
        return self.n_removed_rate + self.n_removed_low + self.n_missing

    @property
    def n_retained(self) -> int:
        return self.n_input - self.n_removed

    @property
    def retained_fraction(self) -> float:
        return self.n_retained / self.n_input if self.n_input else 1.0

    def to_dict(self) -> dict:
        return {
            "n_input": self.n_input,
            "n_interpolated": self.n_interpolated,
            "n_smoothed": self.n_smoothed,
            "n_removed_rate": self.n_removed_rate,
            "n_removed_low": self.n_removed_low,
            "n_missing": self.n_missing,
            "n_removed": self.n_removed,
            "n_retained": self.n_retained,
            "retained_fraction": self.retained_fraction,
            "per_pdu": self.per_pdu,
            "machine": self.machine,
        }


def interpolate_gaps(values, max_gap: int = 3, timestamps=None):
    """Fill interior NaN runs of length <= ``max_gap`` linearly.

    Returns (filled, interpolated_mask, missing_mask). Longer runs and runs
    touching either end of the series stay NaN and are reported missing.
    """
    if timestamps is not None:
        ts = np.asarray(timestamps)
        if len(ts) != len(values):
            raise ContractError("timestamps and values differ in length")
        if np.any(np.diff(ts) <= 0):
            raise ContractError("series is not strictly time-ordered")
    x = np.array(values, dtype=np.float64)
    nan = np.isnan(x)
    filled = np.zeros(len(x), dtype=bool)
    if not nan.any():
        return x, filled, nan
    edges = np.diff(np.concatenate(([0], nan.astype(np.int8), [0])))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    for a, b in zip(starts, stops):
        if a == 0 or b == len(x) or b - a > max_gap:
            continue
        lo, hi = x[a - 1], x[b]
        steps = np.arange(1, b - a + 1) / (b - a + 1)
        x[a:b] = lo + (hi - lo) * steps
        filled[a:b] = True
    return x, filled, np.isnan(x)


def ewma_smooth_jumps(values, jump_threshold: float = 0.30, alpha: float = 0.3, frozen=None):
    """Replace implausible jumps with an EWMA step from the previous output.

    A value whose relative change from the previous output value exceeds
    ``jump_threshold`` becomes ``alpha*value + (1-alpha)*previous``. NaNs
    pass through. Positions in ``frozen`` (already smoothed) are kept as-is
    but still serve as the previous value.
    Returns (smoothed, smoothed_mask).
    """
    x = np.array(values, dtype=np.float64)
    present = ~np.isnan(x)
    if np.any(x[present] <= 0):
        raise ContractError("resource usage must be strictly positive to smooth")
    frozen = np.zeros(len(x), dtype=bool) if frozen is None else np.asarray(frozen, dtype=bool)
    mask = _ewma_jumps(x, frozen, float(jump_threshold), float(alpha))
    return x, mask


@njit(cache=True)
def _ewma_jumps(x, frozen, threshold, alpha):
    mask = np.zeros(len(x), dtype=np.bool_)
    prev = np.nan
    for t in range(len(x)):
        v = x[t]
        if np.isnan(v):
            continue
        if not frozen[t] and not np.isnan(prev) and abs(v - prev) / prev > threshold:
            x[t] = alpha * v + (1 - alpha) * prev
            mask[t] = True
        prev = x[t]
    return mask


@njit(cache=True)
def _rate_keep(p, c, ok, ratio, power_scale, cpu_scale, floor):
    keep = np.zeros(len(p), dtype=np.bool_)
    last = -1
    for t in range(len(p)):
        if not ok[t]:
            continue
        if last >= 0:
            dp = abs(p[t] - p[last]) / power_scale
            dc = abs(c[t] - c[last]) / cpu_scale
            if dp > ratio * dc and dp > floor:
                continue
        keep[t] = True
        last = t
    return keep


def filter_rate_anomalies(
    power,
    cpu,
    rate_ratio: float = 20.0,
    power_scale: float = 1.0,
    cpu_scale: float = 1.0,
    floor: float = 0.0,
    candidates=None,
):
    """Boolean mask of samples kept by the power/CPU rate rule.

    Both series are normalised by their full-scale values. Sample ``t`` is
    dropped when its normalised power change from the last kept sample
    exceeds both ``rate_ratio`` times the matching CPU change and ``floor``.
    Comparing against the last kept sample (not ``t-1``) means the clean
    sample after a one-off spike is not dropped as well. Positions outside
    ``candidates`` (and NaNs) are neither kept nor used as anchors.
    """
    p = np.asarray(power, dtype=np.float64)
    c = np.asarray(cpu, dtype=np.float64)
    if p.shape != c.shape:
        raise ContractError("power and cpu series are misaligned")
    if power_scale <= 0 or cpu_scale <= 0:
        raise ContractError("scales must be positive")
    ok = ~(np.isnan(p) | np.isnan(c))
    if candidates is not None:
        ok &= np.asarray(candidates, dtype=bool)
    return _rate_keep(p, c, ok, float(rate_ratio), float(power_scale), float(cpu_scale), float(floor))


def filter_low_power(power_day, median_fraction: float = 0.80, candidates=None):
    """Mask of one day's samples at or above ``median_fraction`` of the day median.

    The median is taken over the candidate samples only.
    """
    p = np.asarray(power_day, dtype=np.float64)
    ok = ~np.isnan(p)
    if candidates is not None:
        ok &= np.asarray(candidates, dtype=bool)
    if not ok.any():
        warnings.warn("no usable power samples in day; nothing retained", RuntimeWarning)
        return np.zeros(len(p), dtype=bool)
    med = np.median(p[ok])
    return ok & (p >= median_fraction * med)


def _by_day(n_periods):
    for start in range(0, n_periods, PERIODS_PER_DAY):
        yield slice(start, start + PERIODS_PER_DAY)


def _clean_series(power, cpu, flags, config, power_scale, cpu_scale, smooth, low_filter):
    flags = flags.copy()
    power, p_fill, _ = interpolate_gaps(power, config.max_gap)
    cpu, c_fill, _ = interpolate_gaps(cpu, config.max_gap)
    flags[(p_fill | c_fill)] |= INTERPOLATED
    flags &= ~MISSING
    flags[np.isnan(power) | np.isnan(cpu)] |= MISSING

    if smooth:
        cpu, smoothed = ewma_smooth_jumps(
            cpu, config.jump_threshold, config.ewma_alpha, frozen=(flags & SMOOTHED) > 0
        )
        flags[smoothed] |= SMOOTHED

    for day in _by_day(len(power)):
        cand = (flags[day] & (MISSING | REMOVED_RATE)) == 0
        keep = filter_rate_anomalies(
            power[day], cpu[day], config.rate_ratio, power_scale, cpu_scale,
            config.rate_floor, candidates=cand,
        )
        f = flags[day]
        f[cand & ~keep] |= REMOVED_RATE
        if low_filter:
            cand = (f & (MISSING | REMOVED_RATE)) == 0
            if cand.any():
                keep = filter_low_power(power[day], config.median_fraction, candidates=cand)
                f[cand & ~keep] |= REMOVED_LOW
            else:
                log.warning("day with no usable power samples")
        flags[day] = f
    return power, cpu, flags


def _count(report_dict, before, after, n):
    new = after & ~before
    report_dict["n_input"] = report_dict.get("n_input", 0) + n
    for key, bit in (
        ("n_interpolated", INTERPOLATED),
        ("n_smoothed", SMOOTHED),
        ("n_removed_rate", REMOVED_RATE),
        ("n_removed_low", REMOVED_LOW),
    ):
        report_dict[key] = report_dict.get(key, 0) + int(np.count_nonzero(new & bit))
    report_dict["n_missing"] = report_dict.get("n_missing", 0) + int(np.count_nonzero(after & MISSING))


def preprocess_pdu(dataset: Dataset, pdu_index: int, config: CleaningConfig = CleaningConfig()):
    """Clean one PDU's series and, when present, its machines' series.

    Returns a dict of the new arrays for that PDU plus a per-PDU report
    dict. PDU CPU is smoothed; machine CPU only if ``smooth_machine_cpu``.
    The low-power rule applies to PDU power only.
    """
    pdu = dataset.fleet.pdus[pdu_index]
    f0 = dataset.pdu_flags[pdu_index]
    power, cpu, flags = _clean_series(
        dataset.pdu_power[pdu_index], dataset.pdu_cpu[pdu_index], f0, config,
        pdu.max_power, pdu.cpu_capacity, smooth=True, low_filter=True,
    )
    rep: dict = {}
    _count(rep, f0, flags, len(flags))
    out = {"power": power, "cpu": cpu, "flags": flags, "report": rep}
    if dataset.has_machines:
        sl = dataset.machine_slice(pdu_index)
        mp, mc, mf = [], [], []
        mrep: dict = {}
        for k, m in zip(range(sl.start, sl.stop), pdu.machines):
            before = dataset.machine_flags[k]
            p, c, f = _clean_series(
                dataset.machine_power[k], dataset.machine_cpu[k], before, config,
                m.max_power, m.cpu_capacity, smooth=config.smooth_machine_cpu, low_filter=False,
            )
            _count(mrep, before, f, len(f))
            mp.append(p)
            mc.append(c)
            mf.append(f)
        out.update(m_power=mp, m_cpu=mc, m_flags=mf, m_report=mrep)
    return out


def preprocess(dataset: Dataset, config: CleaningConfig = CleaningConfig()):
    """Clean every PDU. Returns (clean dataset, CleaningReport).

    Report totals count PDU samples; machine-level counts sit under
    ``report.machine``.
    """
    pdu_power = dataset.pdu_power.copy()
    pdu_cpu = dataset.pdu_cpu.copy()
    pdu_flags = dataset.pdu_flags.copy()
    changes = {}
    if dataset.has_machines:
        m_power = dataset.machine_power.copy()
        m_cpu = dataset.machine_cpu.copy()
        m_flags = dataset.machine_flags.copy()
    report = CleaningReport()
    machine_totals: dict = {}
    for i, pdu_id in enumerate(dataset.pdu_ids):
        res = preprocess_pdu(dataset, i, config)
        pdu_power[i], pdu_cpu[i], pdu_flags[i] = res["power"], res["cpu"], res["flags"]
        rep = res["report"]
        report.per_pdu[pdu_id] = rep
        report.n_input += rep["n_input"]
        report.n_interpolated += rep["n_interpolated"]
        report.n_smoothed += rep["n_smoothed"]
        report.n_removed_rate += rep["n_removed_rate"]
        report.n_removed_low += rep["n_removed_low"]
        report.n_missing += rep["n_missing"]
        if dataset.has_machines:
            sl = dataset.machine_slice(i)
            m_power[sl] = res["m_power"]
            m_cpu[sl] = res["m_cpu"]
            m_flags[sl] = res["m_flags"]
            for k, v in res["m_report"].items():
                machine_totals[k] = machine_totals.get(k, 0) + v
    report.machine = machine_totals
    changes.update(pdu_power=pdu_power, pdu_cpu=pdu_cpu, pdu_flags=pdu_flags)
    if dataset.has_machines:
        changes.update(machine_power=m_power, machine_cpu=m_cpu, machine_flags=m_flags)
    return dataset.replace(**changes), report


def usable(flags) -> np.ndarray:
    """True where a sample may be used for training."""
    return (np.asarray(flags) & UNUSABLE) == 0
