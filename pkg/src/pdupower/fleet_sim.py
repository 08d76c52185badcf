"""Synthetic fleet topology and 5-minute telemetry with a known power law.

Machines are grouped into PDUs and PDUs into clusters. Each machine follows
``machine_power_curve`` exactly, so recorded power differs from ground
truth only by multiplicative meter noise and injected anomalies.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping, Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError, DomainError, PlacementError

PERIODS_PER_DAY = 288

CATEGORIES = ("compute", "storage", "accelerator")
PLATFORM_FAMILIES = (
    "intel-gp",
    "intel-hpc",
    "amd-gp",
    "amd-dense",
    "arm-gp",
    "highmem",
    "ssd-store",
    "hdd-store",
    "cold-store",
    "accel",
)
FAMILY_CATEGORY = {
    "intel-gp": "compute",
    "intel-hpc": "compute",
    "amd-gp": "compute",
    "amd-dense": "compute",
    "arm-gp": "compute",
    "highmem": "compute",
    "ssd-store": "storage",
    "hdd-store": "storage",
    "cold-store": "storage",
    "accel": "accelerator",
}
ARCHITECTURES = ("arch-a", "arch-b", "arch-c")
DEDICATED_LABELS = ("shared", "dedicated")

# overhead set-point and clip band, as fractions of P^N + P^C
OVERHEAD_SETPOINT = 0.6
OVERHEAD_BAND = (0.3, 1.0)


@dataclass(frozen=True)
class MachineSpec:
    machine_id: str
    config_code: str
    platform_family: str
    category: str
    idle_power: float
    max_power: float
    dedicated_label: str
    curve_exponent: float
    curve_mix: float
    cpu_capacity: float

    def __post_init__(self):
        if not 0 < self.idle_power < self.max_power:
            raise ConfigError(f"{self.machine_id}: need 0 < idle_power < max_power")
        if self.cpu_capacity <= 0 or self.curve_exponent < 1:
            raise ConfigError(f"{self.machine_id}: bad capacity or curve exponent")
        if not 0 <= self.curve_mix <= 1:
            raise ConfigError(f"{self.machine_id}: curve_mix outside [0, 1]")

    @property
    def dynamic_range(self) -> float:
        return (self.max_power - self.idle_power) / self.max_power


@dataclass(frozen=True)
class PduSpec:
    pdu_id: str
    cluster_id: str
    machines: tuple[MachineSpec, ...]
    network_max_power: float
    cooling_max_power: float
    architecture_type: str
    family_counts: Mapping[str, int]

    @property
    def idle_power(self) -> float:
        return float(sum(m.idle_power for m in self.machines))

    @property
    def max_power(self) -> float:
        return float(sum(m.max_power for m in self.machines))

    @property
    def cpu_capacity(self) -> float:
        return float(sum(m.cpu_capacity for m in self.machines))

    @property
    def overhead_capacity(self) -> float:
        return self.network_max_power + self.cooling_max_power


@dataclass(frozen=True)
class ClusterSpec:
    cluster_id: str
    pdu_ids: tuple[str, ...]


@dataclass(frozen=True)
class Fleet:
    clusters: tuple[ClusterSpec, ...]
    pdus: tuple[PduSpec, ...]

    @property
    def machines(self) -> tuple[MachineSpec, ...]:
        return tuple(m for p in self.pdus for m in p.machines)

    def pdu(self, pdu_id: str) -> PduSpec:
        for p in self.pdus:
            if p.pdu_id == pdu_id:
                return p
        raise KeyError(pdu_id)

    def subset(self, pdu_ids: Sequence[str]) -> "Fleet":
        keep = set(pdu_ids)
        pdus = tuple(p for p in self.pdus if p.pdu_id in keep)
        clusters = []
        for c in self.clusters:
            ids = tuple(i for i in c.pdu_ids if i in keep)
            if ids:
                clusters.append(ClusterSpec(c.cluster_id, ids))
        return Fleet(tuple(clusters), pdus)

    def to_dict(self) -> dict:
        return {
            "clusters": [
                {"cluster_id": c.cluster_id, "pdu_ids": list(c.pdu_ids)}
                for c in self.clusters
            ],
            "pdus": [
                {
                    "pdu_id": p.pdu_id,
                    "cluster_id": p.cluster_id,
                    "network_max_power": p.network_max_power,
                    "cooling_max_power": p.cooling_max_power,
                    "architecture_type": p.architecture_type,
                    "family_counts": dict(p.family_counts),
                    "machines": [m.__dict__.copy() for m in p.machines],
                }
                for p in self.pdus
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Fleet":
        pdus = tuple(
            PduSpec(
                pdu_id=p["pdu_id"],
                cluster_id=p["cluster_id"],
                machines=tuple(MachineSpec(**m) for m in p["machines"]),
                network_max_power=p["network_max_power"],
                cooling_max_power=p["cooling_max_power"],
                architecture_type=p["architecture_type"],
                family_counts=dict(p["family_counts"]),
            )
            for p in d["pdus"]
        )
        clusters = tuple(
            ClusterSpec(c["cluster_id"], tuple(c["pdu_ids"])) for c in d["clusters"]
        )
        return cls(clusters, pdus)


@dataclass(frozen=True)
class FleetConfig:
    n_clusters: int = 4
    pdus_per_cluster: int = 3
    machines_per_pdu: int = 50
    category_mix: Mapping[str, float] = field(
        default_factory=lambda: {"compute": 0.7, "storage": 0.2, "accelerator": 0.1}
    )
    configs_per_family: int = 2
    seed: int = 0

    def validate(self):
        for name in ("n_clusters", "pdus_per_cluster", "machines_per_pdu"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.configs_per_family < 1:
            raise ConfigError("configs_per_family must be at least 1")
        unknown = set(self.category_mix) - set(CATEGORIES)
        if unknown:
            raise ConfigError(f"unknown categories {sorted(unknown)}")
        if any(v < 0 for v in self.category_mix.values()):
            raise ConfigError("category mix weights must be non-negative")
        total = sum(self.category_mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"category mix sums to {total!r}, expected 1")


def _config_catalog(seed: int, configs_per_family: int) -> dict[str, list[dict]]:
    """Hardware configurations per family; machines of one config share a curve."""
    rng = np.random.default_rng([seed, 0])
    codes = rng.choice(np.arange(10000, 100000), size=len(PLATFORM_FAMILIES) * configs_per_family, replace=False)
    catalog: dict[str, list[dict]] = {}
    k = 0
    for fam in PLATFORM_FAMILIES:
        cat = FAMILY_CATEGORY[fam]
        entries = []
        for _ in range(configs_per_family):
            if cat == "compute":
                max_p = rng.uniform(250.0, 450.0)
                idle_frac = rng.uniform(0.30, 0.45)
                capacity = float(rng.choice([32, 48, 64, 96, 128]))
            elif cat == "storage":
                max_p = rng.uniform(150.0, 250.0)
                idle_frac = rng.uniform(0.82, 0.90)
                capacity = float(rng.choice([16, 24, 32]))
            else:
                max_p = rng.uniform(700.0, 1200.0)
                idle_frac = rng.uniform(0.82, 0.88)
                capacity = float(rng.choice([48, 64]))
            entries.append(
                {
                    "config_code": str(int(codes[k])),
                    "platform_family": fam,
                    "category": cat,
                    "idle_power": round(max_p * idle_frac, 3),
                    "max_power": round(max_p, 3),
                    "curve_exponent": round(rng.uniform(1.0, 2.5), 4),
                    "curve_mix": round(rng.uniform(0.0, 1.0), 4),
                    "cpu_capacity": capacity,
                }
            )
            k += 1
        catalog[fam] = entries
    return catalog


def generate_fleet(config: FleetConfig) -> Fleet:
    """Build clusters of PDUs of machines, deterministically from ``config.seed``."""
    config.validate()
    catalog = _config_catalog(config.seed, config.configs_per_family)
    mix = np.array([config.category_mix.get(c, 0.0) for c in CATEGORIES])
    fams_by_cat = {c: [f for f in PLATFORM_FAMILIES if FAMILY_CATEGORY[f] == c] for c in CATEGORIES}

    clusters, pdus = [], []
    pdu_index = 0
    for ci in range(config.n_clusters):
        cluster_id = f"c{ci:02d}"
        ids = []
        for pi in range(config.pdus_per_cluster):
            pdu_id = f"{cluster_id}-p{pi:02d}"
            rng = np.random.default_rng([config.seed, 1, pdu_index])
            # each PDU favours its own family mix within a category
            fam_weights = {c: rng.dirichlet(np.ones(len(fs))) for c, fs in fams_by_cat.items()}
            cats = rng.choice(len(CATEGORIES), size=config.machines_per_pdu, p=mix)
            machines = []
            for j, c in enumerate(cats):
                cat = CATEGORIES[c]
                fam = fams_by_cat[cat][rng.choice(len(fams_by_cat[cat]), p=fam_weights[cat])]
                entry = catalog[fam][rng.integers(len(catalog[fam]))]
                label = DEDICATED_LABELS[int(rng.random() < 0.3)]
                machines.append(
                    MachineSpec(machine_id=f"{pdu_id}-m{j:03d}", dedicated_label=label, **entry)
                )
            counts = {f: 0 for f in PLATFORM_FAMILIES}
            for m in machines:
                counts[m.platform_family] += 1
            it_max = sum(m.max_power for m in machines) or 1000.0
            pdus.append(
                PduSpec(
                    pdu_id=pdu_id,
                    cluster_id=cluster_id,
                    machines=tuple(machines),
                    network_max_power=round(0.05 * it_max * rng.uniform(0.8, 1.2), 3),
                    cooling_max_power=round(0.12 * it_max * rng.uniform(0.8, 1.2), 3),
                    architecture_type=ARCHITECTURES[pdu_index % len(ARCHITECTURES)],
                    family_counts=counts,
                )
            )
            ids.append(pdu_id)
            pdu_index += 1
        clusters.append(ClusterSpec(cluster_id, tuple(ids)))
    return Fleet(tuple(clusters), tuple(pdus))


def machine_power_curve(spec: MachineSpec, utilization):
    """P_idle + (P_max - P_idle) * (c*u + (1 - c)*u**rho), non-decreasing in u."""
    u = np.asarray(utilization, dtype=np.float64)
    if np.any((u < 0) | (u > 1)) or np.isnan(u).any():
        raise DomainError("utilization must lie in [0, 1]")
    c, rho = spec.curve_mix, spec.curve_exponent
    out = spec.idle_power + (spec.max_power - spec.idle_power) * (c * u + (1 - c) * u**rho)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DropWindow:
    """Tiered load drop on one day: tier ``j`` (lowest priority first) loses
    ``tier_drop[j]`` of its share, staggered so lower tiers go first."""

    day: int
    start_period: int = 190
    end_period: int = 210
    tier_drop: tuple[float, ...] = (1.0, 1.0 / 3.0, 0.0)

    def __post_init__(self):
        if not 0 <= self.start_period < self.end_period <= PERIODS_PER_DAY:
            raise ConfigError("drop window needs 0 <= start < end <= 288")


@dataclass(frozen=True)
class LoadScenario:
    mean_utilization: float = 0.45
    utilization_spread: float = 0.15
    diurnal_amplitude: float = 0.12
    noise_sigma: float = 0.03
    ar_coefficient: float = 0.9
    day_level_sigma: float = 0.03
    tier_shares: tuple[float, ...] = (0.5, 0.3, 0.2)
    drop_window: DropWindow | None = None

    def __post_init__(self):
        if self.drop_window is not None and len(self.drop_window.tier_drop) != len(self.tier_shares):
            raise ConfigError("tier_drop must have one entry per tier")
        if abs(sum(self.tier_shares) - 1.0) > 1e-9:
            raise ConfigError("tier shares must sum to 1")

    def drop_factor(self) -> np.ndarray:
        """Multiplier on utilization over the 288 periods of the drop day."""
        factor = np.ones(PERIODS_PER_DAY)
        w = self.drop_window
        if w is None:
            return factor
        n_tiers = len(self.tier_shares)
        stagger = max(1, (w.end_period - w.start_period) // (2 * n_tiers))
        for j, (share, drop) in enumerate(zip(self.tier_shares, w.tier_drop)):
            begin = w.start_period + j * stagger
            factor[begin:w.end_period] -= share * drop
        return np.clip(factor, 0.0, 1.0)


@dataclass(frozen=True)
class HardwareChange:
    """From ``day`` on, a fraction of a PDU's machines have idle power scaled
    by ``idle_factor`` (max power shifts by the same amount)."""

    pdu_id: str
    day: int
    machine_fraction: float = 0.1
    idle_factor: float = 2.0


@dataclass(frozen=True)
class Dataset:
    """Telemetry on a common grid of ``n_days * 288`` periods.

    PDU arrays have shape (n_pdus, T); machine arrays (n_machines, T) and
    are None when machine-level telemetry was not recorded. Recorded power
    may hold NaN for lost samples; ``*_flags`` carry preprocessing bits.
    """

    fleet: Fleet
    n_days: int
    pdu_cpu: np.ndarray
    pdu_power: np.ndarray
    pdu_it_power: np.ndarray
    pdu_overhead: np.ndarray
    pdu_flags: np.ndarray
    machine_cpu: np.ndarray | None = None
    machine_power: np.ndarray | None = None
    machine_true_power: np.ndarray | None = None
    machine_flags: np.ndarray | None = None
    first_day: int = 0

    @property
    def pdu_ids(self) -> tuple[str, ...]:
        return tuple(p.pdu_id for p in self.fleet.pdus)

    @property
    def n_periods(self) -> int:
        return self.n_days * PERIODS_PER_DAY

    @property
    def has_machines(self) -> bool:
        return self.machine_cpu is not None

    def pdu_index(self, pdu_id: str) -> int:
        return self.pdu_ids.index(pdu_id)

    def machine_slice(self, pdu_index: int) -> slice:
        start = sum(len(p.machines) for p in self.fleet.pdus[:pdu_index])
        return slice(start, start + len(self.fleet.pdus[pdu_index].machines))

    def day_slice(self, day: int) -> slice:
        d = day - self.first_day
        if not 0 <= d < self.n_days:
            raise IndexError(f"day {day} outside dataset")
        return slice(d * PERIODS_PER_DAY, (d + 1) * PERIODS_PER_DAY)

    def days_slice(self, first: int, last: int) -> slice:
        """Periods of days first..last inclusive."""
        return slice(self.day_slice(first).start, self.day_slice(last).stop)

    def day_of_period(self) -> np.ndarray:
        return self.first_day + np.arange(self.n_periods) // PERIODS_PER_DAY

    def replace(self, **changes) -> "Dataset":
        return replace(self, **changes)

    def iter_pdu_samples(self, pdu_index: int) -> Iterator["PduSample"]:
        pdu_id = self.pdu_ids[pdu_index]
        for t in range(self.n_periods):
            yield PduSample(
                pdu_id,
                self.first_day + t // PERIODS_PER_DAY,
                t % PERIODS_PER_DAY,
                float(self.pdu_cpu[pdu_index, t]),
                float(self.pdu_power[pdu_index, t]),
                float(self.pdu_it_power[pdu_index, t]),
                float(self.pdu_overhead[pdu_index, t]),
            )

    def iter_machine_samples(self, machine_index: int) -> Iterator["MachineSample"]:
        mid = self.fleet.machines[machine_index].machine_id
        for t in range(self.n_periods):
            yield MachineSample(
                mid,
                self.first_day + t // PERIODS_PER_DAY,
                t % PERIODS_PER_DAY,
                float(self.machine_cpu[machine_index, t]),
                float(self.machine_power[machine_index, t]),
            )


@dataclass(frozen=True)
class MachineSample:
    machine_id: str
    day: int
    period: int
    cpu_usage: float
    power: float


@dataclass(frozen=True)
class PduSample:
    pdu_id: str
    day: int
    period: int
    cpu_usage: float
    power: float
    it_power: float
    overhead_power: float


def _stream(seed: int, pdu_id: str, purpose: int) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(pdu_id.encode()), purpose])


def _ar1(rng, phi, sigma, shape):
    eps = rng.normal(0.0, sigma, size=shape)
    x0 = rng.normal(0.0, sigma / math.sqrt(1 - phi * phi), size=shape[:-1])
    out, _ = lfilter([1.0], [1.0, -phi], eps, axis=-1, zi=(phi * x0)[..., None])
    return out


def _simulate_pdu(pdu, scenario, n_days, noise_sigma, seed, changes, keep_machines):
    T = n_days * PERIODS_PER_DAY
    n = len(pdu.machines)
    rng = _stream(seed, pdu.pdu_id, 0)
    period = np.arange(T) % PERIODS_PER_DAY

    base = scenario.mean_utilization + rng.uniform(
        -scenario.utilization_spread, scenario.utilization_spread, size=n
    )
    amp = scenario.diurnal_amplitude * rng.uniform(0.5, 1.5, size=n)
    peak = rng.uniform(150, 200)
    diurnal = np.cos(2 * np.pi * (period - peak) / PERIODS_PER_DAY)
    # slow PDU-wide drift (time constant ~3.5 days) with stationary std day_level_sigma
    phi = 0.999
    level = _ar1(rng, phi, scenario.day_level_sigma * math.sqrt(1 - phi * phi), (T,))
    noise = _ar1(rng, scenario.ar_coefficient, scenario.noise_sigma, (n, T))
    util = base[:, None] + amp[:, None] * diurnal[None, :] + level[None, :] + noise
    if scenario.drop_window is not None:
        d = scenario.drop_window.day
        if 0 <= d < n_days:
            util[:, d * PERIODS_PER_DAY:(d + 1) * PERIODS_PER_DAY] *= scenario.drop_factor()
    util = np.clip(util, 0.0, 1.0)

    idle = np.array([m.idle_power for m in pdu.machines])
    maxp = np.array([m.max_power for m in pdu.machines])
    idle_t = np.repeat(idle[:, None], T, axis=1)
    max_t = np.repeat(maxp[:, None], T, axis=1)
    for ch in changes:
        crng = _stream(seed, pdu.pdu_id, 1000 + ch.day)
        k = max(1, int(math.ceil(ch.machine_fraction * n)))
        picked = crng.choice(n, size=k, replace=False)
        start = max(0, ch.day) * PERIODS_PER_DAY
        delta = idle[picked] * (ch.idle_factor - 1.0)
        idle_t[picked, start:] += delta[:, None]
        max_t[picked, start:] += delta[:, None]

    mix = np.array([m.curve_mix for m in pdu.machines])[:, None]
    rho = np.array([m.curve_exponent for m in pdu.machines])[:, None]
    true_power = idle_t + (max_t - idle_t) * (mix * util + (1 - mix) * util**rho)
    cap = np.array([m.cpu_capacity for m in pdu.machines])[:, None]
    cpu = util * cap

    it_power = np.zeros(T)
    pdu_cpu = np.zeros(T)
    for j in range(n):
        it_power += true_power[j]
        pdu_cpu += cpu[j]

    scale = pdu.overhead_capacity
    walk = _ar1(rng, 0.995, 0.004, (T,))
    overhead = scale * np.clip(OVERHEAD_SETPOINT + walk, *OVERHEAD_BAND)
    total = it_power + overhead

    if noise_sigma > 0:
        machine_rec = true_power * np.exp(rng.normal(0.0, noise_sigma, size=(n, T)))
        pdu_rec = total * np.exp(rng.normal(0.0, noise_sigma, size=T))
    else:
        machine_rec = true_power.copy()
        pdu_rec = total.copy()
    out = {"cpu": pdu_cpu, "power": pdu_rec, "it": it_power, "overhead": overhead}
    if keep_machines:
        out.update(m_cpu=cpu, m_power=machine_rec, m_true=true_power)
    return out


def simulate_telemetry(
    fleet: Fleet,
    scenario: LoadScenario = LoadScenario(),
    n_days: int = 30,
    noise_sigma: float = 0.02,
    seed: int = 0,
    hardware_changes: Sequence[HardwareChange] = (),
    record_machines: bool = True,
) -> Dataset:
    """Simulate ``n_days`` of telemetry for every PDU of ``fleet``.

    Each PDU draws from a stream keyed by (seed, pdu_id), so output does not
    depend on PDU order or on which other PDUs are simulated.
    """
    if n_days < 1:
        raise ConfigError("n_days must be at least 1")
    if noise_sigma < 0:
        raise ConfigError("noise_sigma must be non-negative")
    T = n_days * PERIODS_PER_DAY
    P = len(fleet.pdus)
    M = sum(len(p.machines) for p in fleet.pdus)
    arrays = {k: np.zeros((P, T)) for k in ("cpu", "power", "it", "overhead")}
    if record_machines:
        m_arrays = {k: np.zeros((M, T)) for k in ("m_cpu", "m_power", "m_true")}
    row = 0
    for i, pdu in enumerate(fleet.pdus):
        changes = [c for c in hardware_changes if c.pdu_id == pdu.pdu_id]
        res = _simulate_pdu(pdu, scenario, n_days, noise_sigma, seed, changes, record_machines)
        for k in arrays:
            arrays[k][i] = res[k]
        n = len(pdu.machines)
        if record_machines:
            for k in m_arrays:
                m_arrays[k][row:row + n] = res[k]
        row += n
    ds = Dataset(
        fleet=fleet,
        n_days=n_days,
        pdu_cpu=arrays["cpu"],
        pdu_power=arrays["power"],
        pdu_it_power=arrays["it"],
        pdu_overhead=arrays["overhead"],
        pdu_flags=np.zeros((P, T), dtype=np.uint8),
    )
    if record_machines:
        ds = ds.replace(
            machine_cpu=m_arrays["m_cpu"],
            machine_power=m_arrays["m_power"],
            machine_true_power=m_arrays["m_true"],
            machine_flags=np.zeros((M, T), dtype=np.uint8),
        )
    return ds


@dataclass(frozen=True)
class AnomalyConfig:
    """Per-PDU anomaly counts. ``spike_magnitude`` multiplies recorded power;
    maintenance windows scale it by ``maintenance_scale``."""

    n_gaps: int = 0
    gap_len: int = 3
    n_spikes: int = 0
    spike_magnitude: float = 2.0
    n_maintenance: int = 0
    maintenance_len: int = 18
    maintenance_scale: float = 0.5
    margin: int = 2
    max_attempts: int = 1000


@dataclass(frozen=True)
class Anomaly:
    pdu_id: str
    kind: str  # gap | spike | maintenance
    start: int  # period index from the dataset start
    length: int

    def periods(self) -> range:
        return range(self.start, self.start + self.length)


def inject_anomalies(
    dataset: Dataset, config: AnomalyConfig, seed: int = 0
) -> tuple[Dataset, tuple[Anomaly, ...]]:
    """Corrupt recorded PDU telemetry and return the ledger of what was done.

    Gaps blank both CPU and power. Spike and maintenance windows stay inside
    one day and never start at a day's first period, since the rate filter
    has no predecessor there. Windows keep ``margin`` clear periods between
    each other.
    """
    wanted = [
        ("maintenance", config.n_maintenance, config.maintenance_len),
        ("spike", config.n_spikes, 1),
        ("gap", config.n_gaps, config.gap_len),
    ]
    if sum(n for _, n, _ in wanted) == 0:
        return dataset, ()
    for kind, n, length in wanted:
        if n and not 1 <= length < PERIODS_PER_DAY - 1:
            raise PlacementError(f"{kind} length {length} does not fit in a day")
    cpu = dataset.pdu_cpu.copy()
    power = dataset.pdu_power.copy()
    ledger = []
    for i, pdu_id in enumerate(dataset.pdu_ids):
        rng = _stream(seed, pdu_id, 7)
        taken: list[tuple[int, int]] = []
        for kind, n, length in wanted:
            for _ in range(n):
                for _attempt in range(config.max_attempts):
                    day = int(rng.integers(dataset.n_days))
                    offset = int(rng.integers(1, PERIODS_PER_DAY - length))
                    start = day * PERIODS_PER_DAY + offset
                    lo, hi = start - config.margin, start + length + config.margin
                    if all(hi <= a or lo >= b for a, b in taken):
                        break
                else:
                    raise PlacementError(
                        f"could not place {kind} for {pdu_id} after {config.max_attempts} attempts"
                    )
                taken.append((start, start + length))
                sl = slice(start, start + length)
                if kind == "gap":
                    power[i, sl] = np.nan
                    cpu[i, sl] = np.nan
                elif kind == "spike":
                    power[i, sl] *= config.spike_magnitude
                else:
                    power[i, sl] *= config.maintenance_scale
                ledger.append(Anomaly(pdu_id, kind, start, length))
    return dataset.replace(pdu_cpu=cpu, pdu_power=power), tuple(ledger)
