"""Cost/latency economics: job-scoped scaling curves, always-on crossover
rates, and pay-per-byte query pricing.

Instance bandwidths and prices below are editable assumptions, not measured
values; the shapes (asymptotes, crossovers, pareto fronts) are what the
models guarantee.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from . import errors

TIB = 1024**4
MIB = 1024**2

VM = "vm"
FAAS = "faas"

FULL_COLUMNS = "full_columns"
SELECTED_ROWS = "selected_rows_of_columns"


@dataclass(frozen=True)
class ResourceProfile:
    kind: str
    startup_s: Fraction
    scan_mib_per_s: Fraction  # per unit
    unit_usd_per_s: Fraction
    max_units: int = 10_000

    def __post_init__(self):
        if self.kind not in (VM, FAAS):
            raise ValueError(f"kind must be {VM} or {FAAS}")
        if self.startup_s < 0 or self.unit_usd_per_s <= 0 or self.scan_mib_per_s <= 0:
            raise ValueError("startup must be >= 0, price and bandwidth > 0")


# 2 GiB function reading from the object store at its steady per-host rate.
FAAS_PROFILE = ResourceProfile(
    FAAS,
    startup_s=Fraction(4),
    scan_mib_per_s=Fraction(90),
    unit_usd_per_s=Fraction("3.3e-5") * 2,
)

# assumption: large NVMe-backed instance, ~2.2 GiB/s effective scan rate
VM_PROFILE = ResourceProfile(
    VM,
    startup_s=Fraction(120),
    scan_mib_per_s=Fraction(2200),
    unit_usd_per_s=Fraction("0.216") / 3600,
)


def job_scoped_point(data_bytes: int, profile: ResourceProfile, units: int):
    """(latency_s, cost_usd) for one unit count, billed launch to finish."""
    if units < 1:
        raise ValueError("units must be >= 1")
    latency = profile.startup_s + Fraction(data_bytes) / (
        units * profile.scan_mib_per_s * MIB
    )
    cost = units * latency * profile.unit_usd_per_s
    return latency, cost


def job_scoped_curve(data_bytes: int, profile: ResourceProfile, unit_counts):
    return [
        (units, *job_scoped_point(data_bytes, profile, units)) for units in unit_counts
    ]


def pareto_front(curve):
    """(units, latency, cost) points not dominated in both latency and cost."""
    front = []
    for point in curve:
        _, lat, cost = point
        if not any(
            (l2 <= lat and c2 <= cost and (l2 < lat or c2 < cost))
            for _, l2, c2 in curve
        ):
            front.append(point)
    return front


def min_cost(data_bytes: int, profile: ResourceProfile, unit_counts) -> Fraction:
    return min(c for _, _, c in job_scoped_curve(data_bytes, profile, unit_counts))


def always_on_crossover(vm_hourly_usd: Fraction, per_query_usd: Fraction) -> Fraction:
    """Queries/hour above which the always-on cluster is cheaper."""
    if per_query_usd <= 0:
        raise errors.DegenerateInput("per-query cost must be positive")
    if vm_hourly_usd <= 0:
        raise errors.DegenerateInput("vm hourly cost must be positive")
    return Fraction(vm_hourly_usd) / Fraction(per_query_usd)


@dataclass(frozen=True)
class QaaSPricing:
    usd_per_tib_scanned: Fraction = Fraction(5)
    rule: str = FULL_COLUMNS

    def __post_init__(self):
        if self.rule not in (FULL_COLUMNS, SELECTED_ROWS):
            raise ValueError(f"unknown counting rule {self.rule}")


def qaas_query_cost(
    bytes_per_used_column, selectivity, pricing: QaaSPricing
) -> Fraction:
    """Bill for scanning the used columns under the pricing's counting rule."""
    if not 0 <= selectivity <= 1:
        raise ValueError("selectivity must be in [0, 1]")
    total = sum(bytes_per_used_column)
    if pricing.rule == SELECTED_ROWS:
        total = Fraction(total) * Fraction(selectivity)
    return Fraction(total) * pricing.usd_per_tib_scanned / TIB


@dataclass(frozen=True)
class InstancePreset:
    name: str
    count: int
    hourly_usd_per_instance: Fraction  # assumption, editable in config


# cluster sizes that hold / stream 1 TB within an interactive target,
# by storage tier; prices are placeholders for current list prices
ALWAYS_ON_PRESETS = (
    InstancePreset("dram-class", 3, Fraction("3.024")),
    InstancePreset("nvme-class", 7, Fraction("4.992")),
    InstancePreset("network-storage-class", 13, Fraction("3.888")),
)


def preset_hourly_usd(preset: InstancePreset) -> Fraction:
    return preset.count * preset.hourly_usd_per_instance


CURVE_CSV_HEADER = "kind,units,latency_s,cost_usd"


def curve_to_csv(kind: str, curve) -> list[str]:
    return [
        f"{kind},{units},{float(lat):.6g},{float(cost):.6g}" for units, lat, cost in curve
    ]
