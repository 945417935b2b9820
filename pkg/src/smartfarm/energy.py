"""Per-bit radio energy, sensor battery ledgers and HES/LES classification.

Battery state is tracked in joules against a fixed capacity and exposed as a
normalized level in [0, 1]. Every joule that leaves or enters a ledger is
booked to a cumulative counter so the conservation identity

    battery_norm * capacity + consumed - harvested == initial

can be checked at any point of a run.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union


@dataclass(frozen=True)
class RadioProfile:
    power_w: float
    data_rate_bps: float


LORA = RadioProfile(power_w=0.170, data_rate_bps=27_000.0)
BLE = RadioProfile(power_w=0.011, data_rate_bps=2_000_000.0)


class Category(str, enum.Enum):
    SG = "SG"  # sensor -> gateway (LoRa)
    SS = "SS"  # sensor -> sensor (BLE)
    ACTIVE = "active"
    SLEEP = "sleep"


_COUNTER = {
    Category.SG: "consumed_sg_j",
    Category.SS: "consumed_ss_j",
    Category.ACTIVE: "consumed_active_j",
    Category.SLEEP: "consumed_sleep_j",
}


@dataclass(frozen=True)
class EnergyPolicy:
    l_bl: float = 0.3
    packet_bits: int = 256
    active_w: float = 5e-3
    sleep_w: float = 1e-5
    capacity_j: float = 5000.0

    def __post_init__(self) -> None:
        if not 0.0 < self.l_bl < 1.0:
            raise ValueError(f"l_bl must be in (0, 1), got {self.l_bl}")
        if self.packet_bits <= 0:
            raise ValueError(f"packet_bits must be positive, got {self.packet_bits}")
        if self.active_w < 0 or self.sleep_w < 0:
            raise ValueError("active_w and sleep_w must be non-negative")
        if self.capacity_j <= 0:
            raise ValueError(f"capacity_j must be positive, got {self.capacity_j}")


@dataclass
class EnergyLedger:
    """Battery of one sensor plus its cumulative energy accounting (joules)."""

    battery_norm: float
    capacity_j: float
    consumed_sg_j: float = 0.0
    consumed_ss_j: float = 0.0
    consumed_active_j: float = 0.0
    consumed_sleep_j: float = 0.0
    harvested_j: float = 0.0
    initial_j: float = field(default=float("nan"))

    def __post_init__(self) -> None:
        if self.capacity_j <= 0:
            raise ValueError(f"capacity_j must be positive, got {self.capacity_j}")
        if not 0.0 <= self.battery_norm <= 1.0:
            raise ValueError(f"battery_norm must be in [0, 1], got {self.battery_norm}")
        if math.isnan(self.initial_j):
            self.initial_j = self.battery_norm * self.capacity_j

    @property
    def remaining_j(self) -> float:
        return self.battery_norm * self.capacity_j

    @property
    def consumed_j(self) -> float:
        return self.consumed_sg_j + self.consumed_ss_j + self.consumed_active_j + self.consumed_sleep_j

    def spend(self, category: Category, joules: float) -> float:
        """Draw ``joules`` in place and return what was actually drawn.

        The battery floors at zero; only the energy actually available is
        booked, which keeps the conservation identity exact.
        """
        if joules < 0:
            raise ValueError(f"cannot consume negative energy ({joules})")
        if joules == 0.0:
            return 0.0
        drawn = min(joules, self.remaining_j)
        attr = _COUNTER.get(category) or _COUNTER[Category(category)]
        setattr(self, attr, getattr(self, attr) + drawn)
        # the min guards against a 1-ulp rise from the joule round trip
        self.battery_norm = min(self.battery_norm, max(0.0, (self.remaining_j - drawn) / self.capacity_j))
        return drawn

    def charge(self, joules: float) -> float:
        if joules < 0:
            raise ValueError(f"cannot harvest negative energy ({joules})")
        if joules == 0.0:
            return 0.0
        stored = min(joules, self.capacity_j - self.remaining_j)
        self.harvested_j += stored
        self.battery_norm = max(self.battery_norm, min(1.0, (self.remaining_j + stored) / self.capacity_j))
        return stored

    def conservation_error(self) -> float:
        """Relative violation of remaining + consumed - harvested == initial."""
        lhs = self.remaining_j + self.consumed_j - self.harvested_j
        scale = max(self.initial_j, self.capacity_j)
        return abs(lhs - self.initial_j) / scale


def per_bit_energy(profile: RadioProfile) -> float:
    """Joules needed to put one bit on the air: power over data rate."""
    if profile.data_rate_bps <= 0:
        raise ValueError(f"data rate must be positive, got {profile.data_rate_bps}")
    if profile.power_w < 0:
        raise ValueError(f"power must be non-negative, got {profile.power_w}")
    return profile.power_w / profile.data_rate_bps


def transmit_cost(profile: RadioProfile, bits: int) -> float:
    if bits < 0:
        raise ValueError(f"bits must be non-negative, got {bits}")
    return bits * per_bit_energy(profile)


def apply_consumption(ledger: EnergyLedger, category: Category | str, joules: float) -> EnergyLedger:
    out = dataclasses.replace(ledger)
    out.spend(Category(category), joules)
    return out


_Battery = Union[EnergyLedger, float]


def _level(x: _Battery) -> float:
    return x.battery_norm if isinstance(x, EnergyLedger) else float(x)


def classify_nodes(
    ledgers: Sequence[_Battery] | Mapping[int, _Battery], l_bl: float
) -> tuple[set[int], set[int]]:
    """Split sensors into (HES, LES) index sets.

    A sensor is high-energy only when strictly above ``l_bl``; one sitting
    exactly on the threshold stays low-energy.
    """
    items = ledgers.items() if isinstance(ledgers, Mapping) else enumerate(ledgers)
    hes: set[int] = set()
    les: set[int] = set()
    for sid, led in items:
        (hes if _level(led) > l_bl else les).add(sid)
    return hes, les


def remaining_energy_metric(les: Iterable[_Battery]) -> float:
    """Mean normalized battery of the low-energy set (1.0 when the set is empty)."""
    levels = [_level(x) for x in les]
    if not levels:
        return 1.0
    return sum(levels) / len(levels)


def consumption_terms(ledgers: Sequence[EnergyLedger]) -> dict[str, float]:
    """The four consumption terms, each normalized by total initial capacity.

    ``1 - sum(terms) + harvest_fraction`` reproduces the mean battery of the
    group whenever all ledgers share one capacity.
    """
    total = sum(led.capacity_j for led in ledgers)
    if total == 0:
        return {"sg": 0.0, "ss": 0.0, "active": 0.0, "sleep": 0.0, "harvest": 0.0, "initial": 1.0}
    return {
        "sg": sum(led.consumed_sg_j for led in ledgers) / total,
        "ss": sum(led.consumed_ss_j for led in ledgers) / total,
        "active": sum(led.consumed_active_j for led in ledgers) / total,
        "sleep": sum(led.consumed_sleep_j for led in ledgers) / total,
        "harvest": sum(led.harvested_j for led in ledgers) / total,
        "initial": sum(led.initial_j for led in ledgers) / total,
    }


def remaining_from_consumption(ledgers: Sequence[EnergyLedger]) -> float:
    """RE written as initial level minus normalized consumption plus harvest.

    With zero consumption and no harvest from a full battery this is exactly 1.
    """
    t = consumption_terms(ledgers)
    return t["initial"] - (t["sg"] + t["ss"] + t["active"] + t["sleep"]) + t["harvest"]
