"""Farm geometry, animal motion, ground-truth vitals and solar harvesting."""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .energy import EnergyLedger
from .fusion import DEFAULT_BOUNDARIES, ClassBoundaries, classify_vitals


class Exposure(str, enum.Enum):
    OUTDOOR = "outdoor"
    INDOOR = "indoor"


# harvested power density, mW/cm^2
HARVEST_RATE_MW_CM2 = {Exposure.OUTDOOR: 10.0, Exposure.INDOOR: 0.1}

# activity index = speed / ACTIVITY_SCALE_MPS, so the [1, 2] m/s normal
# movement band maps onto [1/3, 2/3]
ACTIVITY_SCALE_MPS = 3.0


@dataclass(frozen=True)
class VitalParams:
    temp_mean: float = 38.5
    temp_std: float = 0.3
    hb_mean: float = 66.0
    hb_std: float = 4.0


@dataclass(frozen=True)
class FarmConfig:
    side_m: float = 400.0
    num_animals: int = 20
    num_gateways: int = 3
    duration_s: int = 86_400
    decision_interval_s: int = 60
    upload_interval_s: int = 30
    speed_mean: float = 1.5
    speed_std: float = 0.1
    ble_range_m: float = 100.0
    panel_area_cm2: float = 10.0
    exposure: str = "indoor"
    # (start_s, end_s, exposure) windows within a day overriding `exposure`
    exposure_schedule: tuple[tuple[float, float, str], ...] = ()
    num_hes: int = 5
    les_battery_range: tuple[float, float] = (0.1, 0.2)
    gateway_positions: tuple[tuple[float, float], ...] | None = None
    vitals: VitalParams = field(default_factory=VitalParams)

    def __post_init__(self) -> None:
        if self.side_m <= 0:
            raise ValueError(f"side_m must be positive, got {self.side_m}")
        if self.num_gateways < 1:
            raise ValueError("num_gateways must be at least 1")
        if self.num_animals < 0:
            raise ValueError("num_animals must be non-negative")
        if self.upload_interval_s <= 0 or self.decision_interval_s <= 0:
            raise ValueError("intervals must be positive")
        if self.decision_interval_s % self.upload_interval_s:
            raise ValueError("decision_interval_s must be a multiple of upload_interval_s")
        if self.duration_s < self.decision_interval_s:
            raise ValueError("duration_s must cover at least one decision interval")
        if not 0 <= self.num_hes <= self.num_animals:
            raise ValueError("num_hes must lie in [0, num_animals]")
        lo, hi = self.les_battery_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"les_battery_range must satisfy 0 <= lo <= hi <= 1, got {(lo, hi)}")
        Exposure(self.exposure)
        for start, end, exp in self.exposure_schedule:
            Exposure(exp)
            if not 0 <= start < end:
                raise ValueError(f"bad exposure window {(start, end, exp)}")
        if self.gateway_positions is not None and len(self.gateway_positions) != self.num_gateways:
            raise ValueError("gateway_positions must list one position per gateway")

    @property
    def rounds_per_decision(self) -> int:
        return self.decision_interval_s // self.upload_interval_s

    @property
    def steps_per_episode(self) -> int:
        return self.duration_s // self.decision_interval_s

    def exposure_at(self, t_s: float) -> Exposure:
        tod = t_s % 86_400
        for start, end, exp in self.exposure_schedule:
            if start <= tod < end:
                return Exposure(exp)
        return Exposure(self.exposure)


@dataclass(frozen=True)
class GroundTruthVitals:
    temp: float
    hb: float
    ma: float
    class_per_attribute: tuple[int, int, int]


@dataclass(frozen=True)
class Animal:
    id: int
    position: tuple[float, float]
    speed: float
    heading: float
    vitals: GroundTruthVitals


@dataclass
class Gateway:
    id: int
    position: tuple[float, float]
    covered_sensors: set[int] = field(default_factory=set)


@dataclass
class WorldState:
    """Mutable per-run state; arrays are indexed by animal (= sensor) id."""

    config: FarmConfig
    positions: np.ndarray  # (N, 2)
    waypoints: np.ndarray  # (N, 2)
    leg_remaining: np.ndarray  # (N,) metres left on the current leg
    speeds: np.ndarray  # (N,)
    headings: np.ndarray  # (N,)
    vitals: np.ndarray  # (N, 3): temp, hb, ma
    classes: np.ndarray  # (N, 3)
    gateway_xy: np.ndarray  # (G, 2)
    vital_params: tuple[VitalParams, ...]
    t: float = 0.0

    @property
    def num_animals(self) -> int:
        return self.positions.shape[0]

    @property
    def animals(self) -> list[Animal]:
        out = []
        for i in range(self.num_animals):
            v = self.vitals[i]
            gt = GroundTruthVitals(float(v[0]), float(v[1]), float(v[2]), tuple(int(c) for c in self.classes[i]))
            out.append(Animal(i, (float(self.positions[i, 0]), float(self.positions[i, 1])),
                              float(self.speeds[i]), float(self.headings[i]), gt))
        return out

    @property
    def gateways(self) -> list[Gateway]:
        owner = nearest_gateway(self)
        return [
            Gateway(g, (float(x), float(y)), {int(i) for i in np.flatnonzero(owner == g)})
            for g, (x, y) in enumerate(self.gateway_xy)
        ]

    def copy(self) -> "WorldState":
        return dataclasses.replace(
            self,
            positions=self.positions.copy(),
            waypoints=self.waypoints.copy(),
            leg_remaining=self.leg_remaining.copy(),
            speeds=self.speeds.copy(),
            headings=self.headings.copy(),
            vitals=self.vitals.copy(),
            classes=self.classes.copy(),
        )

    def same_as(self, other: "WorldState") -> bool:
        arrays = ("positions", "waypoints", "leg_remaining", "speeds", "headings", "vitals", "classes", "gateway_xy")
        return self.t == other.t and all(
            np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays
        )


def gateway_layout(config: FarmConfig) -> np.ndarray:
    """Gateways evenly spaced on the horizontal midline unless positions are given."""
    if config.gateway_positions is not None:
        return np.array(config.gateway_positions, dtype=float)
    g = config.num_gateways
    xs = config.side_m * np.arange(1, g + 1) / (g + 1)
    return np.column_stack([xs, np.full(g, config.side_m / 2)])


def nearest_gateway(world: WorldState) -> np.ndarray:
    pos, gw = world.positions, world.gateway_xy
    d = np.hypot(pos[:, None, 0] - gw[None, :, 0], pos[:, None, 1] - gw[None, :, 1])
    return np.argmin(d, axis=1)


def init_world(config: FarmConfig, seed: int | np.random.Generator,
               vital_params: Sequence[VitalParams] | None = None) -> WorldState:
    if config.num_animals == 0:
        raise ValueError("a farm needs at least one animal")
    rng = np.random.default_rng(seed)
    n = config.num_animals
    params = tuple(vital_params) if vital_params is not None else (config.vitals,) * n
    if len(params) != n:
        raise ValueError(f"expected {n} vital parameter sets, got {len(params)}")
    positions = rng.uniform(0.0, config.side_m, size=(n, 2))
    world = WorldState(
        config=config,
        positions=positions,
        waypoints=positions.copy(),
        leg_remaining=np.zeros(n),
        speeds=np.full(n, config.speed_mean),
        headings=np.zeros(n),
        vitals=np.zeros((n, 3)),
        classes=np.zeros((n, 3), dtype=np.int8),
        gateway_xy=gateway_layout(config),
        vital_params=params,
    )
    _new_legs(world, np.ones(n, dtype=bool), rng)
    sample_all_vitals(world, rng)
    return world


def _new_legs(world: WorldState, mask: np.ndarray, rng: np.random.Generator) -> None:
    k = int(mask.sum())
    if k == 0:
        return
    targets = rng.uniform(0.0, world.config.side_m, size=(k, 2))
    delta = targets - world.positions[mask]
    world.waypoints[mask] = targets
    world.leg_remaining[mask] = np.hypot(delta[:, 0], delta[:, 1])
    world.headings[mask] = np.arctan2(delta[:, 1], delta[:, 0])


def draw_speeds(config: FarmConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    speeds = rng.normal(config.speed_mean, config.speed_std, size=n)
    # keep strictly positive; a 15-sigma event at default settings
    return np.maximum(speeds, 1e-3)


def reflect(positions: np.ndarray, headings: np.ndarray, side: float) -> None:
    """Mirror coordinates back into [0, side] and flip the matching heading component."""
    for axis in (0, 1):
        c = positions[:, axis]
        low = c < 0.0
        high = c > side
        if low.any() or high.any():
            c[low] = -c[low]
            c[high] = 2 * side - c[high]
            flip = low | high
            if axis == 0:
                headings[flip] = np.pi - headings[flip]
            else:
                headings[flip] = -headings[flip]
            np.clip(c, 0.0, side, out=c)


def step_movement(world: WorldState, dt_s: float, rng: np.random.Generator) -> WorldState:
    """Advance every animal by one random-waypoint step of ``dt_s`` seconds (in place)."""
    if dt_s <= 0:
        raise ValueError(f"dt_s must be positive, got {dt_s}")
    cfg = world.config
    world.speeds = draw_speeds(cfg, world.num_animals, rng)
    travel = world.speeds * dt_s
    # animals that reach their waypoint stop there and start a fresh leg with the rest
    arrive = travel >= world.leg_remaining
    if arrive.any():
        world.positions[arrive] = world.waypoints[arrive]
        travel = np.where(arrive, travel - world.leg_remaining, travel)
        world.leg_remaining[arrive] = 0.0
        _new_legs(world, arrive, rng)
    step = np.minimum(travel, world.leg_remaining)
    world.positions[:, 0] += step * np.cos(world.headings)
    world.positions[:, 1] += step * np.sin(world.headings)
    world.leg_remaining -= step
    reflect(world.positions, world.headings, cfg.side_m)
    world.t += dt_s
    return world


def _vital_arrays(params: Sequence[VitalParams]) -> tuple[np.ndarray, ...]:
    return tuple(np.array([getattr(p, f) for p in params]) for f in ("temp_mean", "temp_std", "hb_mean", "hb_std"))


def activity_from_speed(speed) -> np.ndarray:
    return np.clip(np.asarray(speed, dtype=float) / ACTIVITY_SCALE_MPS, 0.0, 1.0)


def sample_vitals(animal: Animal, rng: np.random.Generator, params: VitalParams = VitalParams(),
                  boundaries: ClassBoundaries = DEFAULT_BOUNDARIES) -> GroundTruthVitals:
    temp = params.temp_mean + params.temp_std * rng.standard_normal() if params.temp_std else params.temp_mean
    hb = params.hb_mean + params.hb_std * rng.standard_normal() if params.hb_std else params.hb_mean
    ma = float(activity_from_speed(animal.speed))
    cls = classify_vitals(np.array([temp, hb, ma]), boundaries)
    return GroundTruthVitals(float(temp), float(hb), ma, tuple(int(c) for c in cls))


def sample_all_vitals(world: WorldState, rng: np.random.Generator,
                      boundaries: ClassBoundaries = DEFAULT_BOUNDARIES) -> None:
    n = world.num_animals
    tm, ts, hm, hs = _vital_arrays(world.vital_params)
    z = rng.standard_normal((n, 2))
    world.vitals[:, 0] = tm + ts * z[:, 0]
    world.vitals[:, 1] = hm + hs * z[:, 1]
    world.vitals[:, 2] = activity_from_speed(world.speeds)
    world.classes = classify_vitals(world.vitals, boundaries)


def harvest_joules(exposure: Exposure | str, dt_s: float, panel_area_cm2: float = 10.0) -> float:
    rate_w_cm2 = HARVEST_RATE_MW_CM2[Exposure(exposure)] * 1e-3
    return panel_area_cm2 * rate_w_cm2 * dt_s


def solar_harvest(ledger: EnergyLedger, exposure: Exposure | str, dt_s: float,
                  panel_area_cm2: float = 10.0) -> EnergyLedger:
    if dt_s < 0:
        raise ValueError(f"dt_s must be non-negative, got {dt_s}")
    out = dataclasses.replace(ledger)
    out.charge(harvest_joules(exposure, dt_s, panel_area_cm2))
    return out
