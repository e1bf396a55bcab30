"""Six-lane highway layout, RSU placement and vehicle motion on a ring road."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .config import RSU_SPACING_M

N_LANES = 6
LANE_WIDTH_M = 4.0
RSU_Y_M = -35.0
SPEED_MPS = 140.0 / 3.6

# inter-vehicle gap interval per scenario, metres
SPACING_M = {1: (1.0, 100.0), 2: (100.0, 200.0), 3: (200.0, 300.0)}

VIDEO_CAPABLE = "video_capable"
SAFETY_ONLY = "safety_only"


@dataclass(frozen=True)
class Vehicle:
    id: int
    lane: int
    x_m: float
    y_m: float
    speed_mps: float
    service_class: str = VIDEO_CAPABLE

    @property
    def direction(self) -> int:
        return lane_direction(self.lane)


@dataclass(frozen=True)
class RSU:
    id: int
    x_m: float
    y_m: float = RSU_Y_M
    tx_power_dbm: float = 46.0
    n_prb: int = 50


def lane_y(lane: int) -> float:
    return LANE_WIDTH_M * (lane + 0.5)


def lane_direction(lane):
    """+1 for lanes 0-2, -1 for lanes 3-5 (elementwise on arrays)."""
    if np.ndim(lane):
        return np.where(np.asarray(lane) < N_LANES // 2, 1, -1)
    return 1 if lane < N_LANES // 2 else -1


def place_rsus(n_rsu: int, tx_power_dbm: float = 46.0, n_prb: int = 50) -> list[RSU]:
    return [RSU(b, (b + 0.5) * RSU_SPACING_M, RSU_Y_M, tx_power_dbm, n_prb) for b in range(n_rsu)]


def spawn_vehicles(
    scenario_id: int,
    highway_length_m: float,
    rng: np.random.Generator,
    video_fraction: float = 1.0,
    speed_mps: float = SPEED_MPS,
    lanes: Sequence[int] = range(N_LANES),
) -> list[Vehicle]:
    lo, hi = SPACING_M[scenario_id]
    vehicles = []
    for lane in lanes:
        x = rng.uniform(0.0, min(hi, highway_length_m))
        while x < highway_length_m:
            vehicles.append(Vehicle(len(vehicles), lane, x, lane_y(lane), speed_mps))
            x += rng.uniform(lo, hi)
    video = rng.random(len(vehicles)) < video_fraction
    return [v if video[i] else replace(v, service_class=SAFETY_ONLY) for i, v in enumerate(vehicles)]


def advance_x(x: np.ndarray, velocity_mps: np.ndarray, dt_s: float, highway_length_m: float) -> np.ndarray:
    if not dt_s > 0:
        raise ValueError("dt_s must be positive")
    x = np.mod(x + velocity_mps * dt_s, highway_length_m)
    # np.mod can round a tiny negative up to exactly L
    x[x >= highway_length_m] = 0.0
    return x


def advance_positions(vehicles: Sequence[Vehicle], dt_s: float, highway_length_m: float) -> list[Vehicle]:
    if not vehicles:
        return []
    x = np.array([v.x_m for v in vehicles], dtype=float)
    vel = np.array([v.direction * v.speed_mps for v in vehicles], dtype=float)
    x = advance_x(x, vel, dt_s, highway_length_m)
    return [replace(v, x_m=float(xi)) for v, xi in zip(vehicles, x)]


def ring_dx(x1, x2, highway_length_m: Optional[float]):
    """Absolute longitudinal separation, wrapping on a ring of the given length."""
    dx = np.abs(np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float))
    if highway_length_m is None:
        return dx
    dx = np.mod(dx, highway_length_m)
    return np.minimum(dx, highway_length_m - dx)


def ring_offset(x, origin, highway_length_m: Optional[float]):
    """Signed offset of ``x`` from ``origin`` in [-L/2, L/2)."""
    d = np.asarray(x, dtype=float) - origin
    if highway_length_m is None:
        return d
    return np.mod(d + highway_length_m / 2, highway_length_m) - highway_length_m / 2


def distance(x1, y1, x2, y2, highway_length_m: Optional[float] = None):
    dx = ring_dx(x1, x2, highway_length_m)
    dy = np.asarray(y1, dtype=float) - np.asarray(y2, dtype=float)
    return np.hypot(dx, dy)


def nearest_rsu(vehicle: Vehicle, rsus: Sequence[RSU], highway_length_m: Optional[float] = None) -> int:
    if not rsus:
        raise ValueError("need at least one RSU")
    best, best_d = None, np.inf
    for rsu in sorted(rsus, key=lambda r: r.id):
        d = float(distance(vehicle.x_m, vehicle.y_m, rsu.x_m, rsu.y_m, highway_length_m))
        if d < best_d:
            best, best_d = rsu.id, d
    return best


def nearest_rsu_index(x: np.ndarray, y: np.ndarray, rsu_x: np.ndarray, rsu_y: np.ndarray,
                      highway_length_m: Optional[float] = None) -> np.ndarray:
    """Vectorised ``nearest_rsu``; RSUs are given in id order so argmin breaks ties low."""
    d = distance(x[:, None], y[:, None], rsu_x[None, :], rsu_y[None, :], highway_length_m)
    return np.argmin(d, axis=1)
