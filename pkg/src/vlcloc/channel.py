"""Synthetic VLC RSSI fingerprint generation.

A Lambertian line-of-sight optical channel over a fixed ceiling-transmitter
geometry produces, for every receiver grid point, one RSSI value (dBm) per
transmitter.  Log-normal shadowing and measurement noise are added in the dB
domain and the result is clamped at a configurable noise floor.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np


class LayoutError(ValueError):
    """Raised for geometrically or structurally invalid room layouts."""


@dataclass(frozen=True)
class Transmitter:
    id: int
    x: float
    y: float
    z: float

    def __post_init__(self):
        if self.z <= 0:
            raise LayoutError(f"transmitter {self.id}: z must be > 0, got {self.z}")


@dataclass(frozen=True)
class Patch:
    """Axis-aligned measurement rectangle in the receiver plane."""

    scenario_id: int
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    target_points: int


@dataclass(frozen=True)
class RoomLayout:
    transmitters: tuple[Transmitter, ...]
    rx_height: float
    grid_spacing: float
    patches: tuple[Patch, ...]

    def __post_init__(self):
        ids = [tx.id for tx in self.transmitters]
        if len(set(ids)) != len(ids):
            raise LayoutError("duplicate transmitter ids")
        if self.grid_spacing <= 0:
            raise LayoutError("grid_spacing must be > 0")
        if self.transmitters and self.rx_height >= min(tx.z for tx in self.transmitters):
            raise LayoutError("rx_height must be below every transmitter")

    @property
    def feature_dim(self) -> int:
        return len(self.transmitters)


@dataclass(frozen=True)
class ChannelParams:
    semi_angle_deg: float = 62.0
    pd_area_m2: float = 1e-4
    fov_deg: float = 62.0
    tx_power_dbm: float = 10.0
    shadowing_sigma_db: float = 1.0
    measurement_noise_sigma_db: float = 0.25
    noise_floor_dbm: float = -95.0

    def __post_init__(self):
        if not 0.0 < self.semi_angle_deg < 90.0:
            raise ValueError(f"semi_angle_deg must be in (0, 90), got {self.semi_angle_deg}")
        if self.pd_area_m2 <= 0:
            raise ValueError("pd_area_m2 must be > 0")
        if not 0.0 < self.fov_deg <= 90.0:
            raise ValueError(f"fov_deg must be in (0, 90], got {self.fov_deg}")


@dataclass(frozen=True)
class FingerprintRecord:
    """One receiver position with its per-transmitter RSSI vector (dBm)."""

    scenario_id: int
    x: float
    y: float
    rssi: np.ndarray


# Table of ceiling transmitter positions used by the default layout (meters).
DEFAULT_TX_POSITIONS = (
    (1, 2.6, 0.8, 2.9),
    (2, 1.7, -0.2, 2.9),
    (3, 3.7, 1.8, 2.9),
    (4, 17.1, 0.2, 2.9),
    (5, 12.9, 0.8, 2.9),
    (6, 17.1, 0.8, 2.9),
    (7, 14.2, 8.5, 2.9),
    (8, 23.2, 4.6, 2.9),
    (9, 15.2, 4.6, 2.9),
    (10, 13.5, 3.6, 2.9),
)

DEFAULT_RX_HEIGHT = 1.1
DEFAULT_GRID_SPACING = 0.2

# Patch centers: scenario 1 covers the TX1/TX2 corner, scenario 2 sits on TX3
# (scenarios 1-2 share the same area of the floor), the rest track one
# transmitter each.  3.0 x 1.8 m at 0.2 m spacing gives a 16 x 10 lattice,
# i.e. 160 points per scenario.
_DEFAULT_PATCH_CENTERS = (
    (1, 2.15, 0.3),
    (2, 3.7, 1.8),
    (3, 17.1, 0.2),
    (4, 12.9, 0.8),
    (5, 17.1, 0.8),
    (6, 14.2, 8.5),
    (7, 23.2, 4.6),
    (8, 15.2, 4.6),
    (9, 13.5, 3.6),
)


def default_layout() -> RoomLayout:
    """Ten ceiling transmitters at 2.9 m, nine 160-point scenario patches."""
    txs = tuple(Transmitter(i, x, y, z) for i, x, y, z in DEFAULT_TX_POSITIONS)
    patches = tuple(
        Patch(sid, cx - 1.5, cx + 1.5, cy - 0.9, cy + 0.9, target_points=160)
        for sid, cx, cy in _DEFAULT_PATCH_CENTERS
    )
    return RoomLayout(txs, DEFAULT_RX_HEIGHT, DEFAULT_GRID_SPACING, patches)


def lambertian_order(semi_angle_deg: float) -> float:
    """Lambertian mode number m = -ln 2 / ln(cos(half-power angle))."""
    if not 0.0 < semi_angle_deg < 90.0:
        raise ValueError(f"semi-angle must be in (0, 90) degrees, got {semi_angle_deg}")
    return -math.log(2.0) / math.log(math.cos(math.radians(semi_angle_deg)))


def los_gain(tx: Transmitter, rx_xy: tuple[float, float], rx_height: float,
             params: ChannelParams) -> float:
    """Line-of-sight channel gain between a ceiling TX and an upward-facing PD.

    H = (m+1) A / (2 pi d^2) * cos^m(phi) * cos(psi), zero outside the PD
    field of view.  Downward TX and upward PD share the same axis, so
    cos(phi) = cos(psi) = dz / d.
    """
    dx = tx.x - rx_xy[0]
    dy = tx.y - rx_xy[1]
    dz = tx.z - rx_height
    if dz <= 0:
        raise ValueError("transmitter must be above the receiver plane")
    d2 = dx * dx + dy * dy + dz * dz
    if d2 == 0.0:
        raise ValueError("coincident TX and RX positions")
    d = math.sqrt(d2)
    cos_angle = dz / d
    if cos_angle < math.cos(math.radians(params.fov_deg)):
        return 0.0
    m = lambertian_order(params.semi_angle_deg)
    return (m + 1.0) * params.pd_area_m2 / (2.0 * math.pi * d2) * cos_angle ** m * cos_angle


def rssi_dbm(tx_power_dbm: float, gain: float, params: ChannelParams,
             rng: np.random.Generator) -> float:
    """Received power in dBm with shadowing and measurement noise.

    Zero gain (outside the field of view) maps straight to the noise floor.
    The two Gaussian draws are always consumed so the RNG stream does not
    depend on the geometry.
    """
    if gain < 0:
        raise ValueError("gain must be >= 0")
    shadow = rng.normal(0.0, params.shadowing_sigma_db) if params.shadowing_sigma_db > 0 else 0.0
    meas = rng.normal(0.0, params.measurement_noise_sigma_db) if params.measurement_noise_sigma_db > 0 else 0.0
    if gain == 0.0:
        return params.noise_floor_dbm
    value = tx_power_dbm + 10.0 * math.log10(gain) + shadow + meas
    return max(value, params.noise_floor_dbm)


def generate_grid(layout: RoomLayout) -> list[tuple[int, tuple[float, float]]]:
    """Regular lattice points for every patch, in patch order.

    Lattice is anchored at each patch's (x_min, y_min) corner with both
    endpoints included.  The realized count must land within +/-10% of the
    patch's target_points.
    """
    eps = 1e-9
    points: list[tuple[int, tuple[float, float]]] = []
    for patch in layout.patches:
        wx = patch.x_max - patch.x_min
        wy = patch.y_max - patch.y_min
        if wx < layout.grid_spacing or wy < layout.grid_spacing:
            raise LayoutError(
                f"scenario {patch.scenario_id}: patch smaller than one grid cell")
        nx = int(math.floor(wx / layout.grid_spacing + eps)) + 1
        ny = int(math.floor(wy / layout.grid_spacing + eps)) + 1
        count = nx * ny
        if patch.target_points and abs(count - patch.target_points) > 0.1 * patch.target_points:
            raise LayoutError(
                f"scenario {patch.scenario_id}: lattice yields {count} points, "
                f"target {patch.target_points} (+/-10%)")
        for i in range(nx):
            for j in range(ny):
                points.append((patch.scenario_id,
                               (patch.x_min + i * layout.grid_spacing,
                                patch.y_min + j * layout.grid_spacing)))
    return points


def synthesize_dataset(layout: RoomLayout, params: ChannelParams,
                       seed: int) -> list[FingerprintRecord]:
    """One fingerprint per grid point; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    records = []
    for scenario_id, (x, y) in generate_grid(layout):
        rssi = np.empty(layout.feature_dim)
        for k, tx in enumerate(layout.transmitters):
            gain = los_gain(tx, (x, y), layout.rx_height, params)
            rssi[k] = rssi_dbm(params.tx_power_dbm, gain, params, rng)
        records.append(FingerprintRecord(scenario_id, x, y, rssi))
    return records


def load_layout(path) -> RoomLayout:
    """Read a room layout from its JSON file."""
    with open(path) as fh:
        doc = json.load(fh)
    try:
        txs = tuple(Transmitter(int(t["id"]), float(t["x"]), float(t["y"]), float(t["z"]))
                    for t in doc["transmitters"])
        patches = tuple(Patch(int(p["scenario_id"]), float(p["x_min"]), float(p["x_max"]),
                              float(p["y_min"]), float(p["y_max"]),
                              int(p.get("target_points", 0)))
                        for p in doc["patches"])
        return RoomLayout(txs, float(doc["rx_height"]), float(doc["grid_spacing"]), patches)
    except KeyError as exc:
        raise LayoutError(f"layout file {path}: missing key {exc}") from exc


def save_layout(layout: RoomLayout, path) -> None:
    doc = {
        "transmitters": [{"id": t.id, "x": t.x, "y": t.y, "z": t.z}
                         for t in layout.transmitters],
        "rx_height": layout.rx_height,
        "grid_spacing": layout.grid_spacing,
        "patches": [{"scenario_id": p.scenario_id, "x_min": p.x_min, "x_max": p.x_max,
                     "y_min": p.y_min, "y_max": p.y_max, "target_points": p.target_points}
                    for p in layout.patches],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
