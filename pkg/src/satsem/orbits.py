"""Constellation propagation and slot geometry.

Satellites fly circular polar orbits around a spherical, non-rotating Earth.
Every orbital plane passes through the pole; plane ascending nodes are spread
evenly and the default per-satellite phases stagger pole crossings by
2*pi/M, so the constellation sweeps the user region like a single evenly
spaced ring. Ground users live in a spherical cap centered on the anchor
point (the sub-satellite point of a zero-phase satellite), which realizes
"users on the same side of the Earth" for any satellite count.

All geometry is in km; angles in the public API are degrees unless a name
says radians.
"""

import math
from dataclasses import dataclass

import numpy as np

from .config import ConstellationConfig, UsersConfig


@dataclass
class GroundUser:
    id: int
    lat_deg: float
    lon_deg: float
    compute_gflops: float


@dataclass
class GeometrySnapshot:
    slot: int
    sat_positions_km: np.ndarray  # (M, 3)
    sat_velocities_km_s: np.ndarray  # (M, 3)
    user_positions_km: np.ndarray  # (N, 3)
    distances_km: np.ndarray  # (M, N) slant ranges
    isl_distances_km: np.ndarray  # (M, M), zero diagonal
    elevations_deg: np.ndarray  # (M, N)
    visible: np.ndarray  # (M, N) bool


def default_phase_offsets(cfg: ConstellationConfig) -> np.ndarray:
    """Staggered in-plane phases: satellite j leads by 2*pi*j/M."""
    m = cfg.num_satellites
    return 2.0 * math.pi * np.arange(m) / m


def _plane_axes(cfg: ConstellationConfig) -> np.ndarray:
    """In-plane equatorial axis of each satellite's plane (plane = j mod P)."""
    m = cfg.num_satellites
    planes = np.arange(m) % cfg.num_planes
    node = math.pi * planes / cfg.num_planes
    return np.stack([np.cos(node), np.sin(node), np.zeros(m)], axis=1)


def propagate(cfg: ConstellationConfig, t: int, epoch_offset_s: float = 0.0):
    """Satellite positions/velocities (km, km/s) at slot t.

    The in-plane angle is measured from the pole, so a zero-phase satellite
    starts directly above the anchor point. Pure function of its inputs.
    """
    if t < 0 or t >= cfg.num_slots:
        raise ValueError(f"slot index {t} outside [0, {cfg.num_slots})")
    r = cfg.orbit_radius_km
    rate = cfg.speed_km_s / r  # rad/s
    phases = (
        np.asarray(cfg.phase_offsets, dtype=float)
        if cfg.phase_offsets is not None
        else default_phase_offsets(cfg)
    )
    u = phases + rate * (t * cfg.slot_duration_s + epoch_offset_s)
    axes = _plane_axes(cfg)
    zhat = np.array([0.0, 0.0, 1.0])
    cu = np.cos(u)[:, None]
    su = np.sin(u)[:, None]
    pos = r * (cu * zhat[None, :] + su * axes)
    vel = cfg.speed_km_s * (-su * zhat[None, :] + cu * axes)
    return pos, vel


def anchor_point_km(cfg: ConstellationConfig) -> np.ndarray:
    """Sub-satellite point of a zero-phase satellite (the user-cap center)."""
    return np.array([0.0, 0.0, cfg.earth_radius_km])


def user_positions_km(users, earth_radius_km: float) -> np.ndarray:
    lat = np.radians([u.lat_deg for u in users])
    lon = np.radians([u.lon_deg for u in users])
    return earth_radius_km * np.stack(
        [np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=1
    )


def sample_users(ucfg: UsersConfig, rng: np.random.Generator) -> list:
    """Users uniform over the anchor cap, with uniform compute budgets."""
    cos_cap = math.cos(math.radians(ucfg.cap_radius_deg))
    cos_theta = rng.uniform(cos_cap, 1.0, size=ucfg.num_users)
    theta = np.arccos(cos_theta)  # polar angle from the anchor (+z)
    az = rng.uniform(0.0, 2.0 * math.pi, size=ucfg.num_users)
    budgets = rng.uniform(ucfg.compute_min_gflops, ucfg.compute_max_gflops, size=ucfg.num_users)
    return [
        GroundUser(
            id=i,
            lat_deg=90.0 - math.degrees(theta[i]),
            lon_deg=math.degrees(az[i]),
            compute_gflops=float(budgets[i]),
        )
        for i in range(ucfg.num_users)
    ]


def geometry(cfg: ConstellationConfig, users, t: int, epoch_offset_s: float = 0.0) -> GeometrySnapshot:
    """Slant ranges, elevations, visibility, and ISL distances for slot t."""
    pos, vel = propagate(cfg, t, epoch_offset_s)
    upos = user_positions_km(users, cfg.earth_radius_km)
    rel = pos[:, None, :] - upos[None, :, :]  # (M, N, 3)
    dist = np.linalg.norm(rel, axis=2)
    up = upos / np.linalg.norm(upos, axis=1, keepdims=True)
    sin_el = np.einsum("mnk,nk->mn", rel, up) / dist
    elev = np.degrees(np.arcsin(np.clip(sin_el, -1.0, 1.0)))
    visible = elev >= cfg.min_elevation_deg
    isl = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
    return GeometrySnapshot(
        slot=t,
        sat_positions_km=pos,
        sat_velocities_km_s=vel,
        user_positions_km=upos,
        distances_km=dist,
        isl_distances_km=isl,
        elevations_deg=elev,
        visible=visible,
    )


def doppler_shift_hz(snapshot: GeometrySnapshot, m: int, n: int, carrier_hz: float, light_speed_m_s: float = 3e8) -> float:
    """Doppler from the radial line-of-sight speed; positive when closing."""
    return float(doppler_matrix_hz(snapshot, carrier_hz, light_speed_m_s)[m, n])


def doppler_matrix_hz(snapshot: GeometrySnapshot, carrier_hz: float, light_speed_m_s: float = 3e8) -> np.ndarray:
    rel = snapshot.sat_positions_km[:, None, :] - snapshot.user_positions_km[None, :, :]
    los = rel / snapshot.distances_km[:, :, None]
    # range rate > 0 means receding, which shifts the carrier down
    range_rate_km_s = np.einsum("mnk,mk->mn", los, snapshot.sat_velocities_km_s)
    return -range_rate_km_s * 1e3 / light_speed_m_s * carrier_hz
