"""Link-level models: channel coefficients, CSI aging, and capacities.

Distances here are meters and rates bit/s; the geometry layer hands over km
and callers convert. Everything accepts scalars or broadcastable arrays and
is pure given an explicit random generator.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels

BOLTZMANN_J_PER_K = 1.380649e-23


@dataclass
class LinkParams:
    tx_gain: float = 1e4  # linear (40 dB)
    wavelength_m: float = 3e8 / 25e9
    tx_power_w: float = 1.0
    bandwidth_hz: float = 30e6
    noise_power_w: float = BOLTZMANN_J_PER_K * 290.0 * 30e6
    csi_delay_s: float = 1e-6


@dataclass
class IslParams:
    bandwidth_hz: float = 100e6
    tx_power_w: float = 5.0
    peak_gain: float = 1e4  # linear
    boltzmann_j_per_k: float = BOLTZMANN_J_PER_K
    noise_temp_k: float = 290.0
    carrier_hz: float = 25e9
    light_speed_m_s: float = 3e8


@dataclass
class ChannelSample:
    """Realized per-slot link state: coefficients, correlations, rates."""

    slot: int
    ideal_coeff: np.ndarray  # (M, N) complex
    aged_coeff: np.ndarray  # (M, N) complex
    correlation: np.ndarray  # (M, N) in [0, 1]
    downlink_rate: np.ndarray  # (M, N) bit/s, 0 on invisible links
    isl_rate: np.ndarray  # (M, M) bit/s, 0 diagonal
    usable: np.ndarray  # (M, N) bool, mirrors visibility


def bessel_j0(x):
    """Zero-order Bessel function of the first kind.

    Power series below |x| = 12, Hankel asymptotics beyond; absolute error
    stays under 2e-9 on |x| <= 50.
    """
    return kernels.bessel_j0_values(x)


def csi_correlation(doppler_hz, csi_delay_s):
    """Aging correlation clamped into [0, 1].

    The raw autocorrelation J0(2*pi*fD*delay) goes negative on parts of its
    domain; the model declares a correlation in [0, 1], so clamp and keep the
    clamped value for diagnostics.
    """
    raw = kernels.bessel_j0_values(2.0 * np.pi * np.abs(doppler_hz) * csi_delay_s)
    return np.clip(raw, 0.0, 1.0)


def ideal_coeff(tx_gain, wavelength_m, distance_m, phase_rad):
    """Free-space coefficient: magnitude sqrt(G)*lambda/(4*pi*d), given phase."""
    distance_m = np.asarray(distance_m, dtype=float)
    if np.any(distance_m <= 0):
        raise ValueError("distance must be > 0")
    mag = np.sqrt(tx_gain) * wavelength_m / (4.0 * np.pi * distance_m)
    return mag * np.exp(1j * np.asarray(phase_rad))


def age_channel(coeff, correlation, rng):
    """Blend the known coefficient with a unit complex-Gaussian innovation.

    h = rho * h_hat + sqrt(1 - rho^2) * g, g ~ CN(0, 1). With rho = 1 the
    coefficient passes through unchanged; with rho = 0 the output is the
    unit-variance draw itself.
    """
    coeff = np.asarray(coeff, dtype=complex)
    rho = np.asarray(correlation, dtype=float)
    if np.any((rho < 0) | (rho > 1)):
        raise ValueError("correlation must lie in [0, 1]")
    g = (rng.standard_normal(coeff.shape) + 1j * rng.standard_normal(coeff.shape)) / np.sqrt(2.0)
    return rho * coeff + np.sqrt(1.0 - rho * rho) * g


def downlink_rate(tx_power_w, coeff, noise_power_w, bandwidth_hz):
    """Shannon capacity of the space-to-ground link."""
    snr = tx_power_w * np.abs(coeff) ** 2 / noise_power_w
    return bandwidth_hz * np.log2(1.0 + snr)


def isl_rate(params: IslParams, distance_m):
    """Inter-satellite link capacity at the given separation.

    Rejects zero separation (a satellite cannot forward to itself).
    """
    distance_m = np.asarray(distance_m, dtype=float)
    if np.any(distance_m <= 0):
        raise ValueError("ISL distance must be > 0 (distinct satellites)")
    spreading = (4.0 * np.pi * distance_m * params.carrier_hz / params.light_speed_m_s) ** 2
    noise = params.boltzmann_j_per_k * params.noise_temp_k * params.bandwidth_hz
    snr = params.tx_power_w * params.peak_gain**2 / (noise * spreading)
    return params.bandwidth_hz * np.log2(1.0 + snr)


def isl_rate_matrix(params: IslParams, distances_m):
    """ISL capacities for a full distance matrix; diagonal forced to zero."""
    d = np.asarray(distances_m, dtype=float)
    out = np.zeros_like(d)
    off = ~np.eye(d.shape[0], dtype=bool)
    # co-located off-diagonal satellites would be a degenerate constellation
    out[off] = isl_rate(params, np.maximum(d[off], 1e-9))
    return out


def thermal_noise_w(noise_temp_k, bandwidth_hz):
    return BOLTZMANN_J_PER_K * noise_temp_k * bandwidth_hz
