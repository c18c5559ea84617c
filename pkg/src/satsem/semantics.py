"""Transmission modes, the payload/quality/compute surrogate, and the
latent-diffusion update kernels.

Five modes: bit (index 0) ships the raw task, text (1) ships the textual
vector only, and three hybrid modes (2-4) add growing visual-token grids.
Generation quality for semantic modes follows a saturating exponential in
the number of denoising steps; the curve is a configurable stand-in for a
trained decoder, not a measured property.
"""

import math
from dataclasses import dataclass

import numpy as np

from .config import SemanticsConfig

MODE_BIT = 0
MODE_TEXT = 1
MODE_NAMES = ("bit", "text", "hybrid_s", "hybrid_m", "hybrid_l")
NUM_MODES = 5


@dataclass
class ModeSpec:
    mode: int
    token_grid: tuple | None  # (rows, cols), None for bit/text
    codebook_size: int
    text_bits: int
    uses_decoder: bool


@dataclass
class QualityModel:
    floor_db: float
    asymptotes_db: tuple  # one per semantic mode (text..hybrid_l)
    rate: float
    bit_quality_db: float


@dataclass
class NoiseSchedule:
    alphas: np.ndarray  # per-step keep factors, (L,)
    alpha_bars: np.ndarray  # cumulative products, (L,)

    @classmethod
    def linear(cls, bar_start=0.9999, bar_end=0.02, num_steps=10):
        bars = np.linspace(bar_start, bar_end, num_steps)
        prev = np.concatenate([[1.0], bars[:-1]])
        sched = cls(alphas=bars / prev, alpha_bars=bars)
        sched.validate()
        return sched

    def validate(self):
        if np.any((self.alphas <= 0) | (self.alphas > 1)):
            raise ValueError("per-step keep factors must lie in (0, 1]")
        if np.any(np.diff(self.alpha_bars) > 0):
            raise ValueError("cumulative keep factors must be nonincreasing")
        if not np.allclose(np.cumprod(self.alphas), self.alpha_bars):
            raise ValueError("alpha_bars must be the cumulative product of alphas")
        return self


@dataclass
class LatentState:
    values: np.ndarray
    step: int


def mode_specs(cfg: SemanticsConfig):
    specs = [
        ModeSpec(MODE_BIT, None, cfg.codebook_size, cfg.text_bits, uses_decoder=False),
        ModeSpec(MODE_TEXT, None, cfg.codebook_size, cfg.text_bits, uses_decoder=True),
    ]
    for i, (a, b) in enumerate(cfg.token_grids):
        specs.append(ModeSpec(MODE_TEXT + 1 + i, (a, b), cfg.codebook_size, cfg.text_bits, uses_decoder=True))
    return specs


def payload_bits(spec: ModeSpec, task_size_bits: int) -> float:
    """Bits on the air: full task for bit mode, text plus token grid otherwise."""
    if spec.mode == MODE_BIT:
        return float(task_size_bits)
    if spec.token_grid is None:
        return float(spec.text_bits)
    a, b = spec.token_grid
    return float(spec.text_bits) + a * b * math.log2(spec.codebook_size)


def payload_table(cfg: SemanticsConfig, task_size_bits: int) -> np.ndarray:
    return np.array([payload_bits(s, task_size_bits) for s in mode_specs(cfg)])


def compute_cost_gflops(spec: ModeSpec, steps: int, step_gflops: float = 686.0, max_steps: int = 10) -> float:
    """Receiver decode cost; bit mode decodes nothing."""
    if spec.mode == MODE_BIT:
        return 0.0
    if not 1 <= steps <= max_steps:
        raise ValueError(f"denoising steps must lie in [1, {max_steps}]")
    return step_gflops * steps


def quality_db(model: QualityModel, spec: ModeSpec, steps: int) -> float:
    """Generation quality: capped for bit mode, saturating in steps otherwise."""
    if spec.mode == MODE_BIT:
        return model.bit_quality_db
    if steps < 1:
        raise ValueError("semantic modes need at least one denoising step")
    asym = model.asymptotes_db[spec.mode - 1]
    return asym - (asym - model.floor_db) * math.exp(-model.rate * steps)


def quality_model(cfg: SemanticsConfig) -> QualityModel:
    return QualityModel(
        floor_db=cfg.quality_floor_db,
        asymptotes_db=tuple(cfg.quality_asymptotes_db),
        rate=cfg.quality_rate,
        bit_quality_db=cfg.bit_quality_db,
    )


def quality_table(cfg: SemanticsConfig) -> np.ndarray:
    """Quality per (mode, steps); the bit-mode row holds the cap."""
    model = quality_model(cfg)
    tab = np.empty((NUM_MODES, cfg.max_steps))
    for spec in mode_specs(cfg):
        for li in range(cfg.max_steps):
            tab[spec.mode, li] = (
                model.bit_quality_db if spec.mode == MODE_BIT else quality_db(model, spec, li + 1)
            )
    return tab


def cost_table(cfg: SemanticsConfig) -> np.ndarray:
    tab = np.zeros((NUM_MODES, cfg.max_steps))
    steps = np.arange(1, cfg.max_steps + 1, dtype=float)
    tab[1:, :] = cfg.step_gflops * steps[None, :]
    return tab


# ---------------------------------------------------------------------------
# Diffusion kernels (verifiable math; the simulator itself uses the quality
# surrogate above, not a live sampler)
# ---------------------------------------------------------------------------


def forward_perturb(clean, noise, schedule: NoiseSchedule, step: int):
    """Noising rule: sqrt(bar)*clean + sqrt(1-bar)*noise at the given step."""
    bar = schedule.alpha_bars[step - 1]
    return np.sqrt(bar) * np.asarray(clean) + np.sqrt(1.0 - bar) * np.asarray(noise)


def reverse_step(state: LatentState, predicted_noise, schedule: NoiseSchedule) -> LatentState:
    """One reverse denoising update, taking the latent from step L to L-1."""
    ell = state.step
    if ell < 1 or ell > len(schedule.alphas):
        raise ValueError("schedule does not cover this step")
    alpha = schedule.alphas[ell - 1]
    bar = schedule.alpha_bars[ell - 1]
    if bar >= 1.0:
        raise ValueError("degenerate schedule: cumulative keep factor is 1 at this step")
    noise = np.asarray(predicted_noise, dtype=float)
    values = (state.values - (1.0 - alpha) / np.sqrt(1.0 - bar) * noise) / np.sqrt(alpha)
    return LatentState(values=values, step=ell - 1)


def guided_noise(cond, uncond, guidance_scale: float):
    """Classifier-free blend: (1+s)*conditional - s*unconditional."""
    cond = np.asarray(cond, dtype=float)
    uncond = np.asarray(uncond, dtype=float)
    if guidance_scale < 0:
        raise ValueError("guidance scale must be >= 0")
    if cond.shape != uncond.shape:
        raise ValueError("conditional/unconditional predictions must match in shape")
    return (1.0 + guidance_scale) * cond - guidance_scale * uncond
