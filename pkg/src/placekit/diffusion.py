"""Desk-scale diffusion mathematics over pluggable score networks.

Everything operates on small float64 arrays ("latent grids"), typically
(height, width, channels) but any shape works, down to single scalars.
The module provides:

* deterministic DDIM forward and inverse steps over a cumulative-alpha
  schedule (linear-beta by default);
* dual-conditioning classifier-free guidance;
* the squared-L2 denoising loss;
* masked latent composition;
* row-stochastic cross-attention maps from query/key matrices;
* an analytic Gaussian score oracle (the Bayes-optimal epsilon prediction
  for i.i.d. Gaussian data), used to verify the samplers end to end;
* the three-phase enhancement schedule (invert, denoise with a base
  network, finish with an enhancer network).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Protocol, Sequence

import numpy as np

from .errors import (
    MaskOverlapError,
    InvalidInputError,
    NonfiniteValueError,
    RangeError,
    ShapeMismatchError,
    StepOutOfRangeError,
)

__all__ = [
    "DDIMSchedule",
    "ScoreNetwork",
    "GaussianScoreOracle",
    "GuidanceScales",
    "EnhancementSchedule",
    "cfg_score",
    "denoising_loss",
    "ddim_step",
    "ddim_inverse_step",
    "invert_step_fixed_point",
    "compose_latents",
    "attention_map",
    "gaussian_oracle_eps",
    "enhancement_phases",
    "run_enhancement",
    "latent_to_json",
    "latent_from_json",
]


def _as_grid(values: Any, what: str) -> np.ndarray:
    grid = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(grid)):
        raise NonfiniteValueError(f"{what} holds non-finite entries")
    return grid


def _require_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what}: shapes {a.shape} and {b.shape} differ")


@dataclass(frozen=True)
class DDIMSchedule:
    """Cumulative signal levels ᾱ_0..ᾱ_T, with ᾱ_0 = 1, strictly decreasing."""

    T: int
    alpha_bar: np.ndarray

    def __post_init__(self) -> None:
        bar = np.asarray(self.alpha_bar, dtype=np.float64)
        object.__setattr__(self, "alpha_bar", bar)
        if self.T < 1:
            raise RangeError(f"schedule needs at least one step, got T={self.T}")
        if bar.shape != (self.T + 1,):
            raise ShapeMismatchError(
                f"alpha_bar must have length T+1={self.T + 1}, got shape {bar.shape}"
            )
        if bar[0] != 1.0:
            raise RangeError(f"alpha_bar[0] must be 1, got {bar[0]}")
        if not np.all((bar > 0) & (bar <= 1)):
            raise RangeError("alpha_bar entries must lie in (0, 1]")
        if not np.all(np.diff(bar) < 0):
            raise RangeError("alpha_bar must be strictly decreasing")

    @classmethod
    def linear_beta(cls, T: int, beta_start: float = 1e-4, beta_end: float = 2e-2) -> "DDIMSchedule":
        """Schedule from per-step noise rates beta interpolated linearly."""
        if T < 1:
            raise RangeError(f"schedule needs at least one step, got T={T}")
        if not 0 < beta_start <= beta_end < 1:
            raise RangeError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
        betas = np.linspace(beta_start, beta_end, T)
        alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        return cls(T=T, alpha_bar=alpha_bar)

    def at(self, t: int) -> float:
        if not isinstance(t, (int, np.integer)) or not 0 <= t <= self.T:
            raise StepOutOfRangeError(f"step t must be an integer in [0, {self.T}], got {t!r}")
        return float(self.alpha_bar[t])


class ScoreNetwork(Protocol):
    """Epsilon-prediction interface; ``None`` conditioning denotes absence."""

    def eps(self, z: np.ndarray, t: int, c_img: Any = None, c_text: Any = None) -> np.ndarray: ...


@dataclass(frozen=True)
class GuidanceScales:
    """Image and text guidance weights for dual-conditioning CFG."""

    omega_img: float
    omega_text: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.omega_img) and math.isfinite(self.omega_text)):
            raise RangeError("guidance scales must be finite")


def cfg_score(
    eps_uncond: Any, eps_img: Any, eps_full: Any, scales: GuidanceScales
) -> np.ndarray:
    """Dual-conditioning classifier-free guidance.

    eps_tilde = eps(∅,∅) + ω_I·(eps(img,∅) − eps(∅,∅)) + ω_T·(eps(img,txt) − eps(img,∅)).

    Evaluated in the algebraically equivalent grouped form
    (1−ω_I)·eps_u + (ω_I−ω_T)·eps_i + ω_T·eps_f so that the endpoint
    identities hold exactly in floating point: (ω_I, ω_T) = (0, 0) returns
    eps_u and (1, 1) returns eps_f, bit-for-bit up to signed zeros.
    """
    u = _as_grid(eps_uncond, "eps_uncond")
    i = _as_grid(eps_img, "eps_img")
    f = _as_grid(eps_full, "eps_full")
    _require_same_shape(u, i, "cfg_score")
    _require_same_shape(u, f, "cfg_score")
    w_img, w_text = scales.omega_img, scales.omega_text
    return (1.0 - w_img) * u + (w_img - w_text) * i + w_text * f


def denoising_loss(eps_true: Any, eps_pred: Any) -> float:
    """Squared L2 norm of the prediction error, summed over all entries."""
    a = _as_grid(eps_true, "eps_true")
    b = _as_grid(eps_pred, "eps_pred")
    _require_same_shape(a, b, "denoising_loss")
    diff = a - b
    return float(np.sum(diff * diff))


def ddim_step(z_t: Any, t: int, eps: Any, s: DDIMSchedule) -> np.ndarray:
    """One deterministic denoising step z_t -> z_{t-1} for a given epsilon."""
    z = _as_grid(z_t, "z_t")
    e = _as_grid(eps, "eps")
    _require_same_shape(z, e, "ddim_step")
    if not isinstance(t, (int, np.integer)) or not 1 <= t <= s.T:
        raise StepOutOfRangeError(f"step t must be an integer in [1, {s.T}], got {t!r}")
    a_t = s.alpha_bar[t]
    a_prev = s.alpha_bar[t - 1]
    x0_hat = (z - math.sqrt(1.0 - a_t) * e) / math.sqrt(a_t)
    return math.sqrt(a_prev) * x0_hat + math.sqrt(1.0 - a_prev) * e


def ddim_inverse_step(z_prev: Any, t: int, eps: Any, s: DDIMSchedule) -> np.ndarray:
    """Exact algebraic inverse of :func:`ddim_step`: z_{t-1} -> z_t, same epsilon."""
    z = _as_grid(z_prev, "z_prev")
    e = _as_grid(eps, "eps")
    _require_same_shape(z, e, "ddim_inverse_step")
    if not isinstance(t, (int, np.integer)) or not 1 <= t <= s.T:
        raise StepOutOfRangeError(f"step t must be an integer in [1, {s.T}], got {t!r}")
    a_t = s.alpha_bar[t]
    a_prev = s.alpha_bar[t - 1]
    x0_hat = (z - math.sqrt(1.0 - a_prev) * e) / math.sqrt(a_prev)
    return math.sqrt(a_t) * x0_hat + math.sqrt(1.0 - a_t) * e


def invert_step_fixed_point(
    z_prev: np.ndarray,
    t: int,
    network: ScoreNetwork,
    s: DDIMSchedule,
    *,
    c_img: Any = None,
    c_text: Any = None,
    tol: float = 1e-13,
    max_iterations: int = 60,
) -> np.ndarray:
    """Invert one step against a network: find z_t self-consistent with its epsilon.

    The naive inversion (epsilon evaluated at z_{t-1}) leaves an O(Δᾱ²)
    mismatch per step because the forward pass will evaluate the network at
    z_t instead; iterating ``z <- inverse_step(z_prev, t, eps(z, t))`` to a
    fixed point removes that mismatch, making invert-then-denoise round
    trips exact to floating-point precision.
    """
    z = _as_grid(z_prev, "z_prev")
    for _ in range(max_iterations):
        eps = network.eps(z, t, c_img, c_text)
        z_next = ddim_inverse_step(z_prev, t, eps, s)
        delta = float(np.max(np.abs(z_next - z))) if z.size else 0.0
        z = z_next
        if delta <= tol * (1.0 + float(np.max(np.abs(z))) if z.size else 1.0):
            break
    return z


def compose_latents(
    z_b: Any, parts: Sequence[tuple[Any, Any]]
) -> np.ndarray:
    """Masked composition: background outside all masks, each part inside its own.

    z_comp = z_b · (1 − ⋃m_i) + Σ z_i · m_i, with pairwise-disjoint binary
    masks.  A mask may match the latent shape exactly or omit the trailing
    channel axis, in which case it is broadcast across channels.
    """
    base = _as_grid(z_b, "z_b")
    union = np.zeros_like(base)
    total = np.zeros_like(base)
    for index, (z_i, m_i) in enumerate(parts):
        part = _as_grid(z_i, f"parts[{index}] latent")
        _require_same_shape(base, part, "compose_latents")
        mask = _broadcast_mask(m_i, base.shape, f"parts[{index}] mask")
        union = union + mask
        total = total + part * mask
    if np.any(union > 1):
        raise MaskOverlapError("composition masks must be pairwise disjoint")
    return base * (1.0 - union) + total


def _broadcast_mask(mask: Any, shape: tuple[int, ...], what: str) -> np.ndarray:
    m = np.asarray(mask, dtype=np.float64)
    if m.shape == shape[:-1] and len(shape) >= 1:
        m = m[..., np.newaxis] * np.ones(shape[-1])
    if m.shape != shape:
        raise ShapeMismatchError(f"{what}: mask shape {np.asarray(mask).shape} does not fit latent shape {shape}")
    if not np.all((m == 0.0) | (m == 1.0)):
        raise InvalidInputError(f"{what}: masks must be binary")
    return m


def attention_map(Q: Any, K: Any) -> np.ndarray:
    """Row-stochastic cross-attention map A[u, v] = softmax_v(q_u · k_v).

    Rows index spatial locations (queries), columns index prompt tokens
    (keys); the softmax is stabilized by per-row max subtraction.
    """
    q = _as_grid(Q, "Q")
    k = _as_grid(K, "K")
    if q.ndim != 2 or k.ndim != 2 or q.shape[1] != k.shape[1]:
        raise ShapeMismatchError(
            f"Q and K must be 2-D with a shared feature axis, got {q.shape} and {k.shape}"
        )
    logits = q @ k.T
    return softmax_rows(logits)


def softmax_rows(logits: Any) -> np.ndarray:
    """Row-wise stabilized softmax of a 2-D logit matrix."""
    z = _as_grid(logits, "logits")
    if z.ndim != 2:
        raise ShapeMismatchError(f"logits must be 2-D, got shape {z.shape}")
    shifted = z - z.max(axis=1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=1, keepdims=True)


def gaussian_oracle_eps(z_t: Any, t: int, mu: float, sigma2: float, s: DDIMSchedule) -> np.ndarray:
    """Bayes-optimal epsilon prediction for i.i.d. N(mu, sigma2) data.

    For z_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε with x0 ~ N(mu, sigma2) per entry,
    E[ε | z_t] = √(1−ᾱ_t)·(z_t − √ᾱ_t·mu) / (ᾱ_t·sigma2 + 1 − ᾱ_t).
    """
    if sigma2 < 0:
        raise RangeError(f"sigma2 must be non-negative, got {sigma2}")
    z = _as_grid(z_t, "z_t")
    a = s.at(t)
    denominator = a * sigma2 + (1.0 - a)
    if denominator == 0.0:
        # t = 0 with noiseless data: the latent is the data itself, no noise to predict.
        return np.zeros_like(z)
    return math.sqrt(1.0 - a) * (z - math.sqrt(a) * mu) / denominator


@dataclass(frozen=True)
class GaussianScoreOracle:
    """Score network wrapper around :func:`gaussian_oracle_eps` (ignores conditioning)."""

    mu: float
    sigma2: float
    schedule: DDIMSchedule

    def __post_init__(self) -> None:
        if self.sigma2 < 0:
            raise RangeError(f"sigma2 must be non-negative, got {self.sigma2}")

    def eps(self, z: np.ndarray, t: int, c_img: Any = None, c_text: Any = None) -> np.ndarray:
        return gaussian_oracle_eps(z, t, self.mu, self.sigma2, self.schedule)


@dataclass(frozen=True)
class EnhancementSchedule:
    """Three-phase step plan: invert to t1's noise level, denoise with the
    base network until t2, finish with the enhancer network."""

    T: int
    alpha: float
    t1: int
    t2: int

    def __post_init__(self) -> None:
        if not 0 <= self.t1 <= self.t2 <= self.T:
            raise RangeError(
                f"phase boundaries must satisfy 0 <= t1 <= t2 <= T, got ({self.t1}, {self.t2}, {self.T})"
            )


def _round_half_down(x: float) -> int:
    return math.ceil(x - 0.5)


def enhancement_phases(T: int, alpha: float) -> EnhancementSchedule:
    """Phase boundaries t1 = α·T and t2 = 0.5·T·(1+α), rounded to the nearest
    integer step with ties rounding down.  T=100, α=0.7 gives (70, 85)."""
    if T < 1:
        raise RangeError(f"T must be >= 1, got {T}")
    if not 0 <= alpha <= 1:
        raise RangeError(f"alpha must lie in [0, 1], got {alpha}")
    t1 = _round_half_down(alpha * T)
    t2 = _round_half_down(0.5 * T * (1 + alpha))
    return EnhancementSchedule(T=T, alpha=alpha, t1=t1, t2=t2)


def run_enhancement(
    z: Any,
    base: ScoreNetwork,
    enhancer: ScoreNetwork,
    sched: EnhancementSchedule,
    d: DDIMSchedule,
) -> np.ndarray:
    """Run the three enhancement phases and return the final latent.

    Phase 1 inverts the latent up through noise levels 1..(T−t1) using the
    base network (self-consistent fixed-point inversion).  Phase 2 denoises
    t2−t1 levels back down with the base network.  Phase 3 denoises the
    remaining T−t2 levels with the enhancer.  α=1 makes every phase empty
    and returns the input unchanged.
    """
    if sched.T != d.T:
        raise RangeError(
            f"enhancement schedule T={sched.T} does not match the DDIM schedule T={d.T}"
        )
    current = _as_grid(z, "z")
    top = sched.T - sched.t1  # highest noise level reached by inversion
    handoff = sched.T - sched.t2  # level where the enhancer takes over
    for level in range(1, top + 1):
        current = invert_step_fixed_point(current, level, base, d)
    for level in range(top, handoff, -1):
        current = ddim_step(current, level, base.eps(current, level), d)
    for level in range(handoff, 0, -1):
        current = ddim_step(current, level, enhancer.eps(current, level), d)
    return current


# --------------------------------------------------------------------------
# Fixture serialization
# --------------------------------------------------------------------------


def latent_to_json(z: Any) -> dict[str, Any]:
    grid = _as_grid(z, "latent")
    return {"shape": list(grid.shape), "values": [float(v) for v in grid.ravel()]}


def latent_from_json(data: Any) -> np.ndarray:
    if not isinstance(data, dict) or "shape" not in data or "values" not in data:
        raise InvalidInputError("latent record must have 'shape' and 'values'")
    shape = tuple(int(v) for v in data["shape"])
    flat = np.asarray(data["values"], dtype=np.float64)
    expected = int(np.prod(shape)) if shape else 1
    if flat.size != expected:
        raise ShapeMismatchError(f"latent record: {flat.size} values do not fill shape {shape}")
    return _as_grid(flat.reshape(shape), "latent")
