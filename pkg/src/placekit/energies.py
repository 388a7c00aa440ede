"""Attention energies, their analytic gradients, and a finite-difference checker.

Two energies are defined over row-stochastic attention maps:

* the attention-control energy, which rewards attention mass inside an
  object's mask (top-k mean over spatial locations) and penalizes mass
  outside it;
* the background-retention energy, which penalizes squared differences
  between two maps' per-location token sums outside the second object's
  mask.

Both are exposed twice: as plain functions of an attention map, and as
differentiable objectives over the *logits* that produce the map through a
row softmax, with hand-derived analytic gradients.  The finite-difference
checker verifies those gradients; ``latent_energy_update`` applies a
gradient-descent step using an objective's own gradient when it has one and
central differences otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .diffusion import softmax_rows
from .errors import (
    InvalidInputError,
    NonfiniteGradientError,
    NonfiniteValueError,
    RangeError,
    ShapeMismatchError,
)

__all__ = [
    "EnergyConfig",
    "topk_mean",
    "attention_control_energy",
    "energy_total",
    "background_retention_energy",
    "latent_energy_update",
    "finite_difference_gradient",
    "AttentionControlObjective",
    "BackgroundRetentionObjective",
]


@dataclass(frozen=True)
class EnergyConfig:
    """Strength parameters: outside-mask weight ω, step size η, top-k fraction."""

    omega: float = 1.0
    eta: float = 0.1
    topk_fraction: float = 0.2

    def __post_init__(self) -> None:
        if not math.isfinite(self.omega):
            raise RangeError("omega must be finite")
        if not (math.isfinite(self.eta) and self.eta >= 0):
            raise RangeError(f"eta must be >= 0, got {self.eta}")
        if not 0 < self.topk_fraction <= 1:
            raise RangeError(f"topk_fraction must lie in (0, 1], got {self.topk_fraction}")

    def k_for(self, n_locations: int) -> int:
        """Top-k count: ceil(fraction · n), at least 1."""
        if n_locations < 1:
            raise RangeError("an attention map needs at least one spatial location")
        return max(1, math.ceil(self.topk_fraction * n_locations))


def _as_finite(values: Any, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonfiniteValueError(f"{what} holds non-finite entries")
    return arr


def _as_map(A: Any) -> np.ndarray:
    arr = _as_finite(A, "attention map")
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeMismatchError(f"attention map must be a 2-D matrix, got shape {arr.shape}")
    return arr


def _as_mask(mask: Any, n_rows: int, what: str = "mask") -> np.ndarray:
    m = np.asarray(mask, dtype=np.float64).ravel()
    if m.shape != (n_rows,):
        raise ShapeMismatchError(
            f"{what} must hold one entry per spatial location ({n_rows}), got {np.asarray(mask).shape}"
        )
    if not np.all((m == 0.0) | (m == 1.0)):
        raise InvalidInputError(f"{what} must be binary")
    return m


def _check_tokens(V: Sequence[int], n_tokens: int) -> tuple[int, ...]:
    indices = tuple(V)
    if not indices:
        raise IndexError("token index set must be non-empty")
    seen = set()
    for v in indices:
        if not isinstance(v, (int, np.integer)):
            raise IndexError(f"token indices must be integers, got {v!r}")
        if not 0 <= v < n_tokens:
            raise IndexError(f"token index {v} outside [0, {n_tokens})")
        if v in seen:
            raise IndexError(f"token index {v} appears more than once")
        seen.add(v)
    return tuple(int(v) for v in indices)


def topk_mean(values: Any, k: int) -> float:
    """Mean of the k largest entries."""
    arr = _as_finite(values, "values").ravel()
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= arr.size:
        raise RangeError(f"k must be an integer in [1, {arr.size}], got {k!r}")
    order = np.sort(arr)
    return float(np.mean(order[arr.size - k:]))


def _topk_indices(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries (stable order on ties)."""
    return np.argsort(-values, kind="stable")[:k]


def attention_control_energy(A: Any, m: Any, v: int, cfg: EnergyConfig) -> float:
    """E = −topk_mean(A[:, v]·m) + ω·topk_mean(A[:, v]·(1−m)).

    The top-k runs over *all* spatial locations of the elementwise products
    (zeros from masked-out locations included), with k = ceil(fraction·rows).
    """
    value, _ = _attention_control_value_and_map_grad(_as_map(A), m, v, cfg)
    return value


def _attention_control_value_and_map_grad(
    A: np.ndarray, m: Any, v: int, cfg: EnergyConfig
) -> tuple[float, np.ndarray]:
    n_rows, n_tokens = A.shape
    mask = _as_mask(m, n_rows)
    if not isinstance(v, (int, np.integer)) or not 0 <= v < n_tokens:
        raise IndexError(f"token index {v!r} outside [0, {n_tokens})")
    k = cfg.k_for(n_rows)
    column = A[:, v]
    inside = column * mask
    outside = column * (1.0 - mask)
    top_in = _topk_indices(inside, k)
    top_out = _topk_indices(outside, k)
    value = -float(np.mean(inside[top_in])) + cfg.omega * float(np.mean(outside[top_out]))
    grad = np.zeros_like(A)
    np.add.at(grad[:, v], top_in, -mask[top_in] / k)
    np.add.at(grad[:, v], top_out, cfg.omega * (1.0 - mask[top_out]) / k)
    return value, grad


def energy_total(A: Any, m: Any, V: Sequence[int], cfg: EnergyConfig) -> float:
    """Sum of :func:`attention_control_energy` over the token index set V."""
    value, _ = _energy_total_value_and_map_grad(_as_map(A), m, V, cfg)
    return value


def _energy_total_value_and_map_grad(
    A: np.ndarray, m: Any, V: Sequence[int], cfg: EnergyConfig
) -> tuple[float, np.ndarray]:
    tokens = _check_tokens(V, A.shape[1])
    total = 0.0
    grad = np.zeros_like(A)
    for v in tokens:
        value, g = _attention_control_value_and_map_grad(A, m, v, cfg)
        total += value
        grad += g
    return total, grad


def background_retention_energy(A1: Any, A2: Any, m2: Any, V: Sequence[int]) -> float:
    """E = ½·Σ_u (1 − m2(u))·(s₁(u) − s₂(u))², with s_i(u) = Σ_{v∈V} A_i[u, v].

    Zero whenever the maps agree, the mask covers everything, or V spans all
    tokens of row-stochastic maps (each s_i(u) is then exactly 1).
    """
    value, _ = _retention_value_and_map_grad(A1, A2, m2, V)
    return value


def _retention_value_and_map_grad(
    A1: Any, A2: Any, m2: Any, V: Sequence[int]
) -> tuple[float, np.ndarray]:
    ref = _as_map(A1)
    target = _as_map(A2)
    if ref.shape != target.shape:
        raise ShapeMismatchError(f"attention maps must share a shape, got {ref.shape} and {target.shape}")
    mask = _as_mask(m2, ref.shape[0], "m2")
    tokens = _check_tokens(V, ref.shape[1])
    s1 = ref[:, tokens].sum(axis=1)
    s2 = target[:, tokens].sum(axis=1)
    weight = 1.0 - mask
    difference = s1 - s2
    value = 0.5 * float(np.sum(weight * difference * difference))
    # Gradient with respect to the *target* map A2.
    grad = np.zeros_like(target)
    grad[:, tokens] = (-(weight * difference))[:, np.newaxis]
    return value, grad


def _softmax_backward(A: np.ndarray, grad_map: np.ndarray) -> np.ndarray:
    """Pull a gradient on a row-softmax output back to its logits."""
    inner = np.sum(grad_map * A, axis=1, keepdims=True)
    return A * (grad_map - inner)


@dataclass(frozen=True)
class AttentionControlObjective:
    """Attention-control energy as a differentiable function of logits.

    Calling it (or ``value``) evaluates Σ_{v∈V} E(softmax(logits), m, v);
    ``gradient`` returns the analytic derivative through the softmax.
    """

    mask: Any
    token_indices: tuple[int, ...]
    config: EnergyConfig

    def __call__(self, logits: Any) -> float:
        return self.value(logits)

    def value(self, logits: Any) -> float:
        A = softmax_rows(logits)
        value, _ = _energy_total_value_and_map_grad(A, self.mask, self.token_indices, self.config)
        return value

    def gradient(self, logits: Any) -> np.ndarray:
        A = softmax_rows(logits)
        _, grad_map = _energy_total_value_and_map_grad(A, self.mask, self.token_indices, self.config)
        return _softmax_backward(A, grad_map)


@dataclass(frozen=True)
class BackgroundRetentionObjective:
    """Background-retention energy as a differentiable function of the
    *target* map's logits; the reference map is held fixed."""

    reference_map: Any
    mask2: Any
    token_indices: tuple[int, ...]

    def __call__(self, logits: Any) -> float:
        return self.value(logits)

    def value(self, logits: Any) -> float:
        A2 = softmax_rows(logits)
        value, _ = _retention_value_and_map_grad(self.reference_map, A2, self.mask2, self.token_indices)
        return value

    def gradient(self, logits: Any) -> np.ndarray:
        A2 = softmax_rows(logits)
        _, grad_map = _retention_value_and_map_grad(self.reference_map, A2, self.mask2, self.token_indices)
        return _softmax_backward(A2, grad_map)


def finite_difference_gradient(f: Callable[[np.ndarray], float], z: Any, h: float) -> np.ndarray:
    """Central-difference gradient: (f(z + h·e) − f(z − h·e)) / (2h) per coordinate."""
    if not (math.isfinite(h) and h > 0):
        raise RangeError(f"finite-difference step h must be positive, got {h}")
    base = _as_finite(z, "z")
    grad = np.zeros_like(base)
    flat = grad.ravel()
    probe = base.copy()
    probe_flat = probe.ravel()
    for i in range(probe_flat.size):
        original = probe_flat[i]
        probe_flat[i] = original + h
        high = float(f(probe))
        probe_flat[i] = original - h
        low = float(f(probe))
        probe_flat[i] = original
        if not (math.isfinite(high) and math.isfinite(low)):
            raise NonfiniteValueError(f"energy returned a non-finite value near coordinate {i}")
        flat[i] = (high - low) / (2.0 * h)
    return grad


def latent_energy_update(z: Any, energy_fn: Any, cfg: EnergyConfig, *, fd_step: float = 1e-6) -> np.ndarray:
    """One gradient-descent step z ← z − η·∇_z E.

    ``energy_fn`` may expose an analytic ``gradient(z)`` method (preferred);
    otherwise it must be a plain callable and the gradient is taken by
    central finite differences with step ``fd_step``.
    """
    base = _as_finite(z, "z")
    if hasattr(energy_fn, "gradient"):
        grad = np.asarray(energy_fn.gradient(base), dtype=np.float64)
    else:
        grad = finite_difference_gradient(energy_fn, base, fd_step)
    if grad.shape != base.shape:
        raise ShapeMismatchError(f"gradient shape {grad.shape} does not match latent shape {base.shape}")
    if not np.all(np.isfinite(grad)):
        raise NonfiniteGradientError("energy gradient holds non-finite entries")
    return base - cfg.eta * grad
