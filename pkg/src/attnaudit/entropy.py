"""Renormalized visual-attention distributions and their entropy signatures.

A raw attention sub-vector over the visual span is renormalized into a
conditional distribution, scored with a Tsallis / Shannon / Renyi entropy,
and averaged over heads and generation steps into one per-layer signature.
All logarithms are natural. Accumulation is in float64 regardless of the
storage width of the trace tensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trace import SampleRecord

MEASURES = ("tsallis", "shannon", "renyi")

DEFAULT_EPSILON = 1e-8


@dataclass(frozen=True)
class EntropyConfig:
    """Entropy measure selection plus the shared numerical-stability constant.

    ``epsilon`` is the single knob reused by renormalization, the reference
    standard deviation, and z-score denominators downstream.
    """

    measure: str = "tsallis"
    q: float = 2.0
    alpha: float = 2.0
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.measure not in MEASURES:
            raise ValueError(f"unknown entropy measure {self.measure!r}, expected one of {MEASURES}")
        if self.measure == "tsallis" and (self.q <= 0 or self.q == 1):
            raise ValueError("tsallis entropic index q must be > 0 and != 1")
        if self.measure == "renyi" and (self.alpha <= 0 or self.alpha == 1):
            raise ValueError("renyi order alpha must be > 0 and != 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


@dataclass(frozen=True)
class LayerSignature:
    layer: int
    value: float


def renormalize_visual(raw: np.ndarray, epsilon: float) -> np.ndarray:
    """Divide the visual sub-vector by its own mass (plus epsilon).

    An all-zero vector maps to the zero vector: a maximally concentrated
    degenerate case that downstream entropies score as 0, not an error.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1:
        raise ValueError("expected a 1-D attention sub-vector")
    if (raw < 0).any():
        raise ValueError("attention sub-vector has negative entries")
    return raw / (raw.sum() + epsilon)


def tsallis_entropy(p: np.ndarray, q: float) -> float:
    """(1 - sum_j p_j^q) / (q - 1). The index q tunes tail sensitivity."""
    if q <= 0:
        raise ValueError("tsallis entropic index q must be > 0")
    if q == 1:
        raise ValueError("q = 1 is the Shannon limit; use shannon_entropy")
    p = np.asarray(p, dtype=np.float64)
    if not p.any():
        return 0.0
    return float((1.0 - np.sum(p**q)) / (q - 1.0))


def shannon_entropy(p: np.ndarray) -> float:
    """-sum_j p_j ln p_j, with 0 ln 0 taken as 0."""
    p = np.asarray(p, dtype=np.float64)
    pos = p[p > 0]
    return float(-np.sum(pos * np.log(pos)))


def renyi_entropy(p: np.ndarray, alpha: float) -> float:
    """ln(sum_j p_j^alpha) / (1 - alpha)."""
    if alpha <= 0:
        raise ValueError("renyi order alpha must be > 0")
    if alpha == 1:
        raise ValueError("alpha = 1 is the Shannon limit; use shannon_entropy")
    p = np.asarray(p, dtype=np.float64)
    if not p.any():
        return 0.0
    return float(np.log(np.sum(p**alpha)) / (1.0 - alpha))


def _cell_entropies(block: np.ndarray, config: EntropyConfig) -> np.ndarray:
    """Per-(step, head) entropy of the renormalized rows of a [T, H, V] block."""
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 3 or block.shape[0] < 1 or block.shape[1] < 1 or block.shape[2] < 1:
        raise ValueError(f"expected a non-empty [T, H, V] block, got shape {block.shape}")
    if (block < 0).any():
        raise ValueError("attention block has negative entries")
    mass = block.sum(axis=2, keepdims=True)
    p = block / (mass + config.epsilon)
    live = mass[..., 0] > 0
    if config.measure == "tsallis":
        cells = (1.0 - np.sum(p**config.q, axis=2)) / (config.q - 1.0)
    elif config.measure == "shannon":
        logp = np.log(np.where(p > 0, p, 1.0))
        cells = -np.sum(p * logp, axis=2)
    else:
        power_sum = np.sum(p**config.alpha, axis=2)
        cells = np.log(np.where(live, power_sum, 1.0)) / (1.0 - config.alpha)
    # Zero-mass rows renormalize to the zero vector and score 0.
    return np.where(live, cells, 0.0)


def layer_signature(block: np.ndarray, config: EntropyConfig, layer: int = 0) -> LayerSignature:
    """Mean entropy over all generation steps and heads of one layer's block."""
    return LayerSignature(layer=layer, value=float(_cell_entropies(block, config).mean()))


def all_layer_signatures(record: SampleRecord, config: EntropyConfig) -> dict[int, LayerSignature]:
    """One signature per recorded layer of a sample."""
    return {
        layer: layer_signature(record.attention[layer], config, layer)
        for layer in sorted(record.attention)
    }
