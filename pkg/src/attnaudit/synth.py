"""Seeded synthetic attention traces, benign and backdoored, for desk-scale
calibration of every detection statistic.

Rows are Dirichlet-style draws (normalized Gamma variates) scaled by a
per-row visual-mass factor in [0.3, 0.9]. The backdoored regime re-allocates
a fixed fraction of each row's mass onto one seeded subset of visual
positions at a single layer; the subset is fixed per model, mirroring a
model-level structural fingerprint rather than per-sample noise.

Every random draw comes from a counter-based Philox stream keyed as

    key = seed * 2^64 + record_index * 2^32 + domain * 2^16 + layer

with domain 0 for a layer's attention rows (Gamma block first, then the
mass factors), domain 1 for record-level draws (step count, then pooled
hidden state, then phrase choice) and domain 2 for the model-level anomaly
subset (record_index 0, layer = anomaly layer). Distinct keys give
independent, reproducible sub-streams, so per-sample generation is
parallelizable and non-anomalous layers of a backdoored trace are
bit-identical to the benign trace with the same seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .trace import SampleRecord, TraceFile, TraceHeader

MASS_RANGE = (0.3, 0.9)

_PHRASES = (
    "a group of people standing around a market stall",
    "a dog running across a grassy field",
    "two cups of coffee on a wooden table",
    "a city street at night with glowing signs",
    "a child flying a red kite on the beach",
    "a bowl of fruit next to an open book",
    "a train arriving at a crowded platform",
    "mountains reflected in a still lake",
    "a cyclist waiting at a traffic light",
    "an old boat tied to a wooden pier",
    "several birds perched on a power line",
    "a plate of pasta garnished with basil",
)

_DOMAIN_ROWS = 0
_DOMAIN_RECORD = 1
_DOMAIN_SUBSET = 2


@dataclass
class SyntheticSpec:
    """Parameters of the benign/backdoored trace generators."""

    num_samples: int = 200
    layers: tuple[int, ...] = (0,)
    heads: int = 8
    visual_len: int = 64
    steps_range: tuple[int, int] = (4, 8)
    benign_concentration: float | np.ndarray = 1.0
    anomaly_layer: int = 0
    anomaly_fraction: float = 0.05
    anomaly_strength: float = 0.6
    seed: int = 0
    include_pooled_hidden: bool = False
    hidden_dim: int = 32
    include_response_text: bool = False

    def __post_init__(self):
        self.layers = tuple(sorted(set(int(l) for l in self.layers)))
        self.steps_range = (int(self.steps_range[0]), int(self.steps_range[1]))


def _validate(spec: SyntheticSpec, backdoored: bool) -> None:
    if spec.num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    if not spec.layers or any(l < 0 for l in spec.layers):
        raise ValueError("layers must be a non-empty set of indices >= 0")
    if spec.heads < 1 or spec.visual_len < 1:
        raise ValueError("heads and visual_len must be >= 1")
    lo, hi = spec.steps_range
    if lo < 1 or hi < lo:
        raise ValueError("steps_range must satisfy 1 <= T_min <= T_max")
    conc = np.asarray(spec.benign_concentration, dtype=np.float64)
    if (conc <= 0).any():
        raise ValueError("benign_concentration must be > 0")
    if conc.ndim not in (0, 1) or (conc.ndim == 1 and conc.size != spec.visual_len):
        raise ValueError("benign_concentration must be a scalar or a length-V vector")
    if not 0 <= spec.anomaly_fraction <= 1 or (backdoored and spec.anomaly_fraction == 0):
        raise ValueError("anomaly_fraction must lie in (0, 1]")
    if not 0 <= spec.anomaly_strength <= 1:
        raise ValueError("anomaly_strength must lie in [0, 1]")
    if backdoored and spec.anomaly_layer not in spec.layers:
        raise ValueError(f"anomaly_layer {spec.anomaly_layer} is not among layers {spec.layers}")
    if not 0 <= spec.seed < 2**64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    if spec.num_samples >= 2**32 or any(l >= 2**16 for l in spec.layers):
        raise ValueError("record/layer indices exceed the seeding scheme's key layout")
    if spec.include_pooled_hidden and spec.hidden_dim < 1:
        raise ValueError("hidden_dim must be >= 1 when pooled hidden states are generated")


def _stream(seed: int, record: int, domain: int, layer: int = 0) -> np.random.Generator:
    key = (seed << 64) | (record << 32) | (domain << 16) | layer
    return np.random.Generator(np.random.Philox(key=key))


def _anomaly_subset(spec: SyntheticSpec) -> np.ndarray:
    k = math.ceil(spec.anomaly_fraction * spec.visual_len)
    rng = _stream(spec.seed, 0, _DOMAIN_SUBSET, spec.anomaly_layer)
    return np.sort(rng.choice(spec.visual_len, size=k, replace=False))


def _layer_rows(spec: SyntheticSpec, record: int, layer: int, steps: int) -> np.ndarray:
    rng = _stream(spec.seed, record, _DOMAIN_ROWS, layer)
    shape = (steps, spec.heads, spec.visual_len)
    draws = rng.gamma(np.broadcast_to(spec.benign_concentration, shape[-1:]), size=shape)
    draws = np.fmax(draws, np.finfo(np.float64).tiny)
    rows = draws / draws.sum(axis=2, keepdims=True)
    mass = rng.uniform(*MASS_RANGE, size=(steps, spec.heads, 1))
    return rows * mass


def _generate(spec: SyntheticSpec, backdoored: bool) -> TraceFile:
    _validate(spec, backdoored)
    kind = "backdoored" if backdoored else "benign"
    subset = _anomaly_subset(spec) if backdoored else None

    records = []
    for i in range(spec.num_samples):
        record_rng = _stream(spec.seed, i, _DOMAIN_RECORD)
        lo, hi = spec.steps_range
        steps = int(record_rng.integers(lo, hi + 1))
        pooled = None
        if spec.include_pooled_hidden:
            pooled = record_rng.standard_normal(spec.hidden_dim).astype(np.float32)
        text = None
        if spec.include_response_text:
            text = _PHRASES[int(record_rng.integers(0, len(_PHRASES)))]

        attention = {}
        for layer in spec.layers:
            rows = _layer_rows(spec, i, layer, steps)
            if backdoored and layer == spec.anomaly_layer:
                totals = rows.sum(axis=2, keepdims=True)
                rows *= 1.0 - spec.anomaly_strength
                rows[:, :, subset] += spec.anomaly_strength * totals / len(subset)
            attention[layer] = rows.astype(np.float32)
        records.append(
            SampleRecord(
                sample_id=f"probe-{i:05d}",
                attention=attention,
                pooled_hidden=pooled,
                response_text=text,
            )
        )

    header = TraceHeader(
        model_id=f"synthetic/{kind}/seed{spec.seed}",
        num_samples=spec.num_samples,
        layers_recorded=spec.layers,
        heads=spec.heads,
        visual_span_len=spec.visual_len,
        has_pooled_hidden=spec.include_pooled_hidden,
        has_response_text=spec.include_response_text,
        hidden_dim=spec.hidden_dim if spec.include_pooled_hidden else 0,
        note=(
            f"synthetic {kind} trace: concentration={spec.benign_concentration}, "
            f"steps={spec.steps_range}, anomaly(layer={spec.anomaly_layer}, "
            f"fraction={spec.anomaly_fraction}, strength={spec.anomaly_strength})"
            if backdoored
            else f"synthetic {kind} trace: concentration={spec.benign_concentration}, "
            f"steps={spec.steps_range}"
        ),
    )
    return TraceFile(header=header, records=tuple(records))


def gen_benign_trace(spec: SyntheticSpec) -> TraceFile:
    """Benign regime: pure Dirichlet-style rows, fully determined by the seed."""
    return _generate(spec, backdoored=False)


def gen_backdoored_trace(spec: SyntheticSpec) -> TraceFile:
    """Backdoored regime: benign rows with a fraction of each row's mass
    re-allocated onto the model's seeded anomalous subset at one layer.

    With ``anomaly_strength`` 0 the output is bit-identical to
    :func:`gen_benign_trace` under the same seed; other layers always are.
    """
    return _generate(spec, backdoored=True)
