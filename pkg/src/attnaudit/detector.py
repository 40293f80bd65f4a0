"""Reference profiling, z-score normalization, anomaly scoring and the
AUC-based checkpoint verdict, plus the per-layer sweep harness.

The reference model's per-sample entropy signatures anchor a profile
(mean, std, standardized median). Both the reference and the suspect model
are scored against that profile; the rank AUC between the two score sets is
the model-level decision statistic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .entropy import EntropyConfig, layer_signature
from .trace import TraceFile

BENIGN = "benign"
BACKDOORED = "backdoored"

DEFAULT_LAYER = 0
DEFAULT_TAU = 0.8


class ScanWarning(UserWarning):
    """Non-fatal pathology surfaced during a scan."""


@dataclass(frozen=True)
class ReferenceProfile:
    """Reference statistics anchoring z-score normalization.

    ``sigma_ref`` carries the epsilon inside the square root, so it is
    always strictly positive; ``median_m`` is the median of the reference
    set's own standardized signatures.
    """

    layer: int
    mu_ref: float
    sigma_ref: float
    median_m: float
    sample_count: int
    config: EntropyConfig


@dataclass(frozen=True)
class ScoreSets:
    s_ref: np.ndarray
    s_target: np.ndarray


@dataclass(frozen=True)
class DetectionReport:
    auc: float
    tau: float
    verdict: str
    per_sample: ScoreSets
    profile: ReferenceProfile
    layer: int
    warnings: tuple[str, ...] = ()


def build_reference_profile(
    signatures, config: EntropyConfig, layer: int = DEFAULT_LAYER
) -> ReferenceProfile:
    """Mean, epsilon-stabilized population std and standardized median of the
    reference signatures."""
    sig = np.asarray(signatures, dtype=np.float64)
    if sig.ndim != 1 or sig.size < 2:
        raise ValueError("a reference profile needs at least 2 signatures")
    mu = float(sig.mean())
    sigma = float(np.sqrt(np.mean((sig - mu) ** 2) + config.epsilon))
    z = (sig - mu) / (sigma + config.epsilon)
    return ReferenceProfile(
        layer=layer,
        mu_ref=mu,
        sigma_ref=sigma,
        median_m=float(np.median(z)),
        sample_count=int(sig.size),
        config=config,
    )


def zscore(signature: float, profile: ReferenceProfile) -> float:
    return (signature - profile.mu_ref) / (profile.sigma_ref + profile.config.epsilon)


def anomaly_score(z: float, profile: ReferenceProfile) -> float:
    """Absolute deviation of a z-score from the reference median."""
    return abs(z - profile.median_m)


def _tied_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    uniq, inverse, counts = np.unique(values, return_inverse=True, return_counts=True)
    firsts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    avg_rank = firsts + (counts + 1) / 2.0
    return avg_rank[inverse]


def auc(s0, s1) -> float:
    """Probability that a random positive score exceeds a random negative one,
    ties counting half. Rank-based; equals the threshold-sweep ROC integral
    with ties treated as simultaneous TPR/FPR moves."""
    s0 = np.asarray(s0, dtype=np.float64)
    s1 = np.asarray(s1, dtype=np.float64)
    if s0.size == 0 or s1.size == 0:
        raise ValueError("both score sets must be non-empty")
    ranks = _tied_ranks(np.concatenate([s0, s1]))
    r1 = ranks[s0.size :].sum()
    n1 = s1.size
    return float((r1 - n1 * (n1 + 1) / 2.0) / (s0.size * n1))


def decide(auc_value: float, tau: float) -> str:
    """Backdoored iff the AUC statistic reaches the threshold (inclusive)."""
    return BACKDOORED if auc_value >= tau else BENIGN


def _signatures_at(trace: TraceFile, layer: int, config: EntropyConfig) -> np.ndarray:
    return np.array(
        [layer_signature(r.attention[layer], config, layer).value for r in trace.records],
        dtype=np.float64,
    )


def _check_compatible(trace_ref: TraceFile, trace_target: TraceFile, layer: int) -> list[str]:
    notes = []
    for name, trace in (("reference", trace_ref), ("target", trace_target)):
        if layer not in trace.header.layers_recorded:
            raise ValueError(f"layer {layer} is not recorded in the {name} trace")
    hr, ht = trace_ref.header, trace_target.header
    if hr.visual_span_len != ht.visual_span_len or hr.heads != ht.heads:
        raise ValueError(
            "shape mismatch between traces: "
            f"reference H={hr.heads} V={hr.visual_span_len}, "
            f"target H={ht.heads} V={ht.visual_span_len}"
        )
    if hr.num_samples != ht.num_samples:
        raise ValueError(
            "shape mismatch between traces: "
            f"reference has {hr.num_samples} samples, target has {ht.num_samples}"
        )
    mismatched = sum(
        a.sample_id != b.sample_id for a, b in zip(trace_ref.records, trace_target.records)
    )
    if mismatched:
        notes.append(
            f"{mismatched} of {hr.num_samples} sample ids differ between traces; "
            "records are paired by position"
        )
    return notes


def _score_and_decide(
    profile: ReferenceProfile,
    e_ref: np.ndarray,
    e_target: np.ndarray,
    tau: float,
    notes: list[str],
) -> DetectionReport:
    config = profile.config
    if np.mean((e_ref - profile.mu_ref) ** 2) < config.epsilon:
        notes.append(
            "reference profile is degenerate (near-zero signature variance); "
            "z-scores are dominated by the stability constant"
        )
    denom = profile.sigma_ref + config.epsilon
    s_ref = np.abs((e_ref - profile.mu_ref) / denom - profile.median_m)
    s_target = np.abs((e_target - profile.mu_ref) / denom - profile.median_m)
    for note in notes:
        warnings.warn(note, ScanWarning, stacklevel=3)

    auc_value = auc(s_ref, s_target)
    return DetectionReport(
        auc=auc_value,
        tau=tau,
        verdict=decide(auc_value, tau),
        per_sample=ScoreSets(s_ref=s_ref, s_target=s_target),
        profile=profile,
        layer=profile.layer,
        warnings=tuple(notes),
    )


def score_signatures(
    ref_signatures,
    target_signatures,
    config: EntropyConfig | None = None,
    layer: int = DEFAULT_LAYER,
    tau: float = DEFAULT_TAU,
) -> DetectionReport:
    """Run the decision stage on pre-extracted per-sample signatures."""
    config = config or EntropyConfig()
    e_ref = np.asarray(ref_signatures, dtype=np.float64)
    e_target = np.asarray(target_signatures, dtype=np.float64)
    profile = build_reference_profile(e_ref, config, layer)
    return _score_and_decide(profile, e_ref, e_target, tau, [])


def scan(
    trace_ref: TraceFile,
    trace_target: TraceFile,
    config: EntropyConfig | None = None,
    layer: int = DEFAULT_LAYER,
    tau: float = DEFAULT_TAU,
) -> DetectionReport:
    """Full detection pass: signatures for both models on the shared probe
    set, reference profile, z-scores, anomaly scores, AUC, verdict."""
    config = config or EntropyConfig()
    notes = _check_compatible(trace_ref, trace_target, layer)
    e_ref = _signatures_at(trace_ref, layer, config)
    e_target = _signatures_at(trace_target, layer, config)
    profile = build_reference_profile(e_ref, config, layer)
    return _score_and_decide(profile, e_ref, e_target, tau, notes)


def scan_with_profile(
    profile: ReferenceProfile,
    ref_signatures,
    trace_target: TraceFile,
    tau: float = DEFAULT_TAU,
) -> DetectionReport:
    """Scan a target trace against a previously built reference profile and
    its per-sample signatures, skipping reference-trace entropy extraction."""
    if profile.layer not in trace_target.header.layers_recorded:
        raise ValueError(f"layer {profile.layer} is not recorded in the target trace")
    e_ref = np.asarray(ref_signatures, dtype=np.float64)
    if e_ref.size != profile.sample_count:
        raise ValueError("reference signature count does not match the profile")
    notes = []
    if trace_target.header.num_samples != profile.sample_count:
        notes.append(
            f"target has {trace_target.header.num_samples} samples, "
            f"profile was built from {profile.sample_count}"
        )
    e_target = _signatures_at(trace_target, profile.layer, profile.config)
    return _score_and_decide(profile, e_ref, e_target, tau, notes)


def layer_sweep(
    trace_ref: TraceFile, trace_target: TraceFile, config: EntropyConfig | None = None
) -> dict[int, float]:
    """AUC of the scan statistic per shared layer, each layer profiled
    independently."""
    config = config or EntropyConfig()
    shared = sorted(
        set(trace_ref.header.layers_recorded) & set(trace_target.header.layers_recorded)
    )
    if not shared:
        raise ValueError("traces share no recorded layers")
    return {layer: scan(trace_ref, trace_target, config, layer=layer).auc for layer in shared}
