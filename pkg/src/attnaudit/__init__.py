"""Checkpoint-level backdoor auditing for vision-language models.

Compares a suspect checkpoint's visual-attention entropy statistics against
an architecture-matched benign reference on clean probe samples only; no
triggers or poisoned data are needed. Model inference sits behind the trace
file boundary, so the detection math here runs anywhere.
"""

from .detector import (
    BACKDOORED,
    BENIGN,
    DetectionReport,
    ReferenceProfile,
    ScoreSets,
    auc,
    build_reference_profile,
    decide,
    layer_sweep,
    scan,
    scan_with_profile,
    score_signatures,
    zscore,
)
from .entropy import (
    EntropyConfig,
    LayerSignature,
    all_layer_signatures,
    layer_signature,
    renormalize_visual,
    renyi_entropy,
    shannon_entropy,
    tsallis_entropy,
)
from .synth import SyntheticSpec, gen_backdoored_trace, gen_benign_trace
from .trace import (
    SampleRecord,
    TraceError,
    TraceFile,
    TraceFormatError,
    TraceHeader,
    TraceTruncationError,
    TraceValidationError,
    read_trace,
    validate_trace,
    write_trace,
)

__version__ = "0.1.0"
