import numpy as np
import pytest

from attnaudit.trace import SampleRecord, TraceFile, TraceHeader


def make_trace(
    blocks_per_record,
    model_id="test-model",
    pooled=None,
    texts=None,
    hidden_dim=0,
):
    """Build a TraceFile from a list of {layer: [T, H, V] array} dicts."""
    records = []
    layers = tuple(sorted(blocks_per_record[0]))
    first = blocks_per_record[0][layers[0]]
    heads, visual = first.shape[1], first.shape[2]
    for i, blocks in enumerate(blocks_per_record):
        records.append(
            SampleRecord(
                sample_id=f"s{i}",
                attention={l: np.asarray(b, dtype=np.float32) for l, b in blocks.items()},
                pooled_hidden=None if pooled is None else np.asarray(pooled[i], dtype=np.float32),
                response_text=None if texts is None else texts[i],
            )
        )
    header = TraceHeader(
        model_id=model_id,
        num_samples=len(records),
        layers_recorded=layers,
        heads=heads,
        visual_span_len=visual,
        has_pooled_hidden=pooled is not None,
        has_response_text=texts is not None,
        hidden_dim=hidden_dim if pooled is not None else 0,
    )
    return TraceFile(header=header, records=tuple(records))


def random_trace(rng, num_samples=4, layers=(0, 1), heads=2, visual=5, max_steps=3, **kwargs):
    """Random valid trace: rows are scaled Dirichlet draws, mass < 1."""
    blocks = []
    for _ in range(num_samples):
        steps = int(rng.integers(1, max_steps + 1))
        per_layer = {}
        for layer in layers:
            raw = rng.dirichlet(np.ones(visual), size=(steps, heads))
            scale = rng.uniform(0.2, 0.95, size=(steps, heads, 1))
            per_layer[layer] = (raw * scale).astype(np.float32)
        blocks.append(per_layer)
    return make_trace(blocks, **kwargs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
