import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnaudit.entropy import (
    EntropyConfig,
    all_layer_signatures,
    layer_signature,
    renormalize_visual,
    renyi_entropy,
    shannon_entropy,
    tsallis_entropy,
)
from attnaudit.trace import SampleRecord


def brute_force_signature(block, config):
    """Independent oracle: scalar loop over every (t, h) cell."""
    block = np.asarray(block, dtype=np.float64)
    steps, heads, _ = block.shape
    total = 0.0
    for t in range(steps):
        inner = 0.0
        for h in range(heads):
            p = renormalize_visual(block[t, h, :], config.epsilon)
            if not p.any():
                inner += 0.0
            elif config.measure == "tsallis":
                inner += (1.0 - sum(float(x) ** config.q for x in p)) / (config.q - 1.0)
            elif config.measure == "shannon":
                inner += -sum(float(x) * math.log(x) for x in p if x > 0)
            else:
                inner += math.log(sum(float(x) ** config.alpha for x in p)) / (1 - config.alpha)
        total += inner / heads
    return total / steps


distributions = st.lists(
    st.floats(min_value=0.0, max_value=1.0, allow_nan=False), min_size=1, max_size=32
).filter(lambda xs: sum(xs) > 1e-9)


def _normalize(xs):
    arr = np.asarray(xs, dtype=np.float64)
    return arr / arr.sum()


class TestRenormalize:
    def test_proportional_split(self):
        np.testing.assert_allclose(renormalize_visual(np.array([0.1, 0.3]), 0.0), [0.25, 0.75])

    def test_all_zero_maps_to_zero_vector(self):
        out = renormalize_visual(np.zeros(3), 1e-8)
        assert np.array_equal(out, np.zeros(3))
        assert not np.isnan(out).any()

    def test_uniform(self):
        np.testing.assert_allclose(
            renormalize_visual(np.full(4, 0.2), 0.0), np.full(4, 0.25)
        )

    def test_negative_entry_rejected(self):
        with pytest.raises(ValueError, match="negative"):
            renormalize_visual(np.array([0.1, -0.1]), 1e-8)

    def test_sums_to_less_than_one_with_epsilon(self):
        out = renormalize_visual(np.array([0.2, 0.2]), 1e-8)
        assert 0 < out.sum() < 1


class TestTsallis:
    def test_uniform_four_q2(self):
        assert tsallis_entropy(np.full(4, 0.25), 2.0) == 0.75

    @pytest.mark.parametrize("q", [0.5, 2.0, 3.0])
    def test_delta_is_zero(self, q):
        assert tsallis_entropy(np.array([1.0, 0.0, 0.0]), q) == 0.0

    def test_two_point_uniform_q2(self):
        assert tsallis_entropy(np.array([0.5, 0.5]), 2.0) == 0.5

    def test_q_one_rejected(self):
        with pytest.raises(ValueError, match="shannon"):
            tsallis_entropy(np.array([0.5, 0.5]), 1.0)


class TestShannon:
    def test_uniform_four(self):
        assert shannon_entropy(np.full(4, 0.25)) == pytest.approx(math.log(4), abs=1e-12)

    def test_delta(self):
        assert shannon_entropy(np.array([1.0, 0.0])) == 0.0

    def test_hand_computed(self):
        # frozen from -sum(p ln p) evaluated by hand: 1.5 ln 2
        assert shannon_entropy(np.array([0.5, 0.25, 0.25])) == pytest.approx(
            1.0397207708399179, abs=1e-12
        )


class TestRenyi:
    @pytest.mark.parametrize("n,alpha", [(2, 0.5), (4, 2.0), (7, 3.0)])
    def test_uniform_collapses_to_log_n(self, n, alpha):
        assert renyi_entropy(np.full(n, 1.0 / n), alpha) == pytest.approx(
            math.log(n), abs=1e-12
        )

    def test_hand_computed_alpha_two(self):
        # frozen: -ln(0.375)
        assert renyi_entropy(np.array([0.5, 0.25, 0.25]), 2.0) == pytest.approx(
            0.9808292530117262, abs=1e-12
        )

    def test_delta_alpha_two(self):
        assert renyi_entropy(np.array([1.0, 0.0]), 2.0) == 0.0

    def test_alpha_one_rejected(self):
        with pytest.raises(ValueError, match="shannon"):
            renyi_entropy(np.array([0.5, 0.5]), 1.0)


class TestLayerSignature:
    def test_single_cell_uniform(self):
        # the stability constant in the renormalization shifts the value by O(epsilon)
        block = np.full((1, 1, 4), 0.25)
        assert layer_signature(block, EntropyConfig()).value == pytest.approx(0.75, abs=1e-6)

    def test_two_step_aggregation(self):
        # delta row and uniform-over-2 row: (0 + 0.5) / 2, hand-aggregated
        block = np.array([[[1.0, 0.0]], [[0.5, 0.5]]])
        assert layer_signature(block, EntropyConfig()).value == pytest.approx(0.25, abs=1e-6)

    def test_step_head_symmetry(self, rng):
        rows = rng.dirichlet(np.ones(6), size=2) * 0.8
        as_steps = rows.reshape(2, 1, 6)
        as_heads = rows.reshape(1, 2, 6)
        cfg = EntropyConfig()
        assert layer_signature(as_steps, cfg).value == pytest.approx(
            layer_signature(as_heads, cfg).value, abs=1e-12
        )

    def test_empty_tensor_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            layer_signature(np.zeros((0, 1, 4)), EntropyConfig())

    @pytest.mark.parametrize("measure", ["tsallis", "shannon", "renyi"])
    def test_matches_brute_force_loop(self, rng, measure):
        cfg = EntropyConfig(measure=measure)
        for _ in range(20):
            shape = tuple(rng.integers(1, (9, 9, 17)[i] if i == 2 else 9) for i in range(3))
            block = rng.dirichlet(np.ones(shape[2]), size=shape[:2]) * rng.uniform(
                0.1, 0.9, size=(*shape[:2], 1)
            )
            got = layer_signature(block, cfg).value
            want = brute_force_signature(block, cfg)
            assert got == pytest.approx(want, rel=1e-12, abs=1e-12)

    def test_zero_rows_allowed(self):
        block = np.zeros((2, 1, 4))
        assert layer_signature(block, EntropyConfig()).value == 0.0


class TestAllLayerSignatures:
    def test_keys_match_record_layers(self, rng):
        blocks = {
            0: rng.dirichlet(np.ones(4), size=(2, 2)) * 0.5,
            5: rng.dirichlet(np.ones(4), size=(2, 2)) * 0.5,
        }
        record = SampleRecord(
            sample_id="s", attention={l: b.astype(np.float32) for l, b in blocks.items()}
        )
        out = all_layer_signatures(record, EntropyConfig())
        assert set(out) == {0, 5}
        assert out[0].layer == 0 and out[5].layer == 5

    def test_deterministic(self, rng):
        block = (rng.dirichlet(np.ones(4), size=(2, 2)) * 0.5).astype(np.float32)
        record = SampleRecord(sample_id="s", attention={0: block})
        cfg = EntropyConfig()
        a = all_layer_signatures(record, cfg)[0].value
        b = all_layer_signatures(record, cfg)[0].value
        assert a == b

    def test_permuted_copy_has_equal_signature(self, rng):
        # permutation over the visual axis leaves every entropy unchanged
        block = (rng.dirichlet(np.ones(8), size=(3, 2)) * 0.7).astype(np.float32)
        perm = rng.permutation(8)
        record = SampleRecord(
            sample_id="s", attention={0: block, 3: block[:, :, perm].copy()}
        )
        out = all_layer_signatures(record, EntropyConfig())
        assert out[0].value == pytest.approx(out[3].value, rel=1e-12)


class TestProperties:
    @settings(max_examples=200, deadline=None)
    @given(xs=distributions, seed=st.integers(0, 2**16))
    def test_permutation_invariance(self, xs, seed):
        p = _normalize(xs)
        perm = np.random.default_rng(seed).permutation(p.size)
        for fn in (
            lambda v: tsallis_entropy(v, 2.0),
            shannon_entropy,
            lambda v: renyi_entropy(v, 2.0),
        ):
            assert fn(p[perm]) == pytest.approx(fn(p), rel=1e-9, abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(xs=distributions)
    def test_bounds(self, xs):
        p = _normalize(xs)
        n = p.size
        assert -1e-12 <= tsallis_entropy(p, 2.0) <= 1 - 1 / n + 1e-12
        assert -1e-12 <= shannon_entropy(p) <= math.log(n) + 1e-12

    def test_bounds_attained_exactly(self):
        for n in (2, 5, 16):
            uniform = np.full(n, 1.0 / n)
            delta = np.zeros(n)
            delta[0] = 1.0
            assert tsallis_entropy(uniform, 2.0) == pytest.approx(1 - 1 / n, abs=1e-15)
            assert shannon_entropy(uniform) == pytest.approx(math.log(n), abs=1e-12)
            assert tsallis_entropy(delta, 2.0) == 0.0
            assert shannon_entropy(delta) == 0.0

    def test_tsallis_shannon_limit(self, rng):
        for _ in range(200):
            n = int(rng.integers(2, 33))
            p = rng.dirichlet(np.ones(n))
            assert abs(tsallis_entropy(p, 1 + 1e-4) - shannon_entropy(p)) <= 1e-3

    def test_mixing_toward_uniform_never_decreases_entropy(self, rng):
        # Schur-concavity spot check
        for _ in range(1000):
            n = int(rng.integers(2, 17))
            p = rng.dirichlet(np.full(n, 0.5))
            lam = float(rng.uniform(0.01, 1.0))
            mixed = (1 - lam) * p + lam / n
            assert tsallis_entropy(mixed, 2.0) >= tsallis_entropy(p, 2.0) - 1e-12
            assert shannon_entropy(mixed) >= shannon_entropy(p) - 1e-12
            assert renyi_entropy(mixed, 2.0) >= renyi_entropy(p, 2.0) - 1e-12


class TestConfig:
    def test_rejects_unknown_measure(self):
        with pytest.raises(ValueError, match="unknown entropy measure"):
            EntropyConfig(measure="gibbs")

    def test_rejects_bad_q(self):
        with pytest.raises(ValueError):
            EntropyConfig(measure="tsallis", q=1.0)
        with pytest.raises(ValueError):
            EntropyConfig(measure="tsallis", q=-0.5)

    def test_rejects_bad_alpha(self):
        with pytest.raises(ValueError):
            EntropyConfig(measure="renyi", alpha=1.0)

    def test_rejects_bad_epsilon(self):
        with pytest.raises(ValueError):
            EntropyConfig(epsilon=0.0)
