"""Suppression tests: ramp mapping, state transitions, logit masking, RNG streams."""

from __future__ import annotations

import math

import numpy as np
import pytest

from cgrs.certainty import CertaintyScore
from cgrs.rng import (
    DECISION_STREAM,
    SAMPLING_STREAM,
    decision_uniform,
    derive_seed,
    sampling_uniform,
    stream_uniform,
)
from cgrs.suppression import (
    MASK_NEG_VALUE,
    SuppressionState,
    initial_state,
    mask_triggers,
    should_suppress,
    suppression_probability,
    update_state,
)


class TestSuppressionProbability:
    def test_below_threshold_is_zero(self):
        assert suppression_probability(0.3, 0.9) == 0.0
        assert suppression_probability(0.9, 0.9) == 0.0

    def test_full_certainty_is_one(self):
        assert suppression_probability(1.0, 0.9) == 1.0
        assert suppression_probability(1.0, 0.0) == 1.0

    def test_linear_ramp_midpoint(self):
        assert abs(suppression_probability(0.95, 0.9) - 0.5) < 1e-12

    def test_float64_residue_above_threshold(self):
        # (0.926 - 0.9) / 0.1 in binary64 lands 3e-16 above 0.26
        p = suppression_probability(0.926, 0.9)
        assert p == 0.2600000000000003
        assert abs(p - 0.26) <= 1e-15

    def test_delta_zero_is_identity(self):
        rng = np.random.default_rng(5)
        for c in rng.random(100):
            assert suppression_probability(float(c), 0.0) == float(c)

    def test_delta_one_rejected(self):
        with pytest.raises(ValueError):
            suppression_probability(0.95, 1.0)

    def test_out_of_range_inputs_rejected(self):
        with pytest.raises(ValueError):
            suppression_probability(-0.1, 0.9)
        with pytest.raises(ValueError):
            suppression_probability(1.1, 0.9)
        with pytest.raises(ValueError):
            suppression_probability(0.5, -0.2)

    def test_monotone_in_certainty(self):
        rng = np.random.default_rng(23)
        for _ in range(200):
            delta = float(rng.uniform(0.0, 0.99))
            a, b = sorted(rng.random(2))
            pa = suppression_probability(float(a), delta)
            pb = suppression_probability(float(b), delta)
            assert pa <= pb
            assert 0.0 <= pa <= 1.0 and 0.0 <= pb <= 1.0

    def test_continuity_across_threshold(self):
        # ramp is continuous at C = delta: both sides within eps/(1-delta)
        for delta in (0.0, 0.3, 0.9, 0.99):
            eps = 1e-9
            below = suppression_probability(max(delta - eps, 0.0), delta)
            above = suppression_probability(min(delta + eps, 1.0), delta)
            assert below == 0.0
            assert above <= eps / (1.0 - delta) + 1e-15


def make_score(value: float, vocab_size: int = 11) -> CertaintyScore:
    return CertaintyScore(
        value=value,
        mean_entropy=(1.0 - value) * math.log(vocab_size),
        n_tokens=1,
        vocab_size=vocab_size,
        truncated=False,
    )


class TestStateTransitions:
    def test_initial_state_p_zero(self):
        st = initial_state(delta=0.9, seed=42)
        assert st.p == 0.0
        assert st.last_certainty is None
        assert st.rng_stream_position == 0
        assert not st.fixed

    def test_update_applies_ramp(self):
        st = initial_state(delta=0.9, seed=1)
        st2 = update_state(st, make_score(0.95))
        assert abs(st2.p - 0.5) < 1e-12
        assert st2.last_certainty.value == 0.95
        # original untouched (frozen value semantics)
        assert st.p == 0.0

    def test_fixed_state_ignores_updates(self):
        st = initial_state(delta=0.9, seed=1, fixed_p=0.25)
        assert st.fixed and st.p == 0.25
        st2 = update_state(st, make_score(1.0))
        assert st2.p == 0.25

    def test_invariant_p_zero_before_first_certainty(self):
        with pytest.raises(ValueError):
            SuppressionState(
                p=0.5,
                delta=0.9,
                last_certainty=None,
                rng_seed=0,
                rng_stream_position=0,
                fixed=False,
            )

    def test_should_suppress_advances_position(self):
        st = initial_state(delta=0.9, seed=9, fixed_p=1.0)
        fired, st2 = should_suppress(st)
        assert fired
        assert st2.rng_stream_position == 1
        assert st.rng_stream_position == 0

    def test_p_zero_never_fires(self):
        st = initial_state(delta=0.9, seed=123)
        for _ in range(100):
            fired, st = should_suppress(st)
            assert not fired

    def test_p_one_always_fires(self):
        st = initial_state(delta=0.9, seed=123, fixed_p=1.0)
        for _ in range(100):
            fired, st = should_suppress(st)
            assert fired

    def test_empirical_rate_half(self):
        st = initial_state(delta=0.9, seed=42, fixed_p=0.5)
        fires = 0
        n = 10_000
        for _ in range(n):
            fired, st = should_suppress(st)
            fires += fired
        assert abs(fires / n - 0.5) < 0.02

    def test_decisions_are_replayable(self):
        st_a = initial_state(delta=0.9, seed=7, fixed_p=0.5)
        st_b = initial_state(delta=0.9, seed=7, fixed_p=0.5)
        for _ in range(50):
            fa, st_a = should_suppress(st_a)
            fb, st_b = should_suppress(st_b)
            assert fa == fb


class TestMaskTriggers:
    def test_masked_positions_exact_value(self):
        logits = np.array([1.0, 2.0, 3.0, 4.0])
        masked = mask_triggers(logits, {1, 3})
        assert masked[1] == MASK_NEG_VALUE == -1e9
        assert masked[3] == -1e9

    def test_unmasked_positions_bit_identical(self):
        rng = np.random.default_rng(31)
        for _ in range(1000):
            n = int(rng.integers(2, 64))
            logits = rng.normal(size=n) * 10.0
            k = int(rng.integers(0, n))
            triggers = set(map(int, rng.choice(n, size=k, replace=False)))
            masked = mask_triggers(logits, triggers, allow_full_mask=True)
            for i in range(n):
                if i in triggers:
                    assert masked[i] == -1e9
                else:
                    assert masked[i] == logits[i]

    def test_input_not_mutated(self):
        logits = np.array([1.0, 2.0])
        snapshot = logits.copy()
        mask_triggers(logits, {0})
        assert np.array_equal(logits, snapshot)

    def test_idempotent(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            logits = rng.normal(size=16)
            triggers = {1, 5, 9}
            once = mask_triggers(logits, triggers)
            twice = mask_triggers(once, triggers)
            assert np.array_equal(once, twice)

    def test_commutes_with_shift_on_unmasked(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            logits = rng.normal(size=12)
            shift = float(rng.normal())
            triggers = {0, 4}
            a = mask_triggers(logits + shift, triggers)
            b = mask_triggers(logits, triggers) + shift
            keep = [i for i in range(12) if i not in triggers]
            assert np.array_equal(a[keep], b[keep])

    def test_empty_trigger_set_is_identity(self):
        logits = np.array([0.5, -0.5])
        assert np.array_equal(mask_triggers(logits, set()), logits)

    def test_out_of_range_ids_rejected(self):
        with pytest.raises(ValueError):
            mask_triggers(np.array([1.0, 2.0]), {2})
        with pytest.raises(ValueError):
            mask_triggers(np.array([1.0, 2.0]), {-1})

    def test_full_mask_guard(self):
        logits = np.array([1.0, 2.0])
        with pytest.raises(ValueError, match="mask"):
            mask_triggers(logits, {0, 1})
        masked = mask_triggers(logits, {0, 1}, allow_full_mask=True)
        assert list(masked) == [-1e9, -1e9]

    def test_nonfinite_logits_rejected(self):
        with pytest.raises(ValueError):
            mask_triggers(np.array([np.nan, 1.0]), {0})


class TestRngStreams:
    def test_streams_are_independent(self):
        # same seed, same index, different stream: distinct values
        for idx in range(20):
            a = sampling_uniform(42, idx)
            b = decision_uniform(42, idx)
            assert a != b

    def test_counter_random_access(self):
        # stateless: value at index k never depends on visiting order
        forward = [stream_uniform(7, SAMPLING_STREAM, i) for i in range(10)]
        backward = [stream_uniform(7, SAMPLING_STREAM, i) for i in reversed(range(10))]
        assert forward == backward[::-1]

    def test_uniform_range(self):
        vals = [stream_uniform(3, DECISION_STREAM, i) for i in range(1000)]
        assert all(0.0 <= v < 1.0 for v in vals)
        assert abs(np.mean(vals) - 0.5) < 0.03

    def test_seed_sensitivity(self):
        a = [stream_uniform(1, SAMPLING_STREAM, i) for i in range(8)]
        b = [stream_uniform(2, SAMPLING_STREAM, i) for i in range(8)]
        assert a != b

    def test_derive_seed_spreads(self):
        base = 1234
        derived = {derive_seed(base, i) for i in range(1000)}
        assert len(derived) == 1000
        assert all(0 <= d < 2**64 for d in derived)

    def test_derive_seed_deterministic(self):
        assert derive_seed(99, 3) == derive_seed(99, 3)
        assert derive_seed(99, 3) != derive_seed(99, 4)
        assert derive_seed(98, 3) != derive_seed(99, 3)
