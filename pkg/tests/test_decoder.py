import numpy as np
import pytest

from sparsecut import decoder as D
from sparsecut import tensorops as T
from sparsecut.adapter import FusedVisualTokens
from sparsecut.errors import ConfigError, ShapeError
from sparsecut.patterns import PatternSpec, ShortcutSet, generate


def toy_cfg(depth=4, dim=8, heads=2, vocab=11, ratio=2):
    return D.LlmConfig(depth=depth, dim=dim, heads=heads, vocab=vocab,
                       mlp_ratio=ratio)


def toy_weights(cfg, context=12, seed=0):
    return D.LlmWeights.initialize(cfg, context, T.seeded_rng(seed, "llm"))


def fused_for(shortcuts, visual_len, dim, seed=1):
    rng = T.seeded_rng(seed, "fused")
    return {j: FusedVisualTokens(tokens=rng.standard_normal((visual_len, dim)),
                                 source_layer=i)
            for i, j in shortcuts}


class TestInject:
    def test_sum_elementwise(self):
        rng = T.seeded_rng(2, "inject")
        a, b = rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
        out = D.inject(a, b)
        for r in range(4):
            for c in range(6):
                assert out[r, c] == a[r, c] + b[r, c]

    def test_absent_shortcut_returns_same_object(self):
        a = np.ones((3, 5))
        assert D.inject(a) is a

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            D.inject(np.zeros((3, 5)), np.zeros((4, 5)))


class TestEmbedText:
    def test_rows_come_from_table(self):
        cfg = toy_cfg()
        w = toy_weights(cfg)
        ids = np.array([0, 3, 3, 10])
        emb = D.embed_text(ids, w)
        assert emb.shape == (4, cfg.dim)
        assert np.array_equal(emb[1], emb[2])
        assert np.array_equal(emb[0], w.token_embed[0])

    def test_out_of_vocab_rejected(self):
        w = toy_weights(toy_cfg(vocab=11))
        with pytest.raises(ConfigError):
            D.embed_text(np.array([11]), w)
        with pytest.raises(ConfigError):
            D.embed_text(np.array([-1]), w)


class TestDecodeForward:
    def setup_method(self):
        self.cfg = toy_cfg(depth=6, dim=8, heads=2, vocab=13)
        self.shortcuts = generate(PatternSpec(connections=3), 4, 6)
        self.visual_len = 4
        self.text = T.seeded_rng(3, "text").standard_normal((5, self.cfg.dim))
        self.weights = toy_weights(self.cfg, context=self.visual_len + 5)
        self.fused = fused_for(self.shortcuts, self.visual_len, self.cfg.dim)

    def test_trace_shapes(self):
        trace = D.decode_forward(self.fused, self.shortcuts, self.text, self.weights)
        assert trace.visual_len == 4
        assert len(trace.visual_in) == 6
        assert len(trace.visual_out) == 6
        assert len(trace.text_out) == 6
        for k in range(6):
            assert trace.visual_in[k].shape == (4, 8)
            assert trace.text_out[k].shape == (5, 8)
        assert trace.final_hidden.shape == (9, 8)
        assert trace.logits.shape == (9, 13)
        assert trace.context_length == 9

    def test_entry_state_is_positions_plus_first_injection(self):
        trace = D.decode_forward(self.fused, self.shortcuts, self.text, self.weights)
        first_j = self.shortcuts.first_entry_layer()
        assert first_j == 1
        want = self.weights.positional[:4] + self.fused[1].tokens
        assert np.array_equal(trace.visual_in[0], want)

    def test_zero_prefix_below_first_connection(self):
        # move all connections up, then the entry visual state is pure position
        shortcuts = ShortcutSet(connections=((4, 4), (2, 6)),
                                encoder_depth=4, decoder_depth=6)
        fused = fused_for(shortcuts, self.visual_len, self.cfg.dim)
        trace = D.decode_forward(fused, shortcuts, self.text, self.weights)
        assert np.array_equal(trace.visual_in[0], self.weights.positional[:4])

    def test_injection_adds_onto_running_state(self):
        trace = D.decode_forward(self.fused, self.shortcuts, self.text, self.weights)
        for idx, (_, j) in enumerate(self.shortcuts):
            if j == 1:
                continue
            want = trace.visual_out[j - 2] + self.fused[j].tokens
            assert np.array_equal(trace.visual_in[j - 1], want)

    def test_unconnected_layer_passes_state_through(self):
        trace = D.decode_forward(self.fused, self.shortcuts, self.text, self.weights)
        connected = set(self.shortcuts.sources())
        for j in range(2, 7):
            if j not in connected:
                assert np.array_equal(trace.visual_in[j - 1], trace.visual_out[j - 2])

    def test_text_positions_read_visual_prefix(self):
        # changing the fused tokens must change text logits (a constant
        # shift would be erased by the row-wise layer norms, so perturb
        # with noise)
        trace_a = D.decode_forward(self.fused, self.shortcuts, self.text, self.weights)
        noise = T.seeded_rng(5, "noise").standard_normal(self.fused[1].tokens.shape)
        other = {j: FusedVisualTokens(f.tokens + noise, f.source_layer)
                 for j, f in self.fused.items()}
        trace_b = D.decode_forward(other, self.shortcuts, self.text, self.weights)
        assert not np.allclose(trace_a.logits[4:], trace_b.logits[4:])

    def test_causality_over_text_positions(self):
        trace = D.decode_forward(self.fused, self.shortcuts, self.text, self.weights)
        rng = T.seeded_rng(4, "perturb")
        for q in range(1, 5):
            bumped = self.text.copy()
            bumped[q] += rng.standard_normal(self.cfg.dim)
            other = D.decode_forward(self.fused, self.shortcuts, bumped, self.weights)
            p = 4 + q  # joint position of text token q
            assert np.array_equal(trace.logits[:p], other.logits[:p])
            assert not np.array_equal(trace.logits[p], other.logits[p])

    def test_empty_pattern_is_pure_text_decoder(self):
        shortcuts = ShortcutSet(connections=(), encoder_depth=4, decoder_depth=6)
        trace = D.decode_forward({}, shortcuts, self.text, self.weights)
        assert trace.visual_len == 0
        assert trace.final_hidden.shape == (5, 8)

    def test_fused_keys_must_match_pattern(self):
        with pytest.raises(ConfigError):
            D.decode_forward({}, self.shortcuts, self.text, self.weights)
        extra = dict(self.fused)
        extra[2] = FusedVisualTokens(np.zeros((4, 8)), 1)
        with pytest.raises(ConfigError):
            D.decode_forward(extra, self.shortcuts, self.text, self.weights)

    def test_disagreeing_fused_lengths_rejected(self):
        bad = dict(self.fused)
        j = self.shortcuts.connections[1][1]
        bad[j] = FusedVisualTokens(np.zeros((3, 8)), 1)
        with pytest.raises(ShapeError):
            D.decode_forward(bad, self.shortcuts, self.text, self.weights)

    def test_short_positional_table_rejected(self):
        weights = toy_weights(self.cfg, context=6)
        with pytest.raises(ConfigError):
            D.decode_forward(self.fused, self.shortcuts, self.text, weights)

    def test_pattern_depth_must_match_model(self):
        shortcuts = generate(PatternSpec(connections=2), 4, 5)
        fused = fused_for(shortcuts, 4, self.cfg.dim)
        with pytest.raises(ConfigError):
            D.decode_forward(fused, shortcuts, self.text, self.weights)

    def test_deterministic(self):
        a = D.decode_forward(self.fused, self.shortcuts, self.text, self.weights)
        b = D.decode_forward(self.fused, self.shortcuts, self.text, self.weights)
        assert np.array_equal(a.logits, b.logits)

    def test_with_logits_false_defers_head(self):
        trace = D.decode_forward(self.fused, self.shortcuts, self.text,
                                 self.weights, with_logits=False)
        assert trace.logits is None
        logits = D.compute_logits(trace, self.weights)
        full = D.decode_forward(self.fused, self.shortcuts, self.text, self.weights)
        assert np.array_equal(logits, full.logits)

    def test_mac_count_matches_closed_form(self):
        c, d, r, depth = 9, self.cfg.dim, self.cfg.mlp_ratio, self.cfg.depth
        with T.counting() as counter:
            D.decode_forward(self.fused, self.shortcuts, self.text,
                             self.weights, with_logits=False)
        per_layer = 4 * c * d * d + 2 * c * c * d + 2 * r * c * d * d
        assert counter.count == depth * per_layer

    def test_zero_injection_equals_disconnected_layerwise(self):
        # a connection carrying zeros changes nothing: the running state
        # passes through exactly as if the layer were unconnected
        base = D.decode_forward(self.fused, self.shortcuts, self.text, self.weights)
        more = ShortcutSet(
            connections=self.shortcuts.connections + ((1, 2),),
            encoder_depth=4, decoder_depth=6)
        fused = dict(self.fused)
        fused[2] = FusedVisualTokens(np.zeros((4, 8)), 1)
        padded = D.decode_forward(fused, more, self.text, self.weights)
        assert np.array_equal(base.logits, padded.logits)
