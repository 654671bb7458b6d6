import numpy as np
import pytest

from sparsecut import pipeline as PL
from sparsecut.config import RunConfig
from sparsecut.errors import ConfigError
from sparsecut.patterns import PatternSpec, generate


def toy_run_config(**overrides):
    base = dict(encoder_depth=4, encoder_dim=8, encoder_heads=2,
                encoder_mlp_ratio=2, decoder_depth=6, decoder_dim=12,
                decoder_heads=2, decoder_mlp_ratio=2, vocab=13,
                pattern_connections=3, base_resolution=8, patch_size=4,
                tiles=2, text_len=6, seed=0)
    base.update(overrides)
    return RunConfig(**base)


class TestBuildModel:
    def test_shapes_and_pattern(self):
        cfg = toy_run_config()
        model = PL.build_model(cfg)
        assert len(model.shortcuts) == 3
        assert len(model.encoder.layers) == 4
        assert len(model.decoder.layers) == 6
        assert set(model.adapters) == set(model.shortcuts.connections)
        assert model.decoder.positional.shape == (4 + 6, 12)

    def test_adapter_weights_keyed_by_connection(self):
        # the adapter on a shared connection is identical across patterns
        sparse3 = PL.build_model(toy_run_config(pattern_connections=3))
        sparse1 = PL.build_model(toy_run_config(pattern_connections=1))
        conn = (4, 1)
        assert conn in sparse3.adapters and conn in sparse1.adapters
        for name, tensor in sparse3.adapters[conn].weights().items():
            assert np.array_equal(tensor, sparse1.adapters[conn].weights()[name])

    def test_encoder_weights_independent_of_pattern(self):
        a = PL.build_model(toy_run_config(pattern_connections=3))
        b = PL.build_model(toy_run_config(pattern_connections=1))
        assert np.array_equal(a.encoder.layers[0].w_query, b.encoder.layers[0].w_query)
        assert np.array_equal(a.decoder.head, b.decoder.head)

    def test_seed_changes_weights(self):
        a = PL.build_model(toy_run_config(seed=0))
        b = PL.build_model(toy_run_config(seed=1))
        assert not np.array_equal(a.encoder.layers[0].w_query,
                                  b.encoder.layers[0].w_query)

    def test_pattern_file_depth_mismatch_rejected(self, tmp_path):
        pattern = generate(PatternSpec(connections=2), 5, 6)
        pattern.save(tmp_path / "p.txt")
        cfg = toy_run_config(pattern_file=str(tmp_path / "p.txt"))
        with pytest.raises(ConfigError):
            PL.build_model(cfg)

    def test_pattern_file_used_when_given(self, tmp_path):
        pattern = generate(PatternSpec(connections=2), 4, 6)
        pattern.save(tmp_path / "p.txt")
        model = PL.build_model(toy_run_config(pattern_file=str(tmp_path / "p.txt")))
        assert model.shortcuts == pattern


class TestRunForward:
    def test_artifact_shapes(self):
        cfg = toy_run_config()
        model = PL.build_model(cfg)
        arts = PL.run_forward(model, PL.default_image(cfg))
        assert arts.bundle.count == 5
        assert arts.embedded.shape == (5, 4, 8)
        assert len(arts.activations.states) == 5
        assert sorted(arts.fused) == [1, 3, 5]
        assert arts.trace.context_length == 10
        assert arts.trace.logits.shape == (10, 13)

    def test_deterministic_end_to_end(self):
        cfg = toy_run_config(seed=3)
        a = PL.run_forward(PL.build_model(cfg), PL.default_image(cfg))
        b = PL.run_forward(PL.build_model(cfg), PL.default_image(cfg))
        assert np.array_equal(a.trace.logits, b.trace.logits)

    def test_low_res_only_uses_self_attention_path(self):
        cfg = toy_run_config(high_res=False)
        model = PL.build_model(cfg)
        arts = PL.run_forward(model, PL.default_image(cfg))
        assert arts.bundle.count == 1
        assert arts.trace.visual_len == 4

    def test_context_flat_in_tiles(self):
        # criterion: joint context stays M_v + M_t across patch counts
        lengths = []
        for tiles, high in ((2, True), (3, True), (2, False)):
            cfg = toy_run_config(tiles=tiles, high_res=high)
            arts = PL.run_forward(PL.build_model(cfg), PL.default_image(cfg))
            lengths.append(arts.trace.context_length)
        assert lengths == [10, 10, 10]

    def test_zero_adapter_matches_sparse_one(self):
        cfg = toy_run_config()
        zeroed = PL.run_forward(PL.build_model(cfg), PL.default_image(cfg),
                                zero_adapter=True)
        base_cfg = toy_run_config(pattern_connections=1)
        base = PL.run_forward(PL.build_model(base_cfg), PL.default_image(base_cfg))
        assert np.array_equal(zeroed.trace.logits, base.trace.logits)
        for k in range(6):
            assert np.array_equal(zeroed.trace.visual_out[k], base.trace.visual_out[k])
            assert np.array_equal(zeroed.trace.text_out[k], base.trace.text_out[k])

    def test_trace_tensor_layer_selection(self):
        cfg = toy_run_config()
        arts = PL.run_forward(PL.build_model(cfg), PL.default_image(cfg))
        full = PL.trace_tensors(arts)
        assert "decoder.layer01.visual_in" in full
        assert "decoder.layer06.text_out" in full
        assert "fused.layer05" in full
        assert "final.logits" in full
        partial = PL.trace_tensors(arts, layers=[2, 4])
        assert "decoder.layer02.visual_in" in partial
        assert "decoder.layer01.visual_in" not in partial
        with pytest.raises(ConfigError):
            PL.trace_tensors(arts, layers=[9])

    def test_model_tensors_round_trip(self, tmp_path):
        from sparsecut import checkpoint as C
        cfg = toy_run_config()
        model = PL.build_model(cfg)
        tensors = PL.model_tensors(model)
        assert "adapter.enc04_dec01.w_query" in tensors
        assert "decoder.layer06.mlp_out" in tensors
        C.save_tensors(tmp_path / "model", tensors)
        loaded = C.load_tensors(tmp_path / "model")
        assert set(loaded) == set(tensors)
        for name in tensors:
            assert np.array_equal(loaded[name], tensors[name])
