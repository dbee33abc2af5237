import numpy as np
import pytest

from gem.bpe import TokenSeq
from gem.errors import ModelError
from gem.model import (
    BaseLm,
    GemModel,
    ModelConfig,
    count_params_config,
    extend_from_base,
    forward_base,
    forward_gem,
    load_checkpoint,
    param_counts,
    save_checkpoint,
)
from gem.training import Adam, TrainingSample, loss_and_backward


def sample_for(gold, ctx=(), tgt=()):
    return TrainingSample(
        context_tokens=TokenSeq(tuple(ctx), "context"),
        target_words=(),
        target_tokens=TokenSeq(tuple(tgt), "target"),
        gold_tokens=TokenSeq(tuple(gold), "present"),
        article_title="t",
        target_index=1,
    )


class TestConfig:
    def test_head_divisibility(self):
        with pytest.raises(ModelError):
            ModelConfig(d_model=10, n_layers=1, n_heads=3, d_ff=16, vocab_size=32)

    def test_min_positions(self):
        with pytest.raises(ModelError):
            ModelConfig(d_model=8, n_layers=1, n_heads=2, d_ff=16, vocab_size=32, max_positions=64)

    def test_positive_fields(self):
        with pytest.raises(ModelError):
            ModelConfig(d_model=8, n_layers=0, n_heads=2, d_ff=16, vocab_size=32)


class TestForwardBase:
    def test_single_token_shape(self, toy_pair, toy_cfg):
        base, _ = toy_pair
        logits = forward_base(base, [3])
        assert logits.shape == (1, toy_cfg.vocab_size)

    def test_softmax_rows_sum_to_one(self, toy_pair):
        base, _ = toy_pair
        logits = forward_base(base, [1, 2, 3, 4])
        probs = np.exp(logits - logits.max(axis=-1, keepdims=True))
        probs /= probs.sum(axis=-1, keepdims=True)
        assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-9)
        assert np.isfinite(logits).all()

    def test_shared_prefix_rows_identical(self, toy_pair):
        base, _ = toy_pair
        l1 = forward_base(base, [1, 2, 3, 4, 5])
        l2 = forward_base(base, [1, 2, 3, 9, 9])
        assert np.array_equal(l1[:3], l2[:3])

    def test_sequence_too_long(self, toy_pair, toy_cfg):
        base, _ = toy_pair
        with pytest.raises(ModelError, match="max_positions"):
            forward_base(base, [0] * (toy_cfg.max_positions + 1))

    def test_invalid_token_id(self, toy_pair, toy_cfg):
        base, _ = toy_pair
        with pytest.raises(ModelError, match="vocabulary"):
            forward_base(base, [toy_cfg.vocab_size])


class TestForwardGem:
    def test_reduction_to_base(self, toy_pair):
        base, gem = toy_pair
        p = [5, 6, 7, 8]
        assert np.abs(forward_gem(gem, [], [], p) - forward_base(base, p)).max() < 1e-9

    def test_distinct_targets_change_logits(self, toy_pair):
        _, gem = toy_pair
        ctx, p = [1, 2], [5, 6, 7]
        la = forward_gem(gem, ctx, [3, 4], p)
        lb = forward_gem(gem, ctx, [10, 11], p)
        assert np.abs(la[-1] - lb[-1]).max() > 0

    def test_future_present_perturbation_exact(self, toy_pair):
        _, gem = toy_pair
        p1 = [5, 6, 7, 8, 9]
        p2 = [5, 6, 7, 20, 21]
        l1 = forward_gem(gem, [1], [2], p1)
        l2 = forward_gem(gem, [1], [2], p2)
        assert np.array_equal(l1[:3], l2[:3])

    def test_output_rows_match_present(self, toy_pair, toy_cfg):
        _, gem = toy_pair
        logits = forward_gem(gem, [1, 2, 3], [4], [5, 6])
        assert logits.shape == (2, toy_cfg.vocab_size)

    def test_empty_present_rejected(self, toy_pair):
        _, gem = toy_pair
        with pytest.raises(ModelError, match="present"):
            forward_gem(gem, [1], [2], [])

    def test_combined_overflow(self, toy_pair, toy_cfg):
        _, gem = toy_pair
        n = toy_cfg.max_positions
        with pytest.raises(ModelError, match="combined"):
            forward_gem(gem, [0] * (n - 1), [0], [0])

    def test_context_changes_output(self, toy_pair):
        _, gem = toy_pair
        la = forward_gem(gem, [1, 2], [], [5, 6])
        lb = forward_gem(gem, [3, 4], [], [5, 6])
        assert np.abs(la - lb).max() > 0


class TestExtend:
    def test_shared_values_bit_equal(self, toy_cfg):
        base = BaseLm(toy_cfg, seed=5)
        gem = extend_from_base(base, seed=6)
        for name, p in base.params.items():
            assert np.array_equal(gem.params[f"shared.{name}"].data, p.data)

    def test_token_embeddings_frozen(self, toy_pair):
        _, gem = toy_pair
        assert not gem.params["shared.tok_emb"].trainable
        assert gem.params["shared.pos_emb"].trainable

    def test_same_seed_bit_identical_target_stack(self, toy_cfg):
        base = BaseLm(toy_cfg, seed=5)
        g1 = extend_from_base(base, seed=7)
        g2 = extend_from_base(base, seed=7)
        for name in g1.params:
            assert np.array_equal(g1.params[name].data, g2.params[name].data)

    def test_different_seed_differs(self, toy_cfg):
        base = BaseLm(toy_cfg, seed=5)
        g1 = extend_from_base(base, seed=7)
        g2 = extend_from_base(base, seed=8)
        assert not np.array_equal(
            g1.params["target.h0.attn.w_qkv"].data, g2.params["target.h0.attn.w_qkv"].data
        )

    def test_past_embedding_zero_init(self, toy_pair, toy_cfg):
        _, gem = toy_pair
        assert gem.params["past_emb"].data.shape == (toy_cfg.d_model,)
        assert (gem.params["past_emb"].data == 0).all()

    def test_disjoint_storage(self, toy_cfg):
        base = BaseLm(toy_cfg, seed=5)
        gem = extend_from_base(base, seed=6)
        gem.params["shared.h0.mlp.w_in"].data[0, 0] += 1.0
        assert base.params["h0.mlp.w_in"].data[0, 0] != gem.params["shared.h0.mlp.w_in"].data[0, 0]

    def test_embeddings_frozen_through_training_step(self, toy_cfg):
        base = BaseLm(toy_cfg, seed=5)
        gem = extend_from_base(base, seed=6)
        before = gem.params["shared.tok_emb"].data.copy()
        opt = Adam(gem.parameters(), lr=1e-2)
        loss_and_backward(gem, [sample_for((3, 4, 5), ctx=(1,), tgt=(2,))], eot_id=31)
        opt.step()
        assert np.array_equal(gem.params["shared.tok_emb"].data, before)
        assert (gem.params["shared.tok_emb"].gradient == 0).all()
        # something else did move
        assert not np.array_equal(
            gem.params["shared.h0.mlp.w_in"].data,
            BaseLm(toy_cfg, seed=5).params["h0.mlp.w_in"].data,
        )


class TestParamCounts:
    def test_additivity_identity(self, toy_pair):
        _, gem = toy_pair
        base_n, gem_n, ratio = param_counts(gem)
        target_n = sum(
            p.data.size for name, p in gem.params.items() if name.startswith("target.")
        )
        past_n = gem.params["past_emb"].data.size
        assert gem_n == base_n + target_n + past_n
        assert ratio == gem_n / base_n

    def test_formula_matches_actual(self, toy_pair, toy_cfg):
        _, gem = toy_pair
        assert count_params_config(toy_cfg)[:2] == param_counts(gem)[:2]

    def test_gpt2_small_like_ratio(self):
        cfg = ModelConfig(
            d_model=768, n_layers=12, n_heads=12, d_ff=3072,
            vocab_size=50257, max_positions=1024,
        )
        base_n, gem_n, ratio = count_params_config(cfg)
        assert 1.6 <= ratio <= 2.0
        assert gem_n > base_n

    def test_d_model_doubling_monotone(self):
        small = ModelConfig(d_model=64, n_layers=2, n_heads=4, d_ff=256, vocab_size=512)
        big = ModelConfig(d_model=128, n_layers=2, n_heads=4, d_ff=256, vocab_size=512)
        bs, gs, _ = count_params_config(small)
        bb, gb, _ = count_params_config(big)
        assert bb > bs and gb > gs


class TestLoss:
    def test_uniform_logits_ln_v(self, toy_cfg):
        base = BaseLm(toy_cfg, seed=0)
        gem = extend_from_base(base, seed=0)
        for p in gem.params.values():
            p.data[...] = 0.0
        loss = loss_and_backward(gem, [sample_for((1, 2, 3))], eot_id=31)
        assert abs(loss - np.log(toy_cfg.vocab_size)) < 1e-9

    def test_memorization_loss_decreases(self, toy_cfg):
        base = BaseLm(toy_cfg, seed=3)
        gem = extend_from_base(base, seed=4)
        batch = [sample_for((3, 4, 5, 6), ctx=(1, 2), tgt=(7,))]
        opt = Adam(gem.parameters(), lr=1e-2)
        first = loss_and_backward(gem, batch, eot_id=31)
        for _ in range(49):
            loss = loss_and_backward(gem, batch, eot_id=31)
            opt.step()
        assert loss < first

    def test_empty_batch_rejected(self, toy_pair):
        _, gem = toy_pair
        from gem.errors import TrainingError

        with pytest.raises(TrainingError, match="empty"):
            loss_and_backward(gem, [], eot_id=31)


class TestGradients:
    def test_full_finite_difference_suite_small(self, toy_cfg):
        """Spot version of the acceptance gradient suite: subsampled entries."""
        base = BaseLm(toy_cfg, seed=9)
        gem = extend_from_base(base, seed=10)
        gem.params["shared.tok_emb"].trainable = True
        sample = sample_for((6, 7, 8), ctx=(1, 2), tgt=(4, 5))
        from gem.training import batch_loss

        loss_and_backward(gem, [sample], eot_id=31)
        rng = np.random.default_rng(0)
        h = 1e-5
        for name, p in gem.params.items():
            flat = p.data.reshape(-1)
            grad = p.gradient.reshape(-1)
            for i in rng.choice(flat.size, size=min(flat.size, 4), replace=False):
                orig = flat[i]
                flat[i] = orig + h
                up = batch_loss(gem, [sample], eot_id=31)
                flat[i] = orig - h
                down = batch_loss(gem, [sample], eot_id=31)
                flat[i] = orig
                fd = (up - down) / (2 * h)
                denom = max(abs(grad[i]), abs(fd))
                err = abs(grad[i] - fd) / denom if denom > 1e-8 else abs(grad[i] - fd)
                assert err < 1e-4, f"{name}[{i}]: analytic {grad[i]} vs fd {fd}"


class TestCheckpoint:
    def test_round_trip_bit_exact(self, toy_pair, tmp_path):
        _, gem = toy_pair
        path = tmp_path / "model.ckpt"
        save_checkpoint(gem, path)
        loaded = load_checkpoint(path)
        assert isinstance(loaded, GemModel)
        assert loaded.cfg == gem.cfg
        assert set(loaded.params) == set(gem.params)
        for name, p in gem.params.items():
            assert np.array_equal(loaded.params[name].data, p.data)
            assert loaded.params[name].trainable == p.trainable
        path2 = tmp_path / "again.ckpt"
        save_checkpoint(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_base_round_trip(self, toy_pair, tmp_path):
        base, _ = toy_pair
        path = tmp_path / "base.ckpt"
        save_checkpoint(base, path)
        loaded = load_checkpoint(path)
        assert isinstance(loaded, BaseLm)
        assert np.array_equal(
            loaded.forward([1, 2, 3]), base.forward([1, 2, 3])
        )

    def test_header_line(self, toy_pair, tmp_path):
        base, _ = toy_pair
        path = tmp_path / "base.ckpt"
        save_checkpoint(base, path)
        assert path.read_bytes().startswith(b"GEMCKPT v1\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ModelError, match="not found"):
            load_checkpoint(tmp_path / "nope.ckpt")


class TestDeterminism:
    def test_same_seed_same_init_and_forward(self, toy_cfg):
        b1, b2 = BaseLm(toy_cfg, seed=42), BaseLm(toy_cfg, seed=42)
        for name in b1.params:
            assert np.array_equal(b1.params[name].data, b2.params[name].data)
        assert np.array_equal(b1.forward([1, 2, 3]), b2.forward([1, 2, 3]))
