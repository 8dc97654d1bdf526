import json
import math
from pathlib import Path

import numpy as np
import pytest

from hrrformer.encoder import (
    EncoderConfig,
    adam_init,
    adam_update,
    encoder_forward,
    fixed_positional_encoding,
    init_params,
    init_shapes,
    load_checkpoint,
    loss_fn,
    lr_schedule,
    predict,
    save_checkpoint,
    train_step,
)
from hrrformer.errors import ConfigError, DimensionError, DivergenceError
from hrrformer.gradcheck import check_gradients
from hrrformer.tasks import TaskBatch, gen_keyvalue_recall
from hrrformer.tensor import Tensor, dropout, no_grad

FIXTURES = Path(__file__).parent / "fixtures"


def small_config(**kw):
    base = dict(vocab_size=11, max_len=8, embed_dim=8, mlp_dim=16, heads=2, layers=1, classes=3,
                dropout_rate=0.0, dtype="f64")
    base.update(kw)
    return EncoderConfig(**base)


def random_batch(rng, cfg, B=2, T=None):
    T = T or cfg.max_len
    return TaskBatch(rng.integers(1, cfg.vocab_size, (B, T)), np.ones((B, T), dtype=np.int8),
                     rng.integers(0, cfg.classes, B))


class TestConfig:
    @pytest.mark.parametrize("bad", [dict(heads=3), dict(dropout_rate=1.0), dict(positional="rope"),
                                     dict(layers=0), dict(dtype="f16")])
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            small_config(**bad)


class TestPositional:
    def test_examples(self):
        pe = fixed_positional_encoding(4, 6).data
        np.testing.assert_array_equal(pe[0], [0, 1, 0, 1, 0, 1])
        assert pe[1, 0] == pytest.approx(math.sin(1)) and pe[1, 1] == pytest.approx(math.cos(1))
        assert pe[1, 0] == pytest.approx(0.84147, abs=1e-5) and pe[1, 1] == pytest.approx(0.54030, abs=1e-5)

    def test_range(self):
        pe = fixed_positional_encoding(256, 32).data
        assert np.abs(pe).max() <= 1.0

    def test_odd_width(self):
        with pytest.raises(ConfigError):
            fixed_positional_encoding(4, 5)


class TestForward:
    @pytest.mark.parametrize("positional", ["learned", "fixed"])
    @pytest.mark.parametrize("layers", [1, 2])
    def test_shape_and_determinism(self, rng, positional, layers):
        cfg = small_config(positional=positional, layers=layers, dropout_rate=0.1)
        params = init_params(cfg, 0)
        assert {k: v.shape for k, v in params.items()} == init_shapes(cfg)
        b = random_batch(rng, cfg, B=3)
        a = encoder_forward(b.tokens, b.mask, params, cfg).data
        assert a.shape == (3, cfg.classes)
        np.testing.assert_array_equal(a, encoder_forward(b.tokens, b.mask, params, cfg).data)

    def test_dropout_changes_train_logits(self, rng):
        cfg = small_config(dropout_rate=0.5)
        params = init_params(cfg, 0)
        b = random_batch(rng, cfg)
        a = encoder_forward(b.tokens, b.mask, params, cfg, train_mode=True, rng=np.random.default_rng(1)).data
        c = encoder_forward(b.tokens, b.mask, params, cfg).data
        assert not np.allclose(a, c)

    def test_token_out_of_range(self, rng):
        cfg = small_config()
        with pytest.raises(IndexError):
            encoder_forward(np.full((1, 8), 11), None, init_params(cfg, 0), cfg)

    def test_too_long(self, rng):
        cfg = small_config()
        with pytest.raises(DimensionError):
            encoder_forward(np.ones((1, 9), dtype=int), None, init_params(cfg, 0), cfg)

    def test_initial_loss_near_max_entropy(self):
        cfg = EncoderConfig(vocab_size=32, max_len=16, embed_dim=16, mlp_dim=32, heads=2, layers=1, classes=10,
                            dtype="f64")
        losses = []
        for s in range(100):
            rng = np.random.default_rng(s)
            b = TaskBatch(rng.integers(1, 32, (8, 16)), np.ones((8, 16)), rng.integers(0, 10, 8))
            with no_grad():
                losses.append(loss_fn(init_params(cfg, s), b, cfg)[0].item())
        assert abs(np.mean(losses) - math.log(10)) < 0.3

    @pytest.mark.parametrize("layers", [1, 2])
    def test_padding_invariance(self, rng, layers):
        cfg = small_config(max_len=16, layers=layers, positional="learned")
        params = init_params(cfg, 3)
        toks = rng.integers(1, 11, (3, 7))
        with no_grad():
            short = encoder_forward(toks, np.ones((3, 7)), params, cfg).data
            for pad in (1, 5, 9):
                padded = np.pad(toks, ((0, 0), (0, pad)))
                mask = np.pad(np.ones((3, 7)), ((0, 0), (0, pad)))
                long = encoder_forward(padded, mask, params, cfg).data
                assert np.abs(long - short).max() < 1e-5


class TestGradient:
    def test_random_parameter_subset(self):
        cfg = small_config()
        params = init_params(cfg, 0)
        rng = np.random.default_rng(5)
        batch = random_batch(rng, cfg)
        names = list(params)
        err = check_gradients(lambda: loss_fn(params, batch, cfg)[0], [params[n] for n in names],
                              max_entries=32, rng=rng)
        assert err < 1e-4


class TestTraining:
    def test_zero_lr_keeps_params(self, rng):
        cfg = small_config()
        params = init_params(cfg, 0)
        new, state, _ = train_step(params, random_batch(rng, cfg), adam_init(params), 0.0, cfg)
        for k in params:
            np.testing.assert_array_equal(new[k].data, params[k].data)
        assert state.step == 1

    def test_single_step_descends(self):
        cfg = small_config(classes=2)
        params = init_params(cfg, 1)
        batch = TaskBatch(np.array([[1] * 8, [2] * 8]), np.ones((2, 8)), np.array([0, 1]))
        before = loss_fn(params, batch, cfg)[0].item()
        params, _, _ = train_step(params, batch, adam_init(params), 1e-2, cfg)
        assert loss_fn(params, batch, cfg)[0].item() < before

    def test_micro_task_pilot(self):
        rec = json.loads((FIXTURES / "kv_micro_pilot.json").read_text())
        t, m = rec["task"], rec["model"]
        data = gen_keyvalue_recall(t["n"], t["T"], t["n_pairs"], t["vocab"], t["seed"])
        cfg = EncoderConfig(vocab_size=data.vocab_size, max_len=t["T"], embed_dim=m["embed_dim"],
                            mlp_dim=m["mlp_dim"], heads=m["heads"], layers=m["layers"],
                            classes=data.num_classes, dropout_rate=m["dropout_rate"], dtype=m["dtype"])
        params = init_params(cfg, m["init_seed"])
        state, batch = adam_init(params), data.as_batch()
        first = loss_fn(params, batch, cfg)[0].item()
        for _ in range(rec["steps"]):
            params, state, _ = train_step(params, batch, state, rec["lr"], cfg)
        last = loss_fn(params, batch, cfg)[0].item()
        assert first == pytest.approx(rec["loss_initial"], rel=1e-9)
        assert last == pytest.approx(rec["loss_final"], rel=1e-4)
        assert last <= 0.5 * first

    def test_divergence_carries_step(self, rng):
        cfg = small_config()
        params = init_params(cfg, 0)
        params["head.b2"] = Tensor(np.array([1e308, -1e308, 0.0]), requires_grad=True)
        state = adam_init(params)
        state.step = 7
        with np.errstate(all="ignore"), pytest.raises(DivergenceError) as info:
            train_step(params, random_batch(rng, cfg), state, 1e-3, cfg)
        assert info.value.step == 7

    def test_adam_first_step_is_lr_sized(self):
        p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
        new, _ = adam_update(p, {"w": np.array([0.5, -3.0])}, adam_init(p), 0.1)
        np.testing.assert_allclose(new["w"].data, [0.9, -1.9], atol=1e-6)

    def test_lr_schedule(self):
        assert lr_schedule(0) == 1e-3
        assert lr_schedule(1) == pytest.approx(9e-4)
        values = [lr_schedule(e) for e in range(200)]
        assert all(a >= b for a, b in zip(values, values[1:]))
        assert values[-1] == 1e-5

    def test_predict_matches_argmax(self, rng):
        cfg = small_config()
        params = init_params(cfg, 0)
        b = random_batch(rng, cfg, B=4)
        logits = encoder_forward(b.tokens, b.mask, params, cfg).data
        np.testing.assert_array_equal(predict(params, b.tokens, b.mask, cfg), logits.argmax(1))


class TestDropout:
    def test_rate_zero_identity(self, rng):
        x = Tensor(rng.standard_normal(1000))
        np.testing.assert_array_equal(dropout(x, 0.0, np.random.default_rng(0)).data, x.data)

    @pytest.mark.parametrize("rate", [0.1, 0.5])
    def test_statistics(self, rate):
        x = Tensor(np.ones(100_000))
        out = dropout(x, rate, np.random.default_rng(3)).data
        assert abs((out == 0).mean() - rate) < 0.02
        np.testing.assert_allclose(out[out != 0], 1 / (1 - rate))


class TestCheckpoint:
    @pytest.mark.parametrize("dtype", ["f32", "f64"])
    def test_bit_exact_roundtrip(self, tmp_path, dtype):
        cfg = small_config(dtype=dtype, positional="fixed", layers=2)
        params = init_params(cfg, 9)
        save_checkpoint(tmp_path / "ck", params, cfg, {"epoch": 3})
        loaded, cfg2, meta = load_checkpoint(tmp_path / "ck")
        assert cfg2 == cfg and meta == {"epoch": 3}
        assert list(loaded) == list(params)
        for k in params:
            assert loaded[k].dtype == params[k].dtype
            assert loaded[k].data.tobytes() == params[k].data.tobytes()

    def test_manifest_layout(self, tmp_path):
        cfg = small_config()
        params = init_params(cfg, 0)
        save_checkpoint(tmp_path, params, cfg)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        total = sum(e["nbytes"] for e in manifest["params"])
        assert total == (tmp_path / "params.bin").stat().st_size
        assert all(e["dtype"] == "<f8" for e in manifest["params"])

    def test_truncated_blob(self, tmp_path):
        cfg = small_config()
        save_checkpoint(tmp_path, init_params(cfg, 0), cfg)
        blob = tmp_path / "params.bin"
        blob.write_bytes(blob.read_bytes()[:-8])
        with pytest.raises(ConfigError):
            load_checkpoint(tmp_path)
