import math
import struct

import numpy as np
import pytest

from srlite import functional as F
from srlite.checkpoint import (
    CheckpointFormatError, CheckpointTruncatedError, CheckpointVersionError, MissingParameterError, decode_checkpoint,
    encode_checkpoint, load_checkpoint, save_checkpoint,
)
from srlite.data import synth_dataset
from srlite.layers import Parameter, ParamStore
from srlite.mswinsr import MSwinSR, MswinConfig
from srlite.tensor import Tensor
from srlite.train import (
    Adam, GanTrainer, L1Trainer, TrainConfig, TrainHistory, checkpoint_load, checkpoint_save, predict, train_l1,
    write_log,
)
from srlite.ugswinsr import Discriminator, Generator, UgswinConfig


def scalar_store(value=0.0, grad=None):
    p = Parameter(np.array([value], dtype=np.float64))
    p.grad = None if grad is None else np.array([grad], dtype=np.float64)
    return p, ParamStore({"w": p})


# ------------------------------------------------------------------- Adam
def test_adam_first_step_unit_gradient():
    p, store = scalar_store(0.0, 1.0)
    Adam(store, lr=2e-4).step()
    assert abs(p.data[0] - (-2e-4)) <= 1e-9


def test_adam_zero_gradient_leaves_params():
    p, store = scalar_store(0.7, 0.0)
    opt = Adam(store)
    opt.step()
    opt.step()
    assert p.data[0] == 0.7 and opt.t == 2


def test_adam_missing_gradient_treated_as_zero():
    p, store = scalar_store(0.3)
    Adam(store).step()
    assert p.data[0] == 0.3


@pytest.mark.parametrize("g", [2.5, -0.01])
def test_adam_moves_monotonically_against_gradient(g):
    p, store = scalar_store(0.0)
    opt = Adam(store, lr=1e-2)
    trace = [0.0]
    for _ in range(5):
        p.grad = np.array([g])
        opt.step()
        trace.append(p.data[0])
    steps = np.diff(trace)
    assert np.all(np.sign(steps) == -np.sign(g))


def test_adam_nan_names_parameter():
    p, store = scalar_store(0.0, float("nan"))
    with pytest.raises(FloatingPointError, match="'w'"):
        Adam(store).step()
    assert p.data[0] == 0.0


def test_adam_step_bounded_by_lr_for_steady_gradients():
    for g in (1e-3, 0.7, -40.0):
        p, store = scalar_store(0.0)
        opt = Adam(store, lr=1e-3)
        for _ in range(200):
            prev = p.data[0]
            p.grad = np.array([g])
            opt.step()
            assert abs(p.data[0] - prev) <= 1e-3 * (1 + 1e-6)


def test_adam_step_obeys_moment_bound():
    # |m_hat|/sqrt(v_hat) <= (1-b1)/sqrt(1-b2) * sqrt(1/(1-b1^2/b2)) * sqrt(1-b2^t)/(1-b1^t)
    lr, b1, b2 = 2e-4, 0.5, 0.999
    rng = np.random.default_rng(1)
    p, store = scalar_store(0.0)
    opt = Adam(store, lr=lr, betas=(b1, b2), eps=0.0)
    worst = 0.0
    for t in range(1, 400):
        prev = p.data[0]
        g = rng.standard_normal() * (100.0 if t % 97 == 0 else 0.01)
        p.grad = np.array([g])
        opt.step()
        bound = (1 - b1) / math.sqrt(1 - b2) / math.sqrt(1 - b1 * b1 / b2) * math.sqrt(1 - b2 ** t) / (1 - b1 ** t)
        ratio = abs(p.data[0] - prev) / lr
        assert ratio <= bound * (1 + 1e-9)
        worst = max(worst, ratio)
    # a spike after a quiet stretch moves the parameter by several lr
    assert worst > 5


def test_adam_state_round_trip():
    p, store = scalar_store(0.0, 0.5)
    opt = Adam(store, lr=1e-2)
    opt.step()
    tensors, meta = opt.state("adam")
    q, store2 = scalar_store(0.0)
    opt2 = Adam(store2)
    opt2.load_state("adam", tensors, meta)
    assert opt2.t == 1 and opt2.lr == 1e-2
    np.testing.assert_array_equal(opt2.m["w"], opt.m["w"])


# ----------------------------------------------------------------- config
@pytest.mark.parametrize("kw", [dict(batch_size=0), dict(regime="wgan"), dict(lr=-1.0), dict(beta1=1.0),
                                dict(epochs=-1), dict(lambda_adv=-1.0)])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_train_config_defaults():
    cfg = TrainConfig()
    assert (cfg.epochs, cfg.batch_size, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps) == (100, 20, 2e-4, 0.5, 0.999, 1e-8)


# --------------------------------------------------------------- L1 loop
def tiny_model(seed=0, dtype=np.float32):
    return MSwinSR(MswinConfig(channels=8, depth=[1], window=4, scale=2), seed=seed, dtype=dtype)


@pytest.fixture(scope="module")
def pairs():
    return synth_dataset(0, 6, 8, 2)


def l1_cfg(**kw):
    base = dict(epochs=2, batch_size=2, seed=0, lr=1e-3, eval_every=1)
    base.update(kw)
    return TrainConfig(**base)


def test_l1_training_is_deterministic(pairs):
    h1 = train_l1(tiny_model(), pairs[:4], l1_cfg(), pairs[4:])
    h2 = train_l1(tiny_model(), pairs[:4], l1_cfg(), pairs[4:])
    assert h1 == h2
    assert len(h1.loss) == 4 and len(h1.epoch_loss) == 2 and len(h1.val_psnr) == 2
    assert all(math.isfinite(v) for v in h1.loss)


def test_l1_zero_lr_constant_loss(pairs):
    h = train_l1(tiny_model(), pairs[:2], l1_cfg(lr=0.0, batch_size=2, epochs=4))
    assert len(set(h.loss)) == 1


def test_l1_loss_decreases(pairs):
    h = train_l1(tiny_model(), pairs[:2], l1_cfg(lr=5e-3, batch_size=2, epochs=30))
    assert h.loss[-1] < h.loss[0]


def test_batch_loss_is_mean_of_singletons(pairs):
    m = tiny_model(dtype=np.float64)
    lr = np.stack([pairs[0].lr, pairs[1].lr]).astype(np.float64)
    hr = np.stack([pairs[0].hr, pairs[1].hr]).astype(np.float64)
    both = F.l1_loss(m(Tensor(lr)), hr).item()
    single = [F.l1_loss(m(Tensor(lr[i:i + 1])), hr[i:i + 1]).item() for i in range(2)]
    assert abs(both - np.mean(single)) <= 1e-6


def test_non_finite_loss_names_step(pairs):
    m = tiny_model()
    tr = L1Trainer(m, pairs[:2], l1_cfg(batch_size=1))
    tr.step()
    m.head.bias.data[:] = np.nan
    with pytest.raises(FloatingPointError, match="step 1"):
        tr.step()


def test_empty_training_set():
    with pytest.raises(ValueError, match="empty"):
        L1Trainer(tiny_model(), [], l1_cfg())


def test_max_steps_caps_run(pairs):
    tr = L1Trainer(tiny_model(), pairs[:4], l1_cfg(max_steps=3, epochs=50))
    assert len(tr.run().loss) == 3


def test_predict_matches_forward(pairs):
    m = tiny_model()
    lr = np.stack([p.lr for p in pairs[:3]])
    out = predict(m, lr, batch_size=2)
    np.testing.assert_allclose(out, np.clip(m(Tensor(lr)).data, 0, 1), atol=1e-6)


def test_write_log_format(tmp_path):
    h = TrainHistory(steps=[1, 2], loss=[0.5, 0.25], val_psnr=[(2, 20.0)])
    write_log(tmp_path / "log.csv", h)
    assert (tmp_path / "log.csv").read_text(encoding="utf-8") == "step,loss,psnr\n1,0.5\n2,0.25,20.0\n"


# ------------------------------------------------------------- checkpoints
def test_checkpoint_round_trip_byte_identical(tmp_path, pairs):
    tr = L1Trainer(tiny_model(), pairs[:4], l1_cfg())
    tr.run(3)
    checkpoint_save(tmp_path / "a.bin", tr)
    fresh = L1Trainer(tiny_model(seed=9), pairs[:4], l1_cfg())
    checkpoint_load(tmp_path / "a.bin", fresh)
    checkpoint_save(tmp_path / "b.bin", fresh)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    for (_, p), (_, q) in zip(tr.params, fresh.params):
        np.testing.assert_array_equal(p.data, q.data)


def test_resume_equals_straight_run(tmp_path, pairs):
    cfg = l1_cfg(batch_size=3, epochs=10)  # uneven batches cross epoch boundaries
    straight = L1Trainer(tiny_model(), pairs[:4], cfg)
    straight.run(20)
    first = L1Trainer(tiny_model(), pairs[:4], cfg)
    first.run(10)
    checkpoint_save(tmp_path / "c.bin", first)
    resumed = L1Trainer(tiny_model(seed=5), pairs[:4], cfg)
    checkpoint_load(tmp_path / "c.bin", resumed)
    resumed.run(10)
    assert resumed.history == straight.history
    for (_, p), (_, q) in zip(straight.params, resumed.params):
        np.testing.assert_array_equal(p.data, q.data)


def test_checkpoint_kind_mismatch(tmp_path, pairs):
    tr = L1Trainer(tiny_model(), pairs[:2], l1_cfg())
    checkpoint_save(tmp_path / "l1.bin", tr)
    gan = GanTrainer(*tiny_gan(), pairs[:2], gan_cfg())
    with pytest.raises(ValueError, match="'l1'"):
        checkpoint_load(tmp_path / "l1.bin", gan)


def _sample_blob():
    return encode_checkpoint({"a": np.arange(3, dtype=np.float32), "b": np.ones((2, 2))}, {"x": 1})


def test_codec_round_trip():
    tensors, meta = decode_checkpoint(_sample_blob())
    assert meta == {"x": 1} and list(tensors) == ["a", "b"]
    assert tensors["a"].dtype == np.float32 and tensors["b"].shape == (2, 2)
    assert encode_checkpoint(tensors, meta) == _sample_blob()


def test_codec_errors_are_distinct(tmp_path):
    blob = _sample_blob()
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(b"NOTCKPT!" + blob[8:])
    with pytest.raises(CheckpointVersionError):
        decode_checkpoint(blob[:8] + struct.pack("<I", 99) + blob[12:])
    with pytest.raises(CheckpointTruncatedError):
        decode_checkpoint(blob[:-7])
    save_checkpoint(tmp_path / "x.bin", *decode_checkpoint(blob))
    assert load_checkpoint(tmp_path / "x.bin")[1] == {"x": 1}
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "none.bin")
    kinds = {CheckpointFormatError, CheckpointVersionError, CheckpointTruncatedError, MissingParameterError}
    assert len(kinds) == 4


def test_missing_parameter_error(tmp_path, pairs):
    tr = L1Trainer(tiny_model(), pairs[:2], l1_cfg())
    tensors, meta = tr.state()
    del tensors["model/head.weight"]
    save_checkpoint(tmp_path / "m.bin", tensors, meta)
    with pytest.raises(MissingParameterError, match="head.weight"):
        checkpoint_load(tmp_path / "m.bin", L1Trainer(tiny_model(), pairs[:2], l1_cfg()))


def test_unsupported_tensor_dtype():
    with pytest.raises(TypeError):
        encode_checkpoint({"a": np.zeros(2, np.int8)}, {})


# -------------------------------------------------------------------- GAN
def tiny_gan(seed=0):
    cfg = UgswinConfig(channels=4, depth=1, window=4, scale=2)
    return Generator(cfg, seed=seed), Discriminator(cfg, hr_size=16, seed=seed)


def gan_cfg(**kw):
    base = dict(epochs=1, batch_size=2, seed=0, regime="gan", lr=1e-3, lambda_adv=1e-3)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def gan_pairs():
    return synth_dataset(1, 4, 16, 2)


def test_gan_lambda_adv_zero_matches_l1(gan_pairs):
    g, d = tiny_gan()
    gan = GanTrainer(g, d, gan_pairs, gan_cfg(lambda_adv=0.0, epochs=2))
    gan.run()
    l1 = L1Trainer(tiny_gan()[0], gan_pairs, gan_cfg(lambda_adv=0.0, epochs=2, regime="l1"))
    l1.run()
    assert gan.history.loss_G == l1.history.loss


def test_gan_history_finite_and_deterministic(gan_pairs):
    runs = []
    for _ in range(2):
        tr = GanTrainer(*tiny_gan(), gan_pairs, gan_cfg(epochs=3))
        runs.append(tr.run())
    assert runs[0] == runs[1]
    assert len(runs[0].loss_D) == 6
    assert all(0 < v < 4 * math.log(2) + 1 for v in runs[0].loss_D)


def test_discriminator_step_reduces_its_loss(gan_pairs):
    tr = GanTrainer(*tiny_gan(), gan_pairs, gan_cfg(lr=1e-3), update_generator=False)
    tr.cursor = 0
    lr_b, hr_b = tr._next_batch()
    before = tr.d_step(lr_b, hr_b)
    after = tr.d_step(lr_b, hr_b)
    assert after < before


def test_frozen_generator_is_unchanged(gan_pairs):
    g, d = tiny_gan()
    snap = [p.data.copy() for p in g.parameters()]
    GanTrainer(g, d, gan_pairs, gan_cfg(epochs=2), update_generator=False).run()
    for p, s in zip(g.parameters(), snap):
        np.testing.assert_array_equal(p.data, s)


def test_gan_resume_equals_straight(tmp_path, gan_pairs):
    cfg = gan_cfg(epochs=4)
    straight = GanTrainer(*tiny_gan(), gan_pairs, cfg)
    straight.run(6)
    first = GanTrainer(*tiny_gan(), gan_pairs, cfg)
    first.run(3)
    checkpoint_save(tmp_path / "g.bin", first)
    resumed = GanTrainer(*tiny_gan(seed=7), gan_pairs, cfg)
    checkpoint_load(tmp_path / "g.bin", resumed)
    resumed.run(3)
    assert resumed.history == straight.history
    checkpoint_save(tmp_path / "g2.bin", resumed)
    checkpoint_save(tmp_path / "s.bin", straight)
    assert (tmp_path / "g2.bin").read_bytes() == (tmp_path / "s.bin").read_bytes()


def test_single_d_step_at_default_lr_decreases_loss(gan_pairs):
    failures = 0
    for seed in range(5):
        tr = GanTrainer(*tiny_gan(seed), gan_pairs, gan_cfg(lr=2e-4, seed=seed), update_generator=False)
        lr_b, hr_b = tr._next_batch()
        before = tr.d_step(lr_b, hr_b)
        tr.update_discriminator = False
        failures += tr.d_step(lr_b, hr_b) >= before
    assert failures <= 1
