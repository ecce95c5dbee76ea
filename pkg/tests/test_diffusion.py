import json

import numpy as np
import pytest

from aelif_lab.aelif import NO_AUGMENTATION, AelifConfig
from aelif_lab.diffusion import (
    DenoiserParams,
    DreamBoothDataset,
    DreamBoothDiffusion,
    TrainConfig,
    checkpoint_dict,
    denoise_predict,
    denoise_vjp,
    dreambooth_loss,
    forward_noise,
    init_denoiser_params,
    ldm_loss,
    load_checkpoint_dict,
    make_schedule,
    sample,
    sample_many,
    schedule_from_betas,
    split_streams,
    train,
)
from aelif_lab.exceptions import ConfigError, NumericFailure, ShapeMismatch
from aelif_lab.text_model import build_vocab, tokenize

from gradcheck import max_relative_error


@pytest.fixture
def setup(dog_vocab):
    params = init_denoiser_params(dog_vocab, np.random.default_rng(0))
    return params, dog_vocab, make_schedule()


def _zero_network(params):
    z = params.zeros_like()
    z.encoder = params.encoder
    return z


def test_schedule_examples():
    np.testing.assert_array_equal(make_schedule(1, 0.5, 0.5).alpha_bar, [0.5])
    np.testing.assert_allclose(schedule_from_betas([0.1, 0.2]).alpha_bar, [0.9, 0.72], rtol=1e-15)
    ab = make_schedule().alpha_bar
    assert ab[99] < 0.05
    assert np.all(np.diff(ab) < 0)


@pytest.mark.parametrize("args", [(0, 0.1, 0.2), (10, 0.3, 0.2), (10, 0.0, 0.2), (10, 0.1, 1.0)])
def test_schedule_rejects_bad_ranges(args):
    with pytest.raises(ConfigError):
        make_schedule(*args)


def test_forward_noise_limits():
    sched = schedule_from_betas([1e-12, 0.5])
    z0 = np.arange(8.0)
    eps = np.ones(8)
    np.testing.assert_allclose(forward_noise(z0, 0, eps, sched), z0, atol=1e-5)
    np.testing.assert_allclose(forward_noise(np.zeros(8), 1, eps, sched),
                               np.sqrt(1 - sched.alpha_bar[1]) * eps)
    with pytest.raises(ConfigError):
        forward_noise(z0, 2, eps, sched)


@pytest.mark.parametrize("t", [0, 30, 99])
def test_forward_noise_second_moment(t):
    sched = make_schedule()
    rng = np.random.default_rng(t)
    z0 = rng.standard_normal(8)
    eps = rng.standard_normal((10_000, 8))
    zt = forward_noise(np.tile(z0, (10_000, 1)), np.full(10_000, t), eps, sched)
    expected = sched.alpha_bar[t] * z0 @ z0 + (1 - sched.alpha_bar[t]) * 8
    assert abs(np.mean(np.sum(zt ** 2, axis=1)) / expected - 1) < 0.03


def test_zero_network_outputs_bias(setup):
    params, _, _ = setup
    zero = _zero_network(params)
    zero.b3 = np.arange(8.0)
    out = denoise_predict(zero, np.ones(8), 5, np.ones(16))
    np.testing.assert_array_equal(out, np.arange(8.0))


def test_denoise_deterministic_and_shapes(setup):
    params, _, _ = setup
    a = denoise_predict(params, np.ones(8), 3, np.ones(16))
    b = denoise_predict(params, np.ones(8), 3, np.ones(16))
    assert a.tobytes() == b.tobytes()
    with pytest.raises(ShapeMismatch):
        denoise_predict(params, np.ones(7), 3, np.ones(16))
    with pytest.raises(ShapeMismatch):
        denoise_predict(params, np.ones(8), 3, np.ones(15))


def test_denoise_jacobian_matches_finite_differences(setup):
    params, _, _ = setup
    rng = np.random.default_rng(1)
    z, cond, up = rng.standard_normal(8), rng.standard_normal(16), rng.standard_normal(8)
    grads = denoise_vjp(params, z, 17, cond, up)
    for h in (1e-3, 1e-4):
        for name in ("W1", "W2", "W3", "b1"):
            arr = getattr(params, name)
            ix = np.unravel_index(rng.integers(arr.size), arr.shape)
            old = arr[ix]
            arr[ix] = old + h
            moved = denoise_predict(params, z, 17, cond) @ up
            arr[ix] = old
            base = denoise_predict(params, z, 17, cond) @ up
            # first-order prediction, remainder is O(h^2)
            assert abs(moved - base - h * grads[name][ix]) < 50 * h * h + 1e-12


def test_perfect_predictor_has_zero_loss():
    from aelif_lab.diffusion import noise_prediction_loss
    eps = np.random.default_rng(0).standard_normal((5, 8))
    assert noise_prediction_loss(eps, eps) == 0.0


def test_zero_network_loss_is_dimension(setup):
    params, vocab, sched = setup
    zero = _zero_network(params)
    tok = tokenize("a photo of sks dog", vocab)
    batch = [(np.zeros(8), tok)] * 10_000
    loss, _ = ldm_loss(zero, batch, sched, NO_AUGMENTATION, np.random.default_rng(0))
    assert abs(loss / 8 - 1) < 0.05


def test_empty_batch_rejected(setup):
    params, _, sched = setup
    with pytest.raises(ConfigError):
        ldm_loss(params, [], sched, NO_AUGMENTATION, np.random.default_rng(0))


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("objective", ["ldm", "dreambooth"])
def test_gradients_match_finite_differences(seed, objective):
    assert max_relative_error(seed, objective) < 1e-4


def test_dreambooth_lambda_zero_is_instance_loss(setup):
    params, vocab, sched = setup
    rng = np.random.default_rng(3)
    inst = [(rng.standard_normal(8), tokenize("a photo of sks dog", vocab)) for _ in range(4)]
    prior = [(rng.standard_normal(8), tokenize("a photo of a dog", vocab)) for _ in range(4)]
    cfg = AelifConfig(mode="mask")
    loss0, g0 = dreambooth_loss(params, inst, prior, 0.0, sched, cfg, np.random.default_rng(9))
    loss1, g1 = ldm_loss(params, inst, sched, cfg, np.random.default_rng(9))
    assert loss0 == loss1
    for name, arr in g1.arrays().items():
        assert g0.arrays()[name].tobytes() == arr.tobytes()


def test_dreambooth_identical_batches_double(setup):
    params, vocab, sched = setup
    rng = np.random.default_rng(4)
    batch = [(rng.standard_normal(8), tokenize("a photo of sks dog", vocab)) for _ in range(4)]
    single, _ = ldm_loss(params, batch, sched, NO_AUGMENTATION, np.random.default_rng(2))
    both, _ = dreambooth_loss(params, batch, batch, 1.0, sched, NO_AUGMENTATION,
                              np.random.default_rng(2), prior_rng=np.random.default_rng(2))
    assert both == 2 * single


def test_dreambooth_rejects_negative_lambda(setup):
    params, vocab, sched = setup
    batch = [(np.zeros(8), tokenize("a photo of sks dog", vocab))]
    with pytest.raises(ConfigError):
        dreambooth_loss(params, batch, batch, -1.0, sched)


def _cluster_dataset(vocab, sched, center, seed=0):
    rng = np.random.default_rng(seed)
    return DreamBoothDataset(center + 0.05 * rng.standard_normal((4, 8)),
                             center + 0.05 * rng.standard_normal((200, 8)),
                             tokenize("a photo of sks dog", vocab),
                             tokenize("a photo of a dog", vocab), sched)


def test_train_zero_steps_is_noop(setup):
    params, vocab, sched = setup
    out, trace = train(params, _cluster_dataset(vocab, sched, np.zeros(8)), TrainConfig(steps=0))
    assert trace == []
    for name, arr in params.arrays().items():
        assert out.arrays()[name].tobytes() == arr.tobytes()


def test_train_deterministic_and_pure(setup):
    params, vocab, sched = setup
    before = {k: v.copy() for k, v in params.arrays().items()}
    ds = _cluster_dataset(vocab, sched, np.ones(8))
    cfg = TrainConfig(steps=50, seed=3, aelif=AelifConfig(mode="noise_conv"))
    a, ta = train(params, ds, cfg)
    b, tb = train(params, ds, cfg)
    assert ta == tb
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    for name, arr in params.arrays().items():
        np.testing.assert_array_equal(arr, before[name])


def test_train_raises_numeric_failure_with_step(setup):
    params, vocab, sched = setup
    ds = _cluster_dataset(vocab, sched, np.full(8, 1e3))
    with pytest.raises(NumericFailure) as info:
        train(params, ds, TrainConfig(steps=200, learning_rate=10.0))
    assert info.value.step is not None and 0 <= info.value.step < 200


@pytest.mark.slow
def test_trained_model_loss_and_samples(setup):
    params, vocab, sched = setup
    center = np.array([1.5, -1.0, 0.5, 2.0, -0.5, 0.0, 1.0, -2.0])
    trained, trace = train(params, _cluster_dataset(vocab, sched, center), TrainConfig(steps=5000, seed=1))
    assert np.mean(trace[-100:]) < 0.5 * np.mean(trace[:100])
    tok = tokenize("a photo of sks dog", vocab)
    rngs = [np.random.default_rng(s) for s in range(256)]
    samples = sample_many(trained, [tok] * 256, sched, rngs)
    assert np.linalg.norm(samples.mean(axis=0) - center) <= 0.5


def test_sample_single_step_closed_form(setup):
    params, vocab, _ = setup
    sched = make_schedule(1, 0.5, 0.5)
    zero = _zero_network(params)
    zero.b3 = np.full(8, 0.25)
    tok = tokenize("a photo of sks dog", vocab)
    out = sample(zero, tok, sched, np.random.default_rng(8))
    _, diff_rng = split_streams(np.random.default_rng(8))
    z1 = diff_rng.standard_normal(8)
    expected = (z1 - 0.5 / np.sqrt(0.5) * 0.25) / np.sqrt(0.5)
    np.testing.assert_allclose(out, expected, rtol=1e-14)


def test_sample_p_zero_matches_no_augmentation(setup):
    params, vocab, sched = setup
    tok = tokenize("a photo of sks dog", vocab)
    base = sample(params, tok, sched, np.random.default_rng(5))
    for mode in ("mask", "noise_conv"):
        out = sample(params, tok, sched, np.random.default_rng(5), AelifConfig(mode=mode, p_max=0.0))
        assert out.tobytes() == base.tobytes()
    again = sample(params, tok, sched, np.random.default_rng(5))
    assert again.tobytes() == base.tobytes()


def test_checkpoint_round_trip(setup):
    params, vocab, sched = setup
    cfg = TrainConfig(steps=7, aelif=AelifConfig(mode="mask"))
    data = json.loads(json.dumps(checkpoint_dict(params, vocab, sched, cfg, 42)))
    assert set(data) == {"config", "vocabulary", "encoder_params", "denoiser_params", "schedule", "seed"}
    p2, v2, s2, c2, seed = load_checkpoint_dict(data)
    assert (v2, c2, seed) == (vocab, cfg, 42)
    np.testing.assert_array_equal(s2.beta, sched.beta)
    for name, arr in params.arrays().items():
        assert p2.arrays()[name].tobytes() == arr.tobytes()


def test_estimator_api():
    est = DreamBoothDiffusion(steps=20, random_state=3, aelif_mode="mask")
    params = est.get_params()
    assert params["aelif_mode"] == "mask" and params["steps"] == 20
    rng = np.random.default_rng(0)
    est.fit(rng.standard_normal((4, 8)), rng.standard_normal((30, 8)))
    assert len(est.loss_trace_) == 20
    out = est.sample(["a photo of sks dog", "a poto of sks dog"], [1, 2])
    assert out.shape == (2, 8)
    clone = DreamBoothDiffusion.from_checkpoint(json.loads(json.dumps(est.to_checkpoint())))
    again = clone.sample(["a photo of sks dog", "a poto of sks dog"], [1, 2])
    assert again.tobytes() == out.tobytes()


def test_params_dict_round_trip(setup):
    params, _, _ = setup
    back = DenoiserParams.from_dict(json.loads(json.dumps(params.to_dict())))
    for name, arr in params.arrays().items():
        assert back.arrays()[name].tobytes() == arr.tobytes()
