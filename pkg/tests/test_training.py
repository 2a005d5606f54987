"""Optimizer, schedule, batching/padding, and the training loop."""

import json

import numpy as np
import pytest

from mcasr.autodiff import Tensor
from mcasr.errors import ConfigError, TrainingError
from mcasr.frontend import SceneConfig, build_dataset, read_manifest
from mcasr.model import ModelConfig, MultiChannelTransformer, ParameterStore
from mcasr.training import (
    AdamOptimizer,
    Batch,
    TrainRunConfig,
    batch_loss,
    data_to_model_ids,
    load_utterance,
    make_batches,
    model_to_data_ids,
    noam_lr,
    pad_utterance,
    train_loop,
)
from mcasr.util import substream

TOY = dict(
    num_channels=2, d_model=8, d_ff=16, n_heads=2, n_enc_layers=1, n_dec_layers=1,
    vocab_size=15, f_mag=195, f_pha=130,
)


# ---------------------------------------------------------------------------
# schedule


def test_noam_lr_closed_form():
    d, w = 64, 400
    for step in (1, 10, 400, 5000):
        want = d ** -0.5 * min(step ** -0.5, step * w ** -1.5)
        assert noam_lr(step, d, w) == pytest.approx(want, rel=1e-15)


def test_noam_lr_peaks_at_warmup():
    d, w = 64, 200
    lrs = [noam_lr(s, d, w) for s in range(1, 1000)]
    assert int(np.argmax(lrs)) + 1 == w
    assert all(a < b for a, b in zip(lrs[: w - 1], lrs[1:w]))  # increasing before
    assert all(a > b for a, b in zip(lrs[w - 1 : -1], lrs[w:]))  # decreasing after


def test_noam_lr_rejects_step_zero():
    with pytest.raises(ConfigError):
        noam_lr(0, 64, 400)


# ---------------------------------------------------------------------------
# Adam


def _scalar_store(value=0.0):
    cfg = ModelConfig(**TOY)
    store = ParameterStore.initialize(cfg, substream(0, "init"))
    return cfg, store


def test_adam_first_step_closed_form():
    # one step with grad g everywhere: m_hat = g, v_hat = g^2, delta = -lr*sign(g)/(1+eps')
    cfg, store = _scalar_store()
    run = TrainRunConfig(warmup_steps=100)
    opt = AdamOptimizer(store, run)
    before = {name: t.data.copy() for name, t in store.items()}
    g = 0.5
    for _, t in store.items():
        t.grad = np.full_like(t.data, g)
    lr = opt.step()
    assert lr == pytest.approx(noam_lr(1, cfg.d_model, 100))
    expected_delta = -lr * g / (abs(g) + run.adam_eps)
    for name, t in store.items():
        assert np.allclose(t.data - before[name], expected_delta, atol=1e-15)


def test_adam_converges_on_quadratic():
    # minimize sum((w - 3)^2) through the full graph machinery
    cfg = ModelConfig(**TOY)
    store = ParameterStore.initialize(cfg, substream(1, "init"))
    run = TrainRunConfig(warmup_steps=10, beta2=0.999)
    opt = AdamOptimizer(store, run)
    target = 3.0
    w = store["out.b"]
    for _ in range(800):
        store.zero_grad()
        w.grad = 2.0 * (w.data - target)
        opt.step()
    assert np.abs(w.data - target).max() < 0.15


def test_grad_clip_exact_scaling():
    cfg, store = _scalar_store()
    clip = 0.25
    opt_clipped = AdamOptimizer(store, TrainRunConfig(grad_clip_norm=clip, warmup_steps=100))
    grads = {name: np.full_like(t.data, 0.01) for name, t in store.items()}
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    assert total > clip
    store2 = ParameterStore.initialize(cfg, substream(0, "init"))
    opt_plain = AdamOptimizer(store2, TrainRunConfig(warmup_steps=100))
    factor = clip / total
    for (_, t1), (_, t2) in zip(store.items(), store2.items()):
        t1.grad = grads[t1.name].copy()
        t2.grad = grads[t2.name] * factor  # pre-scaled by hand
    opt_clipped.step()
    opt_plain.step()
    for (_, t1), (_, t2) in zip(store.items(), store2.items()):
        assert np.array_equal(t1.data, t2.data)


def test_nonfinite_gradient_raises_training_error():
    _, store = _scalar_store()
    opt = AdamOptimizer(store, TrainRunConfig())
    store["out.b"].grad = np.full_like(store["out.b"].data, np.nan)
    with pytest.raises(TrainingError):
        opt.step()


def test_run_config_validation():
    with pytest.raises(ConfigError):
        TrainRunConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainRunConfig(grad_clip_norm=-1.0)


# ---------------------------------------------------------------------------
# token mapping and padding


def test_token_id_mapping_roundtrip():
    tokens = [0, 5, 11]
    assert model_to_data_ids(data_to_model_ids(tokens)) == tokens
    assert data_to_model_ids([0]) == [3]
    assert model_to_data_ids([0, 1, 2, 3]) == [0]  # specials dropped


def test_pad_utterance_layout():
    from mcasr.frontend.features import ChannelFeatures

    ch = ChannelFeatures(mag=np.ones((3, 4)), pha=np.ones((3, 2)))
    item = pad_utterance([ch], [5, 7], t_pad=5, u_pad=4, utterance_id="u")
    assert item.mags[0].shape == (5, 4)
    assert np.all(item.mags[0][3:] == 0.0)
    assert item.key_keep.tolist() == [True] * 3 + [False] * 2
    assert item.dec_input.tolist() == [1, 8, 10, 0]   # BOS, tokens+3, PAD
    assert item.loss_targets.tolist() == [8, 10, 2, 0]  # tokens+3, EOS, PAD


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    cfg = SceneConfig(seed=21, tokens_min=2, tokens_max=3)
    build_dataset(cfg, 12, (0.5, 0.25, 0.25), root)
    return root


def test_padding_invariance_of_loss(tiny_dataset):
    """Extra PAD frames and PAD token slots change the loss by < 1e-8."""
    entries = read_manifest(tiny_dataset / "train.jsonl")
    entry = entries[0]
    channels = load_utterance(tiny_dataset, entry)
    cfg = ModelConfig(**TOY)
    model = MultiChannelTransformer(cfg, ParameterStore.initialize(cfg, substream(2, "init")))
    t = channels[0].mag.shape[0]
    u = len(entry["transcript"]) + 1
    tight = pad_utterance(channels, entry["transcript"], t, u)
    loose = pad_utterance(channels, entry["transcript"], t + 7, u + 3)
    l_tight = float(batch_loss(model, Batch(items=[tight])).data)
    l_loose = float(batch_loss(model, Batch(items=[loose])).data)
    assert abs(l_tight - l_loose) < 1e-8


def test_make_batches_deterministic_and_complete(tiny_dataset):
    entries = read_manifest(tiny_dataset / "train.jsonl")
    ids_a = [i.utterance_id for b in make_batches(entries, 2, 9, tiny_dataset) for i in b.items]
    ids_b = [i.utterance_id for b in make_batches(entries, 2, 9, tiny_dataset) for i in b.items]
    assert ids_a == ids_b
    assert sorted(ids_a) == sorted(e["utterance_id"] for e in entries)
    # some other seed produces a different batch order
    others = [
        [i.utterance_id for b in make_batches(entries, 2, seed, tiny_dataset) for i in b.items]
        for seed in range(10, 15)
    ]
    assert any(ids != ids_a for ids in others)


def test_batch_buckets_by_length(tiny_dataset):
    entries = read_manifest(tiny_dataset / "train.jsonl")
    for batch in make_batches(entries, 3, 0, tiny_dataset):
        frames = [item.key_keep.sum() for item in batch.items]
        assert max(frames) - min(frames) <= max(
            e["num_frames"] for e in entries
        ) - min(e["num_frames"] for e in entries)
        t_pads = {item.mags[0].shape[0] for item in batch.items}
        assert len(t_pads) == 1  # padded to a common length


def test_train_loop_end_to_end(tiny_dataset, tmp_path):
    cfg = ModelConfig(**TOY)
    run = TrainRunConfig(batch_size=3, max_steps=4, warmup_steps=100, eval_every=2,
                         checkpoint_every=2, eval_utterances=2)
    summary = train_loop(cfg, run, tiny_dataset, tmp_path / "run")
    assert summary["steps"] == 4
    assert (tmp_path / "run" / "best.ckpt").exists()
    assert (tmp_path / "run" / "last.ckpt").exists()
    records = [json.loads(line) for line in open(summary["metrics_path"])]
    assert [r["step"] for r in records] == [2, 4]
    for r in records:
        assert set(r) == {"step", "lr", "train_loss", "valid_loss", "valid_wer", "wall_ms"}
        assert np.isfinite(r["train_loss"])
    # the best checkpoint round-trips into a usable model
    store = ParameterStore.load(summary["best_checkpoint"])
    assert store.cfg == cfg


def test_train_loop_metrics_deterministic(tiny_dataset, tmp_path):
    cfg = ModelConfig(**TOY)
    run = TrainRunConfig(batch_size=3, max_steps=3, warmup_steps=50, eval_every=3,
                         eval_utterances=2)
    s1 = train_loop(cfg, run, tiny_dataset, tmp_path / "a")
    s2 = train_loop(cfg, run, tiny_dataset, tmp_path / "b")
    m1 = [{k: v for k, v in r.items() if k != "wall_ms"} for r in s1["metrics"]]
    m2 = [{k: v for k, v in r.items() if k != "wall_ms"} for r in s2["metrics"]]
    assert m1 == m2


def test_single_channel_model_consumes_multichannel_dataset(tiny_dataset, tmp_path):
    cfg = ModelConfig(**{**TOY, "num_channels": 1, "use_cca": False})
    run = TrainRunConfig(batch_size=3, max_steps=2, warmup_steps=50, eval_every=2,
                         eval_utterances=2)
    summary = train_loop(cfg, run, tiny_dataset, tmp_path / "sct")
    assert summary["steps"] == 2
