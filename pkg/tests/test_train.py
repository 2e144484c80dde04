import numpy as np
import pytest

from lesionviz import data
from lesionviz.checkpoint import Checkpoint, checkpoint_bytes, file_digest, load_checkpoint, save_checkpoint
from lesionviz.errors import CheckpointError, DecodeError, InvalidArgumentError
from lesionviz.network import NetworkConfig, build_model, forward
from lesionviz.optim import AdamConfig, AdamState, adam_step
from lesionviz.train import ImageStore, TrainConfig, evaluate, report_from_scores, train

from synthetic import write_set

NET = NetworkConfig(conv_block_filters=(4, 8), dense_units=(16,), input_shape=(3, 32, 32))
AUG = data.AugmentConfig.for_input(32)
DESK = TrainConfig(epochs=50, batch_size=4, adam=AdamConfig(learning_rate=1e-3), seed=42, checkpoint_every=0)


@pytest.fixture(scope="module")
def synthetic(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthetic")
    train_m = write_set(root / "train", 10, AUG.image_size, seed=0)
    hold_m = write_set(root / "hold", 5, AUG.image_size, seed=1)
    return train_m, hold_m


def store_for(manifest):
    return ImageStore(data.load_manifest(manifest), AUG.image_size)


def quiet(_line):
    pass


def test_recipe_training_defaults():
    cfg = TrainConfig()
    assert (cfg.epochs, cfg.batch_size, cfg.adam.learning_rate) == (192, 96, 1e-4)
    assert (cfg.adam.beta1, cfg.adam.beta2) == (0.9, 0.999)
    assert cfg.pos_weight is None


def test_invalid_train_config():
    with pytest.raises(InvalidArgumentError):
        TrainConfig(batch_size=0)
    with pytest.raises(InvalidArgumentError):
        TrainConfig(epochs=-1)


# --- checkpoints ------------------------------------------------------------


def make_checkpoint(seed=0, dtype=np.float32):
    model = build_model(NET, seed, dtype=dtype)
    params = model.parameters()
    rng = np.random.default_rng(seed)
    grads = [rng.standard_normal(p.shape).astype(dtype) for p in params]
    params, state = adam_step(params, grads, AdamState(), AdamConfig())
    return Checkpoint(NET, params, state, AdamConfig(), epoch=3, seed=seed, pos_weight=2.5)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_checkpoint_round_trip_bit_exact(tmp_path, dtype):
    ckpt = make_checkpoint(dtype=dtype)
    path = save_checkpoint(ckpt, tmp_path / "a.ckpt")
    loaded = load_checkpoint(path, expected_config=NET)
    assert loaded.network == NET and loaded.epoch == 3 and loaded.seed == 0 and loaded.pos_weight == 2.5
    assert loaded.adam_config == ckpt.adam_config
    assert loaded.adam_state.step_count == 1
    for a, b in zip(
        ckpt.params + ckpt.adam_state.first_moment + ckpt.adam_state.second_moment,
        loaded.params + loaded.adam_state.first_moment + loaded.adam_state.second_moment,
    ):
        assert a.dtype == b.dtype and a.tobytes() == b.tobytes()
    assert checkpoint_bytes(loaded) == path.read_bytes()


def test_checkpoint_layout(tmp_path):
    raw = save_checkpoint(make_checkpoint(), tmp_path / "a.ckpt").read_bytes()
    assert raw[:4] == b"LVCK"
    assert int.from_bytes(raw[4:8], "little") == 1
    header_len = int.from_bytes(raw[8:12], "little")
    header = raw[12 : 12 + header_len].decode()
    assert "config_digest = " + NET.digest() in header
    assert NET.canonical_text() in header


def test_truncated_checkpoint(tmp_path):
    path = save_checkpoint(make_checkpoint(), tmp_path / "a.ckpt")
    raw = path.read_bytes()
    for cut in (3, 20, len(raw) // 2, len(raw) - 1):
        path.write_bytes(raw[:cut])
        with pytest.raises(CheckpointError, match="truncated|bad magic"):
            load_checkpoint(path)


def test_corrupt_and_version(tmp_path):
    path = save_checkpoint(make_checkpoint(), tmp_path / "a.ckpt")
    raw = bytearray(path.read_bytes())
    raw[-100] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)
    raw = bytearray(save_checkpoint(make_checkpoint(), path).read_bytes())
    raw[4:8] = (7).to_bytes(4, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version 7"):
        load_checkpoint(path)


def test_checkpoint_config_mismatch(tmp_path):
    path = save_checkpoint(make_checkpoint(), tmp_path / "a.ckpt")
    other = NetworkConfig(conv_block_filters=(4, 4), dense_units=(16,), input_shape=(3, 32, 32))
    with pytest.raises(CheckpointError, match="digest mismatch"):
        load_checkpoint(path, expected_config=other)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(CheckpointError, match="cannot read"):
        load_checkpoint(tmp_path / "nope.ckpt")


# --- training ---------------------------------------------------------------


def test_zero_epochs_returns_initialisation(synthetic, tmp_path):
    res = train(store_for(synthetic[0]), TrainConfig(epochs=0, seed=9), tmp_path, NET, echo=quiet)
    init = build_model(NET, 9)
    for a, b in zip(res.checkpoint.params, init.parameters()):
        assert a.tobytes() == b.tobytes()
    loaded = load_checkpoint(tmp_path / "final.ckpt")
    assert loaded.epoch == 0


def test_training_is_deterministic(synthetic, tmp_path):
    cfg = TrainConfig(epochs=2, batch_size=6, seed=5, checkpoint_every=1)
    train(store_for(synthetic[0]), cfg, tmp_path / "a", NET, echo=quiet)
    train(store_for(synthetic[0]), cfg, tmp_path / "b", NET, echo=quiet)
    assert file_digest(tmp_path / "a" / "final.ckpt") == file_digest(tmp_path / "b" / "final.ckpt")
    assert (tmp_path / "a" / "epoch_0001.ckpt").exists()
    # worker count does not change the result either
    train(store_for(synthetic[0]), TrainConfig(epochs=2, batch_size=6, seed=5, threads=3), tmp_path / "c", NET, echo=quiet)
    assert file_digest(tmp_path / "a" / "final.ckpt") == file_digest(tmp_path / "c" / "final.ckpt")


def test_epoch_log_format(synthetic, tmp_path):
    lines = []
    train(store_for(synthetic[0]), TrainConfig(epochs=2, batch_size=8, seed=1), tmp_path, NET, echo=lines.append)
    assert lines[0].startswith("epoch=1 loss=") and lines[0].endswith(" lr=0.0001")
    assert (tmp_path / "train.log").read_text().splitlines() == lines


def test_desk_scale_learning(synthetic):
    res = train(store_for(synthetic[0]), DESK, None, NET, echo=quiet)
    assert res.epoch_losses[4] < res.epoch_losses[0]
    model = res.checkpoint.model()
    assert evaluate(model, store_for(synthetic[0])).accuracy == 1.0
    hold = evaluate(model, store_for(synthetic[1]))
    assert hold.auc == 1.0


def test_unreadable_image_aborts_with_path(tmp_path):
    (tmp_path / "broken.png").write_bytes(b"junk")
    (tmp_path / "m.csv").write_text("path,label\nbroken.png,1\n")
    with pytest.raises(DecodeError, match="broken.png"):
        train(store_for(tmp_path / "m.csv"), TrainConfig(epochs=1), None, NET, echo=quiet)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts(synthetic):
    from lesionviz.errors import TrainingError

    cfg = TrainConfig(epochs=1, batch_size=4, adam=AdamConfig(learning_rate=1e38), seed=0)
    with pytest.raises(TrainingError, match="epoch 1, step"):
        train(store_for(synthetic[0]), cfg, None, NET, dtype=np.float32, echo=quiet)


# --- evaluation -------------------------------------------------------------


def test_report_perfect_and_constant():
    labels = [0, 1, 0, 1]
    assert report_from_scores(labels, labels).auc == 1.0
    r = report_from_scores([0.3] * 4, labels)
    assert r.auc == 0.5
    assert r.roc == [(0.0, 0.0), (1.0, 1.0)]


def test_report_single_class():
    r = report_from_scores([0.2, 0.9], [1, 1])
    assert r.auc is None and not r.auc_defined
    assert r.confusion == {"tp": 1, "fp": 0, "tn": 0, "fn": 1}
    assert "undefined" in r.to_text()


def test_evaluate_uses_center_crop(synthetic):
    model = build_model(NET, 0)
    store = store_for(synthetic[1])
    report = evaluate(model, store)
    x = data.center_crop(store.image(0), 32)
    expected = 1 / (1 + np.exp(-forward(model, x).logit))
    assert report.scores[0] == pytest.approx(expected, rel=1e-12)
    assert len(report.scores) == 10
