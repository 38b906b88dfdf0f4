import numpy as np
import pytest
import torch

from conftest import tiny_model_config
from physdyn.evaluation import exact_match_accuracy, predict
from physdyn.model import PhysicalDynamicsModel, load_checkpoint, save_checkpoint
from physdyn.synthetic import WorldConfig, generate_synthetic_world
from physdyn.training import (
    EarlyStopper,
    TrainConfig,
    build_finetune_model,
    parameter_hash,
    read_history_csv,
    run_finetuning,
    run_pretraining,
    tensorize_records,
    write_history_csv,
)
from physdyn.features import StubBoxAdapter, StubTextAdapter
from physdyn.model import AttributeLayout


@pytest.fixture(scope="module")
def micro_world():
    return generate_synthetic_world(
        WorldConfig(n_objects=24, n_object_types=8, n_trajectories=120, render=False),
        seed=21,
    )


def lookups(world, n_boxes=3, box_dim=12, text_dim=16):
    boxes = StubBoxAdapter(world.scenes, n_boxes=n_boxes, dim=box_dim,
                           image_size=world.config.image_size)
    text = StubTextAdapter(dim=text_dim)
    sentences = {r.id: r.action.text for r in world.records}
    return (
        boxes.features,
        lambda rid: text.embed(sentences[rid]),
        lambda name: text.embed(name.lower()),
    )


def micro_tensors(world, records, **kwargs):
    box_lookup, text_lookup, name_lookup = lookups(world, **kwargs)
    return tensorize_records(records, world.schema, box_lookup=box_lookup,
                             text_lookup=text_lookup, name_text_lookup=name_lookup)


def micro_config(world, setup="base+symbolic", **overrides):
    layout = AttributeLayout.from_schema(world.schema)
    defaults = dict(hidden_size=16, encoder_heads=2, decoder_heads=2,
                    encoder_layers=1, decoder_layers=1, ffn_size=16,
                    n_boxes=3, box_dim=12)
    defaults.update(overrides)
    return tiny_model_config(layout, setup=setup, **defaults)


# -- early stopping -------------------------------------------------------------

def test_early_stopper_patience_one():
    """Non-improving from the second epoch on: stop after epoch 2, keep epoch 1."""
    stopper = EarlyStopper(patience=1)
    assert stopper.update(1, 1.0)
    assert not stopper.should_stop
    assert not stopper.update(2, 1.0)
    assert stopper.should_stop
    assert stopper.best_epoch == 1


def test_early_stopper_requires_strict_improvement():
    stopper = EarlyStopper(patience=2)
    stopper.update(1, 0.5)
    assert not stopper.update(2, 0.5)  # equal is not an improvement
    assert stopper.update(3, 0.4999)
    assert stopper.best_epoch == 3


def test_early_stop_in_loop(micro_world):
    """A vanishing learning rate freezes the weights, so the validation loss
    never improves after epoch 1: patience=1 stops after epoch 2 and returns
    the epoch-1 weights."""
    records = micro_world.records
    train = micro_tensors(micro_world, records[:16])
    val = micro_tensors(micro_world, records[16:24])
    config = TrainConfig(phase="pretrain", epochs=50, batch_size=8,
                         learning_rate=1e-30, patience=1, seed=0)
    result = run_pretraining(micro_config(micro_world), train, val, config)
    assert [e.epoch for e in result.history] == [1, 2]
    assert result.best_epoch == 1


def test_empty_dataset_rejected(micro_world):
    tensors = micro_tensors(micro_world, [])
    config = TrainConfig(epochs=1, batch_size=4, seed=0)
    with pytest.raises(ValueError, match="empty"):
        run_pretraining(micro_config(micro_world), tensors, tensors, config)


# -- determinism -----------------------------------------------------------------

def test_identical_seed_identical_history(micro_world):
    records = micro_world.records
    train = micro_tensors(micro_world, records[:32])
    val = micro_tensors(micro_world, records[32:40])
    config = TrainConfig(epochs=3, batch_size=16, learning_rate=1e-3, seed=7)
    a = run_pretraining(micro_config(micro_world), train, val, config)
    b = run_pretraining(micro_config(micro_world), train, val, config)
    assert [(e.train_loss, e.val_loss) for e in a.history] == \
        [(e.train_loss, e.val_loss) for e in b.history]
    assert parameter_hash(a.model) == parameter_hash(b.model)


def test_seed_isolation(micro_world):
    records = micro_world.records
    train = micro_tensors(micro_world, records[:32])
    val = micro_tensors(micro_world, records[32:40])
    base = TrainConfig(epochs=2, batch_size=16, learning_rate=1e-3, seed=1)
    from dataclasses import replace

    a = run_pretraining(micro_config(micro_world), train, val, base)
    b = run_pretraining(micro_config(micro_world), train, val, replace(base, seed=2))
    assert parameter_hash(a.model) != parameter_hash(b.model)


# -- loss behavior ----------------------------------------------------------------

def test_loss_non_increasing_on_single_example(micro_world):
    """Smoothed (window-5) train loss never increases when memorizing one record."""
    record = micro_world.records[:1]
    tensors = micro_tensors(micro_world, record)
    config = TrainConfig(epochs=40, batch_size=1, learning_rate=3e-3,
                         patience=40, seed=0)
    result = run_pretraining(micro_config(micro_world), tensors, tensors, config)
    losses = [e.train_loss for e in result.history]
    smoothed = np.convolve(losses, np.ones(5) / 5, mode="valid")
    assert (np.diff(smoothed) <= 1e-6).all()


def test_checkpoint_round_trip_through_file(micro_world, tmp_path):
    records = micro_world.records
    train = micro_tensors(micro_world, records[:32])
    val = micro_tensors(micro_world, records[32:40])
    test_records = records[40:60]
    test = micro_tensors(micro_world, test_records)
    config = TrainConfig(epochs=2, batch_size=16, learning_rate=1e-3, seed=3)
    result = run_pretraining(micro_config(micro_world), train, val, config)
    in_memory = predict(result.model, test, test_records)
    save_checkpoint(tmp_path / "ckpt.pt", result.model)
    loaded, _ = load_checkpoint(tmp_path / "ckpt.pt")
    from_disk = predict(loaded, test, test_records)
    assert np.array_equal(in_memory.values, from_disk.values)


# -- fine-tuning ------------------------------------------------------------------

def test_finetune_swaps_action_encoder(micro_world):
    records = micro_world.records
    train = micro_tensors(micro_world, records[:32])
    val = micro_tensors(micro_world, records[32:40])
    config = TrainConfig(epochs=1, batch_size=16, learning_rate=1e-3, seed=3)
    pre = run_pretraining(micro_config(micro_world), train, val, config)
    ft = build_finetune_model(pre.model, text_embed_dim=16, seed=4)
    assert ft.config.action_input == "text"
    assert not hasattr(ft, "action_mlp")
    assert hasattr(ft, "text_action_proj")
    for key, value in ft.state_dict().items():
        if not key.startswith("text_action_proj."):
            assert torch.equal(value, pre.model.state_dict()[key]), key


def test_finetune_zero_epochs_keeps_weights(micro_world):
    records = micro_world.records
    train = micro_tensors(micro_world, records[:32])
    val = micro_tensors(micro_world, records[32:40])
    config = TrainConfig(epochs=1, batch_size=16, learning_rate=1e-3, seed=3)
    pre = run_pretraining(micro_config(micro_world), train, val, config)
    ft_config = TrainConfig(phase="finetune", epochs=0, batch_size=16,
                            learning_rate=1e-3, seed=5)
    result = run_finetuning(pre.model, train, val, ft_config, text_embed_dim=16)
    assert result.history == []
    for key, value in result.model.state_dict().items():
        if not key.startswith("text_action_proj."):
            assert torch.equal(value, pre.model.state_dict()[key])


def test_finetune_requires_text_embeddings(micro_world):
    records = micro_world.records
    plain = tensorize_records(records[:16], micro_world.schema)
    config = TrainConfig(epochs=1, batch_size=8, seed=0)
    pre = run_pretraining(micro_config(micro_world), plain, plain, config)
    with pytest.raises(ValueError, match="text embeddings"):
        run_finetuning(pre.model, plain, plain, config, text_embed_dim=16)


def test_finetune_dim_mismatch_rejected(micro_world):
    records = micro_world.records
    train = micro_tensors(micro_world, records[:16])
    config = TrainConfig(epochs=1, batch_size=8, seed=0)
    pre = run_pretraining(
        micro_config(micro_world, setup="base+images+text-labels", text_embed_dim=16),
        train, train, config,
    )
    with pytest.raises(ValueError, match="does not match"):
        build_finetune_model(pre.model, text_embed_dim=32, seed=0)


def test_paper_finetune_defaults():
    config = TrainConfig.paper_finetune()
    assert config.learning_rate == 1e-5
    assert config.epochs == 60
    assert config.batch_size == 256
    assert TrainConfig.paper_pretrain().learning_rate == 1e-3
    assert TrainConfig.paper_pretrain().epochs == 80


def test_pretrained_finetune_beats_cold_start(micro_world):
    """Over 3 seeds, fine-tuning from a pretrained checkpoint yields at least
    the exact match of an identically budgeted never-pretrained text model."""
    records = micro_world.records
    train = micro_tensors(micro_world, records[:80])
    val = micro_tensors(micro_world, records[80:100])
    test_records = records[100:]
    test = micro_tensors(micro_world, test_records)
    warm_scores, cold_scores = [], []
    for seed in (1, 2, 3):
        pre_cfg = TrainConfig(epochs=12, batch_size=32, learning_rate=2e-3, seed=seed)
        pre = run_pretraining(micro_config(micro_world), train, val, pre_cfg)
        ft_cfg = TrainConfig(phase="finetune", epochs=6, batch_size=32,
                             learning_rate=1e-3, seed=seed)
        warm = run_finetuning(pre.model, train, val, ft_cfg, text_embed_dim=16)
        preds = predict(warm.model, test, test_records)
        warm_scores.append(exact_match_accuracy(preds.values, preds.targets))

        torch.manual_seed(seed)
        cold_model = PhysicalDynamicsModel(
            micro_config(micro_world, setup="base+symbolic", action_input="text",
                         text_embed_dim=16)
        )
        from physdyn.training import _train_loop

        cold = _train_loop(cold_model, train, val, ft_cfg)
        preds = predict(cold.model, test, test_records)
        cold_scores.append(exact_match_accuracy(preds.values, preds.targets))
    assert np.mean(warm_scores) > np.mean(cold_scores)


# -- history ----------------------------------------------------------------------

def test_history_csv_round_trip(micro_world, tmp_path):
    records = micro_world.records
    train = micro_tensors(micro_world, records[:16])
    config = TrainConfig(epochs=2, batch_size=8, learning_rate=1e-3, seed=0)
    result = run_pretraining(micro_config(micro_world), train, train, config)
    path = tmp_path / "history.csv"
    write_history_csv(path, result.history)
    loaded = read_history_csv(path)
    assert [e.epoch for e in loaded] == [e.epoch for e in result.history]
    assert loaded[0].train_loss == pytest.approx(result.history[0].train_loss)
    header = path.read_text().splitlines()[0]
    assert header == "epoch,train_loss,val_loss,lr,seconds"


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=-1)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
