import numpy as np
import pytest
import torch

from src.errors import PreconditionError, TensorFormatError, TrainingError
from src.metrics import evaluate_structures
from src.model import predict_structure
from src.scm import Dataset, Sample
from src.synthgen import BenchConfig, generate_bench
from src.trainer import (TrainConfig, batch_loss, build_model, evaluate_loss, load_checkpoint, make_batches,
                         prepare_dataset, save_checkpoint, train)


def test_zero_learning_rate_leaves_parameters(small_bench, tiny_train_config):
    cfg = tiny_train_config.model_copy(update={"lr": 0.0})
    before = build_model(cfg, small_bench[0].dim).state_dict()
    model, history = train(small_bench, cfg)
    after = model.state_dict()
    assert len(history) == cfg.epochs
    assert all(torch.equal(before[k], after[k]) for k in before)


def test_overfits_single_sample():
    x = np.random.default_rng(4).normal(size=(4, 4))
    dataset = Dataset([Sample(x=x)])
    cfg = TrainConfig(hidden_dim=8, epochs=300, batch_size=1, lr=1e-2, posterior_samples=0,
                      sigma_q_init=0.1, seed=0)
    initial = evaluate_loss(build_model(cfg, 4), dataset)
    model, _ = train(dataset, cfg)
    assert evaluate_loss(model, dataset) <= 0.5 * initial


def test_training_is_deterministic(small_bench, tiny_train_config):
    _, first = train(small_bench, tiny_train_config)
    _, second = train(small_bench, tiny_train_config)
    assert first == second


def test_non_finite_loss_restores_last_good_state(small_bench, tiny_train_config):
    bad = Sample(x=np.full((6, 3), np.nan))
    dataset = Dataset(list(small_bench.samples) + [bad])
    reference = build_model(tiny_train_config, 3).state_dict()
    with pytest.raises(TrainingError) as info:
        train(dataset, tiny_train_config.model_copy(update={"epochs": 1}))
    assert info.value.last_good_state is not None
    assert all(torch.equal(reference[k], info.value.last_good_state[k]) for k in reference)


def test_empty_dataset_rejected(tiny_train_config):
    with pytest.raises(PreconditionError):
        train(Dataset(), tiny_train_config)


def test_batches_are_size_homogeneous():
    samples = [Sample(x=np.zeros((n, 2))) for n in (3, 3, 4, 4, 4, 5)]
    dataset = Dataset(samples)
    batches = make_batches(dataset, 2, np.random.default_rng(0))
    assert sorted(i for b in batches for i in b) == list(range(6))
    for batch in batches:
        assert len({dataset[i].n_vars for i in batch}) == 1


def test_checkpoint_round_trip(tmp_path, small_bench, tiny_train_config):
    model, history = train(small_bench, tiny_train_config)
    save_checkpoint(str(tmp_path / "ckpt"), model, tiny_train_config, history)
    loaded, cfg, loaded_history = load_checkpoint(str(tmp_path / "ckpt"))
    assert cfg == tiny_train_config
    assert loaded_history == history
    original = model.state_dict()
    assert all(torch.equal(original[k], v) for k, v in loaded.state_dict().items())


def test_corrupted_checkpoint_detected(tmp_path, tiny_train_config):
    model = build_model(tiny_train_config, 3)
    directory = tmp_path / "ckpt"
    save_checkpoint(str(directory), model, tiny_train_config)
    target = directory / "log_sigma_q.idt"
    raw = bytearray(target.read_bytes())
    raw[-1] ^= 0x01
    target.write_bytes(bytes(raw))
    with pytest.raises(TensorFormatError):
        load_checkpoint(str(directory))


def test_batch_loss_ignores_sample_order(small_bench, tiny_train_config):
    cfg = tiny_train_config.model_copy(update={"posterior_samples": 0})
    model = build_model(cfg, 3)
    tensors = [s.tensor() for s in list(small_bench)[:4]]
    gen = torch.Generator().manual_seed(0)
    forward = batch_loss(model, tensors, cfg, gen).item()
    backward = batch_loss(model, tensors[::-1], cfg, gen).item()
    assert backward == pytest.approx(forward, rel=1e-12)


def test_prepare_dataset_pools_by_structure(small_bench, tiny_train_config):
    pooled = prepare_dataset(small_bench, tiny_train_config.model_copy(update={"pool_size": 2}))
    assert len(pooled) == len(small_bench) // 2
    assert {s.dim for s in pooled} == {2 * small_bench[0].dim}
    assert prepare_dataset(small_bench, tiny_train_config) is small_bench


def test_summed_correlation_space_is_default():
    assert TrainConfig().correlation_space == "summed"


def test_scalar_embeddings_warn(caplog, tiny_train_config):
    rng = np.random.default_rng(0)
    dataset = Dataset([Sample(x=rng.normal(size=(3, 1)), structure_id=0) for _ in range(2)])
    with caplog.at_level("WARNING", logger="src.trainer"):
        train(dataset, tiny_train_config.model_copy(update={"epochs": 1}))
    assert "D=1" in caplog.text


@pytest.mark.slow
def test_recovers_structure_of_unconfounded_scalar_data():
    aurocs = []
    for seed in range(3):
        bench = BenchConfig(n_observed=5, expected_neighborhood=2.0, pervasiveness=0.0, n_confounders=1,
                            samples_per_skeleton=500, n_skeletons=4, dim=1, seed=seed)
        cfg = TrainConfig(hidden_dim=16, epochs=5, batch_size=4, lr=1e-3, pool_size=100,
                          evidence_gain=20.0, seed=seed)
        dataset = prepare_dataset(generate_bench(bench), cfg)
        model, _ = train(dataset, cfg)
        report = evaluate_structures(dataset, lambda s: predict_structure(model, s), folds=5, seed=seed)
        aurocs.append(report.auroc)
    assert np.mean(aurocs) >= 0.85
