#!/usr/bin/env python3
"""
Main entry point for the indefinite-data causal toolkit
"""
import functools
import json
import logging
import os
from typing import Optional

import numpy as np
import typer
from rich.console import Console

from app_config import config
from src.datasets_io import (CAUSACTION_PROCESSES, CAUSALOGUE_TYPES, EmbeddingBundle, bind_embeddings,
                             load_causaction, load_causalogue, load_synthetic, save_synthetic)
from src.deconfound import (DeconfoundConfig, SpectralWeightEstimator, ZeroEstimator, apply_gate, eval_c_mse,
                            summarize_sweep, sweep)
from src.dirtest import DirTestConfig, PairCase, classify_pair
from src.errors import ConfigError, IndefiniteDataError
from src.metrics import (EvalReport, cas_eval, confidence_halfwidth, cor_eval, correlation_labels,
                         evaluate_structures, ood_split)
from src.model import predict_structure, represent
from src.scm import Dataset
from src.synthgen import GRID_K, GRID_N, GRID_P, GRID_SAMPLES, PAIR_KINDS, BenchConfig, generate_bench, simulate_pair
from src.tensor_core import load_tensor, save_tensor
from src.trainer import TrainConfig, load_checkpoint, prepare_dataset, save_checkpoint, train

app = typer.Typer(help="Causal structure discovery and deconfounding on indefinite data", add_completion=False)
console = Console()
logger = logging.getLogger("idc")

SWEEP_AXES = {"N": ("n_observed", GRID_N), "P": ("pervasiveness", GRID_P),
              "K": ("n_confounders", GRID_K), "n": ("samples_per_skeleton", GRID_SAMPLES)}


def handle_errors(func):
    """Map library errors to exit codes: 2 config, 3 data, 4 numerical"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except IndefiniteDataError as e:
            console.print(f"❌ {type(e).__name__}: {e}")
            raise typer.Exit(code=e.exit_code)
    return wrapper


def prepare_output(out: str, command: str, resolved: dict) -> str:
    """Create the output dir and echo the resolved config as run_config.json"""
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "run_config.json"), "w", encoding="utf-8") as f:
        json.dump({"command": command, "config": resolved}, f, indent=2, sort_keys=True, default=str)
    return out


def load_dataset(data: Optional[str], records: Optional[str], embeddings: Optional[str],
                 causaction: bool) -> Dataset:
    if data:
        return load_synthetic(data)
    if records and embeddings:
        recs = load_causaction(records) if causaction else load_causalogue(records)
        vocabulary = CAUSACTION_PROCESSES if causaction else CAUSALOGUE_TYPES
        return bind_embeddings(recs, EmbeddingBundle.load_dir(embeddings), vocabulary)
    raise ConfigError("give either --data DIR or both --records FILE and --embeddings DIR")


@app.callback()
def main(
    debug: bool = typer.Option(False, "--debug", help="Verbose logging with tracebacks"),
    threads: Optional[int] = typer.Option(None, "--threads", help="Worker processes (overrides IDC_THREADS)"),
):
    if threads is not None:
        os.environ["IDC_THREADS"] = str(threads)
    config.setup_logging(debug)


@app.command()
@handle_errors
def gen(
    out: str = typer.Option(..., "--out", help="Dataset directory"),
    config_file: Optional[str] = typer.Option(None, "--config", help="JSON or TOML config"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    n_observed: Optional[int] = typer.Option(None, "--n"),
    neighborhood: Optional[float] = typer.Option(None, "--neighborhood"),
    pervasiveness: Optional[float] = typer.Option(None, "--pervasiveness"),
    confounders: Optional[int] = typer.Option(None, "--confounders"),
    samples: Optional[int] = typer.Option(None, "--samples"),
    skeletons: Optional[int] = typer.Option(None, "--skeletons"),
    noise_sigma: Optional[float] = typer.Option(None, "--noise-sigma"),
    dim: Optional[int] = typer.Option(None, "--dim"),
    noise_type: Optional[str] = typer.Option(None, "--noise-type"),
):
    """Generate a synthetic confounded benchmark dataset"""
    cfg = config.resolve(BenchConfig, config.load_config_file(config_file), "gen",
                         seed=seed, n_observed=n_observed, expected_neighborhood=neighborhood,
                         pervasiveness=pervasiveness, n_confounders=confounders,
                         samples_per_skeleton=samples, n_skeletons=skeletons,
                         noise_sigma=noise_sigma, dim=dim, noise_type=noise_type)
    prepare_output(out, "gen", cfg.model_dump())
    dataset = generate_bench(cfg)
    save_synthetic(dataset, out)
    console.print(f"✅ Saved {len(dataset)} samples to {out}")


@app.command("train")
@handle_errors
def train_cmd(
    out: str = typer.Option(..., "--out", help="Run directory (checkpoint goes to OUT/checkpoint)"),
    data: Optional[str] = typer.Option(None, "--data", help="Synthetic dataset directory"),
    records: Optional[str] = typer.Option(None, "--records", help="Causalogue/Causaction JSON file"),
    embeddings: Optional[str] = typer.Option(None, "--embeddings", help="Directory of IDTENSOR1 embeddings"),
    causaction: bool = typer.Option(False, "--causaction", help="Records are Causaction videos"),
    config_file: Optional[str] = typer.Option(None, "--config"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    lr: Optional[float] = typer.Option(None, "--lr"),
    batch_size: Optional[int] = typer.Option(None, "--batch-size"),
    epochs: Optional[int] = typer.Option(None, "--epochs"),
    hidden_dim: Optional[int] = typer.Option(None, "--hidden-dim"),
    rank_tol: Optional[float] = typer.Option(None, "--rank-tol"),
    posterior_samples: Optional[int] = typer.Option(None, "--posterior-samples"),
    pool_size: Optional[int] = typer.Option(None, "--pool-size", help="Same-structure samples joined per input"),
    evidence_gain: Optional[float] = typer.Option(None, "--evidence-gain",
                                                  help="Weight of the regression evidence in the gates"),
):
    """Train the causal-strength model"""
    cfg = config.resolve(TrainConfig, config.load_config_file(config_file), "train",
                         seed=seed, lr=lr, batch_size=batch_size, epochs=epochs, hidden_dim=hidden_dim,
                         rank_tol=rank_tol, posterior_samples=posterior_samples,
                         pool_size=pool_size, evidence_gain=evidence_gain)
    prepare_output(out, "train", cfg.model_dump())
    dataset = prepare_dataset(load_dataset(data, records, embeddings, causaction), cfg)
    model, history = train(dataset, cfg)
    save_checkpoint(os.path.join(out, "checkpoint"), model, cfg, history)
    with open(os.path.join(out, "history.json"), "w", encoding="utf-8") as f:
        json.dump({"loss": history}, f, indent=2)
    final = f"{history[-1]:.6f}" if history else "n/a"
    console.print(f"✅ Trained {cfg.epochs} epochs, final loss {final}")


def _representation_metrics(dataset: Dataset, represent_fn, seed: int, report: EvalReport):
    reps = [represent_fn(s) for s in dataset]
    graphs = [s.ground_truth for s in dataset]
    try:
        report.cas_auroc, report.cas_mse = cas_eval(reps, [g.adjacency for g in graphs], seed=seed)
    except IndefiniteDataError as e:
        logger.warning("⚠️  Cas probe skipped: %s", e)
    try:
        report.cor_auroc, report.cor_mse = cor_eval(reps, [correlation_labels(g) for g in graphs])
    except IndefiniteDataError as e:
        logger.warning("⚠️  Cor probe skipped: %s", e)


def _holdout_report(dataset: Dataset, cfg: TrainConfig, folds: int, seed: int) -> EvalReport:
    per_fold = []
    for fold in ood_split(dataset, folds=folds, held_out_per_fold=config.HELD_OUT_PER_FOLD,
                          valid_fraction=config.VALID_FRACTION, seed=seed):
        model, _ = train(dataset.subset(fold.train), cfg)
        fold_report = evaluate_structures(dataset.subset(fold.test),
                                          lambda s: predict_structure(model, s), folds=1, seed=seed)
        per_fold.append(fold_report)
        logger.info("📊 fold %d held out %s: AUROC %.4f", fold.fold, fold.held_out, fold_report.auroc)

    def values(key):
        return [getattr(r, key) for r in per_fold]

    def mean(vals):
        vals = [v for v in vals if not np.isnan(v)]
        return float(np.mean(vals)) if vals else float("nan")

    return EvalReport(auroc=mean(values("auroc")), auroc_ci=confidence_halfwidth(values("auroc")),
                      mse=mean(values("mse")), mse_ci=confidence_halfwidth(values("mse")),
                      hd=mean(values("hd")), hd_ci=confidence_halfwidth(values("hd")),
                      n_samples=len(dataset), folds=len(per_fold), extra={"mode": "holdout_structures"})


@app.command("eval")
@handle_errors
def eval_cmd(
    out: str = typer.Option(..., "--out"),
    data: Optional[str] = typer.Option(None, "--data"),
    records: Optional[str] = typer.Option(None, "--records"),
    embeddings: Optional[str] = typer.Option(None, "--embeddings"),
    causaction: bool = typer.Option(False, "--causaction"),
    checkpoint: Optional[str] = typer.Option(None, "--checkpoint", help="Checkpoint directory"),
    predictor: str = typer.Option("model", "--predictor", help="model | oracle"),
    holdout_structures: bool = typer.Option(False, "--holdout-structures",
                                            help="Retrain per fold with whole structures held out"),
    folds: int = typer.Option(config.EVAL_FOLDS, "--folds"),
    config_file: Optional[str] = typer.Option(None, "--config"),
    seed: int = typer.Option(0, "--seed"),
):
    """Evaluate structure discovery and representations"""
    file_cfg = config.load_config_file(config_file)

    if holdout_structures:
        cfg = config.resolve(TrainConfig, file_cfg, "train", seed=seed)
        prepare_output(out, "eval", {"mode": "holdout_structures", "folds": folds, "train": cfg.model_dump()})
        dataset = prepare_dataset(load_dataset(data, records, embeddings, causaction), cfg)
        report = _holdout_report(dataset, cfg, folds, seed)
    else:
        pool_size = 1
        if predictor == "oracle":
            predict_fn = lambda s: s.ground_truth.adjacency.astype(np.float64)
            represent_fn = lambda s: s.x
            threshold = config.GATE_THRESHOLD
        elif predictor == "model":
            if checkpoint is None:
                raise ConfigError("--predictor model needs --checkpoint")
            model, cfg, _ = load_checkpoint(checkpoint)
            threshold = cfg.gate_threshold
            pool_size = cfg.pool_size
            predict_fn = lambda s: predict_structure(model, s)
            represent_fn = lambda s: represent(model, s, threshold)
        else:
            raise ConfigError(f"Unknown predictor: {predictor}. Choose model or oracle")
        prepare_output(out, "eval", {"predictor": predictor, "checkpoint": checkpoint, "folds": folds,
                                     "seed": seed, "gate_threshold": threshold, "pool_size": pool_size})
        dataset = load_dataset(data, records, embeddings, causaction).pooled(pool_size)
        report = evaluate_structures(dataset, predict_fn, folds=folds, seed=seed)
        _representation_metrics(dataset, represent_fn, seed, report)
        report.extra["predictor"] = predictor

    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as f:
        f.write(report.to_json())
    table = report.to_table()
    with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as f:
        f.write(table + "\n")
    console.print(table)


@app.command()
@handle_errors
def deconfound(
    out: str = typer.Option(..., "--out"),
    data: Optional[str] = typer.Option(None, "--data", help="Estimate C on one synthetic dataset"),
    sweep_axis: Optional[str] = typer.Option(None, "--sweep", help="N | P | K | n | all"),
    seeds: Optional[int] = typer.Option(None, "--seeds", help="Seeds per grid cell"),
    skeletons: Optional[int] = typer.Option(None, "--skeletons"),
    rank: Optional[int] = typer.Option(None, "--rank", help="Spectral rank (defaults to K)"),
    threshold: Optional[float] = typer.Option(None, "--threshold"),
    seed: Optional[int] = typer.Option(None, "--seed", help="First seed"),
    config_file: Optional[str] = typer.Option(None, "--config"),
):
    """Estimate confounding on a dataset, or sweep the synthetic grid"""
    cfg = config.resolve(DeconfoundConfig, config.load_config_file(config_file), "deconfound",
                         sweep=sweep_axis, seeds=seeds, skeletons=skeletons, rank=rank,
                         threshold=threshold, seed=seed)
    if data:
        _deconfound_dataset(out, data, cfg)
        return

    if cfg.sweep == "all":
        cells = [dict(n_observed=n, pervasiveness=p, n_confounders=k, samples_per_skeleton=m)
                 for n in GRID_N for p in GRID_P for k in GRID_K for m in GRID_SAMPLES]
    elif cfg.sweep in SWEEP_AXES:
        field, grid = SWEEP_AXES[cfg.sweep]
        cells = [dict(config.SWEEP_FIXED, **{field: value}) for value in grid]
    else:
        raise ConfigError(f"Unknown sweep axis: {cfg.sweep}. Choose from {list(SWEEP_AXES)} or all")
    configs = [config.resolve(BenchConfig, {}, None, n_skeletons=cfg.skeletons, **cell) for cell in cells]

    seed_list = list(range(cfg.seed, cfg.seed + cfg.seeds))
    prepare_output(out, "deconfound", dict(cfg.model_dump(), seed_list=seed_list,
                                           configs=[c.model_dump() for c in configs]))
    estimators = None if cfg.rank is None else [SpectralWeightEstimator(cfg.rank), ZeroEstimator()]
    frame = sweep(configs, seed_list, estimators, n_jobs=config.worker_count(),
                  scored_per_structure=cfg.scored_per_structure)
    frame.to_csv(os.path.join(out, "sweep.csv"), index=False)
    summary = summarize_sweep(frame)
    summary.to_csv(os.path.join(out, "summary.csv"), index=False)
    console.print(summary.to_string(index=False))


def _deconfound_dataset(out: str, data: str, cfg: DeconfoundConfig):
    dataset = load_synthetic(data)
    k = dataset.metadata.get("generator", {}).get("n_confounders", 5)
    estimator = SpectralWeightEstimator(cfg.rank or k)
    prepare_output(out, "deconfound", dict(cfg.model_dump(), data=data, rank=estimator.rank))
    c_dir = os.path.join(out, "c_est")
    os.makedirs(c_dir, exist_ok=True)
    gated = 0
    for _, indices in dataset.group_by_structure().items():
        group = [dataset[i] for i in indices]
        for idx, sample, c in zip(indices, group, estimator(group)):
            save_tensor(os.path.join(c_dir, f"s{idx:05d}.idt"), c)
            # omega from the generator's true K; rank(B L) is at most K
            omega = min(1.0, sample.meta.get("k", 0) / sample.n_vars)
            result = apply_gate(sample.x, c, omega, cfg.threshold)
            gated += int(result.gated)
            save_tensor(os.path.join(c_dir, f"s{idx:05d}.clean.idt"), result.x_clean)
    summary = {"samples": len(dataset), "gated": gated, "rank": estimator.rank, "omega_source": "oracle"}
    if all(s.confounding is not None for s in dataset):
        summary["mse_spectral"] = eval_c_mse(dataset, estimator)
        summary["mse_zero"] = eval_c_mse(dataset, ZeroEstimator())
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    console.print_json(json.dumps(summary))


@app.command()
@handle_errors
def dirtest(
    out: str = typer.Option(..., "--out"),
    a: Optional[str] = typer.Option(None, "--a", help="IDTENSOR1 file with observations of a"),
    b: Optional[str] = typer.Option(None, "--b", help="IDTENSOR1 file with observations of b"),
    simulate: int = typer.Option(0, "--simulate", help="Run this many simulated trials per pair kind"),
    n: int = typer.Option(2000, "--n", help="Observations per simulated pair"),
    alpha: Optional[float] = typer.Option(None, "--alpha"),
    method: Optional[str] = typer.Option(None, "--method", help="hsic | dcor"),
    permutations: Optional[int] = typer.Option(None, "--permutations", help="Permutations for dcor"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    config_file: Optional[str] = typer.Option(None, "--config"),
):
    """Decide the causal direction of a pair, or measure accuracy on simulated pairs"""
    cfg = config.resolve(DirTestConfig, config.load_config_file(config_file), "dirtest",
                         alpha=alpha, method=method, n_permutations=permutations, seed=seed)
    prepare_output(out, "dirtest", dict(cfg.model_dump(), simulate=simulate, n=n, a=a, b=b))

    if simulate > 0:
        expected = {"a_causes_b": PairCase.A_CAUSES_B, "b_causes_a": PairCase.B_CAUSES_A,
                    "confounder": PairCase.COMMON_CONFOUNDER}
        accuracy = {}
        for kind in PAIR_KINDS:
            hits = 0
            for trial in range(simulate):
                xa, xb = simulate_pair(kind, n, seed=cfg.seed * 100003 + trial)
                verdict = classify_pair(xa, xb, cfg.alpha, cfg.n_permutations, cfg.seed + trial,
                                        method=cfg.method)
                hits += int(verdict.case == expected[kind])
            accuracy[kind] = hits / simulate
        result = {"trials": simulate, "n": n, "accuracy": accuracy}
    else:
        if not (a and b):
            raise ConfigError("give --a and --b tensor files, or --simulate TRIALS")
        verdict = classify_pair(load_tensor(a), load_tensor(b), cfg.alpha, cfg.n_permutations, cfg.seed,
                                method=cfg.method)
        result = verdict.to_dict()

    with open(os.path.join(out, "verdict.json"), "w", encoding="utf-8") as f:
        json.dump(result, f, indent=2, sort_keys=True)
    console.print_json(json.dumps(result))


if __name__ == "__main__":
    app()
