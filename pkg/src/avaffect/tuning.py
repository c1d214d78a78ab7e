"""Hyperparameter search: samples configurations from the search space and
schedules trials with asynchronous successive halving (ASHA).

Rungs sit at grace * reduction_factor^k epochs up to the maximum budget. A
trial reaching a rung is promoted only if its validation CCC is within the
top 1/reduction_factor of the results recorded at that rung so far
(asynchronous rule: promote when eligible, never wait for stragglers). All
configurations are sampled up front from the seed, so the sampled set does
not depend on the degree of parallelism.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .config import parse_entries
from .data import MultimodalWindow
from .models import build_model
from .training import TrainingFailed, TrainingRun


@dataclass(frozen=True)
class SearchSpace:
    """Per-hyperparameter domains; rates and decay are sampled log-uniformly."""

    n_layers: tuple[int, int] = (1, 5)
    d_model: tuple[int, ...] = (64, 128, 256)
    activation: tuple[str, ...] = ("gelu", "selu")
    dropout: tuple[float, float] = (0.1, 0.6)
    learning_rate: tuple[float, float] = (1e-5, 1e-2)
    weight_decay: tuple[float, float] = (1e-3, 1e-1)
    lambda_mse: tuple[float, float] = (0.0, 1.0)
    lambda_ce: tuple[float, float] = (0.0, 1.0)
    d_feedforward: tuple[int, ...] = (64, 128, 256)
    n_heads: tuple[int, ...] = (2, 4, 8)
    n_layers_v_to_a: tuple[int, int] = (1, 5)
    n_layers_a_to_v: tuple[int, int] = (1, 5)
    context_aggregation: tuple[str, ...] = ("unidirectional", "bidirectional")
    d_hidden: tuple[int, ...] = (64, 128, 256)

    def sample(self, arch: str, rng: np.random.Generator, modality: str = "audiovisual") -> dict[str, str]:
        """One flat configuration; keys irrelevant to ``arch`` stay unset."""
        if arch not in ("rnn", "sa", "cma"):
            raise ValueError(f"arch must be rnn, sa or cma, got {arch!r}")

        def log_uniform(lo, hi):
            return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))

        entries = {
            "arch": arch,
            "modality": modality,
            "n_layers": str(int(rng.integers(self.n_layers[0], self.n_layers[1] + 1))),
            "d_model": str(int(rng.choice(self.d_model))),
            "activation": str(rng.choice(self.activation)),
            "dropout": repr(float(rng.uniform(*self.dropout))),
            "learning_rate": repr(log_uniform(*self.learning_rate)),
            "weight_decay": repr(log_uniform(*self.weight_decay)),
            "lambda_mse": repr(float(rng.uniform(*self.lambda_mse))),
            "lambda_ce": repr(float(rng.uniform(*self.lambda_ce))),
        }
        if arch in ("sa", "cma"):
            entries["d_feedforward"] = str(int(rng.choice(self.d_feedforward)))
            entries["n_heads"] = str(int(rng.choice(self.n_heads)))
        if arch == "cma":
            entries["n_layers_v_to_a"] = str(int(rng.integers(
                self.n_layers_v_to_a[0], self.n_layers_v_to_a[1] + 1)))
            entries["n_layers_a_to_v"] = str(int(rng.integers(
                self.n_layers_a_to_v[0], self.n_layers_a_to_v[1] + 1)))
        if arch == "rnn":
            entries["context_aggregation"] = str(rng.choice(self.context_aggregation))
            entries["d_hidden"] = str(int(rng.choice(self.d_hidden)))
        return entries

    def contains(self, entries: dict[str, str]) -> bool:
        """Whether a sampled configuration lies inside every domain bound."""
        checks = [
            self.n_layers[0] <= int(entries["n_layers"]) <= self.n_layers[1],
            int(entries["d_model"]) in self.d_model,
            entries["activation"] in self.activation,
            self.dropout[0] <= float(entries["dropout"]) <= self.dropout[1],
            self.learning_rate[0] <= float(entries["learning_rate"]) <= self.learning_rate[1],
            self.weight_decay[0] <= float(entries["weight_decay"]) <= self.weight_decay[1],
            self.lambda_mse[0] <= float(entries["lambda_mse"]) <= self.lambda_mse[1],
            self.lambda_ce[0] <= float(entries["lambda_ce"]) <= self.lambda_ce[1],
        ]
        arch = entries["arch"]
        if arch in ("sa", "cma"):
            checks += [int(entries["d_feedforward"]) in self.d_feedforward,
                       int(entries["n_heads"]) in self.n_heads]
        if arch == "cma":
            checks += [
                self.n_layers_v_to_a[0] <= int(entries["n_layers_v_to_a"]) <= self.n_layers_v_to_a[1],
                self.n_layers_a_to_v[0] <= int(entries["n_layers_a_to_v"]) <= self.n_layers_a_to_v[1],
            ]
        if arch == "rnn":
            checks += [entries["context_aggregation"] in self.context_aggregation,
                       int(entries["d_hidden"]) in self.d_hidden]
        return all(checks)


@dataclass
class TrialResult:
    trial_id: int
    entries: dict[str, str]
    rung_cccs: dict[int, float] = field(default_factory=dict)
    epochs_consumed: int = 0
    status: str = "completed"  # completed | halted-by-asha | failed
    failure: str | None = None

    @property
    def best_ccc(self) -> float:
        return max(self.rung_cccs.values()) if self.rung_cccs else -np.inf


def asha_rungs(grace: int, reduction_factor: int, max_budget: int) -> list[int]:
    """Budgets grace * rf^k up to and including max_budget."""
    if grace < 1:
        raise ValueError("grace must be >= 1")
    if reduction_factor < 2:
        raise ValueError("reduction_factor must be >= 2")
    if max_budget < grace:
        raise ValueError("max budget must be >= grace")
    rungs = []
    r = grace
    while r < max_budget:
        rungs.append(r)
        r *= reduction_factor
    rungs.append(max_budget)
    return rungs


class TrainingTrial:
    """Default trial runner: incremental training of one sampled config."""

    def __init__(self, entries: dict[str, str], train_windows: Sequence[MultimodalWindow],
                 val_windows: Sequence[MultimodalWindow], seed: int,
                 overrides: dict[str, str] | None = None):
        merged = dict(entries)
        if overrides:
            merged.update(overrides)
        merged["seed"] = str(seed)
        model_cfg, train_cfg = parse_entries(merged)
        model = build_model(model_cfg, seed=seed)
        self.run = TrainingRun(model, train_windows, val_windows, train_cfg)

    def advance_to(self, epochs: int) -> float:
        """Train up to ``epochs`` total and return the best validation CCC."""
        while self.run.result.epochs_run < epochs:
            self.run.run_epoch()
        return float(self.run.result.best_metric)


def trial_seed(seed: int, trial_id: int) -> int:
    """Stable per-trial seed derivation."""
    return int(np.random.SeedSequence([seed, trial_id]).generate_state(1)[0])


def tune(arch: str, train_windows: Sequence[MultimodalWindow] | None = None,
         val_windows: Sequence[MultimodalWindow] | None = None, *,
         n_trials: int = 16, max_budget_epochs: int = 16, grace: int = 1,
         reduction_factor: int = 4, parallelism: int = 1, seed: int = 0,
         space: SearchSpace | None = None, modality: str = "audiovisual",
         overrides: dict[str, str] | None = None,
         trial_factory: Callable[[dict[str, str], int], object] | None = None) -> list[TrialResult]:
    """Run an ASHA sweep; returns all trials ranked by best validation CCC.

    ``trial_factory(entries, trial_id)`` must return an object with
    ``advance_to(epochs) -> float``; the default trains a real model on the
    provided windows. A trial that raises is recorded as failed, not fatal.
    """
    space = space or SearchSpace()
    rng = np.random.default_rng(seed)
    sampled = [space.sample(arch, rng, modality=modality) for _ in range(n_trials)]
    rungs = asha_rungs(grace, reduction_factor, max_budget_epochs)

    if trial_factory is None:
        if train_windows is None or val_windows is None:
            raise ValueError("tune needs train/validation windows (or a trial_factory)")

        def trial_factory(entries, trial_id):
            return TrainingTrial(entries, train_windows, val_windows,
                                 seed=trial_seed(seed, trial_id), overrides=overrides)

    lock = threading.Lock()
    rung_results: dict[int, list[float]] = {r: [] for r in rungs}

    def promoted(rung: int, metric: float) -> bool:
        with lock:
            results = sorted(rung_results[rung], reverse=True)
            k = max(1, len(results) // reduction_factor)
            return metric >= results[k - 1]

    def run_trial(args) -> TrialResult:
        trial_id, entries = args
        result = TrialResult(trial_id=trial_id, entries=entries)
        try:
            runner = trial_factory(entries, trial_id)
            for i, rung in enumerate(rungs):
                metric = float(runner.advance_to(rung))
                result.rung_cccs[rung] = metric
                result.epochs_consumed = rung
                with lock:
                    rung_results[rung].append(metric)
                if i < len(rungs) - 1 and not promoted(rung, metric):
                    result.status = "halted-by-asha"
                    return result
            result.status = "completed"
        except (TrainingFailed, FloatingPointError, ValueError, RuntimeError) as exc:
            result.status = "failed"
            result.failure = str(exc)
        return result

    jobs = list(enumerate(sampled))
    if parallelism <= 1:
        results = [run_trial(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(run_trial, jobs))

    return sorted(results, key=lambda r: (-r.best_ccc, r.trial_id))
