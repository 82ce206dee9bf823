"""Blackbox gradient sensing: antithetic Gaussian smoothing optimizer.

The optimizer estimates the gradient of a Gaussian-smoothed return by
probing the objective at antithetic parameter perturbations, optionally
keeping only the most informative fraction, normalizing by the spread of
collected returns, and ascending. Episode seeds are bound to perturbation
indices before dispatch, so parallel evaluation order cannot change results
and runs are exactly resumable from a checkpoint.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import BgsConfig

CHECKPOINT_VERSION = 1

# spawn-key tags for the per-iteration seed blocks
_NOISE_BLOCK = 0
_ROLLOUT_BLOCK = 1
_EVAL_BLOCK = 2


def _seed_for(master: int, iteration: int, *key: int) -> int:
    ss = np.random.SeedSequence(entropy=master, spawn_key=(iteration, *key))
    return int(ss.generate_state(1)[0])


def perturbations(d: int, count: int, master: int, iteration: int) -> np.ndarray:
    """The iteration's Gaussian probe directions, (count, d), seed-determined."""
    rng = np.random.default_rng(
        np.random.PCG64(np.random.SeedSequence(entropy=master,
                                               spawn_key=(iteration, _NOISE_BLOCK))))
    return rng.standard_normal((count, d))


def rollout_seeds(master: int, iteration: int, pert_index: int, sign: int,
                  rollouts: int) -> List[int]:
    """Episode seeds for one (perturbation, sign) slot, assigned by index."""
    return [_seed_for(master, iteration, _ROLLOUT_BLOCK, pert_index, sign, r)
            for r in range(rollouts)]


def eval_seeds(master: int, iteration: int, episodes: int) -> List[int]:
    """Held-out evaluation seeds for the iteration."""
    return [_seed_for(master, iteration, _EVAL_BLOCK, r) for r in range(episodes)]


def estimate_gradient(theta: np.ndarray, sigma: float, perturbations_count: int,
                      eval_fn: Callable[[np.ndarray], float], seed: int,
                      antithetic: bool = True, top_fraction: float = 1.0,
                      baseline: Optional[float] = None) -> np.ndarray:
    """Monte Carlo gradient of the sigma-smoothed objective at theta.

    With antithetic pairs the estimate is
    (1 / (2 sigma P')) * sum over the top fraction of [J(theta + sigma d)
    - J(theta - sigma d)] d, where perturbations are ranked by the larger
    absolute deviation of either side from the baseline J(theta).
    """
    theta = np.asarray(theta, dtype=float)
    deltas = perturbations(theta.size, perturbations_count, seed, 0)
    fwd = np.array([eval_fn(theta + sigma * d) for d in deltas])
    if antithetic:
        bwd = np.array([eval_fn(theta - sigma * d) for d in deltas])
    else:
        if baseline is None:
            baseline = eval_fn(theta)
        bwd = np.full(perturbations_count, baseline)

    keep = perturbations_count
    if top_fraction < 1.0:
        if baseline is None:
            baseline = eval_fn(theta)
        score = np.maximum(np.abs(fwd - baseline), np.abs(bwd - baseline))
        keep = max(1, int(np.ceil(top_fraction * perturbations_count)))
        order = np.argsort(-score, kind="stable")[:keep]
    else:
        order = np.arange(perturbations_count)

    diff = (fwd[order] - bwd[order])[:, None] * deltas[order]
    scale = 2.0 * sigma * keep if antithetic else sigma * keep
    return diff.sum(axis=0) / scale


@dataclass
class IterationStats:
    iteration: int
    mean_reward: float
    reward_std: float
    wall_time: float
    train_return_mean: float
    grad_norm: float


@dataclass
class TrainResult:
    theta: np.ndarray
    curve: List[IterationStats]
    checkpoints: List[Dict]


class _SlotTask:
    """Picklable unit of work: evaluate theta on this slot's episode seeds."""

    def __init__(self, evaluator, theta: np.ndarray, seeds: List[int]):
        self.evaluator = evaluator
        self.theta = theta
        self.seeds = seeds

    def __call__(self) -> float:
        return float(np.mean([self.evaluator(self.theta, s) for s in self.seeds]))


def _run_task(task: _SlotTask) -> float:
    return task()


def train_loop(evaluator: Callable[[np.ndarray, int], float], theta0: np.ndarray,
               cfg: BgsConfig, iterations: Optional[int] = None,
               start_iteration: int = 0,
               on_checkpoint: Optional[Callable[[Dict], None]] = None) -> TrainResult:
    """Generic BGS ascent of mean episode return.

    ``evaluator(theta, episode_seed) -> return`` must be deterministic per
    (theta, seed); for multi-process evaluation it must be picklable. The
    loop itself is deterministic given cfg.seed and the start iteration, so
    resuming from a checkpoint continues the exact same trajectory.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    iters = cfg.iterations if iterations is None else iterations
    curve: List[IterationStats] = []
    checkpoints: List[Dict] = []

    pool = ProcessPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        for it in range(start_iteration, start_iteration + iters):
            t0 = time.perf_counter()
            deltas = perturbations(theta.size, cfg.perturbations, cfg.seed, it)
            signs = (+1, -1) if cfg.antithetic else (+1,)
            tasks = []
            for i, d in enumerate(deltas):
                for sign in signs:
                    probe = theta + sign * cfg.sigma * d
                    seeds = rollout_seeds(cfg.seed, it, i, sign,
                                          cfg.rollouts_per_perturbation)
                    tasks.append(_SlotTask(evaluator, probe, seeds))
            base_task = _SlotTask(evaluator, theta,
                                  rollout_seeds(cfg.seed, it, -1, 0,
                                                cfg.rollouts_per_perturbation))
            tasks.append(base_task)

            if pool is not None:
                results = list(pool.map(_run_task, tasks, chunksize=4))
            else:
                results = [t() for t in tasks]
            baseline = results[-1]
            returns = np.array(results[:-1]).reshape(cfg.perturbations, len(signs))
            fwd = returns[:, 0]
            bwd = returns[:, 1] if cfg.antithetic else np.full(cfg.perturbations, baseline)

            keep = cfg.perturbations
            order = np.arange(cfg.perturbations)
            if cfg.top_fraction < 1.0:
                score = np.maximum(np.abs(fwd - baseline), np.abs(bwd - baseline))
                keep = max(1, int(np.ceil(cfg.top_fraction * cfg.perturbations)))
                order = np.argsort(-score, kind="stable")[:keep]

            diff = (fwd[order] - bwd[order])[:, None] * deltas[order]
            denom = (2.0 if cfg.antithetic else 1.0) * cfg.sigma * keep
            g_hat = diff.sum(axis=0) / denom

            collected = np.concatenate([fwd[order], bwd[order]]) if cfg.antithetic \
                else fwd[order]
            spread = float(np.std(collected))
            if spread > 1e-12:
                theta = theta + cfg.step_size * g_hat / spread

            ev_seeds = eval_seeds(cfg.seed, it, cfg.eval_episodes)
            ev = np.array([evaluator(theta, s) for s in ev_seeds]) \
                if cfg.eval_episodes else np.array([baseline])
            stats = IterationStats(
                iteration=it,
                mean_reward=float(ev.mean()),
                reward_std=float(ev.std()),
                wall_time=time.perf_counter() - t0,
                train_return_mean=float(np.concatenate([fwd, bwd]).mean())
                if cfg.antithetic else float(fwd.mean()),
                grad_norm=float(np.linalg.norm(g_hat)),
            )
            curve.append(stats)

            if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                ck = {"iteration": it + 1, "theta": theta.copy()}
                checkpoints.append(ck)
                if on_checkpoint is not None:
                    on_checkpoint(ck)
    finally:
        if pool is not None:
            pool.shutdown()

    return TrainResult(theta=theta, curve=curve, checkpoints=checkpoints)


# ---------------------------------------------------------------------------
# Checkpoint files
# ---------------------------------------------------------------------------

def save_checkpoint(path: str, theta: np.ndarray, arch_desc: Dict, cfg: BgsConfig,
                    iteration: int, extra: Optional[Dict] = None):
    doc = {
        "version": CHECKPOINT_VERSION,
        "arch": arch_desc,
        "theta": np.asarray(theta, dtype=float).tolist(),
        "iteration": int(iteration),
        "optimizer": {
            "sigma": cfg.sigma, "step_size": cfg.step_size,
            "perturbations": cfg.perturbations,
            "rollouts_per_perturbation": cfg.rollouts_per_perturbation,
            "antithetic": cfg.antithetic, "top_fraction": cfg.top_fraction,
        },
        "rng": {"seed": cfg.seed, "next_iteration": int(iteration)},
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path: str) -> Dict:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    doc["theta"] = np.asarray(doc["theta"], dtype=float)
    return doc
