"""Policy training and fine-tuning on the catching simulator.

Wraps the generic blackbox optimizer around episode evaluation: a picklable
evaluator runs one seeded episode under a parameter vector and returns the
episode reward. Training scores episodes with the shaped simulator reward;
fine-tuning scores them with the sparse hardware-analog reward.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace
from typing import Dict, List, Optional

import numpy as np

from . import bgs, policy, rewards, sim_env
from .bgs import TrainResult
from .config import BgsConfig, Config
from .policy import PolicyArchitecture
from .sim_env import CatchEnv


class CatchEvaluator:
    """Deterministic (theta, seed) -> episode return. Picklable for pools."""

    def __init__(self, cfg: Config, arch: PolicyArchitecture,
                 mode: str = rewards.SIM):
        self.env_cfg = cfg.env
        self.thrower = cfg.thrower
        self.limits = cfg.limits
        self.reward_cfg = cfg.rewards
        self.ready_q = cfg.ready_q
        self.model = cfg.model()
        self.arch = arch
        self.mode = mode

    def _episode(self, theta: np.ndarray, seed: int) -> sim_env.EpisodeResult:
        env = CatchEnv(self.env_cfg, self.thrower, self.limits, self.model,
                       self.reward_cfg, self.ready_q, seed)
        forward = policy.CompiledPolicy(self.arch, theta)
        obs = env.observe()
        while not env.done:
            obs, _ = env.step(forward(obs))
        return env.result(self.mode)

    def __call__(self, theta: np.ndarray, seed: int) -> float:
        return self._episode(theta, seed).total_reward

    def catch_rate(self, theta: np.ndarray, seeds: List[int]) -> float:
        return float(np.mean([self._episode(theta, s).caught for s in seeds]))


def train(cfg: Config, theta0: Optional[np.ndarray] = None,
          iterations: Optional[int] = None,
          curve_path: Optional[str] = None,
          checkpoint_path: Optional[str] = None,
          start_iteration: int = 0,
          mode: str = rewards.SIM) -> TrainResult:
    """BGS training from ``theta0`` (random init when None)."""
    arch = policy.make_architecture(cfg.policy, cfg.env, cfg.limits)
    if theta0 is None:
        theta0 = policy.init_params(arch, seed=cfg.bgs.seed,
                                    scale=cfg.policy.init_scale)
    evaluator = CatchEvaluator(cfg, arch, mode=mode)

    def save(ck: Dict):
        if checkpoint_path:
            bgs.save_checkpoint(checkpoint_path, ck["theta"],
                                policy.arch_descriptor(arch), cfg.bgs,
                                ck["iteration"])

    result = bgs.train_loop(evaluator, theta0, cfg.bgs, iterations=iterations,
                            start_iteration=start_iteration, on_checkpoint=save)
    if checkpoint_path:
        done = start_iteration + (cfg.bgs.iterations if iterations is None else iterations)
        bgs.save_checkpoint(checkpoint_path, result.theta,
                            policy.arch_descriptor(arch), cfg.bgs, done)
    if curve_path:
        write_curve_csv(curve_path, result.curve)
    return result


def finetune(checkpoint_path: str, cfg: Config,
             iterations: Optional[int] = None,
             curve_path: Optional[str] = None,
             out_checkpoint_path: Optional[str] = None) -> TrainResult:
    """Continue BGS from a checkpoint under (possibly shifted) configs,
    scoring with the sparse hardware-analog reward."""
    doc = bgs.load_checkpoint(checkpoint_path)
    arch = policy.arch_from_descriptor(doc["arch"])
    evaluator = CatchEvaluator(cfg, arch, mode=rewards.REAL_ANALOG)

    def save(ck: Dict):
        if out_checkpoint_path:
            bgs.save_checkpoint(out_checkpoint_path, ck["theta"],
                                doc["arch"], cfg.bgs, ck["iteration"])

    result = bgs.train_loop(evaluator, doc["theta"], cfg.bgs,
                            iterations=iterations,
                            start_iteration=doc["iteration"],
                            on_checkpoint=save)
    if out_checkpoint_path:
        done = doc["iteration"] + (cfg.bgs.iterations if iterations is None else iterations)
        bgs.save_checkpoint(out_checkpoint_path, result.theta, doc["arch"],
                            cfg.bgs, done)
    if curve_path:
        write_curve_csv(curve_path, result.curve)
    return result


def write_curve_csv(path: str, curve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "mean_reward", "reward_std", "wall_time"])
        for row in curve:
            writer.writerow([row.iteration, f"{row.mean_reward:.6f}",
                             f"{row.reward_std:.6f}", f"{row.wall_time:.3f}"])
