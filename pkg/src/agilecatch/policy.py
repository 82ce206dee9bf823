"""Two-tower convolutional policy over the episode observation.

Tower one convolves the joint-position history image (n_hist x 7); tower two
convolves the predicted-ball-trajectory image (n_pred x 6). Their flattened
outputs are concatenated and passed through two fully-connected layers; the
final 7 outputs are tanh-squashed onto the joint velocity limits.

Parameters live in one flat vector with a fixed per-layer layout so the
blackbox optimizer can treat the policy as a plain R^d point. The default
shapes give 3255 parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .config import EnvConfig, PolicyConfig
from .sim_env import Observation
from .stage_ocp import NQ, Limits


class ShapeMismatch(ValueError):
    """Parameter vector or observation shapes disagree with the architecture."""


@dataclass(frozen=True)
class PolicyArchitecture:
    n_hist: int
    n_pred: int
    hist_channels: int
    hist_kernel: int
    hist_stride: int
    pred_channels: int
    pred_kernel: int
    pred_stride: int
    hidden: int
    out_scale: np.ndarray       # (7,) velocity squash scale
    hist_scale: np.ndarray      # (7,) input normalization for joint positions
    pred_scale: np.ndarray      # (6,) input normalization for the ball track

    @property
    def hist_len_out(self) -> int:
        return (self.n_hist - self.hist_kernel) // self.hist_stride + 1

    @property
    def pred_len_out(self) -> int:
        return (self.n_pred - self.pred_kernel) // self.pred_stride + 1

    @property
    def flat_features(self) -> int:
        return (self.hist_channels * self.hist_len_out
                + self.pred_channels * self.pred_len_out)


def make_architecture(policy_cfg: PolicyConfig, env_cfg: EnvConfig,
                      limits: Limits) -> PolicyArchitecture:
    out_scale = np.minimum(-limits.qdot_lo, limits.qdot_hi)
    return PolicyArchitecture(
        n_hist=env_cfg.n_hist, n_pred=env_cfg.n_pred,
        hist_channels=policy_cfg.hist_channels, hist_kernel=policy_cfg.hist_kernel,
        hist_stride=policy_cfg.hist_stride,
        pred_channels=policy_cfg.pred_channels, pred_kernel=policy_cfg.pred_kernel,
        pred_stride=policy_cfg.pred_stride,
        hidden=policy_cfg.hidden,
        out_scale=out_scale,
        hist_scale=1.0 / np.maximum(np.abs(limits.q_hi), 1e-6),
        pred_scale=np.array([0.5, 0.25, 0.5, 0.2, 0.2, 0.2]),
    )


def layout(arch: PolicyArchitecture) -> List[Tuple[str, Tuple[int, ...], int]]:
    """Per-layer (name, shape, offset) table of the flat parameter vector."""
    shapes = [
        ("hist_conv_w", (arch.hist_channels, NQ, arch.hist_kernel)),
        ("hist_conv_b", (arch.hist_channels,)),
        ("pred_conv_w", (arch.pred_channels, 6, arch.pred_kernel)),
        ("pred_conv_b", (arch.pred_channels,)),
        ("fc1_w", (arch.hidden, arch.flat_features)),
        ("fc1_b", (arch.hidden,)),
        ("fc2_w", (NQ, arch.hidden)),
        ("fc2_b", (NQ,)),
    ]
    table = []
    offset = 0
    for name, shape in shapes:
        table.append((name, shape, offset))
        offset += int(np.prod(shape))
    return table


def param_count(arch: PolicyArchitecture) -> int:
    table = layout(arch)
    name, shape, offset = table[-1]
    return offset + int(np.prod(shape))


def unpack(arch: PolicyArchitecture, theta: np.ndarray) -> Dict[str, np.ndarray]:
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != param_count(arch):
        raise ShapeMismatch(
            f"theta has {theta.size} entries, architecture needs {param_count(arch)}")
    return {name: theta[off:off + int(np.prod(shape))].reshape(shape)
            for name, shape, off in layout(arch)}


def init_params(arch: PolicyArchitecture, seed: int, scale: float = 0.5) -> np.ndarray:
    """Fan-in-scaled Gaussian init of the flat parameter vector."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    chunks = []
    for name, shape, _ in layout(arch):
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else 1
        std = scale / np.sqrt(max(fan_in, 1))
        chunks.append(rng.normal(0.0, std, int(np.prod(shape))))
    return np.concatenate(chunks)


def _conv1d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    """x: (T, D) time-major image; w: (C, D, K); returns (L, C)."""
    k = w.shape[2]
    windows = np.lib.stride_tricks.sliding_window_view(x, k, axis=0)[::stride]
    return np.einsum("ldk,cdk->lc", windows, w) + b


class CompiledPolicy:
    """Parameter views bound to an architecture, for repeated forward passes
    with one theta (one unpack instead of one per control tick)."""

    def __init__(self, arch: PolicyArchitecture, theta: np.ndarray):
        self.arch = arch
        self.params = unpack(arch, theta)

    def __call__(self, obs: Observation) -> np.ndarray:
        arch, p = self.arch, self.params
        hist = obs.joint_history
        pred = obs.predicted_ball
        if hist.shape != (arch.n_hist, NQ) or pred.shape != (arch.n_pred, 6):
            raise ShapeMismatch(
                f"observation shapes {hist.shape}/{pred.shape} do not match "
                f"({arch.n_hist},{NQ})/({arch.n_pred},6)")
        h1 = np.tanh(_conv1d(hist * arch.hist_scale, p["hist_conv_w"],
                             p["hist_conv_b"], arch.hist_stride)).ravel()
        h2 = np.tanh(_conv1d(pred * arch.pred_scale, p["pred_conv_w"],
                             p["pred_conv_b"], arch.pred_stride)).ravel()
        z = np.tanh(p["fc1_w"] @ np.concatenate([h1, h2]) + p["fc1_b"])
        out = p["fc2_w"] @ z + p["fc2_b"]
        return np.tanh(out) * arch.out_scale


def policy_forward(arch: PolicyArchitecture, theta: np.ndarray,
                   obs: Observation) -> np.ndarray:
    """Deterministic forward pass: observation -> commanded joint velocities,
    squashed inside the velocity box."""
    return CompiledPolicy(arch, theta)(obs)


def arch_descriptor(arch: PolicyArchitecture) -> Dict:
    """JSON-friendly encoding for checkpoints."""
    return {
        "n_hist": arch.n_hist, "n_pred": arch.n_pred,
        "hist_channels": arch.hist_channels, "hist_kernel": arch.hist_kernel,
        "hist_stride": arch.hist_stride,
        "pred_channels": arch.pred_channels, "pred_kernel": arch.pred_kernel,
        "pred_stride": arch.pred_stride,
        "hidden": arch.hidden,
        "out_scale": arch.out_scale.tolist(),
        "hist_scale": arch.hist_scale.tolist(),
        "pred_scale": arch.pred_scale.tolist(),
    }


def arch_from_descriptor(d: Dict) -> PolicyArchitecture:
    return PolicyArchitecture(
        n_hist=int(d["n_hist"]), n_pred=int(d["n_pred"]),
        hist_channels=int(d["hist_channels"]), hist_kernel=int(d["hist_kernel"]),
        hist_stride=int(d["hist_stride"]),
        pred_channels=int(d["pred_channels"]), pred_kernel=int(d["pred_kernel"]),
        pred_stride=int(d["pred_stride"]),
        hidden=int(d["hidden"]),
        out_scale=np.asarray(d["out_scale"], dtype=float),
        hist_scale=np.asarray(d["hist_scale"], dtype=float),
        pred_scale=np.asarray(d["pred_scale"], dtype=float),
    )
