"""Patch-based training of the residual network.

The loss is plain mean squared error between the predicted and true
residuals.  Adam drives the weights with an inverse-time learning-rate
schedule, lr_k = lr / (1 + decay * k) with k counting optimizer steps.
Every epoch reports a training and a validation loss; the checkpoint stores
the weights from the best validation epoch.

Reproducibility: the run seeds torch and numpy from spec.seed and, when
spec.deterministic is set, switches torch to deterministic algorithms.  The
CPU kernels used here are all deterministic under that flag, so two runs
with the same seed write identical checkpoints and curves.  Training is
single-process by design.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, NumericalError
from .model import NetSpec, build_net
from .patches import MODE_LAYOUTS, PatchSpec, build_training_pairs

__all__ = ["TrainSpec", "TrainResult", "train"]


@dataclass(frozen=True)
class TrainSpec:
    epochs: int = 200
    batch_size: int = 128
    lr: float = 1e-3
    decay: float = 1e-3
    patch: int = 64
    stride: int = 16
    scales: tuple[float, ...] = (0.5, 1.0, 2.0)
    augment: bool = True
    val_fraction: float = 0.1
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.decay < 0:
            raise ConfigError(f"decay must be nonnegative, got {self.decay}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))

    def patch_spec(self) -> PatchSpec:
        return PatchSpec(self.patch, self.stride, self.scales, self.augment)


@dataclass(frozen=True)
class TrainResult:
    model_path: str
    curve_path: str
    best_epoch: int  # 1-based
    best_val_loss: float
    n_train: int
    n_val: int


def _batches(n: int, size: int):
    for lo in range(0, n, size):
        yield slice(lo, min(lo + size, n))


def _epoch_val_loss(net: nn.Module, x: torch.Tensor, y: torch.Tensor, batch: int) -> float:
    net.eval()
    total = 0.0
    with torch.no_grad():
        for sl in _batches(x.shape[0], batch):
            pred = net(x[sl])
            total += float(nn.functional.mse_loss(pred, y[sl], reduction="sum"))
    net.train()
    return total / y.numel()


def train(
    inputs: np.ndarray,
    reference: np.ndarray,
    net_spec: NetSpec,
    spec: TrainSpec,
    out_dir: str | Path,
) -> TrainResult:
    """Fit the network on frame stacks and persist model + training curve.

    ``inputs`` and ``reference`` are (n_frames, N_s, N1, N2) stacks, complex
    for mode "complex" and real for mode "magnitude".  Writes ``model.pt``
    (weights of the best validation epoch plus everything inference needs)
    and ``training_curve.json`` into ``out_dir``.  A non-finite loss aborts
    immediately with the epoch, batch, and learning rate in the message.
    """
    inputs = np.asarray(inputs)
    reference = np.asarray(reference)
    if inputs.ndim != 4:
        raise ValueError(f"expected (n_frames, N_s, N1, N2) stacks, got shape {inputs.shape}")
    if net_spec.shots != inputs.shape[1]:
        raise ConfigError(
            f"net expects {net_spec.shots} shot(s), data carries {inputs.shape[1]}"
        )
    if spec.patch % net_spec.min_size:
        raise ConfigError(
            f"patch {spec.patch} must be divisible by {net_spec.min_size} "
            f"({net_spec.levels} levels of pooling)"
        )

    x_np, y_np = build_training_pairs(inputs, reference, net_spec.mode, spec.patch_spec())
    n = x_np.shape[0]
    if n < 2:
        raise ConfigError(f"need at least 2 patches to split train/val, got {n}")

    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n)
    n_val = max(1, int(round(spec.val_fraction * n)))
    n_val = min(n_val, n - 1)
    val_idx, train_idx = perm[:n_val], perm[n_val:]

    torch.manual_seed(spec.seed)
    if spec.deterministic:
        torch.use_deterministic_algorithms(True)

    x_train = torch.from_numpy(x_np[train_idx])
    y_train = torch.from_numpy(y_np[train_idx])
    x_val = torch.from_numpy(x_np[val_idx])
    y_val = torch.from_numpy(y_np[val_idx])

    net = build_net(net_spec)
    net.train()
    opt = torch.optim.Adam(net.parameters(), lr=spec.lr)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda k: 1.0 / (1.0 + spec.decay * k))
    loss_fn = nn.MSELoss()

    train_curve: list[float] = []
    val_curve: list[float] = []
    best_val = math.inf
    best_epoch = 0
    best_state: dict[str, torch.Tensor] = {}
    last_finite = None
    n_train = x_train.shape[0]

    for epoch in range(1, spec.epochs + 1):
        order = torch.randperm(n_train)
        total = 0.0
        for b, sl in enumerate(_batches(n_train, spec.batch_size)):
            idx = order[sl]
            opt.zero_grad()
            loss = loss_fn(net(x_train[idx]), y_train[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(
                    f"training diverged: non-finite loss at epoch {epoch} batch {b + 1} "
                    f"(lr {sched.get_last_lr()[0]:.3g}, last finite loss {last_finite})"
                )
            last_finite = value
            loss.backward()
            opt.step()
            sched.step()
            total += value * idx.shape[0]
        train_curve.append(total / n_train)
        val = _epoch_val_loss(net, x_val, y_val, spec.batch_size)
        if not math.isfinite(val):
            raise NumericalError(
                f"training diverged: non-finite validation loss at epoch {epoch} "
                f"(lr {sched.get_last_lr()[0]:.3g})"
            )
        val_curve.append(val)
        if val < best_val:
            best_val = val
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in net.state_dict().items()}

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_path = out_dir / "model.pt"
    torch.save(
        {
            "state_dict": best_state,
            "net": {
                "levels": net_spec.levels,
                "base_filters": net_spec.base_filters,
                "kernel_size": net_spec.kernel_size,
                "dropout": net_spec.dropout,
                "batch_norm": net_spec.batch_norm,
                "negative_slope": net_spec.negative_slope,
                "mode": net_spec.mode,
                "shots": net_spec.shots,
            },
            "patch": spec.patch,
            "layout": MODE_LAYOUTS[net_spec.mode],
            "normalization": "max-abs",
            "best_epoch": best_epoch,
            "best_val_loss": best_val,
        },
        model_path,
    )
    curve_path = out_dir / "training_curve.json"
    curve = {
        "train_loss": train_curve,
        "val_loss": val_curve,
        "best_epoch": best_epoch,
        "best_val_loss": best_val,
        "n_train": int(n_train),
        "n_val": int(n_val),
        "lr": spec.lr,
        "decay": spec.decay,
        "epochs": spec.epochs,
        "batch_size": spec.batch_size,
        "seed": spec.seed,
    }
    curve_path.write_text(json.dumps(curve, indent=2, sort_keys=True) + "\n")
    return TrainResult(
        model_path=str(model_path),
        curve_path=str(curve_path),
        best_epoch=best_epoch,
        best_val_loss=best_val,
        n_train=int(n_train),
        n_val=int(n_val),
    )
