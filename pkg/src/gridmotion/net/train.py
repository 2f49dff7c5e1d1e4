"""SGD training loop (batch 1) with momentum, weight decay and two LR policies.

The step policy starts ten times above the base rate and decays in five
multiplicative steps, reaching the base rate at half the training iterations
and holding it from there. Losses are normalized per valid pixel, so rates
are independent of the input size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .arch import ArchError, Network, build_network
from .layers import orientation_loss, softmax, weighted_softmax_loss

LR_DECAY_STEPS = 5


@dataclass
class TrainConfig:
    lr_policy: str = "step"            # fixed | step
    base_lr: float = 3.6e-5
    momentum: float = 0.9
    weight_decay: float = 5e-4
    iterations: int = 2000
    class_weights: tuple = (1.0, 40.0)  # (static, dynamic)
    orientation_loss_weight: float = 1.0
    rng_seed: int = 0
    eval_interval: int = 50
    batch: int = 1

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if any(c <= 0 for c in self.class_weights):
            raise ValueError("class weights must be positive")
        if self.lr_policy not in ("fixed", "step"):
            raise ValueError(f"unknown lr policy {self.lr_policy!r}")
        if self.batch != 1:
            raise ValueError("only batch size 1 is supported")


def lr_at(iteration: int, config: TrainConfig) -> float:
    """Learning rate at one iteration under the configured policy."""
    if config.lr_policy == "fixed":
        return config.base_lr
    half = config.iterations // 2
    if iteration >= half:
        return config.base_lr
    seg = max(config.iterations // (2 * LR_DECAY_STEPS), 1)
    k = min(iteration // seg, LR_DECAY_STEPS)
    return config.base_lr * 10.0 ** (1.0 - k / LR_DECAY_STEPS)


@dataclass
class TrainSample:
    """One frame ready for the network: float input plus supervision masks."""

    x: np.ndarray               # (C, H, W) float in [0, 1]
    labels: np.ndarray          # (H, W) int8; -1 = ignore
    occupied: np.ndarray        # (H, W) bool
    heading: np.ndarray = None  # (H, W) float, NaN off support


@dataclass
class TrainRecord:
    iteration: int
    loss: float
    accuracy: float
    precision: float
    recall: float
    accuracy_all: float


def _sample_metrics(prob_dynamic, pred, sample) -> tuple[float, float, float, float]:
    valid = sample.labels >= 0
    occ = sample.occupied & valid
    truth = sample.labels == 1
    if occ.sum() == 0:
        acc = math.nan
        prec = math.nan
        rec = math.nan
    else:
        p = pred[occ].astype(bool)
        t = truth[occ]
        tp = np.sum(p & t)
        acc = float(np.mean(p == t))
        prec = float(tp / p.sum()) if p.sum() else math.nan
        rec = float(tp / t.sum()) if t.sum() else math.nan
    acc_all = float(np.mean(pred[valid].astype(bool) == truth[valid])) \
        if valid.sum() else math.nan
    return acc, prec, rec, acc_all


def train(net: Network, dataset: list[TrainSample], config: TrainConfig,
          log_path=None, lr_scale: float = 1.0) -> list[TrainRecord]:
    """SGD over shuffled samples; returns the learning-curve records.

    Diverging (NaN) loss aborts with a diagnostic. With a fixed seed the
    run is deterministic, so reruns produce identical parameters.
    """
    if not dataset:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(config.rng_seed)
    momenta = {key: np.zeros_like(arr) for key, arr, _ in net.param_arrays()}
    history: list[TrainRecord] = []
    order = rng.permutation(len(dataset))
    pos = 0
    for it in range(config.iterations):
        if pos >= len(order):
            order = rng.permutation(len(dataset))
            pos = 0
        sample = dataset[order[pos]]
        pos += 1

        out = net.forward(sample.x)
        loss, dseg = weighted_softmax_loss(out["seg"], sample.labels,
                                           config.class_weights)
        grads = {"seg": dseg}
        if net.has_heads and sample.heading is not None:
            oloss, dsin, dcos = orientation_loss(
                out["sin"], out["cos"], sample.heading,
                config.orientation_loss_weight)
            loss += oloss
            grads["sin"] = dsin
            grads["cos"] = dcos
        if not math.isfinite(loss):
            raise RuntimeError(
                f"training diverged: non-finite loss at iteration {it}")

        net.zero_grads()
        net.backward(grads)
        lr = lr_at(it, config) * lr_scale
        for key, arr, grad in net.param_arrays():
            v = momenta[key]
            v *= config.momentum
            v -= lr * (grad + config.weight_decay * arr)
            arr += v

        if it % config.eval_interval == 0 or it == config.iterations - 1:
            prob = softmax(out["seg"].astype(np.float64))
            pred = prob.argmax(axis=0)
            acc, prec, rec, acc_all = _sample_metrics(prob[1], pred, sample)
            history.append(TrainRecord(it, loss, acc, prec, rec, acc_all))
    if log_path is not None:
        write_curve_csv(history, log_path)
    return history


def write_curve_csv(history: list[TrainRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("iter,loss,acc,prec,rec,acc_all\n")
        for rec in history:
            fh.write(f"{rec.iteration},{rec.loss!r},{rec.accuracy!r},"
                     f"{rec.precision!r},{rec.recall!r},{rec.accuracy_all!r}\n")


def init_from_coarser(fine_arch: str, coarse: Network,
                      lr_scale: float = 1.0, rng_seed: int = 0) -> Network:
    """Build `fine_arch` and copy every layer shared with the trained coarser net.

    New skip-score layers stay zero-initialized and new upsampling layers stay
    bilinear, so the fine net's forward initially reproduces the coarse
    pre-fusion path. `lr_scale` (1.0 or 0.1) is applied by the caller via
    train(..., lr_scale=...).
    """
    if lr_scale not in (1.0, 0.1):
        raise ValueError("lr_scale is either 1.0 (unchanged) or 0.1 (reduced)")
    fine = build_network(fine_arch, in_channels=coarse.in_channels,
                         heads=coarse.has_heads, rng_seed=rng_seed,
                         dtype=coarse.dtype)
    coarse_state = coarse.state_dict()
    fine_keys = {key for key, _, _ in fine.param_arrays()}
    shared = fine_keys & set(coarse_state)
    # the conv stack must be common; anything else signals unrelated archs
    backbone = [k for k in fine_keys if k.split(".")[0].startswith(("conv", "fc", "head"))]
    missing = [k for k in backbone if k not in coarse_state]
    if missing:
        raise ArchError(f"{fine_arch} does not share a prefix with "
                        f"{coarse.name}: missing {sorted(missing)[:3]}")
    fine.load_state({k: coarse_state[k] for k in shared}, strict=False)
    return fine


def scaled_iterations(base_iterations: int, base_size: int, new_size: int) -> int:
    """Retraining budget proportional to the training-set growth."""
    if base_size <= 0:
        raise ValueError("base_size must be positive")
    return max(1, int(round(base_iterations * new_size / base_size)))
