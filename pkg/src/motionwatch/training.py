"""Adam optimizer and the nominal-flow training loop."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .imaging import FlowField
from .punet import ProbUNetModel, RangeConfig, training_step

log = logging.getLogger(__name__)


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def flow_norm_scale(sequences: list[list[FlowField]], percentile: float = 99.0) -> float:
    """Per-dataset normalization constant: a high percentile of the flow
    magnitude over all training pixels (floored away from zero)."""
    mags = [np.hypot(f.dx, f.dy).ravel() for seq in sequences for f in seq]
    if not mags:
        raise ValueError("no flows to normalize over")
    value = float(np.percentile(np.concatenate(mags), percentile))
    return max(value, 1e-3)


@dataclass
class TrainHistory:
    epoch_losses: list[float]
    epoch_reconstruction: list[float]
    epoch_kl: list[float]


def train(
    model: ProbUNetModel,
    sequences: list[list[FlowField]],
    rc: RangeConfig,
    epochs: int = 10,
    batch_size: int = 32,
    lr: float = 1e-4,
    seed: int = 0,
) -> TrainHistory:
    """Train on nominal flow sequences (model resolution).

    Every frame far enough from the sequence start is a sample; its past
    offset is redrawn uniformly from the configured range each epoch.
    Deterministic for a fixed seed.
    """
    if not sequences:
        raise ValueError("empty training dataset")
    if model.norm_scale is None:
        model.norm_scale = flow_norm_scale(sequences)

    encoded: list[np.ndarray] = []
    samples: list[tuple[int, int]] = []
    for si, seq in enumerate(sequences):
        if len(seq) <= rc.max_offset:
            warnings.warn(
                f"sequence {si} has {len(seq)} flows, needs > {rc.max_offset}; skipped",
                RuntimeWarning,
                stacklevel=2,
            )
            continue
        encoded.append(np.stack([model.encode_flow(f) for f in seq]))
        si_enc = len(encoded) - 1
        samples.extend((si_enc, t) for t in range(rc.max_offset, len(seq)))
    if not samples:
        raise ValueError("no usable training samples")

    rng = np.random.default_rng(seed)
    optimizer = Adam(model.parameters(), lr=lr)
    history = TrainHistory([], [], [])
    d = model.config.latent_dim

    for epoch in range(epochs):
        order = rng.permutation(len(samples))
        losses, recs, kls = [], [], []
        for start in range(0, len(order), batch_size):
            chunk = [samples[i] for i in order[start:start + batch_size]]
            offsets = rng.integers(rc.min_offset, rc.max_offset + 1, size=len(chunk))
            past = np.stack([encoded[si][t - n] for (si, t), n in zip(chunk, offsets)])
            now = np.stack([encoded[si][t] for (si, t) in chunk])
            noise = rng.standard_normal((len(chunk), d))

            loss, reconstruction, kl, _ = training_step(model, past, now, noise)
            if not np.isfinite(loss.data):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, batch {start // batch_size}"
                )
            model.zero_grads()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.data))
            recs.append(float(reconstruction.data))
            kls.append(float(kl.data))
        history.epoch_losses.append(float(np.mean(losses)))
        history.epoch_reconstruction.append(float(np.mean(recs)))
        history.epoch_kl.append(float(np.mean(kls)))
        log.info(
            "epoch %d/%d loss=%.6f rec=%.6f kl=%.6f",
            epoch + 1,
            epochs,
            history.epoch_losses[-1],
            history.epoch_reconstruction[-1],
            history.epoch_kl[-1],
        )
    return history
