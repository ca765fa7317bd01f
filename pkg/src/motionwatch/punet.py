"""Probabilistic U-Net for optical-flow prediction.

A U-Net predicts the current flow image from one past flow image; a prior
encoder maps the past flow to a diagonal-Gaussian latent and a posterior
encoder (seeing the current flow as well) maps to a second Gaussian.
Training samples the latent from the posterior via the reparameterization
trick and minimizes reconstruction MSE plus a KL term pulling the prior
toward the posterior; inference samples from the prior several times over
a range of past offsets and keeps the best prediction's error.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .errors import FlowFormatError
from .imaging import FlowField, Mask, SimilarityTransform

CHECKPOINT_MAGIC = b"PUN1"


@dataclass(frozen=True)
class RangeConfig:
    """Past-frame input range: offsets ``min_offset .. min_offset + span``
    with `samples` prior draws per offset."""

    min_offset: int = 5
    span: int = 4
    samples: int = 10

    def __post_init__(self):
        if self.min_offset < 1 or self.span < 0 or self.samples < 1:
            raise ValueError("need min_offset >= 1, span >= 0, samples >= 1")

    @property
    def max_offset(self) -> int:
        return self.min_offset + self.span

    @property
    def offsets(self) -> range:
        return range(self.min_offset, self.max_offset + 1)


@dataclass(frozen=True)
class ModelConfig:
    input_side: int = 32
    depth: int = 3
    base_channels: int = 8
    latent_dim: int = 6
    beta: float = 10.0

    def __post_init__(self):
        if self.input_side % (2 ** (self.depth - 1)):
            raise ValueError("input_side must be divisible by 2**(depth-1)")
        if min(self.depth, self.base_channels, self.latent_dim) < 1:
            raise ValueError("depth, base_channels and latent_dim must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


@dataclass
class LatentGaussian:
    """Diagonal Gaussian over the latent space, sigma kept positive by
    parameterizing its logarithm."""

    mu: Tensor
    log_sigma: Tensor

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma.data)


def kl_diag_gaussians(q: LatentGaussian, p: LatentGaussian) -> Tensor:
    """KL(q || p) for diagonal Gaussians, summed over the latent dimension
    and averaged over any leading batch dimension."""
    if q.mu.shape != p.mu.shape or q.log_sigma.shape != p.log_sigma.shape:
        raise ValueError("latent dimensions differ")
    var_ratio = ad.exp(ad.mul_scalar(ad.add(q.log_sigma, -p.log_sigma), 2.0))
    mean_term = ad.mul(
        ad.square(ad.add(q.mu, -p.mu)), ad.exp(ad.mul_scalar(p.log_sigma, -2.0))
    )
    per_dim = ad.add(
        ad.add(p.log_sigma, -q.log_sigma),
        ad.mul_scalar(ad.add(var_ratio, mean_term), 0.5),
    )
    total = ad.sum_all(ad.add(per_dim, Tensor(np.full(per_dim.shape, -0.5))))
    batch = q.mu.shape[0] if q.mu.data.ndim == 2 else 1
    return ad.mul_scalar(total, 1.0 / batch)


def reparameterize(dist: LatentGaussian, noise: np.ndarray) -> Tensor:
    """z = mu + sigma * noise with gradients flowing to mu and log-sigma."""
    return ad.add(dist.mu, ad.mul(ad.exp(dist.log_sigma), Tensor(noise)))


class _Conv:
    def __init__(self, rng, c_in, c_out, k=3, padding=1, weight_scale=1.0):
        std = weight_scale * np.sqrt(2.0 / (c_in * k * k))
        self.w = Tensor(rng.normal(0.0, std, (c_out, c_in, k, k)), requires_grad=True)
        self.b = Tensor(np.zeros(c_out), requires_grad=True)
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.w, self.b, padding=self.padding)

    def params(self):
        return [self.w, self.b]


class _Dense:
    def __init__(self, rng, n_in, n_out):
        std = np.sqrt(2.0 / n_in)
        self.w = Tensor(rng.normal(0.0, std, (n_in, n_out)), requires_grad=True)
        self.b = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(x @ self.w, self.b)

    def params(self):
        return [self.w, self.b]


class _LatentEncoder:
    """Shared architecture for the prior and posterior heads; they differ
    only in input channel count (past flow vs current+past flows)."""

    def __init__(self, rng, in_channels, base, latent_dim):
        chans = [base, 2 * base, 4 * base]
        self.convs = []
        prev = in_channels
        for c in chans:
            self.convs.append(_Conv(rng, prev, c))
            prev = c
        self.mu_head = _Dense(rng, prev, latent_dim)
        self.log_sigma_head = _Dense(rng, prev, latent_dim)

    def __call__(self, x: Tensor) -> LatentGaussian:
        h = x
        for i, conv in enumerate(self.convs):
            h = ad.relu(conv(h))
            if i < len(self.convs) - 1:
                h = ad.avg_pool2(h)
        pooled = ad.global_mean_spatial(h)
        return LatentGaussian(self.mu_head(pooled), self.log_sigma_head(pooled))

    def params(self):
        out = []
        for conv in self.convs:
            out.extend(conv.params())
        out.extend(self.mu_head.params())
        out.extend(self.log_sigma_head.params())
        return out


class ProbUNetModel:
    """U-Net with skip connections plus prior/posterior latent encoders
    and a 1x1-conv fuser applied after the latent is tiled spatially and
    concatenated with the last activation map."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.norm_scale: float | None = None
        rng = np.random.default_rng(seed)
        base = config.base_channels
        depth = config.depth
        chans = [base * 2**i for i in range(depth)]

        self.enc_blocks = []
        prev = 2
        for c in chans:
            self.enc_blocks.append((_Conv(rng, prev, c), _Conv(rng, c, c)))
            prev = c

        self.dec_blocks = []
        for level in range(depth - 2, -1, -1):
            reduce = _Conv(rng, chans[level + 1], chans[level])
            merge = _Conv(rng, 2 * chans[level], chans[level])
            self.dec_blocks.append((reduce, merge))

        d = config.latent_dim
        self.fuser = [
            _Conv(rng, base + d, base, k=1, padding=0),
            _Conv(rng, base, base, k=1, padding=0),
            _Conv(rng, base, 2, k=1, padding=0, weight_scale=0.1),
        ]
        self.prior_net = _LatentEncoder(rng, 2, base, d)
        self.posterior_net = _LatentEncoder(rng, 4, base, d)

    # -- parameter bookkeeping ----------------------------------------
    def parameters(self) -> list[Tensor]:
        out: list[Tensor] = []
        for c1, c2 in self.enc_blocks:
            out.extend(c1.params())
            out.extend(c2.params())
        for reduce, merge in self.dec_blocks:
            out.extend(reduce.params())
            out.extend(merge.params())
        for conv in self.fuser:
            out.extend(conv.params())
        out.extend(self.prior_net.params())
        out.extend(self.posterior_net.params())
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    # -- forward pieces -------------------------------------------------
    def unet_features(self, x: Tensor) -> Tensor:
        skips = []
        h = x
        for i, (c1, c2) in enumerate(self.enc_blocks):
            h = ad.relu(c1(h))
            h = ad.relu(c2(h))
            if i < len(self.enc_blocks) - 1:
                skips.append(h)
                h = ad.avg_pool2(h)
        for (reduce, merge), skip in zip(self.dec_blocks, reversed(skips)):
            h = ad.upsample_nearest2(h)
            h = ad.relu(reduce(h))
            h = ad.concat([h, skip], axis=1)
            h = ad.relu(merge(h))
        return h

    def prior(self, past: Tensor) -> LatentGaussian:
        return self.prior_net(past)

    def posterior(self, now: Tensor, past: Tensor) -> LatentGaussian:
        return self.posterior_net(ad.concat([now, past], axis=1))

    def decode(self, features: Tensor, z: Tensor) -> Tensor:
        h = ad.concat([features, ad.broadcast_spatial(z, *features.shape[2:])], axis=1)
        h = ad.relu(self.fuser[0](h))
        h = ad.relu(self.fuser[1](h))
        return self.fuser[2](h)

    # -- flow conditioning -----------------------------------------------
    def encode_flow(self, flow: FlowField) -> np.ndarray:
        """Stack a model-resolution flow into (2, H, W) normalized units."""
        side = self.config.input_side
        if (flow.height, flow.width) != (side, side):
            raise ValueError(f"flow must be {side}x{side}, got {flow.height}x{flow.width}")
        scale = self.norm_scale or 1.0
        return np.stack([flow.dx, flow.dy]).astype(np.float64) / scale


def training_step(
    model: ProbUNetModel,
    past: np.ndarray,
    now: np.ndarray,
    noise: np.ndarray,
) -> tuple[Tensor, Tensor, Tensor, np.ndarray]:
    """One batched forward pass: returns (loss, reconstruction, kl, prediction)."""
    x_past = Tensor(past)
    x_now = Tensor(now)
    features = model.unet_features(x_past)
    q = model.posterior(x_now, x_past)
    p = model.prior(x_past)
    z = reparameterize(q, noise)
    prediction = model.decode(features, z)
    reconstruction = ad.mse(prediction, x_now)
    kl = kl_diag_gaussians(q, p)
    loss = ad.add(reconstruction, ad.mul_scalar(kl, model.config.beta))
    return loss, reconstruction, kl, prediction.data


def forward_train(
    model: ProbUNetModel,
    o_past: FlowField,
    o_now: FlowField,
    noise: np.ndarray,
) -> tuple[FlowField, float]:
    """Single-sample training forward: prediction plus MSE + beta*KL loss.

    Flows must already be at model resolution; gradients are populated on
    every parameter.
    """
    past = model.encode_flow(o_past)[None]
    now = model.encode_flow(o_now)[None]
    noise = np.asarray(noise, dtype=np.float64).reshape(1, model.config.latent_dim)
    loss, _, _, pred = training_step(model, past, now, noise)
    if not np.isfinite(loss.data):
        raise FloatingPointError("non-finite training loss")
    model.zero_grads()
    loss.backward()
    scale = model.norm_scale or 1.0
    prediction = FlowField(
        (pred[0, 0] * scale).astype(np.float32), (pred[0, 1] * scale).astype(np.float32)
    )
    return prediction, float(loss.data)


def predict_error(
    model: ProbUNetModel,
    flows: list[FlowField],
    t: int,
    rc: RangeConfig,
    seed: int = 0,
) -> float:
    """Best prediction error for frame `t`.

    For every offset in the range, the past flow conditions the U-Net and
    the prior; `rc.samples` latents are drawn per offset and the minimum
    MSE against the observed flow is returned.  Noise streams are keyed by
    (seed, t, offset) so enlarging the range only adds candidates.
    """
    if not rc.max_offset < t < len(flows):
        raise ValueError(f"t={t} outside scorable range ({rc.max_offset}, {len(flows)})")
    target = model.encode_flow(flows[t])[None]
    m = rc.samples
    best = np.inf
    with no_grad():
        for n in rc.offsets:
            past = Tensor(model.encode_flow(flows[t - n])[None])
            features = model.unet_features(past)
            p = model.prior(past)
            rng = np.random.default_rng([seed, t, n])
            noise = rng.standard_normal((m, model.config.latent_dim))
            z = Tensor(p.mu.data + np.exp(p.log_sigma.data) * noise)
            tiled = Tensor(np.broadcast_to(features.data, (m, *features.shape[1:])).copy())
            preds = model.decode(tiled, z).data
            errors = ((preds - target) ** 2).mean(axis=(1, 2, 3))
            best = min(best, float(errors.min()))
    return best


VARIANTS = ("raw", "registered", "masked", "masked_registered")


def preprocess_variant(
    flow: FlowField,
    variant: str,
    body_mask: Mask | None = None,
    observed_transform: SimilarityTransform | None = None,
) -> FlowField:
    """Select/finish an input-flow variant.

    `masked` zeroes the flow inside the body mask.  `registered` flow is
    produced upstream by warping the second frame with the observed
    transform before the flow solve; here the transform is required as
    evidence the cache matches and the flow passes through unchanged.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if variant in ("registered", "masked_registered") and observed_transform is None:
        raise ValueError(f"variant {variant!r} requires the observed transform")
    if variant in ("masked", "masked_registered"):
        if body_mask is None:
            raise ValueError(f"variant {variant!r} requires a body mask")
        if (body_mask.height, body_mask.width) != (flow.height, flow.width):
            raise ValueError("mask dimensions do not match flow")
        if body_mask.is_empty():
            return flow
        dx = flow.dx.copy()
        dy = flow.dy.copy()
        dx[body_mask.bits] = 0.0
        dy[body_mask.bits] = 0.0
        return FlowField(dx, dy)
    return flow


# -- checkpoint container ------------------------------------------------


def save_model(model: ProbUNetModel, path) -> None:
    """Versioned binary checkpoint: magic, JSON header, little-endian
    float32 parameters in the declared topological order."""
    params = model.parameters()
    header = {
        "version": 1,
        "input_side": model.config.input_side,
        "depth": model.config.depth,
        "base_channels": model.config.base_channels,
        "latent_dim": model.config.latent_dim,
        "beta": model.config.beta,
        "norm_scale": model.norm_scale,
        "param_count": int(sum(p.size for p in params)),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for p in params:
            f.write(p.data.astype("<f4").tobytes())


def load_model(path) -> ProbUNetModel:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise FlowFormatError(f"{path}: bad checkpoint magic {magic!r}")
        (header_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(header_len).decode("utf-8"))
        config = ModelConfig(
            input_side=header["input_side"],
            depth=header["depth"],
            base_channels=header["base_channels"],
            latent_dim=header["latent_dim"],
            beta=header["beta"],
        )
        model = ProbUNetModel(config, seed=0)
        model.norm_scale = header["norm_scale"]
        payload = f.read()
    expected = header["param_count"]
    values = np.frombuffer(payload, dtype="<f4")
    if values.size != expected:
        raise FlowFormatError(
            f"{path}: payload holds {values.size} values, header says {expected}"
        )
    offset = 0
    for p in model.parameters():
        chunk = values[offset:offset + p.size]
        p.data = chunk.astype(np.float64).reshape(p.shape)
        offset += p.size
    return model
