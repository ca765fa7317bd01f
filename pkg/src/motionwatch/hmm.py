"""Gaussian-emission hidden Markov model baseline.

Fitted on nominal per-frame motion features with Baum-Welch (scaled
forward-backward EM); test frames are scored by the length-normalized,
negated log-likelihood of the observation prefix ending at the frame, so
larger scores mean more anomalous.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptySelectionError
from .imaging import FlowField, Mask, SimilarityTransform, masked_median

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-6
STARVATION_EPS = 1e-12
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class FeatureVector:
    """Per-frame motion summary: peak flow magnitude, observed body-motion
    magnitude, and kinematically expected camera-motion magnitude."""

    max_flow_mag: float
    body_motion_mag: float
    camera_motion_mag: float

    def __post_init__(self):
        values = (self.max_flow_mag, self.body_motion_mag, self.camera_motion_mag)
        if not all(math.isfinite(v) and v >= 0 for v in values):
            raise ValueError("features must be finite and non-negative")

    def to_array(self) -> np.ndarray:
        return np.array([self.max_flow_mag, self.body_motion_mag, self.camera_motion_mag])


def frame_features(
    flow: FlowField,
    body_mask: Mask | None,
    expected_transform: SimilarityTransform,
) -> FeatureVector:
    """Feature vector for one frame from its observed flow, body mask and
    expected camera transform."""
    max_mag = float(flow.magnitude().max())
    if body_mask is None or body_mask.is_empty():
        body = 0.0
    else:
        try:
            med_x, med_y = masked_median(flow, body_mask)
            body = math.hypot(med_x, med_y)
        except EmptySelectionError:  # pragma: no cover - guarded above
            body = 0.0
    camera = math.hypot(expected_transform.t_x, expected_transform.t_y)
    return FeatureVector(max_mag, body, camera)


@dataclass(frozen=True)
class GaussianHmm:
    pi: np.ndarray
    trans: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=np.float64)
        trans = np.asarray(self.trans, dtype=np.float64)
        means = np.asarray(self.means, dtype=np.float64)
        variances = np.asarray(self.variances, dtype=np.float64)
        n = pi.shape[0]
        if trans.shape != (n, n) or means.shape[0] != n or variances.shape != means.shape:
            raise ValueError("inconsistent HMM component shapes")
        if abs(pi.sum() - 1.0) > 1e-9 or (pi < 0).any():
            raise ValueError("pi must be a distribution")
        if np.abs(trans.sum(axis=1) - 1.0).max() > 1e-9 or (trans < 0).any():
            raise ValueError("transition rows must be distributions")
        if (variances < VAR_FLOOR - 1e-15).any():
            raise ValueError("variances below the floor")
        for arr in (pi, trans, means, variances):
            arr.setflags(write=False)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "trans", trans)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    @property
    def n_states(self) -> int:
        return self.pi.shape[0]


def _log_emissions(hmm_means, hmm_vars, obs: np.ndarray) -> np.ndarray:
    """(T, N) log-density of each frame under each state's diagonal Gaussian."""
    diff = obs[:, None, :] - hmm_means[None, :, :]
    return -0.5 * (
        (diff * diff / hmm_vars[None, :, :]).sum(axis=2)
        + np.log(hmm_vars).sum(axis=1)[None, :]
        + hmm_vars.shape[1] * LOG_2PI
    )


def _scaled_forward(pi, trans, log_b) -> tuple[np.ndarray, np.ndarray, float]:
    """Forward recursion with per-frame rescaling; returns (alpha_hat,
    per-frame log normalizers, total log-likelihood)."""
    t_len, n = log_b.shape
    alpha = np.zeros((t_len, n))
    log_norm = np.zeros(t_len)
    shift = log_b.max(axis=1)
    b = np.exp(log_b - shift[:, None])

    raw = pi * b[0]
    total = raw.sum()
    if total <= 0:
        raise FloatingPointError("forward recursion underflow at frame 0")
    alpha[0] = raw / total
    log_norm[0] = math.log(total) + shift[0]
    for t in range(1, t_len):
        raw = (alpha[t - 1] @ trans) * b[t]
        total = raw.sum()
        if total <= 0:
            raise FloatingPointError(f"forward recursion underflow at frame {t}")
        alpha[t] = raw / total
        log_norm[t] = math.log(total) + shift[t]
    return alpha, log_norm, float(log_norm.sum())


def _scaled_backward(trans, log_b, log_norm) -> np.ndarray:
    t_len, n = log_b.shape
    shift = log_b.max(axis=1)
    b = np.exp(log_b - shift[:, None])
    beta = np.zeros((t_len, n))
    beta[-1] = 1.0
    for t in range(t_len - 2, -1, -1):
        scale = math.exp(shift[t + 1] - log_norm[t + 1])
        beta[t] = (trans * (b[t + 1] * beta[t + 1])[None, :]).sum(axis=1) * scale
    return beta


def _kmeans_means(obs: np.ndarray, n_states: int, rng: np.random.Generator) -> np.ndarray:
    # Plain Lloyd iterations from distinct seeded picks; enough structure
    # for an EM starting point.
    idx = rng.choice(obs.shape[0], size=n_states, replace=False)
    centers = obs[idx].copy()
    for _ in range(10):
        dists = ((obs[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = dists.argmin(axis=1)
        for j in range(n_states):
            members = obs[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    return centers


def fit(
    sequences: list[np.ndarray],
    n_states: int = 5,
    max_iters: int = 100,
    tol: float = 1e-4,
    seed: int = 0,
) -> tuple[GaussianHmm, list[float]]:
    """Baum-Welch fit on feature sequences (each (T, D) with T >= 2).

    Returns the fitted model and the per-iteration total log-likelihood
    trace (non-decreasing up to numerical noise).
    """
    seqs = [np.asarray(s, dtype=np.float64) for s in sequences]
    if not seqs or any(s.ndim != 2 or s.shape[0] < 2 for s in seqs):
        raise ValueError("need non-empty sequences of length >= 2")
    dim = seqs[0].shape[1]
    if any(s.shape[1] != dim for s in seqs):
        raise ValueError("feature dimensions differ across sequences")

    rng = np.random.default_rng(seed)
    pooled = np.concatenate(seqs, axis=0)
    means = _kmeans_means(pooled, n_states, rng)
    variances = np.maximum(pooled.var(axis=0), VAR_FLOOR)
    variances = np.tile(variances, (n_states, 1))
    pi = np.full(n_states, 1.0 / n_states)
    trans = np.full((n_states, n_states), 0.1 / max(n_states - 1, 1))
    np.fill_diagonal(trans, 0.9 if n_states > 1 else 1.0)
    trans /= trans.sum(axis=1, keepdims=True)

    history: list[float] = []
    model = GaussianHmm(pi, trans, means, variances)
    for iteration in range(max_iters):
        pi_acc = np.zeros(n_states)
        trans_acc = np.zeros((n_states, n_states))
        mean_acc = np.zeros((n_states, dim))
        sq_acc = np.zeros((n_states, dim))
        gamma_acc = np.zeros(n_states)
        loglik = 0.0

        for obs in seqs:
            log_b = _log_emissions(model.means, model.variances, obs)
            alpha, log_norm, ll = _scaled_forward(model.pi, model.trans, log_b)
            beta = _scaled_backward(model.trans, log_b, log_norm)
            loglik += ll

            gamma = alpha * beta
            gamma /= np.maximum(gamma.sum(axis=1, keepdims=True), 1e-300)

            shift = log_b.max(axis=1)
            b = np.exp(log_b - shift[:, None])
            for t in range(obs.shape[0] - 1):
                xi = (
                    model.trans
                    * alpha[t][:, None]
                    * (b[t + 1] * beta[t + 1])[None, :]
                    * math.exp(shift[t + 1] - log_norm[t + 1])
                )
                trans_acc += xi
            pi_acc += gamma[0]
            gamma_acc += gamma.sum(axis=0)
            mean_acc += gamma.T @ obs
            sq_acc += gamma.T @ (obs * obs)

        history.append(loglik)

        starved = gamma_acc < STARVATION_EPS
        if starved.any():
            log.warning("reinitializing %d starved state(s)", int(starved.sum()))
            for j in np.flatnonzero(starved):
                mean_acc[j] = pooled[rng.integers(len(pooled))]
                sq_acc[j] = mean_acc[j] ** 2 + pooled.var(axis=0)
                gamma_acc[j] = 1.0
                trans_acc[j] = 1.0 / n_states
                pi_acc[j] = 1e-6

        new_pi = pi_acc / pi_acc.sum()
        row_sums = trans_acc.sum(axis=1, keepdims=True)
        new_trans = np.where(row_sums > 0, trans_acc / np.maximum(row_sums, 1e-300), 1.0 / n_states)
        new_trans /= new_trans.sum(axis=1, keepdims=True)
        new_means = mean_acc / gamma_acc[:, None]
        new_vars = np.maximum(sq_acc / gamma_acc[:, None] - new_means**2, VAR_FLOOR)
        model = GaussianHmm(new_pi, new_trans, new_means, new_vars)

        if iteration > 0 and history[-1] - history[-2] < tol:
            break

    # Final evaluation under the fitted parameters so the last history
    # entry corresponds to the returned model.
    final = sum(
        _scaled_forward(model.pi, model.trans, _log_emissions(model.means, model.variances, obs))[2]
        for obs in seqs
    )
    history.append(float(final))
    return model, history


def prefix_log_likelihood(hmm: GaussianHmm, sequence: np.ndarray, t: int) -> float:
    """Log-likelihood of the first `t` frames (1-based prefix length)."""
    obs = np.asarray(sequence, dtype=np.float64)
    if not 1 <= t <= obs.shape[0]:
        raise ValueError(f"t={t} outside 1..{obs.shape[0]}")
    log_b = _log_emissions(hmm.means, hmm.variances, obs[:t])
    _, _, loglik = _scaled_forward(hmm.pi, hmm.trans, log_b)
    return loglik


def anomaly_score(hmm: GaussianHmm, sequence: np.ndarray, t: int) -> float:
    """Negated per-frame prefix log-likelihood; larger = more anomalous."""
    return -prefix_log_likelihood(hmm, sequence, t) / t
