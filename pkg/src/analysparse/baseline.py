"""Benchmark learner: unconstrained dictionary learning with a smoothed l1
penalty in the inner problem.

The l1 norm of the analysis coefficients is replaced by the smooth convex
upper bound sum_i sqrt(v_i^2 + eps^2), so the inner denoiser is plain
gradient descent on a smooth objective and the outer loop can differentiate
through the unrolled iterations with the same tape as the main learner. No
projection is applied to the dictionary.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .denoiser import DenoiseConfig
from .exceptions import DivergenceError
from .learner import BatchLoss, TrainReport, _as_pairs, _train_loop, evaluate_mse
from .linalg import Rng, gaussian, linf_norm, spectral_norm_sq


@dataclass
class SmoothedConfig:
    epsilon: float = 1e-3
    inner_tol: float = 1e-6
    inner_max_iter: int = 5000
    eta2: float = 1.0
    max_itr2: int = 100
    batch_sz: int = 64
    m: int = 1
    init_std: float = 1e-2
    seed: int = 0
    validation_every: int = 25
    eval_max_itr1: int = 10000

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.inner_tol <= 0 or self.inner_max_iter < 1:
            raise ValueError("inner_tol must be positive, inner_max_iter >= 1")


def smoothed_l1(v: np.ndarray, epsilon: float) -> float:
    """sum_i sqrt(v_i^2 + eps^2): smooth, convex, always >= ||v||_1."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    v = np.asarray(v, dtype=np.float64)
    return float(np.sum(np.sqrt(v * v + epsilon * epsilon)))


def _smoothed_step(D: np.ndarray, epsilon: float) -> float:
    """1 / (Lipschitz bound of the smooth objective's gradient)."""
    if not np.any(D):
        return 1.0
    return 1.0 / (1.0 + 1.01 * spectral_norm_sq(D) / epsilon)


def smoothed_objective(D: np.ndarray, y: np.ndarray, w: np.ndarray,
                       epsilon: float) -> float:
    return 0.5 * float(np.sum((y - w) ** 2)) + smoothed_l1(D.T @ w, epsilon)


def denoise_smoothed(D: np.ndarray, y: np.ndarray, cfg: SmoothedConfig,
                     history: list | None = None,
                     eta: float | None = None) -> np.ndarray:
    """Gradient descent on 1/2 ||y - w||^2 + smoothed_l1(D^T w), from w = y.

    Stops when the gradient's max absolute entry drops below inner_tol or
    at inner_max_iter. `y` may be a single signal or column-stacked batch.
    `eta` overrides the automatic step (useful to hold it fixed while D is
    perturbed).
    """
    D = np.asarray(D, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not np.any(D):
        return y.copy()
    eps = cfg.epsilon
    if eta is None:
        eta = _smoothed_step(D, eps)
    w = y
    for i in range(cfg.inner_max_iter):
        v = D.T @ w
        sg = v / np.sqrt(v * v + eps * eps)
        grad = (w - y) + D @ sg
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"non-finite gradient at inner iteration {i}",
                                  iteration=i)
        if history is not None:
            history.append(smoothed_objective(D, y, w, eps))
        if linf_norm(grad) < cfg.inner_tol:
            break
        s = eta * grad
        w = w - s
    return w


def denoise_smoothed_recorded(tape: ad.Tape, D: ad.Var, y: np.ndarray,
                              cfg: SmoothedConfig,
                              eta: float | None = None) -> ad.Var:
    """Tape-recorded twin of `denoise_smoothed`; same iterates bitwise."""
    Dval = D.value
    yarr = np.asarray(y, dtype=np.float64)
    eps = cfg.epsilon
    if eta is None:
        eta = _smoothed_step(Dval, eps)
    yv = ad.input(tape, yarr, requires_grad=False)
    w = yv
    for i in range(cfg.inner_max_iter):
        v = ad.vmatvec(tape, D, w, transpose=True)
        sg = ad.vsmoothsign(tape, v, eps)
        a = ad.vsub(tape, w, yv)
        b = ad.vmatvec(tape, D, sg)
        grad = ad.vadd(tape, a, b)
        if not np.all(np.isfinite(grad.value)):
            raise DivergenceError(f"non-finite gradient at inner iteration {i}",
                                  iteration=i)
        if linf_norm(grad.value) < cfg.inner_tol:
            break
        s = ad.vscale(tape, grad, eta)
        w = ad.vsub(tape, w, s)
    return w


def train_smoothed(train_set, val_set, cfg: SmoothedConfig):
    """Same outer loop as the main learner but with the smoothed inner
    solver and no projection. Returns (D_hat, TrainReport)."""
    train_pairs = _as_pairs(train_set)
    val_pairs = _as_pairs(val_set)
    p = train_pairs[0][0].shape[0]
    W = np.stack([w for w, _ in train_pairs], axis=1)
    Y = np.stack([y for _, y in train_pairs], axis=1)

    rng_init = Rng(cfg.seed, "baseline")
    rng_batch = Rng(cfg.seed, "batch")
    D0 = gaussian(p, cfg.m, 0.0, cfg.init_std, rng_init)
    eval_cfg = DenoiseConfig(max_itr1=cfg.eval_max_itr1)

    def recorded_loss(D, Wb, Yb):
        tape = ad.Tape()
        d_var = ad.input(tape, D, requires_grad=True)
        w_hat = denoise_smoothed_recorded(tape, d_var, Yb, cfg)
        loss_var = ad.vsqdist(tape, w_hat, Wb)
        return BatchLoss(float(loss_var.value), loss_var, tape, d_var)

    def val_fn(D):
        if not np.any(D):
            Wv = np.stack([w for w, _ in val_pairs], axis=1)
            Yv = np.stack([y for _, y in val_pairs], axis=1)
            return float(np.sum((Yv - Wv) ** 2)) / len(val_pairs)
        Wv = np.stack([w for w, _ in val_pairs], axis=1)
        Yv = np.stack([y for _, y in val_pairs], axis=1)
        w_hat = denoise_smoothed(D, Yv, cfg)
        return float(np.sum((w_hat - Wv) ** 2)) / len(val_pairs)

    start = time.perf_counter()
    D, train_loss, val_loss, col_sum_max = _train_loop(
        W, Y, D0,
        eta2=cfg.eta2, batch_sz=cfg.batch_sz, max_itr2=cfg.max_itr2,
        project=False, recorded_loss=recorded_loss,
        val_fn=val_fn if val_pairs else None,
        validation_every=cfg.validation_every, rng_batch=rng_batch)
    wall = time.perf_counter() - start

    references = {}
    if val_pairs:
        references["zero"] = evaluate_mse(np.zeros((p, cfg.m)), val_pairs,
                                          eval_cfg, seed=cfg.seed)
    report = TrainReport(train_loss=train_loss, val_loss=val_loss,
                         reference_losses=references, final_D=D,
                         wall_time=wall, projection="none",
                         col_sum_max=col_sum_max, lambda_star=None)
    return D, report
