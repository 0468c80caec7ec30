"""Outer loop: minibatch reconstruction loss, tape gradient, projected
stochastic gradient step on the dictionary, plus the lambda grid search and
dictionary-quality metrics used for reporting.

Batch items are solved jointly: the batch observations are stacked as
columns of one matrix and a single recorded dual solve handles all of them,
stopping when every column meets the tolerance.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .denoiser import DenoiseConfig, denoise, denoise_recorded
from .exceptions import DivergenceError
from .linalg import Rng, gaussian

PROJECTIONS = ("center-columns", "none")

# powers of two bracketing the useful range for amplitudes <= 10, sigma <= 2
DEFAULT_LAMBDA_GRID = tuple(2.0 ** k for k in range(-10, 5))


@dataclass
class TrainConfig:
    m: int
    eta2: float = 1.0
    max_itr2: int = 100
    batch_sz: int = 64
    projection: str = "center-columns"
    denoise_cfg: DenoiseConfig = field(
        default_factory=lambda: DenoiseConfig(record=True))
    init_std: float = 1e-2
    seed: int = 0
    validation_every: int = 25
    eval_max_itr1: int = 10000

    def __post_init__(self):
        if self.eta2 < 0:
            raise ValueError("eta2 must be nonnegative")
        if self.batch_sz < 1 or self.m < 1:
            raise ValueError("batch_sz and m must be at least 1")
        if self.projection not in PROJECTIONS:
            raise ValueError(f"projection must be one of {PROJECTIONS}")

    def eval_cfg(self) -> DenoiseConfig:
        """Tighter inner budget used for validation and reference losses."""
        return replace(self.denoise_cfg, record=False, max_itr1=self.eval_max_itr1)


@dataclass
class TrainReport:
    train_loss: list
    val_loss: list  # (iteration, loss) pairs
    reference_losses: dict
    final_D: np.ndarray
    wall_time: float
    projection: str = "center-columns"
    col_sum_max: list = field(default_factory=list)
    lambda_star: float | None = None


@dataclass
class MatchReport:
    assignment: list  # (learned column, reference column) pairs
    cosines: list
    mean_abs_cosine: float


def center_columns(D: np.ndarray) -> np.ndarray:
    """Euclidean projection onto matrices with zero column sums."""
    return D - D.mean(axis=0, keepdims=True)


class BatchLoss:
    """A recorded minibatch loss and the handles needed to differentiate it."""

    def __init__(self, value, var, tape, d_var):
        self.value = value
        self.var = var
        self.tape = tape
        self.d_var = d_var

    def gradient(self) -> np.ndarray:
        return ad.backward(self.tape, self.var)[self.d_var.id]


def batch_mse(D: np.ndarray, batch, cfg: DenoiseConfig,
              rng: Rng | None = None, q0: np.ndarray | None = None) -> BatchLoss:
    """Sum over the batch of ||w_hat(D, y_l) - w_l||^2, recorded on a tape.

    `batch` is a list of (w, y) pairs. D = 0 is excluded (the inner step
    size is undefined there). The raw value equals what the unrecorded
    solver computes for the same starting point.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    W = np.stack([w for w, _ in batch], axis=1)
    Y = np.stack([y for _, y in batch], axis=1)
    cfg = cfg if cfg.record else replace(cfg, record=True)
    tape = ad.Tape()
    d_var = ad.input(tape, np.asarray(D, dtype=np.float64), requires_grad=True)
    rec = denoise_recorded(tape, d_var, Y, cfg, rng=rng, q0=q0)
    loss_var = ad.vsqdist(tape, rec.w_hat, W)
    return BatchLoss(float(loss_var.value), loss_var, tape, d_var)


def evaluate_mse(D: np.ndarray, pairs, cfg: DenoiseConfig, seed: int = 0) -> float:
    """Mean per-signal squared reconstruction error over a set of pairs."""
    if not pairs:
        return 0.0
    W = np.stack([w for w, _ in pairs], axis=1)
    Y = np.stack([y for _, y in pairs], axis=1)
    rng = Rng(seed, "init")
    res = denoise(D, Y, cfg, rng=rng)
    return float(np.sum((res.w_hat - W) ** 2)) / len(pairs)


class _BatchSampler:
    """Sequential non-overlapping batches with reshuffle on wrap.

    The first pass walks the dataset in storage order; once exhausted, the
    order is reshuffled and the walk restarts (a batch may span the wrap).
    """

    def __init__(self, n: int, batch_sz: int, rng: Rng):
        if n < 1:
            raise ValueError("dataset must be nonempty")
        self.n = n
        self.batch_sz = batch_sz
        self.rng = rng
        self.order = np.arange(n)
        self.pos = 0

    def next(self) -> np.ndarray:
        chunks = []
        need = self.batch_sz
        while need > 0:
            if self.pos >= self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            take = min(need, self.n - self.pos)
            chunks.append(self.order[self.pos:self.pos + take])
            self.pos += take
            need -= take
        return chunks[0] if len(chunks) == 1 else np.concatenate(chunks)


def _as_pairs(dataset):
    return dataset.pairs if hasattr(dataset, "pairs") else list(dataset)


def _train_loop(W, Y, D0, *, eta2, batch_sz, max_itr2, project,
                recorded_loss, val_fn, validation_every, rng_batch):
    """Shared outer loop for the main learner and the smoothed baseline.

    `recorded_loss(D, Wb, Yb)` returns a BatchLoss; `val_fn(D)` returns a
    scalar validation loss or None.
    """
    D = D0
    train_loss = []
    val_loss = []
    col_sum_max = []
    sampler = _BatchSampler(W.shape[1], batch_sz, rng_batch)
    for t in range(max_itr2):
        idx = sampler.next()
        bl = recorded_loss(D, W[:, idx], Y[:, idx])
        if not np.isfinite(bl.value):
            raise DivergenceError(f"non-finite training loss at iteration {t}",
                                  iteration=t)
        g = bl.gradient()
        D = D - (eta2 / batch_sz) * g
        if project:
            D = center_columns(D)
        train_loss.append(bl.value / batch_sz)
        col_sum_max.append(float(np.max(np.abs(D.sum(axis=0)))) if D.size else 0.0)
        if validation_every and val_fn is not None and (t + 1) % validation_every == 0:
            val_loss.append((t + 1, val_fn(D)))
    if val_fn is not None and (not val_loss or val_loss[-1][0] != max_itr2):
        val_loss.append((max_itr2, val_fn(D)))
    return D, train_loss, val_loss, col_sum_max


def train(train_set, val_set, cfg: TrainConfig,
          lambda_grid=DEFAULT_LAMBDA_GRID):
    """Projected stochastic gradient descent on the dictionary.

    Returns (D_hat, TrainReport). Reference losses (the zero dictionary and
    the grid-searched scaled TV operator) are evaluated on the validation
    set with the tighter inner budget.
    """
    from .datagen import make_dtv

    train_pairs = _as_pairs(train_set)
    val_pairs = _as_pairs(val_set)
    p = train_pairs[0][0].shape[0]
    W = np.stack([w for w, _ in train_pairs], axis=1)
    Y = np.stack([y for _, y in train_pairs], axis=1)

    rng_init = Rng(cfg.seed, "init")
    rng_batch = Rng(cfg.seed, "batch")
    D0 = gaussian(p, cfg.m, 0.0, cfg.init_std, rng_init)
    inner_cfg = replace(cfg.denoise_cfg, record=True)
    eval_cfg = cfg.eval_cfg()

    def recorded_loss(D, Wb, Yb):
        q0 = rng_batch.standard_normal((cfg.m, Wb.shape[1]))
        tape = ad.Tape()
        d_var = ad.input(tape, D, requires_grad=True)
        rec = denoise_recorded(tape, d_var, Yb, inner_cfg, q0=q0)
        loss_var = ad.vsqdist(tape, rec.w_hat, Wb)
        return BatchLoss(float(loss_var.value), loss_var, tape, d_var)

    val_fn = None
    if val_pairs:
        val_fn = lambda D: evaluate_mse(D, val_pairs, eval_cfg, seed=cfg.seed)

    start = time.perf_counter()
    D, train_loss, val_loss, col_sum_max = _train_loop(
        W, Y, D0,
        eta2=cfg.eta2, batch_sz=cfg.batch_sz, max_itr2=cfg.max_itr2,
        project=cfg.projection == "center-columns",
        recorded_loss=recorded_loss, val_fn=val_fn,
        validation_every=cfg.validation_every, rng_batch=rng_batch)
    wall = time.perf_counter() - start

    references = {}
    lambda_star = None
    if val_pairs:
        references["zero"] = evaluate_mse(np.zeros((p, cfg.m)), val_pairs,
                                          eval_cfg, seed=cfg.seed)
        lambda_star, tv_loss = grid_search_lambda(val_pairs, make_dtv(p),
                                                  lambda_grid, eval_cfg,
                                                  seed=cfg.seed)
        references["tv"] = tv_loss

    report = TrainReport(train_loss=train_loss, val_loss=val_loss,
                         reference_losses=references, final_D=D,
                         wall_time=wall, projection=cfg.projection,
                         col_sum_max=col_sum_max, lambda_star=lambda_star)
    return D, report


def grid_search_lambda(val_set, D_base: np.ndarray, grid, cfg: DenoiseConfig,
                       seed: int = 0):
    """argmin over the grid of validation MSE with dictionary lambda * D_base.

    Ties break toward the smaller lambda.
    """
    grid = list(grid)
    if not grid or any(g <= 0 for g in grid):
        raise ValueError("grid must be nonempty with positive entries")
    pairs = _as_pairs(val_set)
    best_lam, best_loss = None, np.inf
    for lam in sorted(grid):
        loss = evaluate_mse(lam * D_base, pairs, cfg, seed=seed)
        if loss < best_loss:
            best_lam, best_loss = lam, loss
    return best_lam, best_loss


def sort_columns(D: np.ndarray) -> np.ndarray:
    """Reorder columns by the row index of each column's dominant entry.

    Display convention only: restores the diagonal band of a permuted
    difference operator. Ties break by descending column norm.
    """
    D = np.asarray(D, dtype=np.float64)
    if D.size == 0 or D.shape[1] <= 1:
        return D.copy()
    peak = np.argmax(np.abs(D), axis=0)
    norms = np.linalg.norm(D, axis=0)
    order = sorted(range(D.shape[1]), key=lambda c: (peak[c], -norms[c]))
    return D[:, order]


def rescale_unit(D: np.ndarray) -> np.ndarray:
    """D divided by its maximum absolute entry; output lands in [-1, 1]."""
    from .exceptions import ZeroOperatorError

    D = np.asarray(D, dtype=np.float64)
    peak = np.max(np.abs(D)) if D.size else 0.0
    if peak == 0.0:
        raise ZeroOperatorError("cannot rescale the zero matrix")
    return D / peak


def match_columns(D_hat: np.ndarray, D_ref: np.ndarray) -> MatchReport:
    """Greedy one-to-one column matching by descending absolute cosine."""
    D_hat = np.asarray(D_hat, dtype=np.float64)
    D_ref = np.asarray(D_ref, dtype=np.float64)
    if D_hat.shape[0] != D_ref.shape[0]:
        raise ValueError("row counts must agree")
    nh = np.linalg.norm(D_hat, axis=0)
    nr = np.linalg.norm(D_ref, axis=0)
    C = np.abs(D_hat.T @ D_ref)
    denom = np.outer(nh, nr)
    with np.errstate(invalid="ignore", divide="ignore"):
        C = np.where(denom > 0, C / denom, 0.0)
    C = np.clip(C, 0.0, 1.0)
    k = min(D_hat.shape[1], D_ref.shape[1])
    work = C.copy()
    assignment = []
    cosines = []
    for _ in range(k):
        i, j = np.unravel_index(np.argmax(work), work.shape)
        assignment.append((int(i), int(j)))
        cosines.append(float(C[i, j]))
        work[i, :] = -1.0
        work[:, j] = -1.0
    mean = float(np.mean(cosines)) if cosines else 0.0
    return MatchReport(assignment, cosines, mean)
