"""Inner solver: denoising through the dual of the analysis-sparsity problem.

The primal problem  min_w 1/2 ||y - w||^2 + ||D^T w||_1  is solved through
its dual, a least-squares problem over the l-infinity unit ball, with
accelerated projected gradient (FISTA). The primal recovery is the affine
map w = y - D z. Both a plain and a tape-recorded variant are provided; for
the same starting point they produce bitwise-identical iterates.

`y` may be a single signal (p,) or a batch of signals stacked as columns
(p, b); the dual variable matches with shape (m,) or (m, b). The stopping
rule is applied per column and the solve ends when every column satisfies
it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .exceptions import DivergenceError, ZeroOperatorError
from .linalg import Rng, spectral_norm_sq


@dataclass
class DenoiseConfig:
    eta1_safety: float = 0.95
    tol: float = 1e-4
    max_itr1: int = 1000
    record: bool = False
    tape_cap: int = 5_000_000

    def __post_init__(self):
        if not 0 < self.eta1_safety < 1:
            raise ValueError("eta1_safety must be in (0, 1)")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_itr1 < 1:
            raise ValueError("max_itr1 must be at least 1")


@dataclass
class DenoiseResult:
    w_hat: np.ndarray
    z_hat: np.ndarray
    iterations: int
    converged: bool
    dual_objective: float
    primal_objective: float

    @property
    def duality_gap(self) -> float:
        return self.primal_objective - self.dual_objective


def step_size(D: np.ndarray, cfg: DenoiseConfig) -> float:
    """Safe dual step: safety factor over an inflated Lipschitz estimate.

    Power iteration under-estimates ||D^T D||_2, so the estimate is
    inflated by 1.01 before use. Raises ZeroOperatorError for D = 0; the
    caller must special-case that (w_hat = y).
    """
    return cfg.eta1_safety / (1.01 * spectral_norm_sq(D))


def _columnwise_converged(z_new, z_old, tol):
    diff = np.abs(z_new - z_old)
    ref = np.abs(z_old)
    if z_new.ndim == 1:
        d, r = diff.max(), ref.max()
        return d < tol * r if r > 0 else d < tol
    d = diff.max(axis=0)
    r = ref.max(axis=0)
    return bool(np.all(np.where(r > 0, d < tol * r, d < tol)))


def fista_dual(D: np.ndarray, y: np.ndarray, cfg: DenoiseConfig,
               rng: Rng | None = None, q0: np.ndarray | None = None,
               history: list | None = None, eta1: float | None = None):
    """Solve the dual problem; returns (z_hat, iterations, converged).

    The starting point q0 is drawn iid N(0, 1) from `rng` unless given
    explicitly. If `history` is a list, the dual least-squares value
    1/2 ||D z - y||^2 is appended at every iteration.
    """
    D = np.asarray(D, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m = D.shape[1]
    shape = (m,) if y.ndim == 1 else (m, y.shape[1])
    if q0 is None:
        if rng is None:
            raise ValueError("either rng or q0 must be provided")
        q0 = rng.standard_normal(shape)
    if q0.shape != shape:
        raise ValueError(f"q0 shape {q0.shape} does not match {shape}")

    if eta1 is None:
        eta1 = step_size(D, cfg)
    q = q0
    t = 1.0
    z_old = None
    z_mom = None  # z_{i-1} for the momentum step
    z = q0
    iterations = 0
    converged = False
    for i in range(1, cfg.max_itr1 + 1):
        iterations = i
        u = D @ q
        r = u - y
        g = D.T @ r
        s = eta1 * g
        step = q - s
        z = np.clip(step, -1.0, 1.0)
        if not np.all(np.isfinite(z)):
            raise DivergenceError(f"non-finite dual iterate at inner iteration {i}",
                                  iteration=i)
        if history is not None:
            res = D @ z - y
            history.append(0.5 * float(np.sum(res * res)))
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if z_mom is None:
            z_mom = z  # first momentum step is a no-op (t_1 = 1)
        d = z - z_mom
        md = ((t - 1.0) / t_next) * d
        q = z + md
        if z_old is not None and _columnwise_converged(z, z_old, cfg.tol):
            converged = True
            z_mom = z
            break
        z_mom = z
        z_old = z
        t = t_next
    return z, iterations, converged


def primal_from_dual(D: np.ndarray, y: np.ndarray, z_hat: np.ndarray) -> np.ndarray:
    """w_hat = y - D z_hat."""
    D = np.asarray(D, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z_hat = np.asarray(z_hat, dtype=np.float64)
    if D.shape[1] != z_hat.shape[0] or D.shape[0] != y.shape[0]:
        raise ValueError(f"shape mismatch: D {D.shape}, y {y.shape}, z {z_hat.shape}")
    return y - D @ z_hat


def _objectives(D, y, w_hat, z_hat):
    primal = 0.5 * float(np.sum((y - w_hat) ** 2)) + float(np.sum(np.abs(D.T @ w_hat)))
    res = D @ z_hat - y
    dual = 0.5 * float(np.sum(y * y)) - 0.5 * float(np.sum(res * res))
    return primal, dual


def denoise(D: np.ndarray, y: np.ndarray, cfg: DenoiseConfig,
            rng: Rng | None = None, q0: np.ndarray | None = None,
            eta1: float | None = None) -> DenoiseResult:
    """Full inner solve: dual FISTA then primal recovery, with diagnostics."""
    D = np.asarray(D, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not np.any(D):
        shape = (D.shape[1],) if y.ndim == 1 else (D.shape[1], y.shape[1])
        z = np.zeros(shape)
        return DenoiseResult(y.copy(), z, 0, True, 0.0, 0.0)
    z, iterations, converged = fista_dual(D, y, cfg, rng=rng, q0=q0, eta1=eta1)
    w_hat = primal_from_dual(D, y, z)
    primal, dual = _objectives(D, y, w_hat, z)
    return DenoiseResult(w_hat, z, iterations, converged, dual, primal)


class RecordedDenoise:
    """Result of a tape-recorded inner solve."""

    def __init__(self, w_hat: ad.Var, z_hat: ad.Var, iterations: int, converged: bool):
        self.w_hat = w_hat
        self.z_hat = z_hat
        self.iterations = iterations
        self.converged = converged


def denoise_recorded(tape: ad.Tape, D: ad.Var, y: np.ndarray, cfg: DenoiseConfig,
                     rng: Rng | None = None, q0: np.ndarray | None = None,
                     eta1: float | None = None) -> RecordedDenoise:
    """Tape-recorded twin of `denoise`.

    The forward arithmetic mirrors the plain solver operation for
    operation, so for the same q0 the iterates agree to the last bit. The
    stopping rule is decided on raw values (control flow stays outside the
    tape). D = 0 is excluded: the step size is undefined there.
    """
    if not cfg.record:
        raise ValueError("denoise_recorded requires cfg.record")
    Dval = D.value
    if not np.any(Dval):
        raise ZeroOperatorError("denoise_recorded requires a nonzero dictionary")
    yarr = np.asarray(y, dtype=np.float64)
    m = Dval.shape[1]
    shape = (m,) if yarr.ndim == 1 else (m, yarr.shape[1])
    if q0 is None:
        if rng is None:
            raise ValueError("either rng or q0 must be provided")
        q0 = rng.standard_normal(shape)

    if tape.node_cap is None:
        tape.node_cap = cfg.tape_cap
    if eta1 is None:
        eta1 = step_size(Dval, cfg)
    yv = ad.input(tape, yarr, requires_grad=False)
    q = ad.input(tape, q0, requires_grad=False)
    t = 1.0
    z_old = None
    z_mom = None
    z = q
    iterations = 0
    converged = False
    for i in range(1, cfg.max_itr1 + 1):
        iterations = i
        u = ad.vmatvec(tape, D, q)
        r = ad.vsub(tape, u, yv)
        g = ad.vmatvec(tape, D, r, transpose=True)
        s = ad.vscale(tape, g, eta1)
        step = ad.vsub(tape, q, s)
        z = ad.vclamp1(tape, step)
        if not np.all(np.isfinite(z.value)):
            raise DivergenceError(f"non-finite dual iterate at inner iteration {i}",
                                  iteration=i)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if z_mom is None:
            z_mom = z
        d = ad.vsub(tape, z, z_mom)
        md = ad.vscale(tape, d, (t - 1.0) / t_next)
        q = ad.vadd(tape, z, md)
        if z_old is not None and _columnwise_converged(z.value, z_old.value, cfg.tol):
            converged = True
            z_mom = z
            break
        z_mom = z
        z_old = z
        t = t_next

    u2 = ad.vmatvec(tape, D, z)
    w_hat = ad.vsub(tape, yv, u2)
    return RecordedDenoise(w_hat, z, iterations, converged)
