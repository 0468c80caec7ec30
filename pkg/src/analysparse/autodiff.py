"""Reverse-mode automatic differentiation over a closed op set.

The tape records the fixed arithmetic of the unrolled solvers: matrix-vector
products (optionally with the matrix transposed), add/subtract, scaling by a
non-differentiated constant, the entrywise clamp to [-1, 1], squared
distance to a constant target, and the smoothed-l1 saturation used by the
baseline. Backward sweeps the tape once, in strict reverse recording order,
accumulating adjoints.

Values stored on the tape are never copied: the rest of the package treats
arrays as immutable once recorded.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import UnrollBudgetError


@dataclass(frozen=True)
class Var:
    """Handle to one tape node."""
    id: int
    value: np.ndarray
    requires_grad: bool


class Tape:
    """Append-only operation log for one recorded computation.

    `clamp_margin` tracks the smallest distance of any pre-clamp entry to
    the +-1 boundary seen while recording; gradient checks use it to skip
    coordinates whose perturbation crosses the kink.
    """

    def __init__(self, node_cap: int | None = None):
        self._kinds: list[str] = []
        self._inputs: list[tuple[int, ...]] = []
        self._payload: list = []
        self._values: list[np.ndarray] = []
        self._requires: list[bool] = []
        self._consumed = False
        self.node_cap = node_cap
        self.clamp_margin = np.inf

    def __len__(self) -> int:
        return len(self._kinds)

    def clamp_inputs(self) -> list[np.ndarray]:
        """Pre-clamp values of every clamp node, in recording order."""
        return [p for k, p in zip(self._kinds, self._payload) if k == "clamp1"]

    def _append(self, kind, inputs, payload, value, requires) -> Var:
        if self.node_cap is not None and len(self._kinds) >= self.node_cap:
            raise UnrollBudgetError(
                f"tape node cap {self.node_cap} exceeded while recording {kind!r}")
        self._kinds.append(kind)
        self._inputs.append(inputs)
        self._payload.append(payload)
        self._values.append(value)
        self._requires.append(requires)
        return Var(len(self._kinds) - 1, value, requires)


def input(tape: Tape, t: np.ndarray, requires_grad: bool = False) -> Var:
    """Record a leaf node."""
    t = np.asarray(t, dtype=np.float64)
    return tape._append("input", (), None, t, requires_grad)


def vmatvec(tape: Tape, A: Var, x: Var, transpose: bool = False) -> Var:
    """y = A x, or y = A^T x when `transpose` is set."""
    a, b = A.value, x.value
    if (a.shape[0] if transpose else a.shape[1]) != b.shape[0]:
        raise ValueError(f"shape mismatch: {a.shape}{'^T' if transpose else ''} x {b.shape}")
    value = (a.T @ b) if transpose else (a @ b)
    req = A.requires_grad or x.requires_grad
    kind = "matvec_t" if transpose else "matvec"
    return tape._append(kind, (A.id, x.id), (a, b), value, req)


def vadd(tape: Tape, a: Var, b: Var) -> Var:
    if a.value.shape != b.value.shape:
        raise ValueError(f"shape mismatch: {a.value.shape} + {b.value.shape}")
    return tape._append("add", (a.id, b.id), None, a.value + b.value,
                        a.requires_grad or b.requires_grad)


def vsub(tape: Tape, a: Var, b: Var) -> Var:
    if a.value.shape != b.value.shape:
        raise ValueError(f"shape mismatch: {a.value.shape} - {b.value.shape}")
    return tape._append("sub", (a.id, b.id), None, a.value - b.value,
                        a.requires_grad or b.requires_grad)


def vscale(tape: Tape, a: Var, c: float) -> Var:
    """c is a plain constant: it never receives a gradient."""
    c = float(c)
    return tape._append("scale", (a.id,), c, c * a.value, a.requires_grad)


def vclamp1(tape: Tape, a: Var) -> Var:
    """Entrywise projection onto [-1, 1]; gradient passes on the closed ball."""
    v = a.value
    if v.size:
        margin = float(np.min(np.abs(np.abs(v) - 1.0)))
        if margin < tape.clamp_margin:
            tape.clamp_margin = margin
    return tape._append("clamp1", (a.id,), v, np.clip(v, -1.0, 1.0), a.requires_grad)


def vsqdist(tape: Tape, a: Var, w: np.ndarray) -> Var:
    """Scalar node: sum of squared entries of (a - w)."""
    w = np.asarray(w, dtype=np.float64)
    if a.value.shape != w.shape:
        raise ValueError(f"shape mismatch: {a.value.shape} vs {w.shape}")
    value = np.asarray(np.sum((a.value - w) ** 2))
    return tape._append("sqdist", (a.id,), (a.value, w), value, a.requires_grad)


def vsmoothsign(tape: Tape, a: Var, epsilon: float) -> Var:
    """Entrywise v / sqrt(v^2 + eps^2), the derivative of the smoothed l1."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    v = a.value
    value = v / np.sqrt(v * v + epsilon * epsilon)
    return tape._append("smoothsign", (a.id,), (v, float(epsilon)), value,
                        a.requires_grad)


def _accumulate(adjoints, idx, g):
    cur = adjoints[idx]
    adjoints[idx] = g if cur is None else cur + g


def backward(tape: Tape, loss: Var) -> dict[int, np.ndarray]:
    """Reverse sweep from a scalar loss.

    Returns a map from leaf node id to its gradient, for every leaf with
    requires_grad. A tape can be swept once per recording.
    """
    if loss.value.ndim != 0:
        raise ValueError("backward requires a scalar loss node")
    if tape._consumed:
        raise RuntimeError("backward was already called on this tape")
    tape._consumed = True

    n = len(tape._kinds)
    adjoints: list = [None] * n
    adjoints[loss.id] = np.array(1.0)

    for nid in range(loss.id, -1, -1):
        g = adjoints[nid]
        if g is None or not tape._requires[nid]:
            continue
        kind = tape._kinds[nid]
        ins = tape._inputs[nid]
        payload = tape._payload[nid]
        if kind == "input":
            continue
        if kind == "add":
            _accumulate(adjoints, ins[0], g)
            _accumulate(adjoints, ins[1], g)
        elif kind == "sub":
            _accumulate(adjoints, ins[0], g)
            _accumulate(adjoints, ins[1], -g)
        elif kind == "scale":
            _accumulate(adjoints, ins[0], payload * g)
        elif kind == "clamp1":
            mask = np.abs(payload) <= 1.0
            _accumulate(adjoints, ins[0], g * mask)
        elif kind == "matvec":
            a, x = payload
            if x.ndim == 1:
                _accumulate(adjoints, ins[0], np.outer(g, x))
            else:
                _accumulate(adjoints, ins[0], g @ x.T)
            _accumulate(adjoints, ins[1], a.T @ g)
        elif kind == "matvec_t":
            a, x = payload
            if x.ndim == 1:
                _accumulate(adjoints, ins[0], np.outer(x, g))
            else:
                _accumulate(adjoints, ins[0], x @ g.T)
            _accumulate(adjoints, ins[1], a @ g)
        elif kind == "sqdist":
            aval, w = payload
            _accumulate(adjoints, ins[0], (2.0 * float(g)) * (aval - w))
        elif kind == "smoothsign":
            v, eps = payload
            d = eps * eps / np.power(v * v + eps * eps, 1.5)
            _accumulate(adjoints, ins[0], g * d)
        else:  # pragma: no cover
            raise AssertionError(f"unknown op kind {kind!r}")

    out = {}
    for nid in range(n):
        if tape._kinds[nid] == "input" and tape._requires[nid]:
            g = adjoints[nid]
            out[nid] = np.zeros_like(tape._values[nid]) if g is None else g
    return out


@dataclass
class GradCheckResult:
    max_rel_error: float
    excluded: list = field(default_factory=list)
    ad_grad: np.ndarray | None = None
    fd_grad: np.ndarray | None = None

    @property
    def n_excluded(self) -> int:
        return len(self.excluded)


def grad_check(f, x: np.ndarray, h: float = 1e-6,
               exclusion_band: float = 0.0) -> GradCheckResult:
    """Compare the AD gradient of `f` against central finite differences.

    `f(tape, var) -> Var` must record a scalar. A coordinate is skipped
    (and listed in the result) when its two perturbed forward passes
    disagree on any clamp's active set, or move a pre-clamp entry while it
    sits within `exclusion_band` of the +-1 boundary: there the finite
    difference straddles the kink and is not a valid oracle.

    The reported error is ||g_ad - g_fd||_inf over checked coordinates,
    relative to ||g_fd||_inf.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=np.float64)

    tape = Tape()
    xv = input(tape, x, requires_grad=True)
    out = f(tape, xv)
    g_ad = backward(tape, out)[xv.id]

    def evaluate(xp):
        t = Tape()
        v = input(t, xp, requires_grad=False)
        o = f(t, v)
        return float(o.value), t.clamp_inputs()

    def crosses_boundary(cp, cm):
        if len(cp) != len(cm):
            return True
        for a, b in zip(cp, cm):
            if a.shape != b.shape:
                return True
            if np.any((np.abs(a) <= 1.0) != (np.abs(b) <= 1.0)):
                return True
            near = (np.abs(np.abs(a) - 1.0) < exclusion_band) \
                | (np.abs(np.abs(b) - 1.0) < exclusion_band)
            if np.any(near & (a != b)):
                return True
        return False

    flat = x.ravel()
    g_fd = np.zeros_like(flat)
    excluded = []
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = h
        fp, cp = evaluate((flat + e).reshape(x.shape))
        fm, cm = evaluate((flat - e).reshape(x.shape))
        if exclusion_band > 0 and crosses_boundary(cp, cm):
            excluded.append(i)
            continue
        g_fd[i] = (fp - fm) / (2.0 * h)

    keep = np.ones(flat.size, dtype=bool)
    keep[excluded] = False
    ga = g_ad.ravel()[keep]
    gf = g_fd[keep]
    scale = max(float(np.max(np.abs(gf))) if gf.size else 0.0, 1e-12)
    err = float(np.max(np.abs(ga - gf))) / scale if gf.size else 0.0
    return GradCheckResult(err, excluded, g_ad, g_fd.reshape(x.shape))
