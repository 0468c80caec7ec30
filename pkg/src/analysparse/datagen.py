"""Synthetic piecewise-constant signals, the TV difference operator, and a
binary dataset format.

File format (little-endian): magic b"ADSL", uint16 version = 1, uint64 L,
uint64 p, float64 sigma, then L records of (p float64 ground-truth values,
p float64 noisy values). A sibling "<path>.cfg" text file carries the full
generation config as key=value lines so that load(save(d)) round-trips
bit-exactly.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DatasetFormatError
from .linalg import Rng

_MAGIC = b"ADSL"
_VERSION = 1

AMP_MODES = ("fixed-0-10", "uniform-0-10")


@dataclass
class DataConfig:
    p: int
    L: int
    n_jumps: int = 4
    amp_mode: str = "fixed-0-10"
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_jumps >= self.p:
            raise ValueError("n_jumps must be smaller than p")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.amp_mode not in AMP_MODES:
            raise ValueError(f"amp_mode must be one of {AMP_MODES}")


@dataclass
class Dataset:
    config: DataConfig
    pairs: list  # list of (w, y) float64 arrays of length p

    def __len__(self) -> int:
        return len(self.pairs)

    def stacked(self):
        """Ground truths and observations as (p, L) column-stacked arrays."""
        p = self.config.p
        if not self.pairs:
            return np.zeros((p, 0)), np.zeros((p, 0))
        W = np.stack([w for w, _ in self.pairs], axis=1)
        Y = np.stack([y for _, y in self.pairs], axis=1)
        return W, Y


def gen_signal(cfg: DataConfig, rng: Rng) -> np.ndarray:
    """One piecewise-constant signal with exactly cfg.n_jumps jumps.

    Jump positions are uniform without replacement in {1, ..., p-1}. In
    fixed mode the segment levels alternate 0, 10, 0, ... starting at 0;
    in uniform mode each level is drawn iid U[0, 10], redrawing whenever
    two consecutive levels coincide.
    """
    p, k = cfg.p, cfg.n_jumps
    if k > 0:
        positions = np.sort(rng.choice_without_replacement(p - 1, k) + 1)
    else:
        positions = np.array([], dtype=int)
    bounds = np.concatenate(([0], positions, [p]))
    if cfg.amp_mode == "fixed-0-10":
        levels = [10.0 * (i % 2) for i in range(k + 1)]
    else:
        levels = []
        for _ in range(k + 1):
            v = float(rng.uniform(0.0, 10.0))
            while levels and v == levels[-1]:
                v = float(rng.uniform(0.0, 10.0))
            levels.append(v)
    w = np.empty(p)
    for seg, lvl in enumerate(levels):
        w[bounds[seg]:bounds[seg + 1]] = lvl
    return w


def add_noise(w: np.ndarray, sigma: float, rng: Rng) -> np.ndarray:
    """y = w + sigma * standard normal draw; sigma = 0 returns w unchanged."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0.0:
        return w.copy()
    return w + sigma * rng.standard_normal(w.shape)


def make_dtv(p: int) -> np.ndarray:
    """Circulant first-difference operator: column c has -1 at row c and +1
    at row (c+1) mod p. Every column sums to zero."""
    if p < 2:
        raise ValueError("p must be at least 2")
    D = np.zeros((p, p))
    idx = np.arange(p)
    D[idx, idx] = -1.0
    D[(idx + 1) % p, idx] = 1.0
    return D


def gen_dataset(cfg: DataConfig) -> Dataset:
    """Generate L (w, y) pairs from a single sequential "data" stream."""
    rng = Rng(cfg.seed, "data")
    pairs = []
    for _ in range(cfg.L):
        w = gen_signal(cfg, rng)
        y = add_noise(w, cfg.sigma, rng)
        pairs.append((w, y))
    return Dataset(cfg, pairs)


def save(dataset: Dataset, path) -> None:
    path = Path(path)
    cfg = dataset.config
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<H", _VERSION))
        fh.write(struct.pack("<QQ", len(dataset.pairs), cfg.p))
        fh.write(struct.pack("<d", cfg.sigma))
        for w, y in dataset.pairs:
            fh.write(np.asarray(w, dtype="<f8").tobytes())
            fh.write(np.asarray(y, dtype="<f8").tobytes())
    sidecar = path.with_name(path.name + ".cfg")
    with open(sidecar, "w") as fh:
        fh.write(f"p={cfg.p}\n")
        fh.write(f"L={cfg.L}\n")
        fh.write(f"n_jumps={cfg.n_jumps}\n")
        fh.write(f"amp_mode={cfg.amp_mode}\n")
        fh.write(f"sigma={cfg.sigma!r}\n")
        fh.write(f"seed={cfg.seed}\n")


def load(path) -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 4 or raw[:4] != _MAGIC:
        raise DatasetFormatError("bad magic bytes", 0)
    if len(raw) < 6:
        raise DatasetFormatError("truncated header: missing version", 4)
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != _VERSION:
        raise DatasetFormatError(f"unsupported version {version}", 4)
    if len(raw) < 30:
        raise DatasetFormatError("truncated header", 6)
    L, p = struct.unpack_from("<QQ", raw, 6)
    (sigma,) = struct.unpack_from("<d", raw, 22)
    offset = 30
    rec = 8 * p
    pairs = []
    for _ in range(L):
        if len(raw) < offset + 2 * rec:
            raise DatasetFormatError("truncated record", offset)
        w = np.frombuffer(raw, dtype="<f8", count=p, offset=offset).copy()
        y = np.frombuffer(raw, dtype="<f8", count=p, offset=offset + rec).copy()
        pairs.append((w, y))
        offset += 2 * rec
    if len(raw) != offset:
        raise DatasetFormatError("trailing bytes after last record", offset)

    cfg_kv = {}
    sidecar = path.with_name(path.name + ".cfg")
    if sidecar.exists():
        for line in sidecar.read_text().splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                cfg_kv[k.strip()] = v.strip()
    config = DataConfig(
        p=int(p),
        L=int(L),
        n_jumps=int(cfg_kv.get("n_jumps", min(4, int(p) - 1))),
        amp_mode=cfg_kv.get("amp_mode", "fixed-0-10"),
        sigma=float(cfg_kv.get("sigma", sigma)),
        seed=int(cfg_kv.get("seed", 0)),
    )
    return Dataset(config, pairs)
