"""Command-line experiment runner.

Subcommands: gen, train, denoise, gradcheck, experiment, baseline-train.
Every output is a CSV with a header row, plus a run manifest that captures
each resolved parameter so a run can be reproduced bit-identically.

Exit codes: 0 success, 1 validation failure, 2 config error, 3 numerical
divergence.
"""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import datagen
from .baseline import SmoothedConfig, train_smoothed
from .config import ConfigError, float_list, optional, parse_config, require
from .denoiser import DenoiseConfig, denoise, denoise_recorded
from .exceptions import DivergenceError
from .learner import (TrainConfig, match_columns, rescale_unit, sort_columns,
                      train)
from .linalg import Rng

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_matrix_csv(path, M):
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    header = [f"col_{j}" for j in range(M.shape[1])]
    _write_csv(path, header, M.tolist())


def _read_matrix_csv(path):
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2))


def _write_manifest(path, entries):
    with open(path, "w") as fh:
        for k, v in entries.items():
            fh.write(f"{k}={_fmt(v)}\n")


def _data_config(cfg, seed_override=None, prefix="data"):
    p = require(cfg, f"{prefix}.p", int)
    L = require(cfg, f"{prefix}.L", int)
    sigma = require(cfg, f"{prefix}.sigma", float)
    return datagen.DataConfig(
        p=p, L=L,
        n_jumps=optional(cfg, f"{prefix}.n_jumps", int, 4),
        amp_mode=optional(cfg, f"{prefix}.amp_mode", str, "fixed-0-10"),
        sigma=sigma,
        seed=seed_override if seed_override is not None
        else optional(cfg, f"{prefix}.seed", int, 0),
    )


def _train_config(cfg, p, seed_override=None):
    seed = seed_override if seed_override is not None \
        else optional(cfg, "train.seed", int, 0)
    dn = DenoiseConfig(
        tol=optional(cfg, "train.tol", float, 1e-4),
        max_itr1=optional(cfg, "train.max_itr1", int, 1000),
        record=True)
    return TrainConfig(
        m=optional(cfg, "train.m", int, p),
        eta2=optional(cfg, "train.eta2", float, 1.0),
        max_itr2=optional(cfg, "train.max_itr2", int, 100),
        batch_sz=optional(cfg, "train.batch_sz", int, 64),
        projection=optional(cfg, "train.projection", str, "center-columns"),
        denoise_cfg=dn,
        init_std=optional(cfg, "train.init_std", float, 1e-2),
        seed=seed,
        validation_every=optional(cfg, "train.validation_every", int, 25),
        eval_max_itr1=optional(cfg, "train.eval_max_itr1", int, 10000),
    )


def _load_or_generate(cfg, seed_override):
    """Training and validation datasets: from files if paths are given,
    otherwise generated (validation uses seed+1)."""
    if "train.dataset" in cfg:
        train_set = datagen.load(cfg["train.dataset"])
        val_set = datagen.load(cfg["train.val_dataset"]) \
            if "train.val_dataset" in cfg else datagen.Dataset(train_set.config, [])
        return train_set, val_set
    dc = _data_config(cfg, seed_override)
    val_L = optional(cfg, "data.val_L", int, 256)
    train_set = datagen.gen_dataset(dc)
    val_cfg = datagen.DataConfig(p=dc.p, L=val_L, n_jumps=dc.n_jumps,
                                 amp_mode=dc.amp_mode, sigma=dc.sigma,
                                 seed=dc.seed + 1)
    val_set = datagen.gen_dataset(val_cfg)
    return train_set, val_set


def cmd_gen(args):
    cfg = parse_config(args.config)
    dc = _data_config(cfg, args.seed)
    dataset = datagen.gen_dataset(dc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    datagen.save(dataset, out / "dataset.bin")
    print(f"wrote {out / 'dataset.bin'} ({len(dataset)} pairs, p={dc.p})")
    return EXIT_OK


def _train_report_files(out, cfg_train, train_set, D_hat, report):
    """The per-run report directory shared by train and baseline-train."""
    out.mkdir(parents=True, exist_ok=True)
    p = train_set.config.p
    _write_csv(out / "train_loss.csv", ["iteration", "loss"],
               [(i, v) for i, v in enumerate(report.train_loss)])
    _write_csv(out / "val_loss.csv", ["iteration", "loss"], report.val_loss)
    ref_rows = [(k, v) for k, v in sorted(report.reference_losses.items())]
    _write_csv(out / "references.csv", ["name", "loss"], ref_rows)
    _write_matrix_csv(out / "D_hat.csv", D_hat)
    if np.any(D_hat):
        display = rescale_unit(sort_columns(D_hat))
    else:
        display = D_hat
    _write_matrix_csv(out / "D_hat_sorted_rescaled.csv", display)
    ref_D = datagen.make_dtv(p)
    match = match_columns(D_hat, ref_D)
    _write_csv(out / "match_report.csv",
               ["learned_col", "ref_col", "abs_cosine"],
               [(i, j, c) for (i, j), c in zip(match.assignment, match.cosines)])
    manifest = {
        "p": p,
        "m": D_hat.shape[1],
        "train_size": len(train_set),
        "projection": report.projection,
        "wall_time": report.wall_time,
        "mean_abs_cosine": match.mean_abs_cosine,
        "lambda_star": report.lambda_star,
        "final_train_loss": report.train_loss[-1] if report.train_loss else None,
        "final_val_loss": report.val_loss[-1][1] if report.val_loss else None,
    }
    for key, value in cfg_train.items():
        manifest[key] = value
    _write_manifest(out / "run_manifest.txt", manifest)
    return match


def cmd_train(args):
    cfg = parse_config(args.config)
    train_set, val_set = _load_or_generate(cfg, args.seed)
    tc = _train_config(cfg, train_set.config.p, args.seed)
    D_hat, report = train(train_set, val_set, tc)
    out = Path(args.out)
    resolved = {f"train.{k}": v for k, v in vars(tc).items()
                if k != "denoise_cfg"}
    resolved["train.tol"] = tc.denoise_cfg.tol
    resolved["train.max_itr1"] = tc.denoise_cfg.max_itr1
    resolved.update({f"data.{k}": v for k, v in vars(train_set.config).items()})
    match = _train_report_files(out, resolved, train_set, D_hat, report)
    print(f"trained D ({D_hat.shape[0]}x{D_hat.shape[1]}), "
          f"mean_abs_cosine={match.mean_abs_cosine:.4f}, "
          f"final_val_loss={report.val_loss[-1][1] if report.val_loss else 'n/a'}")
    return EXIT_OK


def cmd_baseline_train(args):
    cfg = parse_config(args.config)
    train_set, val_set = _load_or_generate(cfg, args.seed)
    p = train_set.config.p
    seed = args.seed if args.seed is not None \
        else optional(cfg, "baseline.seed", int, 0)
    sc = SmoothedConfig(
        epsilon=optional(cfg, "baseline.epsilon", float, 1e-3),
        inner_tol=optional(cfg, "baseline.inner_tol", float, 1e-6),
        inner_max_iter=optional(cfg, "baseline.inner_max_iter", int, 5000),
        eta2=optional(cfg, "baseline.eta2", float, 1.0),
        max_itr2=optional(cfg, "baseline.max_itr2", int, 100),
        batch_sz=optional(cfg, "baseline.batch_sz", int, 64),
        m=optional(cfg, "baseline.m", int, p),
        init_std=optional(cfg, "baseline.init_std", float, 1e-2),
        seed=seed,
        validation_every=optional(cfg, "baseline.validation_every", int, 25),
    )
    D_hat, report = train_smoothed(train_set, val_set, sc)
    resolved = {f"baseline.{k}": v for k, v in vars(sc).items()}
    resolved.update({f"data.{k}": v for k, v in vars(train_set.config).items()})
    match = _train_report_files(Path(args.out), resolved, train_set, D_hat, report)
    print(f"baseline trained D, mean_abs_cosine={match.mean_abs_cosine:.4f}")
    return EXIT_OK


def cmd_denoise(args):
    D = _read_matrix_csv(args.dictionary)
    y = _read_matrix_csv(args.signal)
    y = y.ravel() if 1 in y.shape else y
    cfg = DenoiseConfig(tol=args.tol, max_itr1=args.max_iter)
    res = denoise(D, y, cfg, rng=Rng(args.seed or 0, "init"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_matrix_csv(out / "w_hat.csv",
                      res.w_hat if res.w_hat.ndim == 2 else res.w_hat[None, :])
    rel_gap = res.duality_gap / (1.0 + abs(res.primal_objective))
    _write_manifest(out / "diagnostics.txt", {
        "iterations": res.iterations,
        "converged": res.converged,
        "primal_objective": res.primal_objective,
        "dual_objective": res.dual_objective,
        "duality_gap": res.duality_gap,
        "relative_duality_gap": rel_gap,
    })
    print(f"denoised: iterations={res.iterations} converged={res.converged} "
          f"relative_duality_gap={rel_gap:.3e}")
    return EXIT_OK


def gradcheck_once(p, m, iterations, seed, h=1e-6, band=1e-5):
    """Gradient of ||w_hat - w||^2 wrt D for one random instance, with a
    fixed inner iteration count, against central finite differences."""
    rng = Rng(seed, "data")
    w = rng.standard_normal(p)
    y = w + 0.5 * rng.standard_normal(p)
    D0 = 0.5 * rng.standard_normal((p, m))
    q0 = rng.standard_normal(m)
    # tiny tol disables early stopping so every evaluation unrolls the
    # same fixed number of iterations; eta1 is frozen at the base point
    # since the tape treats it as a constant
    cfg = DenoiseConfig(tol=1e-300, max_itr1=iterations, record=True)
    from .denoiser import step_size
    eta1 = step_size(D0, cfg)

    def f(tape, d_var):
        rec = denoise_recorded(tape, d_var, y, cfg, q0=q0, eta1=eta1)
        return ad.vsqdist(tape, rec.w_hat, w)

    return ad.grad_check(f, D0, h=h, exclusion_band=band)


def cmd_gradcheck(args):
    threshold = args.threshold
    rows = []
    worst = 0.0
    any_fail = False
    for seed in range(args.seeds):
        res = gradcheck_once(args.p, args.m, args.iterations, seed)
        ok = res.max_rel_error <= threshold
        any_fail = any_fail or not ok
        worst = max(worst, res.max_rel_error)
        rows.append((seed, res.max_rel_error, res.n_excluded,
                     "pass" if ok else "FAIL"))
        print(f"seed={seed:3d} max_rel_error={res.max_rel_error:.3e} "
              f"excluded={res.n_excluded:3d} {'pass' if ok else 'FAIL'}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "gradcheck.csv",
                   ["seed", "max_rel_error", "n_excluded", "status"], rows)
    print(f"worst max_rel_error={worst:.3e} over {args.seeds} seeds "
          f"(threshold {threshold:g})")
    return EXIT_VALIDATION if any_fail else EXIT_OK


def _run_condition(name, cfg_text, out_dir, seed, baseline=False):
    cfg_path = out_dir / f"{name}.config"
    cfg_path.write_text(cfg_text)
    ns = argparse.Namespace(config=str(cfg_path), out=str(out_dir / name),
                            seed=seed)
    if baseline:
        cmd_baseline_train(ns)
    else:
        cmd_train(ns)
    manifest = {}
    for line in (out_dir / name / "run_manifest.txt").read_text().splitlines():
        k, v = line.split("=", 1)
        manifest[k] = v
    return name, manifest


def cmd_experiment(args):
    cfg = parse_config(args.config)
    kind = args.kind
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base_seed = args.seed if args.seed is not None \
        else optional(cfg, "train.seed", int, 0)

    def cfg_text(overrides):
        merged = dict(cfg)
        merged.update({k: str(v) for k, v in overrides.items()})
        merged.pop("experiment.sigmas", None)
        return "".join(f"{k}={v}\n" for k, v in sorted(merged.items()))

    conditions = []
    if kind == "noise-sweep":
        sigmas = float_list(optional(cfg, "experiment.sigmas", str, "0.05 1 4"))
        for s in sigmas:
            conditions.append((f"sigma_{s:g}",
                               cfg_text({"data.sigma": repr(float(s))}), False))
    elif kind == "ablation":
        conditions.append(("projected",
                           cfg_text({"train.projection": "center-columns"}), False))
        conditions.append(("unprojected",
                           cfg_text({"train.projection": "none"}), False))
    elif kind == "baseline-compare":
        conditions.append(("projected",
                           cfg_text({"train.projection": "center-columns"}), False))
        conditions.append(("baseline", cfg_text({}), True))
    elif kind == "single-train":
        conditions.append(("run", cfg_text({}), False))
    else:
        raise ConfigError(f"unknown experiment kind: {kind}")

    def run(cond):
        name, text, is_baseline = cond
        try:
            return _run_condition(name, text, out, base_seed, baseline=is_baseline)
        except Exception as exc:  # partial failure keeps other conditions
            return name, {"status": f"failed: {exc}"}

    if args.parallel:
        workers = int(os.environ.get("ANALYSPARSE_THREADS", "0")) or None
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(run, conditions))
    else:
        results = [run(c) for c in conditions]

    rows = []
    for name, manifest in results:
        rows.append((name,
                     manifest.get("mean_abs_cosine", ""),
                     manifest.get("final_val_loss", ""),
                     manifest.get("final_train_loss", ""),
                     manifest.get("status", "ok")))
    _write_csv(out / "summary.csv",
               ["condition", "mean_abs_cosine", "final_val_loss",
                "final_train_loss", "status"], rows)

    if kind == "baseline-compare":
        _write_overlay(out, [name for name, _, _ in conditions])
    print(f"experiment {kind}: {len(results)} condition(s) in {out}")
    return EXIT_OK


def _write_overlay(out, names):
    """Loss curves of all conditions with one shared iteration column."""
    series = {}
    for name in names:
        path = out / name / "train_loss.csv"
        if not path.exists():
            continue
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        series[name] = data[:, 1] if data.size else np.array([])
    if not series:
        return
    n = max(len(v) for v in series.values())
    header = ["iteration"] + [f"{name}_loss" for name in series]
    rows = []
    for i in range(n):
        row = [i]
        for v in series.values():
            row.append(float(v[i]) if i < len(v) else "")
        rows.append(row)
    _write_csv(out / "losses_overlay.csv", header, rows)


def build_parser():
    ap = argparse.ArgumentParser(prog="analysparse",
                                 description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="key=value config file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the configured seed")

    sp = sub.add_parser("gen", help="generate a dataset")
    common(sp)
    sp.set_defaults(fn=cmd_gen)

    sp = sub.add_parser("train", help="train the dictionary")
    common(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("baseline-train", help="train the smoothed-l1 baseline")
    common(sp)
    sp.set_defaults(fn=cmd_baseline_train)

    sp = sub.add_parser("denoise", help="denoise a signal with a dictionary")
    sp.add_argument("dictionary", help="CSV matrix of the dictionary")
    sp.add_argument("signal", help="CSV of the observed signal(s)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--max-iter", dest="max_iter", type=int, default=10000)
    sp.set_defaults(fn=cmd_denoise)

    sp = sub.add_parser("gradcheck", help="validate tape gradients")
    sp.add_argument("--p", type=int, default=8)
    sp.add_argument("--m", type=int, default=8)
    sp.add_argument("--iterations", type=int, default=50)
    sp.add_argument("--seeds", type=int, default=20)
    sp.add_argument("--threshold", type=float, default=1e-4)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("experiment", help="run a multi-condition experiment")
    sp.add_argument("kind", choices=["noise-sweep", "ablation",
                                     "baseline-compare", "single-train"])
    common(sp)
    sp.add_argument("--parallel", action="store_true",
                    help="run conditions concurrently "
                         "(ANALYSPARSE_THREADS caps workers)")
    sp.set_defaults(fn=cmd_experiment)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
