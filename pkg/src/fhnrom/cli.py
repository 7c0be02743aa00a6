"""Command line entry point: ``fhnrom {offline,online,full,check}``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .harness import ExperimentConfig, ManifestError, emit_figures, load_offline, run_offline, run_online


def _config_from_args(args, base: ExperimentConfig | None = None) -> ExperimentConfig:
    if args.config:
        config = ExperimentConfig.load(args.config)
    else:
        config = base or ExperimentConfig()
    data = config.to_dict()
    overrides = {
        "refinements": args.refinements,
        "T": args.tfinal,
        "modes": args.modes,
        "deim_modes": args.deim_modes,
        "seed": args.seed,
        "out_dir": args.out,
        "energy": args.energy,
        "snapshot_stride": args.stride,
        "workers": args.workers,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(data)


def _print_report(report) -> None:
    print(f"k={report.k} n={report.n} ||(P^T W)^-1||_2={report.deim_bound:.2f}")
    print(f"{'mu':>7} {'FOM s':>9} {'POD s':>8} {'DEIM s':>8} {'S_POD':>7} {'S_DEIM':>7}"
          f" {'err POD':>9} {'err DEIM':>9}")
    for c in report.cases:
        print(f"{c.mu:+7.3f} {c.fom_seconds:9.2f} {c.pod_seconds:8.2f} {c.deim_seconds:8.2f}"
              f" {c.speedup_pod:7.2f} {c.speedup_deim:7.2f} {c.pod_error:9.2e} {c.deim_error:9.2e}")
        for variant, msg in c.failures.items():
            print(f"        {variant} failed: {msg}")


def run_checks(refinements: int = 2, seed: int = 0) -> bool:
    """Invariant suite on a small problem; prints one line per check."""
    from .deim import deim_error_bound, eval_nonlinear_deim, deim_jacobian
    from .dg import assemble_nonlinear, assemble_nonlinear_jacobian
    from .mesh import face_connectivity_check

    config = ExperimentConfig(refinements=refinements, T=10.0, seed=seed, out_dir="unused")
    results = []

    def record(name, ok, detail):
        results.append(ok)
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")

    t0 = time.perf_counter()
    art = run_offline(config, persist=False)
    ops, psi_u, psi_v = art.ops, art.basis.psi_u, art.basis.psi_v

    faces = face_connectivity_check(art.space.mesh)
    record("face connectivity", not faces["defects"],
           f"{faces['interior']} interior, {faces['boundary']} boundary faces")

    S = ops.S_u.toarray()
    sym = np.abs(S - S.T).max() / np.abs(S).max()
    record("stiffness symmetry", sym <= 1e-12, f"relative asymmetry {sym:.1e}")
    kern = np.abs(ops.S_u @ art.space.constant(1.0)).max()
    record("stiffness annihilates constants", kern <= 1e-10, f"max |S 1| = {kern:.1e}")

    for name, psi in [("psi_u", psi_u), ("psi_v", psi_v)]:
        dev = np.abs(psi.T @ (ops.M @ psi) - np.eye(psi.shape[1])).max()
        record(f"M-orthonormality {name}", dev <= 1e-8, f"k={psi.shape[1]}, max deviation {dev:.1e}")

    rng = np.random.default_rng(seed)
    W, p = art.W, art.indices
    PW = W[p]
    worst_interp = worst_ratio = 0.0
    for _ in range(50):
        F = rng.standard_normal(W.shape[0])
        rec = W @ np.linalg.solve(PW, F[p])
        worst_interp = max(worst_interp, np.abs(rec[p] - F[p]).max())
        lhs = np.linalg.norm(F - rec)
        rhs = deim_error_bound(W, p) * np.linalg.norm(F - W @ (W.T @ F))
        worst_ratio = max(worst_ratio, lhs / rhs)
    record("DEIM interpolation", worst_interp <= 1e-12, f"max residual at indices {worst_interp:.1e}")
    record("DEIM error bound", worst_ratio <= 1.0 + 1e-12, f"max lhs/rhs {worst_ratio:.3f}")

    mu = 0.01
    u = rng.uniform(-1, 1, ops.space.N)
    d = rng.standard_normal(ops.space.N)
    eps = 1e-6
    fd = (assemble_nonlinear(ops.space, u + eps * d, mu) - assemble_nonlinear(ops.space, u - eps * d, mu)) / (2 * eps)
    jd = assemble_nonlinear_jacobian(ops.space, u, mu) @ d
    err = np.linalg.norm(fd - jd) / np.linalg.norm(jd)
    record("full Jacobian vs finite differences", err <= 1e-6, f"relative error {err:.1e}")

    a = rng.standard_normal(art.k) * 0.3
    b = rng.standard_normal(art.k)
    fd = (eval_nonlinear_deim(art.deim, a + eps * b, mu) - eval_nonlinear_deim(art.deim, a - eps * b, mu)) / (2 * eps)
    jd = deim_jacobian(art.deim, a, mu) @ b
    err = np.linalg.norm(fd - jd) / np.linalg.norm(jd)
    record("DEIM Jacobian vs finite differences", err <= 1e-6, f"relative error {err:.1e}")

    ok = all(results)
    print(f"{sum(results)}/{len(results)} checks passed in {time.perf_counter() - t0:.1f} s")
    return ok


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fhnrom", description=__doc__)
    parser.add_argument("verb", choices=["offline", "online", "full", "check"])
    parser.add_argument("--config", type=Path, help="JSON experiment configuration")
    parser.add_argument("--refinements", type=int)
    parser.add_argument("--tfinal", type=float)
    parser.add_argument("--modes", type=int, help="POD modes k (default: energy criterion)")
    parser.add_argument("--deim-modes", type=int, help="DEIM modes n (default: energy criterion)")
    parser.add_argument("--energy", type=float, help="retained energy fraction for k and n")
    parser.add_argument("--stride", type=int, help="snapshot stride in time steps")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int, help="processes for the training sweep")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")

    if args.verb == "check":
        return 0 if run_checks(args.refinements if args.refinements is not None else 2,
                               args.seed or 0) else 1

    try:
        if args.verb in ("offline", "full"):
            config = _config_from_args(args)
            out = Path(config.out_dir)
            art = run_offline(config)
            print(f"offline done: k={art.k} n={art.n} bound={art.deim.bound:.2f} -> {out}")
            config.save(out / "config.json")
        else:
            # overrides apply on top of the stored configuration and must agree with it
            out = Path(args.out or ExperimentConfig().out_dir)
            stored = out / "config.json"
            base = ExperimentConfig.load(stored) if stored.exists() else None
            config = _config_from_args(args, base)
            config.out_dir = str(out)
            art = load_offline(out, config)
    except (ManifestError, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.verb in ("online", "full"):
        report = run_online(config, art)
        emit_figures(report, art, out)
        _print_report(report)
        if any(c.failures for c in report.cases):
            return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
