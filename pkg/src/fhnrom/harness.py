"""Offline/online experiment driver and report writers."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .deim import DeimOperator, build_deim_operator, deim_basis, deim_select
from .dg import DGSpace, cell_averages
from .fom import FomOperators, Trajectory, build_fom_operators, fom_solve, random_initial_condition
from .mesh import build_square_mesh
from .numerics import cholesky
from .pod import RankError, ReducedBasis, RomOperators, reduce_operators, select_modes, weighted_svd
from .rom import DeimNonlinearity, PodNonlinearity, project_state, relative_l2_error, rom_solve

__all__ = [
    "ExperimentConfig",
    "OfflineArtifacts",
    "CaseResult",
    "BenchmarkReport",
    "ManifestError",
    "build_problem",
    "snapshot_matrix",
    "run_offline",
    "load_offline",
    "run_online",
    "emit_figures",
]

logger = logging.getLogger(__name__)

# fields that change neither the numbers nor the artifacts
_NON_RESULT_FIELDS = ("out_dir", "workers", "save_snapshots")


@dataclass
class ExperimentConfig:
    half_width: float = 10.0
    refinements: int = 5
    degree: int = 1
    D_u: float = 0.04
    D_v: float = 1.0
    alpha: float = 0.3
    beta: float = 1.0
    dt: float = 0.5
    T: float = 1000.0
    train_mu: tuple = (-0.04, -0.02, 0.0, 0.02, 0.04)
    test_mu: tuple = (-0.03, -0.01, 0.01, 0.03)
    seed: int = 0
    energy: float = 0.9999
    modes: int | None = None
    deim_modes: int | None = None
    snapshot_stride: int = 1
    penalty: float = 10.0
    newton_tol: float = 1e-9
    newton_max_iters: int = 25
    out_dir: str = "results"
    workers: int = 1
    save_snapshots: bool = True

    def __post_init__(self):
        self.train_mu = tuple(float(m) for m in self.train_mu)
        self.test_mu = tuple(float(m) for m in self.test_mu)
        if not self.train_mu or not self.test_mu:
            raise ValueError("training and test parameter sets must be non-empty")
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("dt and T must be positive")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")
        if not 0 < self.energy <= 1:
            raise ValueError("energy must lie in (0, 1]")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["train_mu"] = list(self.train_mu)
        d["test_mu"] = list(self.test_mu)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def digest(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in _NON_RESULT_FIELDS}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def build_problem(config: ExperimentConfig):
    mesh = build_square_mesh(config.half_width, config.refinements)
    space = DGSpace(mesh, config.degree)
    ops = build_fom_operators(space, config.D_u, config.D_v, config.alpha, config.beta,
                              config.train_mu[0], config.penalty)
    return space, ops


def initial_state(config: ExperimentConfig, space: DGSpace):
    """Random initial fields shared by every run; ``v`` is drawn with ``seed + 1``."""
    return (random_initial_condition(space, config.seed),
            random_initial_condition(space, config.seed + 1))


def _fom_run(config: ExperimentConfig, mu: float, ops=None, snapshots=True) -> Trajectory:
    if ops is None:
        _, ops = build_problem(config)
    u0, v0 = initial_state(config, ops.space)
    stride = config.snapshot_stride if snapshots else 10**12
    return fom_solve(ops.with_mu(mu), u0, v0, config.dt, config.T, stride,
                     config.newton_tol, config.newton_max_iters, collect_nonlinear=snapshots)


def _fom_job(args):
    return _fom_run(*args)


@dataclass
class OfflineArtifacts:
    config: ExperimentConfig
    space: DGSpace
    ops: FomOperators
    basis: ReducedBasis
    sigma_f: np.ndarray
    W: np.ndarray
    indices: np.ndarray
    deim: DeimOperator
    rom_ops: RomOperators
    u0: np.ndarray
    v0: np.ndarray
    timings: dict = field(default_factory=dict)
    trajectories: list = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.basis.k

    @property
    def n(self) -> int:
        return self.W.shape[1]


class ManifestError(RuntimeError):
    pass


def _write_manifest(out: Path, manifest: dict) -> None:
    tmp = out / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    tmp.replace(out / "manifest.json")


def _pod_pair(U, V, chol, config: ExperimentConfig):
    """M-orthonormal bases for ``u`` and ``v`` sharing one mode count."""
    left_u, s_u, rank_u = weighted_svd(U, chol)
    left_v, s_v, rank_v = weighted_svd(V, chol)
    if config.modes is not None:
        k = config.modes
    else:
        k = min(max(select_modes(s_u, config.energy), select_modes(s_v, config.energy)),
                rank_u, rank_v)
    if k > min(rank_u, rank_v):
        raise RankError(k, min(rank_u, rank_v))
    psi_u = chol.solve(np.ascontiguousarray(left_u[:, :k]))
    psi_v = chol.solve(np.ascontiguousarray(left_v[:, :k]))
    return ReducedBasis(psi_u, psi_v, s_u, s_v)


def snapshot_matrix(trajs, field: str) -> np.ndarray:
    """Concatenate the stored states after ``t = 0`` of every trajectory.

    The initial state is shared by all parameters and is left out, so a run
    of ``J`` steps contributes ``J / snapshot_stride`` columns.
    """
    return np.hstack([getattr(t, field)[:, 1:] for t in trajs])


def assemble_offline(config, space, ops, trajs, u0, v0, timings=None) -> OfflineArtifacts:
    """POD and DEIM construction from finished training trajectories."""
    timings = {} if timings is None else timings
    t0 = time.perf_counter()
    chol = cholesky(ops.M)
    basis = _pod_pair(snapshot_matrix(trajs, "U"), snapshot_matrix(trajs, "V"), chol, config)
    timings["pod"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    F = snapshot_matrix(trajs, "F")
    if config.deim_modes is not None:
        W, sigma_f = deim_basis(F, modes=config.deim_modes)
    else:
        W, sigma_f = deim_basis(F, energy=config.energy)
    del F
    p = deim_select(W)
    deim = build_deim_operator(basis.psi_u, W, p, space)
    timings["deim"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    rom_ops = reduce_operators(basis.psi_u, basis.psi_v, ops.M, ops.S_u, ops.S_v,
                               config.alpha, config.beta)
    timings["reduce"] = time.perf_counter() - t0
    return OfflineArtifacts(config, space, ops, basis, sigma_f, W, p, deim, rom_ops, u0, v0, timings)


def run_offline(config: ExperimentConfig, persist: bool = True, keep_trajectories: bool = False
                ) -> OfflineArtifacts:
    """Training FOM sweep, POD bases for ``u`` and ``v``, DEIM operator for ``F``.

    With ``persist`` every artifact is written under ``config.out_dir`` and
    listed in ``manifest.json``; the manifest only turns ``"valid"`` once
    all stages finished.
    """
    out = Path(config.out_dir)
    manifest = {"config": config.to_dict(), "config_hash": config.digest(),
                "status": "incomplete", "files": {}}
    if persist:
        out.mkdir(parents=True, exist_ok=True)
        _write_manifest(out, manifest)

    stage = "fom"
    try:
        space, ops = build_problem(config)
        u0, v0 = initial_state(config, space)
        t0 = time.perf_counter()
        if config.workers > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                trajs = list(pool.map(_fom_job, [(config, mu) for mu in config.train_mu]))
        else:
            trajs = [_fom_run(config, mu, ops) for mu in config.train_mu]
        timings = {
            "fom_sweep": time.perf_counter() - t0,
            "fom_runs": {f"{t.mu:+.4f}": t.wall_time for t in trajs},
            "fom_mean_newton": {f"{t.mu:+.4f}": t.mean_newton_iterations for t in trajs},
        }
        if persist and config.save_snapshots:
            stage = "snapshots"
            for t in trajs:
                for name, mat in [("u", t.U[:, 1:]), ("v", t.V[:, 1:]), ("F", t.F[:, 1:])]:
                    fname = f"snapshots_{name}_mu{t.mu:+.4f}.bin"
                    io.write_matrix(out / fname, mat)
                    manifest["files"][fname] = f"{name} snapshots at mu={t.mu}"

        stage = "pod/deim"
        art = assemble_offline(config, space, ops, trajs, u0, v0, timings)
        if keep_trajectories:
            art.trajectories = trajs
        del trajs

        if persist:
            stage = "write"
            files = {
                "psi_u.bin": (art.basis.psi_u, "POD basis for u"),
                "psi_v.bin": (art.basis.psi_v, "POD basis for v"),
                "sigma_u.bin": (art.basis.sigma_u, "singular values of u snapshots"),
                "sigma_v.bin": (art.basis.sigma_v, "singular values of v snapshots"),
                "sigma_F.bin": (art.sigma_f, "singular values of nonlinear snapshots"),
                "deim_W.bin": (art.W, "DEIM basis"),
                "deim_Q.bin": (art.deim.Q, "DEIM projector Psi_u^T W (P^T W)^-1"),
                "u0.bin": (u0, "initial u"),
                "v0.bin": (v0, "initial v"),
            }
            for fname, (mat, what) in files.items():
                io.write_matrix(out / fname, mat)
                manifest["files"][fname] = what
            io.write_csv(out / "deim_indices.csv", ["index"], [[int(i)] for i in art.indices])
            manifest["files"]["deim_indices.csv"] = "DEIM interpolation indices"
            _write_spectra(out / "singular_values.csv", art)
            manifest["files"]["singular_values.csv"] = "spectra of U, V, F"
            manifest.update(status="valid", k=art.k, n=art.n, deim_bound=art.deim.bound,
                            offline_seconds=art.timings)
            _write_manifest(out, manifest)
        return art
    except Exception as exc:
        if persist:
            manifest.update(status="invalid", failed_stage=stage, error=str(exc))
            _write_manifest(out, manifest)
        raise RuntimeError(f"offline stage {stage!r} failed: {exc}") from exc


def load_offline(out_dir, config: ExperimentConfig | None = None) -> OfflineArtifacts:
    """Rebuild offline artifacts from a directory written by :func:`run_offline`."""
    out = Path(out_dir)
    path = out / "manifest.json"
    if not path.exists():
        raise ManifestError(f"no manifest in {out}")
    manifest = json.loads(path.read_text())
    if manifest.get("status") != "valid":
        raise ManifestError(f"{path}: artifacts are {manifest.get('status')!r}")
    stored = ExperimentConfig.from_dict(manifest["config"])
    if stored.digest() != manifest["config_hash"]:
        raise ManifestError(f"{path}: config hash mismatch")
    if config is not None and config.digest() != stored.digest():
        raise ManifestError("artifacts were built with a different configuration")
    config = config or stored
    for fname in manifest["files"]:
        if not (out / fname).exists():
            raise ManifestError(f"missing artifact {fname}")

    space, ops = build_problem(config)
    rd = lambda name: io.read_matrix(out / name)  # noqa: E731
    basis = ReducedBasis(rd("psi_u.bin"), rd("psi_v.bin"), rd("sigma_u.bin")[:, 0], rd("sigma_v.bin")[:, 0])
    W = rd("deim_W.bin")
    p = np.loadtxt(out / "deim_indices.csv", skiprows=1, dtype=np.int64, ndmin=1)
    deim = build_deim_operator(basis.psi_u, W, p, space)
    Q = rd("deim_Q.bin")
    if Q.shape != deim.Q.shape or not np.allclose(Q, deim.Q, rtol=1e-10, atol=1e-12 * np.abs(Q).max()):
        raise ManifestError("stored DEIM projector does not match the stored bases")
    deim = dataclasses.replace(deim, Q=Q)
    rom_ops = reduce_operators(basis.psi_u, basis.psi_v, ops.M, ops.S_u, ops.S_v,
                               config.alpha, config.beta)
    return OfflineArtifacts(config, space, ops, basis, rd("sigma_F.bin")[:, 0], W, p, deim, rom_ops,
                            rd("u0.bin")[:, 0], rd("v0.bin")[:, 0], manifest.get("offline_seconds", {}))


@dataclass
class CaseResult:
    mu: float
    fom_seconds: float = float("nan")
    pod_seconds: float = float("nan")
    deim_seconds: float = float("nan")
    pod_error: float = float("nan")
    deim_error: float = float("nan")
    fom_newton: float = float("nan")
    pod_newton: float = float("nan")
    deim_newton: float = float("nan")
    failures: dict = field(default_factory=dict)

    @property
    def speedup_pod(self) -> float:
        return self.fom_seconds / self.pod_seconds

    @property
    def speedup_deim(self) -> float:
        return self.fom_seconds / self.deim_seconds


@dataclass
class BenchmarkReport:
    cases: list
    k: int
    n: int
    deim_bound: float
    sigma_u: np.ndarray
    sigma_v: np.ndarray
    sigma_f: np.ndarray
    finals: dict = field(default_factory=dict, repr=False)  # (variant, mu) -> u at T

    def rows(self):
        for c in self.cases:
            yield [c.mu, c.fom_seconds, c.pod_seconds, c.deim_seconds, c.speedup_pod,
                   c.speedup_deim, self.deim_bound, c.pod_error, c.deim_error]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "n": self.n,
            "deim_bound": self.deim_bound,
            "cases": [dict(dataclasses.asdict(c), speedup_pod=c.speedup_pod,
                           speedup_deim=c.speedup_deim) for c in self.cases],
        }


def run_online(config: ExperimentConfig, art: OfflineArtifacts, variants=("fom", "pod", "deim")
               ) -> BenchmarkReport:
    """FOM, POD-ROM and POD-DEIM-ROM at every test parameter.

    Only time-stepping loops are timed; a failing solver is recorded for
    its case and the remaining cases still run.
    """
    ops, basis = art.ops, art.basis
    a0 = project_state(basis.psi_u, ops.M, art.u0)
    b0 = project_state(basis.psi_v, ops.M, art.v0)
    nonlin = {"pod": PodNonlinearity(art.space, basis.psi_u), "deim": DeimNonlinearity(art.deim)}
    cases, finals = [], {}
    for mu in config.test_mu:
        case = CaseResult(mu)
        fom_final = None
        if "fom" in variants:
            try:
                tr = _fom_run(config, mu, ops, snapshots=False)
                case.fom_seconds, case.fom_newton = tr.wall_time, tr.mean_newton_iterations
                fom_final = finals[("fom", mu)] = tr.u_final
            except Exception as exc:  # recorded, other cases continue
                case.failures["fom"] = str(exc)
        for name in ("pod", "deim"):
            if name not in variants:
                continue
            try:
                rt = rom_solve(art.rom_ops, nonlin[name], a0, b0, config.dt, config.T, mu,
                               config.newton_tol, config.newton_max_iters)
            except Exception as exc:
                case.failures[name] = str(exc)
                continue
            u_T = basis.psi_u @ rt.U[:, -1]
            finals[(name, mu)] = u_T
            setattr(case, f"{name}_seconds", rt.wall_time)
            setattr(case, f"{name}_newton", float(rt.newton_iterations.mean()))
            if fom_final is not None:
                setattr(case, f"{name}_error", relative_l2_error(ops.M, fom_final, u_T))
        logger.info("mu=%+.3f: %s", mu, case)
        cases.append(case)
    return BenchmarkReport(cases, art.k, art.n, art.deim.bound, basis.sigma_u, basis.sigma_v,
                           art.sigma_f, finals)


def _write_spectra(path, art_or_report) -> None:
    a = art_or_report
    su = a.basis.sigma_u if hasattr(a, "basis") else a.sigma_u
    sv = a.basis.sigma_v if hasattr(a, "basis") else a.sigma_v
    rows = []
    for name, s in [("U", su), ("V", sv), ("F", a.sigma_f)]:
        rows += [[name, i + 1, f"{x:.17g}"] for i, x in enumerate(s)]
    io.write_csv(path, ["field", "index", "sigma"], rows)


def emit_figures(report: BenchmarkReport, art: OfflineArtifacts, out_dir) -> list:
    """Write spectra, timing table, JSON report and VTK patterns; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    try:
        path = out / "singular_values.csv"
        _write_spectra(path, report)
        written.append(path)

        path = out / "timings.csv"
        io.write_csv(path, ["mu", "fom_s", "pod_s", "deim_s", "S_pod", "S_deim", "deim_bound",
                            "pod_error", "deim_error"], report.rows())
        written.append(path)

        path = out / "report.json"
        path.write_text(json.dumps(report.to_dict(), indent=2))
        written.append(path)

        for (variant, mu), u in sorted(report.finals.items()):
            path = out / f"pattern_{variant}_{mu:+.2f}.vtk"
            io.write_vtk(path, art.space.mesh, {"u": cell_averages(art.space, u)},
                         title=f"u at T, {variant}, mu={mu}")
            written.append(path)
    except OSError as exc:
        raise OSError(f"could not write {path}: {exc}") from exc
    return written
