import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fhnrom import io
from fhnrom.cli import main
from fhnrom.harness import (
    ExperimentConfig,
    ManifestError,
    emit_figures,
    load_offline,
    run_offline,
    run_online,
)
from fhnrom.pod import numerical_rank


def smoke_config(tmp_path, **kw):
    base = dict(refinements=2, T=50.0, out_dir=str(tmp_path / "out"))
    base.update(kw)
    return ExperimentConfig(**base)


def test_defaults_are_experiment_values():
    c = ExperimentConfig()
    assert (c.D_u, c.D_v, c.alpha, c.beta, c.dt, c.T) == (0.04, 1.0, 0.3, 1.0, 0.5, 1000.0)
    assert c.train_mu == (-0.04, -0.02, 0.0, 0.02, 0.04)
    assert c.test_mu == (-0.03, -0.01, 0.01, 0.03)
    assert (c.half_width, c.refinements, c.degree, c.penalty) == (10.0, 5, 1, 10.0)


@given(
    refinements=st.integers(0, 6),
    T=st.floats(0.5, 2000),
    seed=st.integers(0, 2**31),
    modes=st.one_of(st.none(), st.integers(1, 100)),
    mus=st.lists(st.floats(-0.1, 0.1), min_size=1, max_size=6),
)
@settings(max_examples=40, deadline=None)
def test_config_round_trip(refinements, T, seed, modes, mus):
    c = ExperimentConfig(refinements=refinements, T=T, seed=seed, modes=modes, train_mu=mus)
    text = c.to_json()
    again = ExperimentConfig.from_json(text)
    assert again == c
    assert again.to_json() == text
    assert again.digest() == c.digest()


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        ExperimentConfig(train_mu=())
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"refinement": 3})
    c = ExperimentConfig(seed=4)
    c.save(tmp_path / "c.json")
    assert ExperimentConfig.load(tmp_path / "c.json") == c
    # bookkeeping fields do not change the digest
    assert ExperimentConfig(out_dir="a", workers=3).digest() == ExperimentConfig().digest()
    assert ExperimentConfig(seed=1).digest() != ExperimentConfig().digest()


def test_snapshot_schedule_column_count(tmp_path):
    # 5 parameters x 2000 steps of dt = 0.5 on [0, 1000]
    c = ExperimentConfig(refinements=0, out_dir=str(tmp_path))
    art = run_offline(c, persist=False, keep_trajectories=True)
    from fhnrom.harness import snapshot_matrix

    assert snapshot_matrix(art.trajectories, "U").shape == (6, 10000)
    assert snapshot_matrix(art.trajectories, "F").shape == (6, 10000)


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("smoke")
    c = smoke_config(tmp)
    art = run_offline(c)
    return c, art


def test_offline_smoke_manifest(smoke):
    c, art = smoke
    out = tmp = c.out_dir
    manifest = json.loads(open(f"{out}/manifest.json").read())
    assert manifest["status"] == "valid"
    assert manifest["config_hash"] == c.digest()
    assert manifest["k"] == art.k and manifest["n"] == art.n
    for name in manifest["files"]:
        assert (tmp_path := __import__("pathlib").Path(tmp) / name).exists(), tmp_path
    U = io.read_matrix(f"{out}/snapshots_u_mu+0.0200.bin")
    assert U.shape == (96, 100)
    np.testing.assert_array_equal(io.read_matrix(f"{out}/psi_u.bin"), art.basis.psi_u)
    assert np.loadtxt(f"{out}/deim_indices.csv", skiprows=1, dtype=int).tolist() == art.indices.tolist()


def test_load_offline_reproduces_artifacts(smoke):
    c, art = smoke
    again = load_offline(c.out_dir, c)
    np.testing.assert_array_equal(again.deim.Q, art.deim.Q)
    np.testing.assert_array_equal(again.rom_ops.S_u, art.rom_ops.S_u)
    np.testing.assert_array_equal(again.u0, art.u0)
    with pytest.raises(ManifestError):
        load_offline(c.out_dir, ExperimentConfig(refinements=2, T=50.0, seed=9))


def test_load_offline_rejects_bad_manifests(smoke, tmp_path):
    with pytest.raises(ManifestError):
        load_offline(tmp_path)
    import shutil

    c, _ = smoke
    broken = tmp_path / "copy"
    shutil.copytree(c.out_dir, broken)
    (broken / "deim_W.bin").unlink()
    with pytest.raises(ManifestError, match="missing"):
        load_offline(broken)
    m = json.loads((broken / "manifest.json").read_text())
    m["config"]["seed"] = 99
    (broken / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(ManifestError, match="hash"):
        load_offline(broken)


def test_failure_marks_manifest_invalid(tmp_path):
    c = smoke_config(tmp_path, T=2.0, modes=500)
    with pytest.raises(RuntimeError, match="pod/deim"):
        run_offline(c)
    m = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert m["status"] == "invalid" and m["failed_stage"] == "pod/deim"
    with pytest.raises(ManifestError):
        load_offline(tmp_path / "out")


def test_energy_one_gives_numerical_rank(tmp_path):
    c = smoke_config(tmp_path, refinements=1, T=3.0, energy=1.0, train_mu=(0.0, 0.02))
    art = run_offline(c, persist=False, keep_trajectories=True)
    from fhnrom.harness import snapshot_matrix
    from fhnrom.numerics import cholesky
    from fhnrom.pod import weighted_svd

    _, s_u, rank_u = weighted_svd(snapshot_matrix(art.trajectories, "U"), cholesky(art.ops.M))
    _, s_v, rank_v = weighted_svd(snapshot_matrix(art.trajectories, "V"), cholesky(art.ops.M))
    assert art.k == min(rank_u, rank_v) == min(numerical_rank(s_u, (24, 12)), numerical_rank(s_v, (24, 12)))


def test_reproducible_snapshots(tmp_path):
    a = run_offline(smoke_config(tmp_path / "a", T=5.0))
    b = run_offline(smoke_config(tmp_path / "b", T=5.0))
    for name in ["snapshots_u_mu-0.0400.bin", "snapshots_F_mu+0.0200.bin", "psi_v.bin", "deim_Q.bin"]:
        assert (tmp_path / "a" / "out" / name).read_bytes() == (tmp_path / "b" / "out" / name).read_bytes()
    np.testing.assert_array_equal(a.indices, b.indices)


def test_online_report_and_figures(smoke, tmp_path):
    c, art = smoke
    report = run_online(c, art)
    assert len(report.cases) == 4
    for case in report.cases:
        assert not case.failures
        assert case.speedup_pod > 0 and case.speedup_deim > 0
        assert case.speedup_pod == case.fom_seconds / case.pod_seconds
    files = emit_figures(report, art, tmp_path / "fig")
    names = {f.name for f in files}
    assert {"singular_values.csv", "timings.csv", "report.json"} <= names
    rows = (tmp_path / "fig" / "timings.csv").read_text().strip().splitlines()
    assert len(rows) == 1 + 4
    spectra = np.genfromtxt(tmp_path / "fig" / "singular_values.csv", delimiter=",", names=True, dtype=None,
                            encoding=None)
    for field in ["U", "V", "F"]:
        s = spectra["sigma"][spectra["field"] == field]
        assert np.all(np.diff(s) <= 0)
    for f in files:
        if f.suffix == ".vtk":
            assert io.read_vtk_cell_count(f) == art.space.n_elements
    assert sum(f.suffix == ".vtk" for f in files) == 12


def test_seen_parameter_is_more_accurate(smoke):
    c, art = smoke
    cfg = ExperimentConfig(**{**c.to_dict(), "test_mu": [0.02, 0.01, 0.03]})
    report = run_online(cfg, art, variants=("fom", "pod"))
    seen, *unseen = [case.pod_error for case in report.cases]
    assert all(seen < e for e in unseen)


def test_full_rank_reduction_is_exact(tmp_path):
    c = smoke_config(tmp_path, refinements=1, T=60.0, energy=1.0, test_mu=(0.01,))
    art = run_offline(c, persist=False)
    assert art.k == art.space.N and art.n == art.space.N
    case = run_online(c, art).cases[0]
    assert case.pod_error <= 1e-6 and case.deim_error <= 1e-6


def test_online_records_failures(smoke, monkeypatch):
    c, art = smoke
    import fhnrom.harness as h

    def boom(*a, **k):
        raise RuntimeError("diverged")

    monkeypatch.setattr(h, "rom_solve", boom)
    report = run_online(ExperimentConfig(**{**c.to_dict(), "test_mu": [0.01, 0.03]}), art)
    assert len(report.cases) == 2
    assert report.cases[0].failures == {"pod": "diverged", "deim": "diverged"}
    assert np.isfinite(report.cases[1].fom_seconds)


def test_emit_figures_reports_path(smoke, tmp_path):
    c, art = smoke
    report = run_online(ExperimentConfig(**{**c.to_dict(), "test_mu": [0.01]}), art, variants=())
    target = tmp_path / "file"
    target.write_text("")
    with pytest.raises(OSError):
        emit_figures(report, art, target)
    (tmp_path / "d").mkdir()
    (tmp_path / "d" / "timings.csv").mkdir()
    with pytest.raises(OSError, match="timings.csv"):
        emit_figures(report, art, tmp_path / "d")


def test_cli_verbs(tmp_path, capsys):
    out = str(tmp_path / "cli")
    assert main(["offline", "--refinements", "1", "--tfinal", "10", "--out", out]) == 0
    assert main(["online", "--out", out]) == 0
    text = capsys.readouterr().out
    assert "S_DEIM" in text and (tmp_path / "cli" / "timings.csv").exists()
    assert main(["online", "--out", out, "--seed", "5"]) == 1
    assert main(["full", "--refinements", "1", "--tfinal", "4", "--modes", "3", "--deim-modes", "4",
                 "--seed", "2", "--out", str(tmp_path / "full")]) == 0
    m = json.loads((tmp_path / "full" / "manifest.json").read_text())
    assert (m["k"], m["n"], m["config"]["seed"]) == (3, 4, 2)
    assert main(["check"]) == 0
    assert "checks passed" in capsys.readouterr().out


def test_cli_config_file(tmp_path):
    cfg = ExperimentConfig(refinements=1, T=3.0, out_dir=str(tmp_path / "o"), test_mu=(0.0,))
    cfg.save(tmp_path / "c.json")
    assert main(["full", "--config", str(tmp_path / "c.json")]) == 0
    assert ExperimentConfig.load(tmp_path / "o" / "config.json") == cfg
