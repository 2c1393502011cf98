"""Acceptance suite. Each test records a ``criterion`` id and a ``detail``
line; ``conftest.py`` prints one PASS/FAIL/SKIP line per criterion at the
end of the run. Select with ``pytest -m acceptance``."""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from lowrank_sni.cli import main, run_bench
from lowrank_sni.completion import ObservationSet, evaluate_rmse, sni_complete, sparse_residual
from lowrank_sni.datasets import SyntheticSpec, make_synthetic, write_observations
from lowrank_sni.integrators import SolverConfig, dense_residual, full_observation_monitor, sni_run, sni_step
from lowrank_sni.manifold import (
    LowRankFactors,
    assemble,
    random_factors,
    riemannian_gradient_components,
    tangent_project,
    tangent_vector,
)

from oracles import (
    complement_basis,
    dense_tangent_projection,
    principal_cosines,
    random_orthonormal,
    subspace_sweep,
    truncated,
)

pytestmark = pytest.mark.acceptance


def _note(record_property, crit, detail):
    record_property("criterion", crit)
    record_property("detail", detail)


def _descent_trials():
    # 100 seeded (M, f0, r) triples up to 60 x 40.
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        m = int(rng.integers(5, 61))
        n = int(rng.integers(2, min(m, 40) + 1))
        r = int(rng.integers(1, n + 1))
        kind = seed % 3
        if kind == 0:
            M = rng.standard_normal((m, n))
        elif kind == 1:
            # Decaying spectrum with clusters.
            s = np.sort(rng.choice([1.0, 0.5, 0.1, 0.01], n))[::-1]
            M = (random_orthonormal(rng, m, n) * s) @ random_orthonormal(rng, n, n).T
        else:
            k = int(rng.integers(r, n + 1))
            M = rng.standard_normal((m, k)) @ rng.standard_normal((k, n))
        yield seed, M, random_factors(m, n, r, [seed, 1]), r


_DESCENT_RUNS = None


def _descent_runs():
    global _DESCENT_RUNS
    if _DESCENT_RUNS is None:
        runs = []
        for seed, M, f0, r in _descent_trials():
            res = sni_run(dense_residual(M), f0, SolverConfig(rank=r), monitor=full_observation_monitor(M))
            runs.append((seed, M, res))
        _DESCENT_RUNS = runs
    return _DESCENT_RUNS


def test_criterion_1_desk_scale_table(record_property):
    start = time.perf_counter()
    means, per_trial = run_bench(["sni", "power", "rsvd"], [(500, 400, 20)], 3, 0, {})
    elapsed = time.perf_counter() - start
    worst = {}
    for _, _, _, meth, err, _ in per_trial:
        worst[meth] = max(worst.get(meth, 0.0), err)
    key = (500, 400, 20)
    detail = (f"worst SNI {worst['sni']:.2e} (<=1e-8), power {worst['power']:.2e} (<=1e-5), "
              f"mean RSVD/power {means[('rsvd', key)] / means[('power', key)]:.1e} (>=10), {elapsed:.1f}s (<30s)")
    _note(record_property, 1, detail)
    assert worst["sni"] <= 1e-8
    assert worst["power"] <= 1e-5
    assert means[("rsvd", key)] >= 10 * means[("power", key)]
    assert elapsed < 30.0


def test_criterion_2_residual_monotone(record_property):
    violations = 0
    steps = 0
    for _, M, res in _descent_runs():
        err = res.trace.column("error")
        violations += int(np.sum(np.diff(err) > 1e-10 * np.linalg.norm(M)))
        steps += len(err) - 1
    _note(record_property, 2, f"{violations} violations over {steps} iterations in 100 trials")
    assert violations == 0


def test_criterion_3_subspace_errors_monotone(record_property):
    violations = 0
    for _, M, res in _descent_runs():
        slack = 1e-10 * np.linalg.norm(M)
        for name in ("u_error", "v_error"):
            violations += int(np.sum(np.diff(res.trace.column(name)) > slack))
    _note(record_property, 3, f"{violations} violations in 100 trials")
    assert violations == 0


def _completion_instance(k):
    rng = np.random.default_rng(2000 + k)
    m = n = 200
    prob = make_synthetic(SyntheticSpec(m, n, np.linspace(10, 2, 5), seed=2000 + k))
    kind = k % 4
    if kind == 0:
        mask = np.ones((m, n), dtype=bool)
    elif kind == 1:
        mask = rng.random((m, n)) < 0.5
    elif kind == 2:
        mask = rng.random((m, n)) < 0.1
    else:
        # One fully observed row, 5% elsewhere.
        mask = rng.random((m, n)) < 0.05
        mask[int(rng.integers(m))] = True
    return ObservationSet.from_dense(prob.M, mask), random_factors(m, n, 5, [2000 + k, 1])


def test_criterion_4_completion_objective_monotone(record_property):
    violations = 0
    steps = 0
    for k in range(50):
        obs, f0 = _completion_instance(k)
        res = sni_complete(obs, f0, SolverConfig(rank=5))
        f1 = res.trace.column("error")
        violations += int(np.sum(np.diff(f1) > 1e-10 * f1[0]))
        steps += len(f1) - 1
    _note(record_property, 4, f"{violations} violations over {steps} iterations in 50 instances")
    assert violations == 0


def test_criterion_5_exact_rank_recovery(record_property):
    worst_rel = 0.0
    worst_sv = 0.0
    runs = 0
    for r in (1, 3, 10):
        for (m, n) in ((30, 20), (120, 80), (300, 200)):
            if r > n:
                continue
            for seed in range(2):
                rng = np.random.default_rng([r, m, seed])
                s = np.sort(rng.uniform(1.0, 10.0, r))[::-1]
                M = (random_orthonormal(rng, m, r) * s) @ random_orthonormal(rng, n, r).T
                Ur, sr, Vr = truncated(M, r)
                M_r = (Ur * sr) @ Vr.T
                starts = [
                    random_factors(m, n, r, rng),
                    LowRankFactors(complement_basis(rng, Ur, m, r), np.eye(r), complement_basis(rng, Vr, n, r)),
                ]
                for f0 in starts:
                    res = sni_run(dense_residual(M), f0, SolverConfig(rank=r))
                    worst_rel = max(worst_rel, np.linalg.norm(res.matrix() - M_r) / np.linalg.norm(M_r))
                    worst_sv = max(worst_sv, np.abs(res.D - sr).max())
                    runs += 1
    _note(record_property, 5, f"{runs} runs, worst relative error {worst_rel:.1e}, worst singular value error {worst_sv:.1e} (<=1e-8)")
    assert worst_rel <= 1e-8
    assert worst_sv <= 1e-8


def test_criterion_6_completion_recovery(record_property):
    prob = make_synthetic(SyntheticSpec(200, 200, np.linspace(10, 5, 5), observed_fraction=0.5, seed=6))
    start = time.perf_counter()
    res = sni_complete(prob.observations, random_factors(200, 200, 5, [6, 1]), SolverConfig(rank=5, max_iterations=500))
    elapsed = time.perf_counter() - start
    rmse = evaluate_rmse(prob.held_out, res.factors).rmse
    _note(record_property, 6, f"held-out RMSE {rmse:.1e} (<=1e-4) after {res.iterations} iterations, {elapsed:.2f}s (<10s)")
    assert res.iterations <= 500
    assert rmse <= 1e-4
    assert elapsed < 10.0


def _movielens_path():
    candidates = [os.environ.get("LOWRANK_SNI_ML100K"), "data/ml-100k/u.data",
                  str(Path(__file__).resolve().parents[1] / "data" / "ml-100k" / "u.data")]
    for c in candidates:
        if c and Path(c).is_file():
            return c
    return None


def test_criterion_7_movielens(record_property, tmp_path):
    path = _movielens_path()
    if path is None:
        _note(record_property, 7, "MovieLens 100K u.data not found (set LOWRANK_SNI_ML100K)")
        pytest.skip("MovieLens 100K u.data not available; set LOWRANK_SNI_ML100K to its path")
    start = time.perf_counter()
    code = main(["complete", "--ratings", path, "--rank", "10", "--seed", "0",
                 "--test-fraction", "0.2", "--clamp", "1,5", "--out", str(tmp_path)])
    elapsed = time.perf_counter() - start
    rmse = json.loads((tmp_path / "report.json").read_text())["metrics"]["test_rmse"]
    _note(record_property, 7, f"test RMSE {rmse:.4f} (<=1.00), {elapsed:.1f}s (<60s)")
    assert code in (0, 2)
    assert rmse <= 1.00
    assert elapsed < 60.0


def test_criterion_8_oracle_equivalences(record_property):
    worst_a = 0.0
    for seed in range(50):
        rng = np.random.default_rng(3000 + seed)
        m, n = int(rng.integers(4, 40)), int(rng.integers(3, 30))
        r = int(rng.integers(1, min(m, n) + 1))
        f = LowRankFactors(random_orthonormal(rng, m, r), rng.standard_normal((r, r)), random_orthonormal(rng, n, r))
        dA = rng.standard_normal((m, n))
        comp = tangent_vector(f, riemannian_gradient_components(f, dA))
        worst_a = max(worst_a, np.abs(comp - dense_tangent_projection(f.U, f.V, dA)).max(),
                      np.abs(tangent_project(f, dA) - dense_tangent_projection(f.U, f.V, dA)).max())

    worst_b = 1.0
    for seed in range(20):
        rng = np.random.default_rng(4000 + seed)
        m, n, r = int(rng.integers(10, 60)), int(rng.integers(8, 40)), int(rng.integers(1, 6))
        M = rng.standard_normal((m, n))
        f = LowRankFactors(random_orthonormal(rng, m, r), rng.standard_normal((r, r)), random_orthonormal(rng, n, r))
        out = sni_step(f, M - assemble(f))
        U_ref, V_ref = subspace_sweep(M, f.V)
        worst_b = min(worst_b, principal_cosines(out.U, U_ref).min(), principal_cosines(out.V, V_ref).min())

    mismatches = 0
    for seed in range(20):
        rng = np.random.default_rng(5000 + seed)
        m, n = int(rng.integers(5, 50)), int(rng.integers(5, 50))
        r = min(int(rng.integers(1, 5)), m, n)
        # Small integer entries: every product and partial sum is exact in
        # float64, so the comparison is bitwise whatever the summation order.
        ints = lambda *shape: rng.integers(-4, 5, shape).astype(np.float64)
        M = ints(m, n)
        mask = rng.random((m, n)) < rng.uniform(0.05, 0.9)
        f = LowRankFactors(ints(m, r), ints(r, r), ints(n, r))
        got = sparse_residual(ObservationSet.from_dense(M, mask), f).toarray()
        ref = np.zeros((m, n))
        for i, j in zip(*np.nonzero(mask)):
            ref[i, j] = M[i, j] - sum(f.U[i, a] * f.S[a, b] * f.V[j, b] for a in range(r) for b in range(r))
        if not np.array_equal(got, ref):
            mismatches += 1

    _note(record_property, 8, f"(a) max dev {worst_a:.1e} (<=1e-10); (b) min cosine 1-{1 - worst_b:.1e} "
          f"(>=1-1e-9); (c) {mismatches}/20 residual mismatches")
    assert worst_a <= 1e-10
    assert worst_b >= 1 - 1e-9
    assert mismatches == 0


def _run_twice(tmp_path, name, argv):
    outs = []
    for k in range(2):
        out = tmp_path / name
        if out.exists():
            for p in out.iterdir():
                p.unlink()
        main(argv + ["--out", str(out)])
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "timing.json"})
    return outs[0] == outs[1] and len(outs[0]) > 0


def test_criterion_9_cli_determinism(record_property, tmp_path):
    prob = make_synthetic(SyntheticSpec(80, 60, [5.0, 4.0, 3.0], observed_fraction=0.5, seed=9))
    canon = tmp_path / "obs.txt"
    write_observations(prob.observations, canon)
    commands = {
        f"approx-{meth}": ["approx", "--method", meth, "--m", "80", "--n", "60", "--rank", "4", "--seed", "9"]
        for meth in ("sni", "dlra", "power", "rsvd")
    }
    commands["complete"] = ["complete", "--train", str(canon), "--rank", "3", "--seed", "9"]
    commands["bench"] = ["bench", "--problem", "80x60x4", "--trials", "2", "--seed", "9"]
    failed = [name for name, argv in commands.items() if not _run_twice(tmp_path, name, argv)]
    _note(record_property, 9, f"{len(commands) - len(failed)}/{len(commands)} commands byte-identical"
          + (f"; differing: {', '.join(failed)}" if failed else ""))
    assert not failed
