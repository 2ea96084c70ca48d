"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
Real-scene data for criterion 6 is looked up under ``data/<scene>/`` at the
repository root (cube.hdr, endmembers.csv, abundances.csv).
"""

import math
import subprocess
import sys
import time
from itertools import permutations
from pathlib import Path

import numpy as np
import pytest

from caeunmix import data, metrics
from caeunmix.checkpoint import load_checkpoint, save_checkpoint
from caeunmix.gradcheck import run_gradcheck
from caeunmix.model import Hyperparams, build_cae, extract_factors, forward_band, reconstruction, train
from caeunmix.nmf import NmfConfig, nmf
from caeunmix.synth import SceneSpec, synth_scene

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data"

GRAD_TOL, GRAD_SECONDS = 1e-4, 30.0
IDENTITY_TOL = 1e-9
SAD_TOL, RMSE_TOL, RECOVERY_SECONDS = 0.25, 0.20, 600.0
NMF_REL_TOL, NMF_ITERS, MONOTONE_SLACK = 1e-2, 2000, 1e-9
ORACLE_TOL = 1e-12
REAL_RMSE_TOL = 0.25
REFERENCE = {"jasper": (0.4351, 0.1681), "samson": (0.3196, 0.2479)}
REAL_SHAPES = {"jasper": (100, 198, 4), "samson": (95, 156, 3)}
CSV_TOL = 1e-15


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail, status=None):
        with capsys.disabled():
            print(f"\n[{status or ('PASS' if ok else 'FAIL')}] criterion {number}: {detail}")
        return ok

    return emit


@pytest.fixture(scope="module")
def recovery_scene():
    cube, gt = synth_scene(SceneSpec(32, 32, 3, 40, seed=0))
    return data.normalize_cube(cube), gt


def test_criterion_1_gradients(report):
    start = time.perf_counter()
    results = run_gradcheck(seed=0)
    elapsed = time.perf_counter() - start
    worst = max(results, key=lambda r: r.worst[1])
    ok = all(r.passed(GRAD_TOL) for r in results) and elapsed < GRAD_SECONDS
    report(1, ok, f"{len(results)} cases, worst {worst.case}/{worst.worst[0]} rel err "
                  f"{worst.worst[1]:.2e} <= {GRAD_TOL:g}, {elapsed:.1f}s < {GRAD_SECONDS:g}s")
    assert ok


def test_criterion_2_factor_identity(report):
    cube = data.HsiCube(np.random.default_rng(0).uniform(0, 1, (5, 8, 8)))
    model = build_cae(8, 8, 5, Hyperparams(r=3, epochs=20, seed=0))
    gaps = []
    for stage in ("untrained", "trained"):
        f = extract_factors(model, cube)
        gaps.append(float(np.max(np.abs(reconstruction(model, cube) - f.S @ f.A))))
        if stage == "untrained":
            train(model, cube)
    ok = max(gaps) <= IDENTITY_TOL
    report(2, ok, f"max |X_hat - S A| untrained {gaps[0]:.2e}, trained {gaps[1]:.2e} <= {IDENTITY_TOL:g}")
    assert ok


def test_criterion_3_synthetic_recovery(report, recovery_scene):
    cube, gt = recovery_scene
    start = time.perf_counter()
    runs = []
    for seed in (0, 1, 2):
        model = build_cae(32, 32, 40, Hyperparams(r=3, epochs=200, dropout_rate=0.01, l2_rate=1e-4, seed=seed))
        train(model, cube)
        r = metrics.evaluate(extract_factors(model, cube), gt)
        runs.append((seed, r.average_sad, r.average_rmse))
    elapsed = time.perf_counter() - start
    passing = [run for run in runs if run[1] <= SAD_TOL and run[2] <= RMSE_TOL]
    best = min(passing or runs, key=lambda run: run[1])
    ok = bool(passing) and elapsed <= RECOVERY_SECONDS
    per_seed = ", ".join(f"seed {s}: SAD {a:.3f} RMSE {b:.3f}" for s, a, b in runs)
    report(3, ok, f"best seed {best[0]} SAD {best[1]:.3f} <= {SAD_TOL} and RMSE {best[2]:.3f} <= {RMSE_TOL} "
                  f"({per_seed}); {elapsed:.0f}s <= {RECOVERY_SECONDS:g}s")
    assert ok


def test_criterion_4_nmf(report, recovery_scene):
    cube, _ = recovery_scene
    X = cube.as_matrix()
    runs = []
    for seed in (0, 1, 2):
        res = nmf(X, NmfConfig(r=3, max_iters=NMF_ITERS, seed=seed))
        trace = res.objective_trace
        monotone = all(b <= a + MONOTONE_SLACK for a, b in zip(trace, trace[1:]))
        rel = np.linalg.norm(X - res.S @ res.A) / np.linalg.norm(X)
        runs.append((rel, monotone, res.iterations))
    best = min(runs)
    ok = best[0] <= NMF_REL_TOL and all(m for _, m, _ in runs) and best[2] <= NMF_ITERS
    report(4, ok, f"best relative error {best[0]:.2e} <= {NMF_REL_TOL:g} in {best[2]} iterations; "
                  f"traces monotone: {all(m for _, m, _ in runs)}")
    assert ok


def _sad_oracle(a, b):
    # half-angle form on unit vectors: stable at every angle and free of arccos
    u = np.asarray(a) / np.linalg.norm(a)
    v = np.asarray(b) / np.linalg.norm(b)
    return 2.0 * math.atan2(float(np.linalg.norm(u - v)), float(np.linalg.norm(u + v)))


def _align_oracle(A_est, A_gt):
    r = A_gt.shape[0]
    table = [[_sad_oracle(A_est[i], A_gt[j]) for j in range(r)] for i in range(r)]
    return min(permutations(range(r)), key=lambda p: (sum(table[i][p[i]] for i in range(r)), p))


def test_criterion_5_metrics(report):
    exact = [
        metrics.sad([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0,
        metrics.sad([1.0, 2.0, 3.0], [2.0, 4.0, 6.0]) == 0.0,
        metrics.sad([1.0, 0.0], [0.0, 1.0]) == math.pi / 2,
        metrics.rmse([0.2, 0.4], [0.2, 0.4]) == 0.0,
        metrics.rmse([0.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0]) == 1.0,
        metrics.align_endmembers(np.eye(3) + 0.1, np.eye(3) + 0.1) == (0, 1, 2),
        metrics.align_endmembers(np.eye(3)[[1, 2, 0]], np.eye(3)) == (1, 2, 0),
    ]
    rng = np.random.default_rng(5)
    worst = 0.0
    aligned = True
    for _ in range(20):
        r = int(rng.integers(2, 6))
        A_est, A_gt = rng.uniform(0, 1, (r, 30)), rng.uniform(0, 1, (r, 30))
        s, t = rng.uniform(0, 1, 40), rng.uniform(0, 1, 40)
        worst = max(worst, abs(metrics.sad(A_est[0], A_gt[0]) - _sad_oracle(A_est[0], A_gt[0])))
        worst = max(worst, abs(metrics.rmse(s, t) - math.sqrt(sum((x - y) ** 2 for x, y in zip(s, t)) / 40)))
        aligned &= metrics.align_endmembers(A_est, A_gt) == _align_oracle(A_est, A_gt)
    suite = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                            str(ROOT / "tests" / "test_metrics.py")], capture_output=True, text=True)
    ok = all(exact) and aligned and worst <= ORACLE_TOL and suite.returncode == 0
    summary = suite.stdout.strip().splitlines()[-1] if suite.stdout.strip() else "no output"
    report(5, ok, f"{sum(exact)}/{len(exact)} exact cases, oracle gap {worst:.1e} <= {ORACLE_TOL:g}, "
                  f"alignment matches exhaustive oracle: {aligned}; unit suite: {summary}")
    assert ok


def _real_scene(name):
    folder = DATA / name
    needed = [folder / "cube.hdr", folder / "endmembers.csv", folder / "abundances.csv"]
    return needed if all(p.exists() for p in needed) else None


@pytest.mark.parametrize("name", ["jasper", "samson"])
def test_criterion_6_real_scenes(report, name):
    paths = _real_scene(name)
    if paths is None:
        report_line = f"{name}: no user-supplied scene under {DATA / name}; " \
                      f"soft target RMSE <= {REAL_RMSE_TOL} unverified"
        report(6, False, report_line, status="NOT RUN")
        pytest.skip(report_line)
    cube = data.normalize_cube(data.load_cube(paths[0]))
    gt = data.FactorPair(data.load_matrix_csv(paths[2]), data.load_matrix_csv(paths[1]))
    rows, bands, r = REAL_SHAPES[name]
    assert (cube.rows, cube.bands, gt.r) == (rows, bands, r)
    best = None
    for seed in range(5):
        model = build_cae(cube.rows, cube.cols, cube.bands, Hyperparams(r=r, epochs=500, seed=seed))
        train(model, cube)
        rep = metrics.evaluate(extract_factors(model, cube), gt)
        if best is None or rep.average_sad < best.average_sad:
            best = rep
    ref_sad, ref_rmse = REFERENCE[name]
    ok = best.average_rmse <= REAL_RMSE_TOL
    report(6, ok, f"{name} best-of-5 SAD {best.average_sad:.4f} (reference {ref_sad}) "
                  f"RMSE {best.average_rmse:.4f} (reference {ref_rmse}) <= {REAL_RMSE_TOL}")
    assert ok


def test_criterion_7_round_trips(report, tmp_path):
    rng = np.random.default_rng(7)
    cube = data.HsiCube(rng.uniform(0, 1, (6, 8, 8)))
    data.save_cube(cube, tmp_path / "c.hdr")
    cube_ok = data.load_cube(tmp_path / "c.hdr").data.tobytes() == cube.data.tobytes()

    model = build_cae(8, 8, 6, Hyperparams(r=2, epochs=2, seed=1))
    train(model, cube)
    save_checkpoint(model, tmp_path / "m.cae")
    back = load_checkpoint(tmp_path / "m.cae")
    params_ok = all(p.value.tobytes() == q.value.tobytes() for p, q in zip(model.parameters(), back.parameters()))
    forward_ok = all(
        forward_band(model, cube.band(b))[0].tobytes() == forward_band(back, cube.band(b))[0].tobytes()
        for b in range(cube.bands)
    )

    M = rng.normal(size=(4, 198)) * 10.0 ** rng.integers(-8, 8, size=(4, 198))
    data.save_matrix_csv(M, tmp_path / "m.csv")
    csv_gap = float(np.max(np.abs(data.load_matrix_csv(tmp_path / "m.csv") - M) / np.abs(M)))

    S = rng.uniform(0, 1, (10000, 4))
    paths = data.export_abundance_maps(S, 100, 100, tmp_path / "maps")
    pgm_ok = len(paths) == 4
    for p in paths:
        raw = p.read_bytes()
        pgm_ok &= raw.startswith(b"P5\n100 100\n255\n") and len(raw) == len(b"P5\n100 100\n255\n") + 10000
        pgm_ok &= data.read_pgm(p).shape == (100, 100)

    ok = cube_ok and params_ok and forward_ok and csv_gap <= CSV_TOL and pgm_ok
    report(7, ok, f"cube bit-exact {cube_ok}, checkpoint bit-exact {params_ok}, forward identical {forward_ok}, "
                  f"CSV rel gap {csv_gap:.1e} <= {CSV_TOL:g}, PGM P5 payload exact {pgm_ok}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-rs"]))
