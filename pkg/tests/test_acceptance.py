"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines as they complete. The imbalanced-blob ablation (criteria 5 and 7)
shares one module-scoped run.
"""

import time

import numpy as np
import pytest

import oracles
import reference_rf
from dsna.approx import (
    Cluster,
    dsna_predict,
    fit_affine_hull,
    hull_project,
    solve_sparse_approx,
)
from dsna.core import CLASSIFICATION, REGRESSION, Dataset, DsnaConfig, ForestConfig
from dsna.forest import baseline_predict, train_forest
from dsna.harness import (
    SyntheticSpec,
    gen_imbalanced_gaussians,
    gen_imbalanced_regression,
    run_ablation,
)
from dsna.model_io import FORMAT_VERSION, ModelFile, load_model, save_model
from dsna.solvers import (
    fit_weighted_svm,
    fit_weighted_svr,
    svm_objective_and_grad,
    svr_objective_and_grad,
)

BENCH_SPEC = SyntheticSpec(
    task=CLASSIFICATION, sample_count=2100, imbalance_ratio=(1, 20), overlap=2.0, seed=0
)
BENCH_FOREST = ForestConfig(seed=0, min_gain=0.004)
BENCH_DSNA = DsnaConfig()
BENCH_SEEDS = (0, 1, 2, 3, 4)


def _report(name, ok, detail=""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def blob_ablation():
    dataset = gen_imbalanced_gaussians(BENCH_SPEC)
    start = time.perf_counter()
    report = run_ablation(dataset, BENCH_FOREST, BENCH_DSNA, seeds=BENCH_SEEDS)
    return report, time.perf_counter() - start


def test_criterion_1_solver_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(4242)
    svm_problems, svr_problems = [], []
    for _ in range(100):
        n = int(rng.integers(4, 51))
        d = int(rng.integers(1, 11))
        X = rng.normal(size=(n, d))
        z = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        if np.all(z == z[0]):
            z[0] = -z[0]
        w = rng.choice([0.5, 1.0, 2.0, 9.0], size=n)
        C = float(rng.choice([0.1, 1.0, 10.0]))
        svm_problems.append((X, z, w, C))
        y = rng.normal(size=n) * 2.0
        margin = float(rng.choice([0.0, 0.1, 0.5]))
        svr_problems.append((X, y, w, C, margin))

    svm_oracle = oracles.batch_gd_svm(svm_problems, iters=60000)
    svr_oracle = oracles.batch_gd_svr(svr_problems, iters=60000)
    worst = 0.0
    for (X, z, w, C), ref in zip(svm_problems, svm_oracle):
        _, diag = fit_weighted_svm(X, z, w, C)
        worst = max(worst, abs(diag.objective - ref) / (1.0 + abs(ref)))
    for (X, y, w, C, margin), ref in zip(svr_problems, svr_oracle):
        _, diag = fit_weighted_svr(X, y, w, C, margin)
        worst = max(worst, abs(diag.objective - ref) / (1.0 + abs(ref)))

    worst_grad = 0.0
    for k in range(100):
        X, z, w, C = svm_problems[k]
        point = rng.normal(size=X.shape[1] + 1)
        if k % 2 == 0:
            _, grad = svm_objective_and_grad(point, X, z, w, C)
            fd = oracles.central_difference(
                lambda t: oracles.svm_objective(t, X, z, w, C), point
            )
        else:
            Xr, y, wr, Cr, margin = svr_problems[k]
            point = rng.normal(size=Xr.shape[1] + 1)
            _, grad = svr_objective_and_grad(point, Xr, y, wr, Cr, margin)
            fd = oracles.central_difference(
                lambda t: oracles.svr_objective(t, Xr, y, wr, Cr, margin), point
            )
        worst_grad = max(worst_grad, np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-8))
    elapsed = time.perf_counter() - start
    _report(
        "criterion 1: solver oracle equivalence",
        worst <= 1e-6 and worst_grad < 1e-4 and elapsed < 30.0,
        f"rel obj gap {worst:.2e}, grad rel err {worst_grad:.2e}, {elapsed:.1f}s",
    )


def test_criterion_2_alm_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(777)
    worst = 0.0
    monotone = True
    for trial in range(100):
        L = rng.normal(size=(10, 20))
        q = rng.normal(size=10)
        prior = np.abs(rng.normal(size=20))
        prior /= prior.sum()
        l1 = [0.01, 0.1, 1.0][trial % 3]
        pl1 = [0.01, 0.1, 1.0][(trial // 3) % 3]
        alpha, _, trace, _ = solve_sparse_approx(q, L, prior, l1, pl1)
        ref = oracles.cvxpy_sparse_approx(q, L, prior, l1, pl1)
        worst = max(worst, float(np.max(np.abs(alpha - ref))))
        monotone = monotone and bool(np.all(np.diff(np.array(trace)) <= 1e-10))
    elapsed = time.perf_counter() - start
    _report(
        "criterion 2: ALM oracle equivalence",
        worst <= 1e-3 and monotone and elapsed < 60.0,
        f"Linf {worst:.2e}, monotone {monotone}, {elapsed:.1f}s",
    )


def test_criterion_3_hull_invariants():
    rng = np.random.default_rng(31)
    worst_ortho = 0.0
    worst_member = 0.0
    residual_ok = True
    for _ in range(1000):
        m = int(rng.integers(1, 26))
        d = int(rng.integers(1, 13))
        rows = rng.normal(size=(m, d)) * rng.uniform(0.5, 3.0)
        cluster = Cluster(
            member_indices=np.arange(m), features=rows.T.copy(), labels=np.zeros(m, dtype=np.int64)
        )
        hull = fit_affine_hull(cluster)
        if hull.rank:
            gram = hull.basis.T @ hull.basis
            worst_ortho = max(worst_ortho, float(np.max(np.abs(gram - np.eye(hull.rank)))))
        for col in rows:
            _, resid = hull_project(col, hull)
            worst_member = max(worst_member, resid)
        q = rng.normal(size=d) * 2.0
        _, resid = hull_project(q, hull)
        member_min = float(np.linalg.norm(rows - q, axis=1).min())
        residual_ok = residual_ok and resid <= member_min + 1e-10
    _report(
        "criterion 3: hull invariants",
        worst_ortho < 1e-10 and worst_member < 1e-8 and residual_ok,
        f"ortho {worst_ortho:.2e}, member resid {worst_member:.2e}, bound {residual_ok}",
    )


def test_criterion_4_outer_convergence():
    dataset = gen_imbalanced_gaussians(BENCH_SPEC)
    train = Dataset(dataset.features[:1470], dataset.labels[:1470], CLASSIFICATION)
    forest = train_forest(train, BENCH_FOREST)
    rng = np.random.default_rng(44)
    minority = dataset.features[dataset.labels == 0]
    majority = dataset.features[dataset.labels == 1]
    queries = np.vstack([
        minority[rng.choice(minority.shape[0], 100, replace=True)],
        majority[rng.choice(majority.shape[0], 100, replace=False)],
    ])
    solutions = [dsna_predict(forest, q, BENCH_DSNA) for q in queries]
    fast = float(np.mean([s.outer_converged and s.outer_iterations <= 10 for s in solutions]))
    terminated = all(s.outer_iterations <= 50 for s in solutions)
    _report(
        "criterion 4: convergence within 10 outer iterations",
        fast >= 0.90 and terminated,
        f"{fast * 100:.1f}% converged in <=10 iters over {len(queries)} queries; "
        f"all terminated by T=50: {terminated}",
    )


def test_criterion_5_imbalanced_benchmark(blob_ablation):
    report, elapsed = blob_ablation
    rf_rec = report.aggregates["rf"]["recall_0"][0]
    ds_rec = report.aggregates["cs-rf+dsna"]["recall_0"][0]
    rf_acc = report.aggregates["rf"]["accuracy"][0]
    ds_acc = report.aggregates["cs-rf+dsna"]["accuracy"][0]
    ordering = sum(
        report.metrics["rf"][s].g_mean
        <= report.metrics["cs-rf"][s].g_mean
        <= report.metrics["cs-rf+dsna"][s].g_mean
        for s in report.seeds
    )
    ok = (
        ds_rec - rf_rec >= 0.10
        and rf_acc - ds_acc <= 0.05
        and ordering >= 4
        and elapsed < 300.0
    )
    _report(
        "criterion 5: imbalanced classification benchmark",
        ok,
        f"recall gap {ds_rec - rf_rec:+.3f}, acc drop {rf_acc - ds_acc:+.3f}, "
        f"ordering {ordering}/5, {elapsed:.0f}s",
    )


def test_criterion_6_regression_extrapolation():
    spec = SyntheticSpec(
        task=REGRESSION,
        sample_count=400,
        seed=0,
        dimension=1,
        noise_sd=0.1,
        skew=8.0,
        hole=(5.0, 7.0),
    )
    dsna_maes, rf_maes = [], []
    for seed in range(5):
        dataset = gen_imbalanced_regression(spec, seed)
        cs = train_forest(dataset, ForestConfig(seed=seed, min_node_size=15))
        plain = train_forest(
            dataset, ForestConfig(seed=seed, min_node_size=15, cost_sensitive=False)
        )
        truths = np.linspace(5.2, 6.8, 9)
        queries = (truths / 2.0)[:, None]
        dsna_pred = np.array([dsna_predict(cs, q, BENCH_DSNA).label for q in queries])
        rf_pred = np.array([baseline_predict(plain, q) for q in queries])
        dsna_maes.append(float(np.abs(dsna_pred - truths).mean()))
        rf_maes.append(float(np.abs(rf_pred - truths).mean()))
    ratio = np.mean(dsna_maes) / np.mean(rf_maes)
    _report(
        "criterion 6: regression extrapolation into the label hole",
        ratio <= 0.7,
        f"dsna MAE {np.mean(dsna_maes):.3f} vs rf {np.mean(rf_maes):.3f} (ratio {ratio:.2f})",
    )


def test_criterion_7_ablation_distinctness(blob_ablation):
    report, _ = blob_ablation
    wins = sum(
        report.metrics["cs-rf+ah"][s].g_mean <= report.metrics["cs-rf+dsna"][s].g_mean
        for s in report.seeds
    )
    _report(
        "criterion 7: unsupervised hull arm does not beat the sparse arm",
        wins >= 4,
        f"ah <= dsna in {wins}/5 seeds",
    )


def test_criterion_8_determinism_and_persistence(tmp_path):
    spec = SyntheticSpec(
        task=CLASSIFICATION, sample_count=200, imbalance_ratio=(1, 4), overlap=2.5, seed=6
    )
    dataset = gen_imbalanced_gaussians(spec)
    cfg = ForestConfig(tree_count=6, seed=6)
    f1 = train_forest(dataset, cfg)
    f2 = train_forest(dataset, cfg)
    m1, m2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_model(ModelFile(FORMAT_VERSION, "label", f1, BENCH_DSNA), m1)
    save_model(ModelFile(FORMAT_VERSION, "label", f2, BENCH_DSNA), m2)
    bit_identical = m1.read_bytes() == m2.read_bytes()

    rng = np.random.default_rng(8)
    queries = rng.normal(size=(50, 2)) * 2.0
    loaded = load_model(m1)
    preds_match = all(
        dsna_predict(f1, q, BENCH_DSNA).label == dsna_predict(loaded.forest, q, BENCH_DSNA).label
        and np.array_equal(
            dsna_predict(f1, q, BENCH_DSNA).sparse_coeffs,
            dsna_predict(loaded.forest, q, BENCH_DSNA).sparse_coeffs,
        )
        for q in queries
    )

    small = gen_imbalanced_gaussians(
        SyntheticSpec(task=CLASSIFICATION, sample_count=120, imbalance_ratio=(1, 3), overlap=3.0, seed=1)
    )
    small_cfg = ForestConfig(tree_count=4, max_depth=5, seed=1)
    rep1 = run_ablation(small, small_cfg, BENCH_DSNA, seeds=[0])
    rep2 = run_ablation(small, small_cfg, BENCH_DSNA, seeds=[0])
    reports_match = all(
        rep1.metrics[m][0].as_dict() == rep2.metrics[m][0].as_dict() for m in rep1.methods
    ) and rep1.split_digests == rep2.split_digests
    _report(
        "criterion 8: determinism and persistence",
        bit_identical and preds_match and reports_match,
        f"model bytes {bit_identical}, 50-query round trip {preds_match}, reports {reports_match}",
    )


def test_criterion_9_baseline_reduction():
    specs = [
        SyntheticSpec(task=CLASSIFICATION, sample_count=150, imbalance_ratio=(1, 3), overlap=3.0, seed=0),
        SyntheticSpec(task=CLASSIFICATION, sample_count=180, imbalance_ratio=(1, 2, 3), overlap=3.0, seed=1),
        SyntheticSpec(task=REGRESSION, sample_count=150, seed=2, noise_sd=0.2),
    ]
    mismatches = 0
    total = 0
    for spec in specs:
        dataset = (
            gen_imbalanced_gaussians(spec)
            if spec.task == CLASSIFICATION
            else gen_imbalanced_regression(spec)
        )
        cfg = ForestConfig(
            tree_count=6, max_depth=6, min_node_size=8, seed=11, cost_sensitive=False
        )
        ours = train_forest(dataset, cfg)
        ref = reference_rf.train_reference_forest(
            dataset.features,
            dataset.labels,
            dataset.task,
            cfg.tree_count,
            cfg.max_depth,
            cfg.min_node_size,
            cfg.min_gain,
            cfg.svm_cost,
            cfg.svr_margin,
            cfg.candidate_factor,
            cfg.seed,
        )
        rng = np.random.default_rng(99)
        queries = dataset.features[rng.choice(dataset.n, 60, replace=False)]
        for q in queries:
            total += 1
            if baseline_predict(ours, q) != reference_rf.reference_predict(ref, q):
                mismatches += 1
    _report(
        "criterion 9: plain-forest reduction matches independent reference",
        mismatches == 0,
        f"{mismatches}/{total} mismatched predictions across 3 datasets",
    )
