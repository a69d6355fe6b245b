"""Acceptance suite: ten end-to-end correctness criteria.

Each test prints one line with its measured quantities; the pytest -v
status line per test is the pass/fail record for that criterion. The
Monte Carlo criteria (5, 6, 8) run at full replication counts and
dominate the suite's runtime.
"""

import itertools
import time

import numpy as np
import numpy.testing as npt
import pytest
import scipy.stats

import quantbreak.ivx
import quantbreak.qrsolve
from quantbreak.breaktests import _d_cols, known_break_wald, make_grid, sq_test
from quantbreak.ivx import IvxConfig, build_instruments
from quantbreak.limitsim import simulate_bb_sup, simulate_ou_wald_lur
from quantbreak.mcharness import (
    ExperimentConfig,
    emit_tables,
    innovation_preset,
    run_power,
    run_size,
)
from quantbreak.qrsolve import qr_fit
from quantbreak.tsgen import (
    BreakScenario,
    InnovationSpec,
    PersistenceSpec,
    gen_sample,
)

FAST_SIM = {"sim_grid_steps": 1000, "sim_reps": 10_000}


@pytest.fixture(scope="module")
def cache_dir(tmp_path_factory):
    return str(tmp_path_factory.mktemp("acceptance_cache"))


def _brute_force_objective(X, y, tau):
    """Exact check-loss minimum over all basic (vertex) solutions."""
    n, d = X.shape
    best = np.inf
    for comb in itertools.combinations(range(n), d):
        sub = X[list(comb)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        theta = np.linalg.solve(sub, y[list(comb)])
        u = y - X @ theta
        best = min(best, float(np.sum(u * (tau - (u < 0)))))
    return best


def _zero_slope_null(p):
    return BreakScenario(theta1=np.concatenate([[1.0], np.zeros(p)]))


def test_criterion_01_qr_solver_exactness():
    rng = np.random.default_rng(314159)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(500):
        d = int(rng.integers(1, 4))
        n = int(rng.integers(d + 2, 13))
        X = rng.standard_normal((n, d))
        y = rng.standard_normal(n)
        tau = float(rng.uniform(0.1, 0.9))
        fit = qr_fit(y, X, tau)
        gap = fit.objective - _brute_force_objective(X, y, tau)
        worst = max(worst, abs(gap))
        assert abs(gap) <= 1e-9
    elapsed = time.perf_counter() - start
    print(
        "criterion 1: worst objective gap %.2e over 500 instances, %.1fs"
        % (worst, elapsed)
    )
    assert elapsed < 60.0


def test_criterion_02_qr_equivariances():
    rng = np.random.default_rng(271828)
    worst = 0.0
    for _ in range(200):
        d = int(rng.integers(1, 6))
        n = int(rng.integers(max(3 * d, 12), 61))
        X = rng.standard_normal((n, d))
        y = rng.standard_normal(n)
        tau = float(rng.uniform(0.15, 0.85))
        theta = qr_fit(y, X, tau).theta

        a = float(rng.uniform(0.1, 10.0))
        scale_err = np.max(np.abs(qr_fit(a * y, X, tau).theta - a * theta))

        gamma = rng.standard_normal(d)
        shift_err = np.max(
            np.abs(qr_fit(y + X @ gamma, X, tau).theta - (theta + gamma))
        )

        flip_err = np.max(np.abs(qr_fit(-y, X, 1.0 - tau).theta + theta))

        worst = max(worst, scale_err, shift_err, flip_err)
        assert scale_err <= 1e-8
        assert shift_err <= 1e-8
        assert flip_err <= 1e-8
    print("criterion 2: worst equivariance error %.2e over 200 instances" % worst)


def test_criterion_03_ivx_recursion_matches_double_sum():
    rng = np.random.default_rng(141421)
    worst = 0.0
    for _ in range(100):
        p = int(rng.integers(1, 4))
        n = int(rng.integers(50, 501))
        x = np.cumsum(rng.standard_normal((n, p)), axis=0)
        config = IvxConfig(
            c_z=-rng.uniform(0.5, 5.0, size=p),
            gamma_z=float(rng.uniform(0.6, 0.95)),
        )
        z = build_instruments(x, config)
        r = 1.0 + config.c_z / float(n) ** config.gamma_z
        dx = np.diff(x, axis=0)
        oracle = np.zeros((n, p))
        for t in range(1, n):
            powers = r[None, :] ** np.arange(t)[::-1, None]
            oracle[t] = (powers * dx[:t]).sum(axis=0)
        scale = max(np.abs(oracle).max(), 1.0)
        worst = max(worst, np.abs(z - oracle).max() / scale)
        npt.assert_allclose(z, oracle, rtol=0.0, atol=1e-12 * scale)
    print("criterion 3: worst relative deviation %.2e over 100 paths" % worst)


def test_criterion_04_brownian_bridge_table():
    start = time.perf_counter()
    table = simulate_bb_sup(1, 0.15, grid_steps=2000, reps=100_000, seed=0)
    elapsed = time.perf_counter() - start
    oracle = scipy.stats.kstwobign.ppf([0.95, 0.99])
    err95 = table.quantiles[0.95] - oracle[0]
    err99 = table.quantiles[0.99] - oracle[1]
    print(
        "criterion 4: q95 %.4f (err %+.4f), q99 %.4f (err %+.4f), %.1fs"
        % (table.quantiles[0.95], err95, table.quantiles[0.99], err99, elapsed)
    )
    assert abs(err95) <= 0.01
    assert abs(err99) <= 0.015
    assert elapsed < 120.0


def test_criterion_05_known_break_wald_chi_square():
    p, n, reps = 3, 1000, 2000
    scenario = _zero_slope_null(p)
    persistence = PersistenceSpec(c=np.full(p, -1.0), gamma_x=0.75)
    innov = InnovationSpec(
        sigma_uu=1.0, rho=np.full(p, -0.25), sigma_vv=np.eye(p)
    )
    start = time.perf_counter()
    stats = np.empty(reps)
    for rep in range(reps):
        seed = np.random.SeedSequence([905, rep])
        sample = gen_sample(scenario, persistence, innov, n, seed)
        stat, df, _ = known_break_wald("IVZ", sample, 0.5, 0.5)
        assert df == p
        stats[rep] = stat
    elapsed = time.perf_counter() - start
    ks = scipy.stats.kstest(stats, scipy.stats.chi2(df=p).cdf).statistic
    rej = float(np.mean(stats > scipy.stats.chi2(df=p).ppf(0.95)))
    print(
        "criterion 5: KS distance %.4f, 5%% rejection %.4f, %.0fs"
        % (ks, rej, elapsed)
    )
    assert ks < 0.05
    assert elapsed < 900.0


def test_criterion_06_empirical_size():
    config = ExperimentConfig(
        n_list=[500],
        c_list=[(-1.0, -2.0, -5.0)],
        gamma_x_list=[0.5],
        tau_list=[0.5],
        tests=["SQ-IVZ", "SW-IVZ"],
        reps=1000,
        scenario=_zero_slope_null(3),
        innov=innovation_preset("exogenous", 3),
        master_seed=0,
    )
    start = time.perf_counter()
    report = run_size(config)
    elapsed = time.perf_counter() - start
    assert not report.failures
    rates = {key[-1]: cell.rejection_rate for key, cell in report.cells.items()}
    print(
        "criterion 6: SQ-IVZ %.4f, SW-IVZ %.4f at nominal 5%%, %.0fs"
        % (rates["SQ-IVZ"], rates["SW-IVZ"], elapsed)
    )
    for rate in rates.values():
        assert 0.025 <= rate <= 0.08
    assert elapsed < 1200.0


def test_criterion_07_sq_test_sparsity_free(cache_dir, monkeypatch):
    kinds = ("IVZ", "OLS", "IVX")
    fixtures = []
    for i in range(20):
        p = 1 + i % 3
        scenario = _zero_slope_null(p)
        persistence = PersistenceSpec(c=np.full(p, -2.0), gamma_x=0.75)
        innov = InnovationSpec(
            sigma_uu=1.0, rho=np.full(p, -0.5), sigma_vv=np.eye(p)
        )
        fixtures.append(
            (kinds[i % 3], gen_sample(scenario, persistence, innov, 200, 7000 + i))
        )

    def run_all():
        out = []
        for kind, sample in fixtures:
            grid = make_grid(sample.n, 0.15, _d_cols(kind, sample.p))
            out.append(
                sq_test(
                    kind, sample, 0.5, grid, persistence="mi",
                    cache_dir=cache_dir, **FAST_SIM,
                ).to_json()
            )
        return out

    baseline = run_all()
    original = quantbreak.qrsolve.estimate_sparsity

    def inflated(fit, design, diagnostics=None):
        return 10.0 * original(fit, design, diagnostics=diagnostics)

    monkeypatch.setattr(quantbreak.qrsolve, "estimate_sparsity", inflated)
    monkeypatch.setattr(quantbreak.ivx, "estimate_sparsity", inflated)
    perturbed = run_all()
    equal = [a == b for a, b in zip(baseline, perturbed)]
    print("criterion 7: %d/20 fixtures bitwise unchanged under fhat x10" % sum(equal))
    assert all(equal)


def test_criterion_08_monotone_power():
    base = dict(
        n_list=[250, 500, 1000],
        c_list=[-5.0],
        gamma_x_list=[0.25],
        tau_list=[0.5],
        tests=["SW-IVZ"],
        reps=500,
        innov=innovation_preset("exogenous", 1),
        master_seed=0,
    )
    shift = ExperimentConfig(
        scenario=BreakScenario(
            theta1=np.array([1.0, 0.0]),
            theta2=np.array([1.0, 0.5]),
            lambda0=0.5,
        ),
        **base,
    )
    null = ExperimentConfig(scenario=_zero_slope_null(1), **base)
    start = time.perf_counter()
    power_report = run_power(shift)
    null_report = run_size(null)
    elapsed = time.perf_counter() - start
    assert not power_report.failures and not null_report.failures

    def by_n(report):
        return {key[0]: cell.rejection_rate for key, cell in report.cells.items()}

    power, size = by_n(power_report), by_n(null_report)
    print(
        "criterion 8: power %s vs null %s over n=(250, 500, 1000), %.0fs"
        % (
            tuple(power[n] for n in (250, 500, 1000)),
            tuple(size[n] for n in (250, 500, 1000)),
            elapsed,
        )
    )
    assert power[250] < power[500] < power[1000]
    for n in (250, 500, 1000):
        assert power[n] > size[n]


def test_criterion_09_ou_wald_degenerates_to_andrews():
    start = time.perf_counter()
    table = simulate_ou_wald_lur(
        1, 0.15, c=np.array([-200.0]), grid_steps=2000, reps=50_000, seed=13
    )
    elapsed = time.perf_counter() - start
    andrews_q95 = 8.85
    rel = abs(table.quantiles[0.95] - andrews_q95) / andrews_q95
    print(
        "criterion 9: q95 %.4f vs Andrews %.2f, relative error %.4f, %.0fs"
        % (table.quantiles[0.95], andrews_q95, rel, elapsed)
    )
    assert rel < 0.05


def test_criterion_10_worker_count_determinism(cache_dir):
    size_config = ExperimentConfig(
        n_list=[120],
        c_list=[-1.0],
        gamma_x_list=[0.75],
        tau_list=[0.5],
        tests=["SQ-IVZ"],
        reps=6,
        scenario=_zero_slope_null(1),
        innov=innovation_preset("exogenous", 1),
        master_seed=42,
    )
    power_config = ExperimentConfig(
        n_list=[100],
        c_list=[-1.0],
        gamma_x_list=[1.0],
        tau_list=[0.5],
        tests=["SQ-IVZ"],
        reps=3,
        scenario=BreakScenario(
            theta1=np.array([1.0, 0.0]),
            theta2=np.array([1.0, 1.0]),
            lambda0=0.5,
        ),
        innov=innovation_preset("endogenous", 1),
        master_seed=43,
    )
    size_docs, power_docs = set(), set()
    for workers in (1, 4, 16):
        size_report = run_size(
            size_config, max_workers=workers, cache_dir=cache_dir, **FAST_SIM
        )
        size_docs.add(emit_tables(size_report, "JSON"))
        size_docs.add(emit_tables(size_report, "CSV"))
        # gamma_x = 1 routes to the wild bootstrap, so this sweep also
        # pins down the bootstrap path's seeding
        power_report = run_power(
            power_config, max_workers=workers, bootstrap_b=99,
            cache_dir=cache_dir, **FAST_SIM,
        )
        power_docs.add(emit_tables(power_report, "JSON"))
        power_docs.add(emit_tables(power_report, "CSV"))
    print(
        "criterion 10: %d distinct size documents, %d distinct power documents"
        " across 1/4/16 workers" % (len(size_docs) - 1, len(power_docs) - 1)
    )
    assert len(size_docs) == 2
    assert len(power_docs) == 2
