"""Acceptance suite: one test per release criterion, with stated tolerances.

Each test prints a single PASS line on success (run with -s or check the
-v listing); thresholds are hard assertions, not calibration knobs.
"""

import time

import numpy as np
import pytest

from fgll.benchmark import BenchmarkSettings, report_csv, report_json, run_benchmark
from fgll.factors import demand_head_factor
from fgll.fgsi import Interpolator
from fgll.hydraulics import (
    Scenario,
    diurnal_pattern,
    hydraulic_residuals,
    sample_sensors,
    simulate_scenario,
    steady_state,
)
from fgll.ingest import RunConfig
from fgll.network import sensor_layout, struct_matrices
from fgll.pipeline import (
    estimate_leak_free,
    localization_metric,
    localize,
    rank_nodes,
    rmse,
    select_candidates,
)
from fgll.synthetic import coverage_layout, grid_network, t_example

from test_factorgraph import dense_oracle, random_affine_factors
from test_factors import assert_jacobian_matches
from test_network import random_net

from fgll.factorgraph import FactorGraph


def _report(criterion, text):
    print(f"ACCEPTANCE {criterion}: {text} ... PASS")


def test_criterion_1_solver_matches_dense_oracle():
    """50 random affine graphs (<= 500 unknowns) match the dense WLS oracle
    to 1e-8 relative, in under 10 s total."""
    rng = np.random.default_rng(1001)
    tic = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        n_blocks = int(rng.integers(2, 12))
        factors, keys, dims = random_affine_factors(rng, n_blocks)
        assert sum(dims) <= 500
        graph = FactorGraph()
        for k, d in zip(keys, dims):
            graph.add_variable(k, d)
        for f in factors:
            graph.add_factor(f)
        init = {k: rng.standard_normal(d) for k, d in zip(keys, dims)}
        est = graph.optimize(init, cost_tolerance=1e-14)
        got = np.concatenate([est[k] for k in keys])
        expected = dense_oracle(factors, keys, dims)
        rel = np.max(np.abs(got - expected)) / max(1.0, np.max(np.abs(expected)))
        worst = max(worst, rel)
        assert rel < 1e-8
    elapsed = time.perf_counter() - tic
    assert elapsed < 10.0
    _report(1, f"solver vs dense oracle, worst rel err {worst:.2e}, {elapsed:.2f}s")


def test_criterion_2_demand_head_jacobian():
    """Analytic flow-coupling Jacobians match central finite differences to
    1e-5 relative on 20 random networks away from the smoothing seam."""
    rng = np.random.default_rng(1002)
    checked = 0
    while checked < 20:
        net = random_net(rng, int(rng.integers(3, 11)), extra_edges=int(rng.integers(0, 2)))
        st = struct_matrices(net)
        demands = rng.uniform(0.002, 0.02, size=net.junction_indices.size)
        state = steady_state(net, demands)
        if np.min(np.abs(net.incidence() @ state.h)) <= 1e-3:
            continue
        factor = demand_head_factor(0, st, net.incidence(), 1.0)
        assert_jacobian_matches(factor, [state.d, state.h], rtol=1e-5)
        checked += 1
    _report(2, "demand-head Jacobian vs central differences on 20 networks")


def test_criterion_3_hydraulic_consistency():
    """100 seeded random trees/looped nets (<= 50 nodes) all converge with
    mass-balance and head-loss residuals below 1e-8, in under 5 s."""
    rng = np.random.default_rng(1003)
    tic = time.perf_counter()
    worst_mass = worst_hw = 0.0
    for i in range(100):
        n = int(rng.integers(3, 51))
        extra = int(rng.integers(0, 4)) if i % 2 else 0  # alternate trees/loops
        net = random_net(rng, n, extra_edges=extra)
        demands = rng.uniform(0.0001, 0.003, size=net.junction_indices.size)
        state = steady_state(net, demands)  # raises on non-convergence
        mass, hw = hydraulic_residuals(net, state)
        worst_mass = max(worst_mass, mass)
        worst_hw = max(worst_hw, hw)
        assert mass < 1e-8
        assert hw < 1e-8
    elapsed = time.perf_counter() - tic
    assert elapsed < 5.0
    _report(
        3,
        f"100/100 steady states converged, residuals <= "
        f"({worst_mass:.1e} m3/s, {worst_hw:.1e} m), {elapsed:.2f}s",
    )


def test_criterion_4_interpolation_properties():
    """Constant recovery from a single sensor to 1e-10; sensed-value
    reproduction at mu_L=1e-8; normal-equation residual below 1e-9
    relative on networks up to 100 nodes."""
    rng = np.random.default_rng(1004)
    for _ in range(5):
        net = random_net(rng, int(rng.integers(20, 101)), extra_edges=5)
        st = struct_matrices(net)
        # single sensor: every entry recovers the reading
        single = sensor_layout(
            net, [int(rng.integers(0, net.n))], [], include_reservoirs=False
        )
        interp = Interpolator(st, single, mu_L=1.0)
        reading = float(rng.uniform(20, 80))
        h_hat = interp.interpolate(np.array([reading]))
        assert np.max(np.abs(h_hat - reading)) < 1e-10 * max(1.0, abs(reading))
        # partial layout: normal-equation residual and small-mu reproduction
        k = max(2, net.n // 5)
        sensed = [int(i) for i in rng.choice(net.n, size=k, replace=False)]
        layout = sensor_layout(net, sensed, [], include_reservoirs=False)
        h_s = rng.uniform(10, 90, size=k)
        interp = Interpolator(st, layout, mu_L=1.0)
        h_hat = interp.interpolate(h_s)
        assert interp.normal_residual(h_s, h_hat) < 1e-9 * np.max(np.abs(h_s))
        tight = Interpolator(st, layout, mu_L=1e-8)
        h_tight = tight.interpolate(h_s)
        assert (
            np.max(np.abs(layout.S_p @ h_tight - h_s)) < 1e-4 * np.max(np.abs(h_s))
        )
    _report(4, "interpolation constant-recovery, small-mu and residual bounds")


@pytest.fixture(scope="module")
def t_protocol_results():
    """Noiseless single-inlet protocol: 9 leak scenarios of 0.5 l/s on the
    9-junction fixture, localized against one shared leak-free window."""
    net, layout = t_example()
    cfg = RunConfig()
    T = cfg.window_T
    base = net.base_demands()[net.junction_indices]
    demands = diurnal_pattern(T, amplitude=0.25)[:, None] * base
    st = struct_matrices(net)
    interp = Interpolator(st, layout, cfg.mu_L)

    tic = time.perf_counter()
    free_states, _ = simulate_scenario(net, Scenario(demands=demands, seed=1))
    free_meas = sample_sensors(net, free_states, layout)
    reference = estimate_leak_free(
        net, layout, free_meas, cfg, struct=st, interp=interp
    )
    outcomes = []
    for leak_node in range(9):
        leak_states, _ = simulate_scenario(
            net,
            Scenario(
                demands=demands,
                leak_node=leak_node,
                leak_sizes=np.full(T, 0.0005),
                seed=2,
            ),
        )
        leak_meas = sample_sensors(net, leak_states, layout)
        result = localize(
            net, layout, leak_meas, reference, cfg, struct=st, interp=interp
        )
        truth = np.stack([s.h for s in leak_states])[1:]
        rmse_fgll = float(
            np.mean([rmse(truth[t], result.h[t]) for t in range(T - 1)])
        )
        h_interp = interp.interpolate(leak_meas.h_s)[1:]
        rmse_fgsi = float(
            np.mean([rmse(truth[t], h_interp[t]) for t in range(T - 1)])
        )
        outcomes.append((leak_node, result, rmse_fgll, rmse_fgsi))
    elapsed = time.perf_counter() - tic
    return net, outcomes, elapsed


def test_criterion_5_desk_scale_localization(t_protocol_results):
    """9-junction protocol: true node in the metric top 3 for >= 7/9
    scenarios, reservoir never a candidate, window RMSE within 15% of
    per-instant interpolation RMSE, all under 30 s."""
    net, outcomes, elapsed = t_protocol_results
    reservoir = int(net.reservoir_indices[0])
    top3 = 0
    for leak_node, result, rmse_fgll, rmse_fgsi in outcomes:
        ranking = rank_nodes(result.metric)
        if leak_node in ranking[:3]:
            top3 += 1
        assert reservoir not in result.candidates
        assert abs(rmse_fgll - rmse_fgsi) <= 0.15 * rmse_fgsi
    assert top3 >= 7, f"true leak in top 3 only {top3}/9 times"
    assert elapsed < 30.0
    _report(5, f"desk-scale localization {top3}/9 in top 3, {elapsed:.1f}s")


def test_criterion_6_comparative_localization():
    """Seeded 25-node grid with 30% sensor coverage and parameter noise:
    mean Avg-5 pipe distance of the factor-graph localizer does not
    exceed the interpolation + candidate-selection baseline."""
    tic = time.perf_counter()
    net = grid_network(5, 5, seed=0)
    layout = coverage_layout(net, 0.3, 0.3, seed=0)
    cfg = RunConfig()
    settings = BenchmarkSettings(
        n_scenarios=10,
        seed=0,
        leak_size=0.001,
        roughness_noise=0.01,
        diameter_noise=0.01,
        demand_noise=0.005,
    )
    report = run_benchmark(net, layout, cfg, settings)
    elapsed = time.perf_counter() - tic
    fgll = report.aggregates["fgll"]["avg5_pipes_mean"]
    baseline = report.aggregates["fgsi_lcsm"]["avg5_pipes_mean"]
    assert fgll <= baseline, f"fgll {fgll:.3f} vs baseline {baseline:.3f}"
    assert elapsed < 120.0
    _report(
        6,
        f"grid benchmark avg-5 pipes: fgll {fgll:.2f} <= baseline "
        f"{baseline:.2f}, {elapsed:.1f}s",
    )


def test_criterion_7_metric_invariants(t_protocol_results):
    """Metric lands in [0,1] with endpoints attained; candidate selection is
    invariant under positive affine rescaling; identical leak/leak-free
    input yields residuals below 1e-6 and no candidates."""
    net, outcomes, _ = t_protocol_results
    rng = np.random.default_rng(1007)
    for _, result, _, _ in outcomes:
        m = result.metric
        assert m.min() == 0.0 and m.max() == 1.0
        assert np.all((0.0 <= m) & (m <= 1.0))
    for _ in range(20):
        l0 = rng.standard_normal(15)
        metric = localization_metric(l0)
        assert np.argmax(metric) == np.argmin(l0)
        base, _ = select_candidates(metric)
        scaled, _ = select_candidates(4.2 * metric + 0.31)
        assert base == scaled
    # no-leak run: feed the leak-free window as its own leak window
    net, layout = t_example()
    cfg = RunConfig(window_T=6)
    base_d = net.base_demands()[net.junction_indices]
    demands = diurnal_pattern(6, amplitude=0.25)[:, None] * base_d
    states, _ = simulate_scenario(net, Scenario(demands=demands, seed=9))
    meas = sample_sensors(net, states, layout)
    reference = estimate_leak_free(net, layout, meas, cfg)
    result = localize(net, layout, meas, reference, cfg)
    assert np.max(np.abs(result.leak_states)) < 1e-6
    assert result.candidates == ()
    _report(7, "metric range, affine invariance and no-leak degeneracy")


def test_criterion_8_benchmark_determinism(tmp_path):
    """Running the benchmark twice with one seed produces byte-identical
    JSON and CSV reports."""
    net, layout = t_example()
    cfg = RunConfig(window_T=4)
    settings = BenchmarkSettings(n_scenarios=3, seed=11)
    first = run_benchmark(net, layout, cfg, settings)
    second = run_benchmark(net, layout, cfg, settings)
    assert report_json(first).encode() == report_json(second).encode()
    assert report_csv(first).encode() == report_csv(second).encode()
    # and through the CLI, including file round-trips
    from fgll.cli import main
    from importlib import resources

    net_path = str(resources.files("fgll").joinpath("data/networks/t_example.json"))
    args = [
        "benchmark", "--network", net_path, "--scenarios", "2",
        "--seed", "5", "--window", "4",
    ]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("report.json", "report.csv", "metrics.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (
            tmp_path / "b" / name
        ).read_bytes()
    _report(8, "benchmark reports byte-identical across reruns")
