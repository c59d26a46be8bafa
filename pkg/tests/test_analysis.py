import dataclasses
import json
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import L_FIVE, SIGMA, X0
from etconsensus.analysis import (
    AdversarialScenario,
    adversarial_miet_run,
    compute_metrics,
    count_inversions,
    h2_cost,
    lyapunov,
    lyapunov_rate,
    miet_report,
    sigma_sweep,
    wiener_band_check,
)
from etconsensus.dynamics import make_params
from etconsensus.graph import ring
from etconsensus.simulator import Mode, NoiseModel, SimConfig, run


def brute_phihat(xhat):
    return np.array([sum(-L_FIVE[i, j] * (xhat[i] - xhat[j]) ** 2 for j in range(5) if j != i) for i in range(5)])


def test_initial_lyapunov_values(graph5, params5, run5):
    lv = lyapunov(run5)
    assert lv.vp[0] == pytest.approx(6.8)
    assert lv.vc[0] == 0.0
    np.testing.assert_allclose(lv.v, lv.vp + lv.vc)
    slope = -np.sum((1 - SIGMA) * brute_phihat(X0))
    assert slope == pytest.approx(-19.9)
    assert lyapunov_rate(graph5, params5, X0) == pytest.approx(slope)


def test_lyapunov_slope_matches_finite_difference(run5):
    lv = lyapunov(run5)
    fd = (lv.v[1] - lv.v[0]) / (run5.t[1] - run5.t[0])
    assert fd == pytest.approx(-19.9, rel=1e-4)


def test_lyapunov_nonincreasing(run5):
    assert np.diff(lyapunov(run5).v).max() <= 1e-8


def test_h2_cost_constant_offset():
    c, T = 0.3, 4.0
    t = np.linspace(0.0, T, 41)
    x = np.zeros((t.size, 2))
    x[:, 0] += c
    fake = SimpleNamespace(t=t, x=x, x_bar0=0.0)
    assert h2_cost(fake) == pytest.approx(c * c * T)


def test_h2_cost_pair_closed_form():
    g = ring(2)
    tr = run(SimConfig(g, make_params(g, 0.5), [1.0, -1.0], 2.0))
    # 2 * integral_0^0.5 (1 - 2t)^2 dt
    assert h2_cost(tr) == pytest.approx(1.0 / 3.0, abs=1e-6)


def test_miet_report_has_no_violations(run5):
    rep = miet_report(run5)
    assert [m.agent for m in rep] == list(range(5))
    assert not any(m.violated for m in rep)
    assert all(m.margin >= 0 for m in rep)


def test_metrics_serialise(run5):
    m = compute_metrics(run5)
    d = json.loads(json.dumps(m.to_dict()))
    assert d["r_com"] == pytest.approx(len(run5.events) / 20.0)
    assert d["conservation_residual"] < 1e-9
    assert len(d["inter_event"]) == 5


@pytest.mark.parametrize("sigma, weights", [(0.9, (1.0, 1.0)), (0.4, (2.0,)), (0.3, (1.0, 2.0)), (0.6, (3.0,))])
def test_adversarial_run_hits_bound(sigma, weights):
    sc = AdversarialScenario(sigma, weights, e_T=0.5)
    assert adversarial_miet_run(sc) == pytest.approx(sigma / sum(weights), abs=1e-9)


def test_adversarial_run_independent_of_target_error():
    times = [adversarial_miet_run(AdversarialScenario(0.5, (1.0, 2.0), e_T=e)) for e in (-3.0, -0.01, 0.01, 1.0, 7.0)]
    np.testing.assert_allclose(times, 0.5 / 3.0, atol=1e-9)


def test_adversarial_from_graph(graph5, params5):
    sc = AdversarialScenario.for_agent(graph5, params5, 3, 1.0)
    assert sc.d == 3.0
    assert sc.miet == pytest.approx(0.1)
    np.testing.assert_allclose(sc.mu, -1.0 / (3.0 * 0.1))


def test_adversarial_rejects_zero_error():
    with pytest.raises(ValueError, match="e_T"):
        AdversarialScenario(0.5, (1.0,), e_T=0.0)


def test_sweep_is_deterministic_and_parallel_safe(config5):
    base = dataclasses.replace(config5, horizon=3.0)
    a = sigma_sweep(base, [0.2, 0.5, 0.8])
    b = sigma_sweep(base, [0.2, 0.5, 0.8], workers=2)
    assert a == b
    assert [r.sigma for r in a] == [0.2, 0.5, 0.8]


def test_sweep_rejects_empty_and_out_of_range(config5):
    with pytest.raises(ValueError, match="empty sigma grid"):
        sigma_sweep(config5, [])
    with pytest.raises(ValueError, match="outside"):
        sigma_sweep(config5, [0.5, 1.2])


def test_count_inversions():
    assert count_inversions([3, 2, 1], increasing=False) == 0
    assert count_inversions([3, 4, 1], increasing=False) == 1
    assert count_inversions([1, 2, 2, 1], increasing=True) == 1


def noisy_config(graph5, horizon=2.0, variance=0.1):
    return SimConfig(graph5, make_params(graph5, SIGMA), X0, horizon, mode=Mode.NOISY,
                     noise=NoiseModel(variance, 1e-3), sample_dt=1e-2)


def test_wiener_target_matches_monte_carlo(graph5):
    # mean of N independent Brownian endpoints, simulated directly
    T, v, n = 20.0, 0.1, 5
    rng = np.random.default_rng(2024)
    ends = rng.normal(0.0, np.sqrt(v * T), size=(200_000, n)).mean(axis=1)
    assert ends.var() == pytest.approx(0.4, rel=0.02)
    chk = wiener_band_check(noisy_config(graph5, horizon=T), n_seeds=30)
    assert chk.target_variance == pytest.approx(0.4)
    assert chk.expected_mean == pytest.approx(0.8)


def test_wiener_check_short_horizon(graph5):
    chk = wiener_band_check(noisy_config(graph5), n_seeds=40)
    assert chk.passed
    assert chk.min_gap_margin >= 0.0


def test_wiener_check_argument_errors(graph5, config5):
    with pytest.raises(ValueError, match="at least 30"):
        wiener_band_check(noisy_config(graph5), n_seeds=10)
    with pytest.raises(ValueError, match="noisy"):
        wiener_band_check(config5, n_seeds=30)
