import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import SIGMA, X0
from etconsensus import _kernels
from etconsensus.graph import five_agent_digraph, ring
from etconsensus.scenario import bundled_scenario
from etconsensus.simulator import run

needs_numba = pytest.mark.skipif(_kernels.euler_events_numba is None, reason="numba not installed")


def five_agent_args(horizon=1.0, dt=1e-5):
    g = five_agent_digraph()
    src, dst, w = g.edge_arrays()
    return (X0.copy(), X0.copy(), np.zeros(5), src.astype(np.int64), dst.astype(np.int64), w, SIGMA.copy(),
            horizon, dt, 1e-12, 100_000, 2**62)


def test_euler_pair_event_near_half():
    g = ring(2)
    src, dst, w = g.edge_arrays()
    t, a, count = _kernels.euler_events([1.0, -1.0], src, dst, w, [0.5, 0.5], 1.0, 1e-6, 1e-12)
    assert count == 2
    np.testing.assert_allclose(t, 0.5, atol=1e-5)
    assert sorted(a.tolist()) == [0, 1]


def test_euler_max_groups_stops_early():
    args = list(five_agent_args())
    args[-1] = 1
    t, a, count = _kernels.euler_events_numpy(*args)
    assert count >= 1
    assert np.all(t[:count] == t[0])


@needs_numba
def test_euler_backends_agree():
    args = five_agent_args()
    t1, a1, c1 = _kernels.euler_events_numba(*args)
    t2, a2, c2 = _kernels.euler_events_numpy(*args)
    assert c1 == c2
    for i in range(5):
        np.testing.assert_allclose(np.sort(t1[:c1][a1[:c1] == i]), np.sort(t2[:c2][a2[:c2] == i]), atol=1e-9)


@needs_numba
def test_sampler_backends_agree(run5):
    s = run5.segments
    ts = np.linspace(0.0, 20.0, 5001)
    args = (s.t, s.x, s.xhat, s.chi, s.timer, s.zhat, s.rate, ts)
    for u, v in zip(_kernels.sample_segments_numba(*args), _kernels.sample_segments_numpy(*args)):
        np.testing.assert_allclose(u, v, rtol=0, atol=1e-12)


def test_sampler_is_post_jump_at_event_instants(run5):
    ev = run5.events[0]
    x, xhat, chi, timer = run5.state_at([ev.t])
    assert xhat[0, ev.agent] == ev.post[1]
    assert timer[0, ev.agent] == 0.0


def test_env_flag_selects_numpy_backend():
    code = "from etconsensus import _kernels; print(_kernels.USE_NUMBA)"
    env = dict(os.environ, ETCONSENSUS_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"


def test_numpy_backend_reproduces_run(tmp_path):
    code = (
        "import numpy as np, sys\n"
        "from etconsensus.scenario import bundled_scenario\n"
        "from etconsensus.simulator import run\n"
        "np.save(sys.argv[1], run(bundled_scenario('paper_fig1').config).x)\n"
    )
    path = tmp_path / "x.npy"
    env = dict(os.environ, ETCONSENSUS_DISABLE_NUMBA="1")
    subprocess.run([sys.executable, "-c", code, str(path)], env=env, check=True)
    ref = run(bundled_scenario("paper_fig1").config).x
    np.testing.assert_allclose(np.load(path), ref, rtol=0, atol=1e-12)
