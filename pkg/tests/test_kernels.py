import json
import os
import subprocess
import sys

import numpy as np
import pytest

from gaussdrift import _kernels
from gaussdrift.experiment import cat_component
from gaussdrift.phasespace import HBAR, hs_inner, prepare_batch

needs_numba = pytest.mark.skipif(not _kernels.NUMBA_ENABLED, reason="numba disabled")


def _ops(n, seed=0):
    rng = np.random.default_rng(seed)
    base = cat_component(8.0)
    return [base.replace(x_alpha=base.x_alpha + rng.normal(0, 0.5, 6),
                         x_beta=base.x_beta + rng.normal(0, 0.5, 6),
                         sigma=base.sigma + 0.05j * np.diag(rng.uniform(-1, 1, 6)),
                         phase=rng.uniform(0, 6), log_amp=rng.uniform(-1, 0))
            for _ in range(n)]


def test_numpy_hs_matrix_matches_pairwise_products():
    ops = _ops(5)
    H = _kernels.hs_matrix(*prepare_batch(ops), 3, HBAR, use_numba=False)
    for i, a in enumerate(ops):
        for j, b in enumerate(ops):
            assert H[i, j] == pytest.approx(hs_inner(a, b), rel=1e-11, abs=1e-14)


@needs_numba
def test_numba_hs_matrix_matches_numpy():
    args = prepare_batch(_ops(40, seed=1)) + (3, HBAR)
    a = _kernels.hs_matrix(*args, use_numba=False)
    b = _kernels.hs_matrix(*args, use_numba=True)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-15)


def test_state_length():
    assert _kernels.state_length(12, False) == 182
    assert _kernels.state_length(12, True) == 182 + 24


_SCRIPT = """
import json, numpy as np
from gaussdrift import _kernels
from gaussdrift.experiment import TrajectorySettings, cat_component, run_ensemble
r = run_ensemble(cat_component(10.0), TrajectorySettings(), 2.0, 9, 3, 5)
print(json.dumps({"numba": _kernels.NUMBA_ENABLED, "values": r.series.values.tolist()}))
"""


def _run_child(disable):
    env = dict(os.environ, GAUSSDRIFT_DISABLE_NUMBA="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", _SCRIPT], env=env, capture_output=True, text=True,
                         timeout=600)
    assert res.returncode == 0, res.stderr
    return json.loads(res.stdout.strip().splitlines()[-1])


@needs_numba
def test_environment_flag_selects_numpy_path_with_same_results():
    slow = _run_child(True)
    fast = _run_child(False)
    assert slow["numba"] is False and fast["numba"] is True
    # different arithmetic order, same tolerance-controlled answer
    assert np.allclose(slow["values"], fast["values"], rtol=1e-6, atol=1e-8)
