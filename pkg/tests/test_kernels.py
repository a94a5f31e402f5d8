import os
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from mpfest import kernels
from mpfest._accel import py_func
from mpfest.simgen import rk4_matrix
from mpfest.symmetry import KDTree


class TestParity:
    def test_propagate(self):
        rng = np.random.default_rng(0)
        A = rng.normal(size=(5, 5)) - 3 * np.eye(5)
        M = rk4_matrix(A, 0.01)
        x0 = rng.normal(size=5)
        a, na = kernels.propagate(M, x0, 500)
        b, nb = kernels.propagate_numpy(M, x0, 500)
        assert na == nb == 500
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)

    def test_propagate_blowup(self):
        M = 2.0 * np.eye(2)
        a, na = kernels.propagate(M, np.ones(2), 100, blowup=1e3)
        b, nb = kernels.propagate_numpy(M, np.ones(2), 100, blowup=1e3)
        assert na == nb == 10
        np.testing.assert_array_equal(a, b)

    def test_nearest_tree_vs_scan(self):
        rng = np.random.default_rng(1)
        P = np.round(rng.normal(size=(2000, 3)), 1)
        Q = np.round(rng.normal(size=(300, 3)), 1)
        allowed = rng.random(2000) > 0.2
        excl = rng.integers(-1, 2000, 300)
        rank = rng.permutation(2000).astype(np.int64)
        tree = KDTree(P)
        a = kernels.kd_nearest_batch(tree, Q, allowed, excl, rank)
        b = kernels.nearest_numpy(P, Q, allowed, excl, rank)
        c = kernels.nearest_ckdtree(tree.ckdtree(), P, Q, allowed, excl, rank)
        for other in (b, c):
            np.testing.assert_array_equal(a[0], other[0])
            np.testing.assert_allclose(a[1], other[1], rtol=1e-12)

    def test_scipy_tree_with_heavy_masking(self):
        rng = np.random.default_rng(3)
        P = rng.normal(size=(500, 2))
        Q = rng.normal(size=(50, 2))
        allowed = np.zeros(500, bool)
        allowed[rng.choice(500, 3, replace=False)] = True
        excl = np.full(50, -1, np.int64)
        rank = np.arange(500, dtype=np.int64)
        a = kernels.nearest_numpy(P, Q, allowed, excl, rank)
        c = kernels.nearest_ckdtree(KDTree(P).ckdtree(), P, Q, allowed, excl, rank)
        np.testing.assert_array_equal(a[0], c[0])
        none = kernels.nearest_ckdtree(KDTree(P).ckdtree(), P, Q, np.zeros(500, bool), excl, rank)
        assert np.all(none[0] == -1)

    def test_interpreted_kernel_agrees(self):
        rng = np.random.default_rng(2)
        M = rk4_matrix(-np.eye(3), 0.1)
        x0 = rng.normal(size=3)
        a, _ = py_func(kernels._propagate_jit)(M, x0, 50, 1e12)
        b, _ = kernels.propagate_numpy(M, x0, 50)
        np.testing.assert_allclose(a, b, rtol=1e-13)

    def test_coherence(self):
        S = np.array([[1.0, 2.0, 0.0], [0.0, 0.1, 1.0], [1.0, 2.0, 0.0]])
        g, i, j = kernels.max_coherence(S)
        assert (i, j) == (0, 1)
        assert g == pytest.approx(4 / np.sqrt(2 * 8.01), rel=1e-12)


SCRIPT = textwrap.dedent("""
    import numpy as np
    from mpfest import kernels
    from mpfest.estimator import EstimatorConfig, estimate_mpf_full
    from mpfest.linmodel import LinearSystem
    from mpfest.simgen import VertexSampler, generate_scenarios
    A = np.array([[-0.2, 4.0], [-4.0, -0.2]])
    ms = generate_scenarios(LinearSystem(A), VertexSampler(np.array([[1.0, 0.3], [0.1, 2.0]])),
                            None, 5)
    rep = estimate_mpf_full(ms, EstimatorConfig(diagnostics=False))
    print(kernels.HAVE_NUMBA, repr(rep.normalized.tolist()))
""")


class TestFallback:
    def _run(self, disable):
        env = dict(os.environ)
        env.pop("MPFEST_DISABLE_NUMBA", None)
        if disable:
            env["MPFEST_DISABLE_NUMBA"] = "1"
        out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True,
                             text=True, check=True)
        flag, values = out.stdout.strip().split(" ", 1)
        return flag == "True", np.array(eval(values))

    def test_disabled_pipeline_matches(self):
        off_flag, off = self._run(True)
        assert not off_flag
        on_flag, on = self._run(False)
        if not on_flag:
            pytest.skip("numba not installed")
        np.testing.assert_allclose(off, on, rtol=1e-10)
