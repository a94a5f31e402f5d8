import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mpfest.errors import ConfigError, DisconnectedGroups, NoValidSegments, PartialObservability
from mpfest.estimator import (
    EstimatorConfig,
    PFReport,
    back_transform,
    compute_epf,
    estimate,
    estimate_mpf_blackbox,
    estimate_mpf_full,
    estimate_mpf_subspace,
    estimate_shapes,
    normalize_columns,
)
from mpfest.linmodel import LinearSystem, modal_decompose, participation_matrix
from mpfest.simgen import VertexSampler, exact_amplitude_set, generate_scenarios, hyperrectangle_vertices

from _systems import osc_system, random_stable, rel_error, swing


@pytest.fixture(scope="module")
def two_mode():
    rng = np.random.default_rng(11)
    sys_ = LinearSystem(osc_system([0.6, 1.1], [0.05, 0.07], rng))
    M = np.eye(4) + 0.3 * rng.normal(size=(4, 4))
    ms = generate_scenarios(sys_, VertexSampler(M), None, 8)
    return sys_, modal_decompose(sys_), ms


class TestEPF:
    def test_exclusion_floor(self):
        dec = modal_decompose(LinearSystem(random_stable(3, np.random.default_rng(0))))
        X0 = np.array([[1.0, 0.0, 2.0], [-1.0, 1.0, -2.0], [1.0, -1.0, 0.5]])
        epf = compute_epf(exact_amplitude_set(dec, X0))
        assert list(epf.L[:, 0]) == [3, 2, 3]
        zero = compute_epf(exact_amplitude_set(dec, X0 * [1, 0, 1]))
        assert np.all(np.isnan(zero.values[1])) and np.all(zero.L[1] == 0)
        with pytest.raises(NoValidSegments):
            zero.entry(1, 0)
        assert zero.entry(0, 0) == zero.values[0, 0]

    def test_dispersion_zero_when_symmetric(self):
        dec = modal_decompose(LinearSystem(random_stable(3, np.random.default_rng(1))))
        epf = compute_epf(exact_amplitude_set(dec, hyperrectangle_vertices([1, 2, 3])))
        np.testing.assert_allclose(epf.values, participation_matrix(dec).values, atol=1e-12)
        assert np.all(epf.dispersion >= 0)

    def test_mode_subset(self):
        dec = modal_decompose(LinearSystem(random_stable(3, np.random.default_rng(2))))
        amp = exact_amplitude_set(dec, hyperrectangle_vertices([1, 1, 1]))
        sub = compute_epf(amp, modes=[2])
        np.testing.assert_allclose(sub.values[:, 0], compute_epf(amp).values[:, 2])


class TestBackTransform:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 6), st.integers(0, 10_000), st.complex_numbers(min_magnitude=0.1, max_magnitude=10))
    def test_recovers_x_space_pf(self, n, seed, c):
        rng = np.random.default_rng(seed)
        dec = modal_decompose(LinearSystem(random_stable(n, rng)))
        H = np.eye(n) + 0.5 * rng.normal(size=(n, n))
        if np.linalg.cond(H) > 1e4:
            return
        z = dec.transformed(H)
        P_z = participation_matrix(z).values
        P_x = participation_matrix(dec).values
        for i in range(n):
            # any complex scaling of the shape cancels
            p, excl = back_transform(P_z[:, i], c * z.right[:, i], H)
            assert excl == []
            np.testing.assert_allclose(p, P_x[:, i], atol=1e-8 * np.abs(P_x).max())

    def test_shape_floor(self):
        p, excl = back_transform(np.array([1.0, 0.5]), np.array([1.0, 1e-12]), np.eye(2))
        assert excl == [1] and p[1] == 0

    def test_shapes_from_amplitudes(self):
        rng = np.random.default_rng(3)
        phi = rng.normal(size=3) + 1j * rng.normal(size=3)
        B = (rng.normal(size=5) + 1j * rng.normal(size=5))[:, None, None] * phi[None, :, None]
        s = estimate_shapes(B)[:, 0]
        k = np.argmax(np.abs(s))
        assert s[k].imag == 0 and s[k].real > 0
        ratio = s / phi
        np.testing.assert_allclose(ratio, ratio[0], atol=1e-12)


class TestReport:
    def test_roundtrip(self, two_mode):
        _, _, ms = two_mode
        rep = estimate_mpf_full(ms, EstimatorConfig(order=4))
        doc = json.loads(rep.to_json())
        back = PFReport.from_dict(doc)
        np.testing.assert_allclose(back.mpf, rep.mpf)
        assert back.flags == rep.flags and back.labels == rep.labels
        lines = rep.to_csv().splitlines()
        assert lines[0].startswith("state,mode_hz,mpf_normalized")
        assert len(lines) == 1 + 4 * rep.n_modes
        table = rep.table(0)
        assert table[0][1] == 1.0 and [v for _, v in table] == sorted((v for _, v in table), reverse=True)
        assert rep.mode_index(0.6, tol=0.1) is not None and rep.mode_index(5.0) is None
        assert "conditioning" in rep.diagnostics

    def test_normalize_columns_nan(self):
        out = normalize_columns(np.array([[2.0, np.nan], [1.0, 3.0]]))
        np.testing.assert_allclose(out[:, 0], [1.0, 0.5])
        assert out[1, 1] == 1.0


class TestPipelines:
    def test_full_exact(self, two_mode):
        _, dec, ms = two_mode
        rep = estimate_mpf_full(ms, EstimatorConfig(diagnostics=False))
        pf = participation_matrix(dec)
        for m, f in enumerate(rep.frequencies):
            assert rel_error(pf.normalized(dec.mode_for_frequency(f)), rep.normalized[:, m]) < 1e-9
        assert rep.method == "full" and rep.epf_space == "z"
        assert rep.provenance["prony"]["order"] == 4

    def test_requested_mode_missing(self, two_mode):
        _, _, ms = two_mode
        with pytest.raises(PartialObservability):
            estimate_mpf_full(ms, EstimatorConfig(order=4, modes=(3.0,)))

    def test_blackbox_on_box_vertices(self):
        rng = np.random.default_rng(5)
        sys_ = LinearSystem(osc_system([0.6, 1.1], [0.05, 0.07], rng))
        ms = generate_scenarios(sys_, hyperrectangle_vertices([1, 2, 0.5, 1.5]), None, 8)
        rep = estimate_mpf_blackbox(ms, EstimatorConfig(order=4, diagnostics=False))
        np.testing.assert_allclose(rep.mpf, participation_matrix(modal_decompose(sys_)).values[:, [0, 2]],
                                   atol=1e-9)
        assert rep.epf_space == "x"

    def test_dispatch(self, two_mode):
        _, _, ms = two_mode
        rep = estimate(ms, EstimatorConfig(order=4, diagnostics=False), "partial", modes=[1.1])
        assert rep.n_modes == 1 and rep.method == "partial"
        with pytest.raises(ConfigError):
            estimate(ms, None, "magic")

    def test_config_validation(self):
        for kw in ({"order": 0}, {"lag": 0}, {"cond_bound": 0.5}, {"target_pairs": 0}):
            with pytest.raises(ConfigError):
                EstimatorConfig(**kw)


@pytest.fixture(scope="module")
def block():
    sys_ = LinearSystem(swing([0.6, 1.1], [0.05, 0.05], [[0, 0], [0, 0]]))
    M = np.diag([1, 3, 1, 5.0]) + 0.3 * np.random.default_rng(0).normal(size=(4, 4))
    return sys_, generate_scenarios(sys_, VertexSampler(M), None, 10)


class TestSubspace:
    def test_block_diagonal_exact(self, block):
        sys_, ms = block
        dec = modal_decompose(sys_)
        pf = participation_matrix(dec)
        rep = estimate_mpf_subspace(ms, [["x1", "x2"], [2, 3]], EstimatorConfig(order=4))
        for m, f in enumerate(rep.frequencies):
            assert rel_error(pf.normalized(dec.mode_for_frequency(f)), rep.normalized[:, m]) < 1e-6

    def test_stitch_options(self, block):
        _, ms = block
        cfg = EstimatorConfig(order=4, diagnostics=False)
        with pytest.raises(DisconnectedGroups):
            estimate_mpf_subspace(ms, [[0, 1], [2, 3]], cfg, stitch="shared_states")
        with pytest.raises(ConfigError):
            estimate_mpf_subspace(ms, [[0, 1], [2, 3]], cfg, stitch="glue")
        with pytest.raises(ConfigError):
            estimate_mpf_subspace(ms, [[0], [1, 2, 3]], cfg)

    def test_uncovered_states_flagged(self, block):
        _, ms = block
        rep = estimate_mpf_subspace(ms, [[0, 1]], EstimatorConfig(order=4, diagnostics=False))
        assert np.all(np.isnan(rep.mpf[2:]))
        assert "not_covered" in rep.flags[3][0]
