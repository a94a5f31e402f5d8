import io

import numpy as np
import pytest

from mpfest.errors import DimensionMismatch, EmptyInput, NonUniformTimes
from mpfest.linmodel import LinearSystem, modal_decompose
from mpfest.simgen import (
    BoxSampler,
    MeasurementSet,
    PointSampler,
    Trajectory,
    VertexSampler,
    add_noise,
    analytic_response,
    exact_amplitude_set,
    generate_scenarios,
    hyperrectangle_vertices,
    integrate_response,
    load_measurement_set,
    manifest_dict,
    modal_amplitudes_exact,
    parallelotope_vertices,
    read_trajectory_csv,
    uniform_times,
    write_trajectory_csv,
)

from _systems import osc_system


@pytest.fixture
def system():
    return LinearSystem(osc_system([0.7, 1.3], [0.05, 0.08], np.random.default_rng(0)))


class TestTrajectories:
    def test_analytic_matches_expm(self, system):
        from scipy.linalg import expm

        dec = modal_decompose(system)
        x0 = np.array([1.0, -0.5, 0.2, 0.3])
        tr = analytic_response(dec, x0, uniform_times(2.0, 0.01))
        np.testing.assert_allclose(tr.states[0], x0, atol=1e-14)
        np.testing.assert_allclose(tr.states[-1], expm(system.A * 2.0) @ x0, atol=1e-10)

    def test_integration_agrees_with_analytic(self, system):
        x0 = np.array([1.0, 0.0, 0.0, 0.0])
        dec = modal_decompose(system)
        ref = analytic_response(dec, x0, uniform_times(3.0, 0.01))
        num = integrate_response(system, x0, 0.01, ref.times.shape[0])
        np.testing.assert_allclose(num.states, ref.states, atol=1e-7)

    def test_exact_amplitudes_sum_to_initial_state(self, system):
        dec = modal_decompose(system)
        x0 = np.array([0.3, 1.0, -2.0, 0.5])
        np.testing.assert_allclose(modal_amplitudes_exact(dec, x0).sum(axis=1).real, x0, atol=1e-12)
        amp = exact_amplitude_set(dec, [x0, -x0])
        assert amp.segments == 2

    def test_rejects_non_uniform(self):
        with pytest.raises(NonUniformTimes):
            Trajectory(np.array([0.0, 0.1, 0.25]), np.zeros((3, 1)))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            Trajectory(np.arange(3.0), np.zeros((4, 2)))


class TestSamplers:
    def test_box_vertices_are_mirrored(self):
        V = hyperrectangle_vertices([1.0, 2.0, 3.0])
        assert V.shape == (8, 3)
        np.testing.assert_array_equal(V + V[::-1], 0)

    def test_parallelotope_vertices(self):
        E = np.array([[1.0, 0.5], [0.0, 2.0]])
        V = parallelotope_vertices(E)
        np.testing.assert_allclose(V[1] - V[0], E[:, 1])
        np.testing.assert_allclose(V[2] - V[0], E[:, 0])
        np.testing.assert_allclose(V + V[::-1], 0)

    def test_vertex_sampler_jitter(self):
        s = VertexSampler(np.eye(3), jitter=0.01)
        V = s(3, None, np.random.default_rng(0))
        assert np.max(np.abs(V - parallelotope_vertices(np.eye(3)))) <= 0.01 * 0.5
        with pytest.raises(ValueError):
            s(3, 9, np.random.default_rng(0))

    def test_box_and_points(self):
        X = BoxSampler(2.0)(4, 10, np.random.default_rng(0))
        assert X.shape == (10, 4) and np.all(np.abs(X) <= 2)
        P = PointSampler([[1, 2], [3, 4]])
        assert P(2, None, None).shape == (2, 2)


class TestGenerate:
    def test_deterministic(self, system):
        a = generate_scenarios(system, BoxSampler(), 3, 1.0, seed=5, noise_sigma=0.01)
        b = generate_scenarios(system, BoxSampler(), 3, 1.0, seed=5, noise_sigma=0.01)
        for ta, tb in zip(a, b):
            np.testing.assert_array_equal(ta.states, tb.states)

    def test_default_dt_resolves_fastest_mode(self, system):
        ms = generate_scenarios(system, VertexSampler(np.eye(4)), 2, 1.0)
        f_max = np.max(modal_decompose(system).frequencies)
        assert ms.dt <= 1 / (50 * f_max)

    def test_observed_subset(self, system):
        ms = generate_scenarios(system, VertexSampler(np.eye(4)), 2, 1.0, observed=["x1", 3])
        assert ms.labels == ("x1", "x4") and ms.n == 2

    def test_per_state_noise(self, system):
        tr = generate_scenarios(system, VertexSampler(np.eye(4)), 1, 1.0).trajectories[0]
        noisy = add_noise(tr, np.array([0.0, 0.0, 0.0, 0.1]), 3)
        np.testing.assert_array_equal(noisy.states[:, :3], tr.states[:, :3])
        assert np.std(noisy.states[:, 3] - tr.states[:, 3]) > 0.05
        assert add_noise(tr, 0.0, 0) is tr

    def test_empty(self, system):
        with pytest.raises(EmptyInput):
            generate_scenarios(system, np.zeros((0, 4)), None, 1.0)

    def test_map_and_select(self, system):
        ms = generate_scenarios(system, VertexSampler(np.eye(4)), 2, 0.5)
        H = 2 * np.eye(4)
        np.testing.assert_allclose(ms.map_states(H).trajectories[1].states,
                                   2 * ms.trajectories[1].states)
        sub = ms.select(["x2", "x3"])
        np.testing.assert_array_equal(sub.trajectories[0].states, ms.trajectories[0].states[:, 1:3])


class TestFiles:
    def test_csv_roundtrip_is_exact(self, system, tmp_path):
        ms = generate_scenarios(system, BoxSampler(), 2, 0.5, seed=1)
        paths = []
        for tr in ms:
            p = tmp_path / f"{tr.scenario_id}.csv"
            write_trajectory_csv(tr, p, ms.labels)
            paths.append(p.name)
        (tmp_path / "manifest.json").write_text(
            __import__("json").dumps(manifest_dict(ms, paths)))
        back = load_measurement_set(tmp_path / "manifest.json")
        assert back.labels == ms.labels and back.dt == ms.dt
        for a, b in zip(ms, back):
            np.testing.assert_array_equal(a.states, b.states)

    def test_stream_and_bad_header(self, system, tmp_path):
        tr = generate_scenarios(system, BoxSampler(), 1, 0.1).trajectories[0]
        buf = io.StringIO()
        write_trajectory_csv(tr, buf, ("a", "b", "c", "d"))
        assert buf.getvalue().startswith("t,a,b,c,d\n")
        bad = tmp_path / "bad.csv"
        bad.write_text("time,a\n0,1\n")
        with pytest.raises(ValueError):
            read_trajectory_csv(bad)

    def test_measurement_set_validation(self):
        t = np.arange(3) * 0.1
        with pytest.raises(DimensionMismatch):
            MeasurementSet((Trajectory(t, np.zeros((3, 2))),), ("a",), 0.1)
        with pytest.raises(EmptyInput):
            MeasurementSet((), ("a",), 0.1)
