import numpy as np
import pytest

from inclusion_fwi.geometry import TRUE_INCLUSION, InclusionParams, default_model
from inclusion_fwi.mesh import MeshSpec, uniform_mesh
from inclusion_fwi.observation import (
    Acquisition, DataMatrix, NoiseInfo, ObservationConfigError, ObservationOperator, add_noise,
    default_acquisition, noise_sigma, observe, receiver_operator, with_frequency,
)
from inclusion_fwi.wavesolver import SolverConfig

FAST = SolverConfig(dt=2e-3)


def test_default_acquisition_layout():
    acq = default_acquisition()
    assert len(acq.emitters) == 51 and len(acq.receivers) == 52
    assert acq.n_times == 25
    assert np.allclose(acq.times, 0.1 * np.arange(1, 26))
    assert np.allclose(acq.receivers[:-1] - acq.emitters, -0.02)
    assert acq.stride(1e-3) == 100
    with pytest.raises(ObservationConfigError):
        acq.stride(3e-3)


def test_noise_sigma_values():
    assert noise_sigma(np.full((3, 4), -2.0)) == 2.0
    assert noise_sigma(np.array([[3.0, 4.0]])) == pytest.approx(np.sqrt(12.5))
    assert noise_sigma(np.zeros((2, 2))) == 0.0


def _data(seed=0):
    acq = default_acquisition()
    v = np.random.default_rng(seed).standard_normal((52, 25))
    return DataMatrix(v, acq)


def test_add_noise_zero_level_is_identity():
    d = _data()
    out, info = add_noise(d, 0.0, 3)
    assert np.array_equal(out.values, d.values) and info.sigma_noise == 0.0


def test_add_noise_variance_and_seeds():
    d = _data()
    out, info = add_noise(d, 10.0, 5)
    assert info.sigma_noise == pytest.approx(0.1 * noise_sigma(d))
    res = out.values - d.values
    # chi-square spread of a 1300-entry variance estimate is about 4%
    assert res.var() == pytest.approx(info.sigma_noise**2, rel=0.1)
    assert np.array_equal(add_noise(d, 10.0, 5)[0].values, out.values)
    assert not np.array_equal(add_noise(d, 10.0, 6)[0].values, out.values)


def test_csv_and_json_round_trip(tmp_path):
    d = _data()
    d.write_csv(tmp_path / "d.csv")
    header = (tmp_path / "d.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "x" and len(header) == 26
    back = DataMatrix.read_csv(tmp_path / "d.csv", d.acquisition)
    assert np.array_equal(back.values, d.values)
    _, info = add_noise(d, 5, 1)
    info.write_json(tmp_path / "n.json")
    assert NoiseInfo.read_json(tmp_path / "n.json") == info


def test_data_matrix_validation():
    with pytest.raises(ObservationConfigError):
        DataMatrix(np.zeros((3, 3)), default_acquisition())
    bad = np.zeros((52, 25))
    bad[0, 0] = np.nan
    with pytest.raises(ObservationConfigError):
        DataMatrix(bad, default_acquisition())


def test_receiver_operator_interpolates_linear_fields():
    mesh = uniform_mesh(MeshSpec("uniform", 0.1, default_model()))
    xs = np.array([-1.02, 0.0, 0.333, 1.47])
    R = receiver_operator(mesh, xs)
    f = 2.0 * mesh.points[:, 0] - 0.5 * mesh.points[:, 1] + 1.0
    assert np.allclose(R @ f, 2.0 * xs + 1.0, atol=1e-12)
    with pytest.raises(ObservationConfigError):
        receiver_operator(mesh, np.array([2.0]))


@pytest.fixture(scope="module")
def coarse_operator():
    return ObservationOperator(default_model(), "uniform", 0.1, default_acquisition(), FAST)


def test_zero_amplitude_gives_zero_data():
    acq = Acquisition(f0=0.0)
    d = observe(default_model(), TRUE_INCLUSION, MeshSpec("uniform", 0.1, default_model()), acq, FAST)
    assert np.all(d.values == 0.0)


def test_host_material_inclusion_is_invisible(coarse_operator):
    m = default_model()
    host = InclusionParams(0.0, -1.45, 0.5, 0.1, 0.3, m.rho[2], m.v_p[2])
    assert np.array_equal(coarse_operator(host).values, coarse_operator(None).values)


def test_causality_before_first_arrival():
    acq = Acquisition(receivers=np.array([1.4]), emitters=np.array([-1.0]))
    d = observe(default_model(), TRUE_INCLUSION, MeshSpec("uniform", 0.1, default_model()), acq, FAST).values[0]
    t_arrive = 2.4 / 4.4
    assert np.all(np.abs(d[acq.times < t_arrive]) < 1e-8)
    assert np.abs(d).max() > 1e-6


def test_multi_frequency_solve_matches_separate(coarse_operator):
    acqs = [default_acquisition(2.0), with_frequency(default_acquisition(), 3.0)]
    both = ObservationOperator(default_model(), "uniform", 0.1, acqs, FAST)(TRUE_INCLUSION)
    single3 = ObservationOperator(default_model(), "uniform", 0.1, acqs[1], FAST)(TRUE_INCLUSION)
    assert np.allclose(both[1].values, single3.values, rtol=0, atol=1e-14)
    assert np.allclose(both[0].values, coarse_operator(TRUE_INCLUSION).values, rtol=0, atol=1e-14)


def test_mixed_geometry_rejected():
    with pytest.raises(ObservationConfigError):
        ObservationOperator(default_model(), "uniform", 0.1,
                            [default_acquisition(), Acquisition(record_dt=0.2)], FAST)


def test_forward_is_deterministic(coarse_operator):
    nu = TRUE_INCLUSION.to_array()
    a, b = coarse_operator.forward(nu), coarse_operator.forward(nu)
    assert np.array_equal(a[0], b[0])
