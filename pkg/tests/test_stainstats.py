import json

import numpy as np
import pytest

from pathaug import (
    ChannelStats,
    ColorSpace,
    DegenerateComponent,
    GmmStainModel,
    InsufficientData,
    IoError,
    ModelMissingSpace,
    RasterImage,
    SchemaError,
    SpaceMismatch,
    SpaceModels,
    StainModelFile,
    UnimodalStainModel,
    default_stain_matrix,
    derive_rng,
    fit_gmm,
    fit_unimodal,
    image_stats,
    load_model,
    sample_target_stats,
    save_model,
)
from pathaug.stainstats import (
    ALL_SPACES,
    REG_FLOOR,
    _log_gaussian,
    reservoir_indices,
    subsample_count,
)

HSV = ColorSpace.HSV
LAB = ColorSpace.LAB
HED = ColorSpace.HED


def _stats(space, vec):
    vec = np.asarray(vec, dtype=np.float64)
    return ChannelStats(space, vec[:3], vec[3:])


def _cloud_stats(space, points):
    return [_stats(space, p) for p in points]


# ---------------------------------------------------------------------------
# Per-image statistics

def test_image_stats_matches_plain_moments():
    rng = np.random.default_rng(21)
    image = RasterImage(rng.integers(0, 256, (12, 9, 3), dtype=np.uint8))
    for space in ALL_SPACES:
        st = image_stats(image, space)
        from pathaug import to_space

        planes = to_space(image, space).planes.reshape(3, -1)
        assert np.allclose(st.mu, planes.mean(axis=1), atol=1e-12)
        assert np.allclose(st.sigma, planes.std(axis=1), atol=1e-12)
        assert st.space is space


def test_constant_image_has_zero_sigma():
    image = RasterImage(np.full((6, 6, 3), 77, dtype=np.uint8))
    st = image_stats(image, HSV)
    assert np.allclose(st.sigma, 0.0, atol=1e-12)


def test_channel_stats_validation():
    with pytest.raises(ValueError):
        ChannelStats(HSV, np.zeros(3), np.array([1.0, -0.1, 0.0]))
    st = _stats(LAB, [1, 2, 3, 4, 5, 6])
    assert st.as_vector().tolist() == [1, 2, 3, 4, 5, 6]


# ---------------------------------------------------------------------------
# Unimodal fit

def test_fit_unimodal_mean_and_sample_std():
    points = np.array(
        [
            [10.0, 0, 0, 1, 0, 0],
            [20.0, 0, 0, 3, 0, 0],
            [30.0, 0, 0, 5, 0, 0],
        ]
    )
    model = fit_unimodal(_cloud_stats(HSV, points), HSV)
    assert np.allclose(model.mean, [20, 0, 0, 3, 0, 0], atol=1e-12)
    assert np.isclose(model.std[0], 10.0, atol=1e-12)  # ddof=1: sqrt(200/2)
    assert np.isclose(model.std[3], 2.0, atol=1e-12)


def test_fit_unimodal_needs_two_points():
    with pytest.raises(InsufficientData):
        fit_unimodal(_cloud_stats(HSV, [[1, 2, 3, 4, 5, 6]]), HSV)


def test_space_mismatch_rejected():
    stats = _cloud_stats(HSV, [[0] * 6, [1] * 6])
    with pytest.raises(SpaceMismatch):
        fit_unimodal(stats, LAB)
    with pytest.raises(SpaceMismatch):
        fit_gmm(stats, LAB, 1, seed=0)


# ---------------------------------------------------------------------------
# EM

def _two_cluster_points(rng, n=400, offset=6.0):
    a = rng.standard_normal((int(n * 0.6), 6)) + 10.0
    b = rng.standard_normal((n - int(n * 0.6), 6)) + 10.0 + offset
    return np.vstack([a, b])


def test_k1_fit_is_sample_moments():
    rng = np.random.default_rng(31)
    points = rng.uniform(1.0, 9.0, (200, 6))
    model = fit_gmm(_cloud_stats(HED, points), HED, 1, seed=7)
    assert model.weights.tolist() == [1.0]
    assert np.allclose(model.means[0], points.mean(axis=0), atol=1e-9)
    want_cov = np.cov(points.T, bias=True) + REG_FLOOR * np.eye(6)
    assert np.allclose(model.covariances[0], want_cov, atol=1e-9)


def test_em_recovers_two_separated_clusters():
    rng = np.random.default_rng(32)
    points = _two_cluster_points(rng)
    model = fit_gmm(_cloud_stats(LAB, points), LAB, 2, seed=1)
    order = np.argsort(model.means[:, 0])
    means = model.means[order]
    weights = model.weights[order]
    assert np.abs(means[0] - 10.0).max() < 0.3
    assert np.abs(means[1] - 16.0).max() < 0.3
    assert abs(weights[0] - 0.6) < 0.05


def test_em_trace_monotone_over_random_fits():
    for seed in range(12):
        rng = np.random.default_rng(1000 + seed)
        points = rng.standard_normal((120, 6)) * rng.uniform(0.5, 2.0) + 12.0
        model = fit_gmm(_cloud_stats(HSV, points), HSV, 3, seed=seed)
        trace = np.asarray(model.ll_trace)
        assert len(trace) >= 1
        assert (np.diff(trace) >= -1e-8).all(), np.diff(trace).min()


def test_fit_is_bitwise_deterministic():
    rng = np.random.default_rng(33)
    points = _two_cluster_points(rng, n=120)
    stats = _cloud_stats(HSV, points)
    a = fit_gmm(stats, HSV, 4, seed=9)
    b = fit_gmm(stats, HSV, 4, seed=9)
    assert np.array_equal(a.weights, b.weights)
    assert np.array_equal(a.means, b.means)
    assert np.array_equal(a.covariances, b.covariances)
    assert a.ll_trace == b.ll_trace


def test_constant_data_gives_floor_covariances():
    points = np.tile(np.array([1.0, 2, 3, 4, 5, 6]), (40, 1))
    model = fit_gmm(_cloud_stats(HED, points), HED, 2, seed=0)
    for cov in model.covariances:
        assert np.allclose(cov, REG_FLOOR * np.eye(6), atol=1e-9)
    assert np.allclose(model.means, points[0], atol=1e-9)


def test_fitted_covariances_keep_eigenvalue_floor():
    rng = np.random.default_rng(34)
    points = rng.standard_normal((90, 6)) + 10.0
    model = fit_gmm(_cloud_stats(LAB, points), LAB, 3, seed=2)
    for cov in model.covariances:
        assert np.linalg.eigvalsh(cov).min() >= REG_FLOOR * 0.5


def test_fit_needs_at_least_k_points():
    stats = _cloud_stats(HSV, np.eye(6)[:4])
    with pytest.raises(InsufficientData):
        fit_gmm(stats, HSV, 5, seed=0)
    with pytest.raises(ValueError):
        fit_gmm(stats, HSV, 0, seed=0)


def test_log_gaussian_rejects_non_pd_covariance():
    cov = np.diag([1.0, 1, 1, 1, 1, -1.0])
    with pytest.raises(DegenerateComponent):
        _log_gaussian(np.zeros((3, 6)), np.zeros(6), cov)


def test_gmm_model_validation():
    with pytest.raises(ValueError):
        GmmStainModel(HSV, [0.5, 0.6], np.zeros((2, 6)), np.tile(np.eye(6), (2, 1, 1)))
    lop = np.tile(np.eye(6), (1, 1, 1)).copy()
    lop[0, 0, 1] = 0.5  # asymmetric
    with pytest.raises(ValueError):
        GmmStainModel(HSV, [1.0], np.zeros((1, 6)), lop)


# ---------------------------------------------------------------------------
# Sampling

def test_unimodal_sampling_order_and_clamp():
    mean = np.array([10.0, 20, 30, -50, 1, 2])
    std = np.array([1.0, 1, 1, 0.1, 0.5, 0.5])
    model = UnimodalStainModel(HSV, mean, std)
    got = sample_target_stats(model, derive_rng(5))
    want = derive_rng(5).normal(mean, std)
    assert np.array_equal(got.mu, want[:3])
    assert np.array_equal(got.sigma, np.clip(want[3:], 0.0, None))
    assert got.sigma[0] == 0.0  # the -50 sigma variable clamps to zero


def test_gmm_zero_covariance_sampling_returns_mean():
    mean = np.array([5.0, 6, 7, 1, 2, 3])
    model = GmmStainModel(LAB, [1.0], mean.reshape(1, 6), np.zeros((1, 6, 6)))
    got = sample_target_stats(model, derive_rng(0))
    assert np.array_equal(got.mu, mean[:3])
    assert np.array_equal(got.sigma, mean[3:])


def test_gmm_component_pick_follows_weights():
    means = np.array([[0.0] * 6, [100.0, 100, 100, 1, 1, 1]])
    model = GmmStainModel(HED, [0.0, 1.0], means, np.zeros((2, 6, 6)))
    for seed in range(10):
        got = sample_target_stats(model, derive_rng(seed))
        assert np.array_equal(got.mu, means[1, :3])


def test_sampling_rejects_unknown_model():
    with pytest.raises(TypeError):
        sample_target_stats(object(), derive_rng(0))


def test_mixture_moments_formulas():
    weights = np.array([0.3, 0.7])
    means = np.array([[1.0, 0, 0, 2, 0, 0], [3.0, 0, 0, 4, 0, 0]])
    covs = np.tile(np.diag([0.5, 1, 1, 0.25, 1, 1]), (2, 1, 1))
    model = GmmStainModel(HSV, weights, means, covs)
    assert np.allclose(model.mixture_mean(), weights @ means, atol=1e-12)
    want_var0 = 0.3 * (0.5 + 1.0) + 0.7 * (0.5 + 9.0) - (0.3 * 1 + 0.7 * 3) ** 2
    assert np.isclose(model.mixture_variance()[0], want_var0, atol=1e-12)


# ---------------------------------------------------------------------------
# Model file

def _tiny_model_file():
    rng = np.random.default_rng(40)
    spaces = {}
    for space in ALL_SPACES:
        points = rng.standard_normal((30, 6)) + 10.0
        stats = _cloud_stats(space, points)
        spaces[space] = SpaceModels(
            fit_unimodal(stats, space), fit_gmm(stats, space, 2, seed=3)
        )
    return StainModelFile(default_stain_matrix(), 0.25, 30, spaces)


def test_model_file_round_trip_exact(tmp_path):
    model = _tiny_model_file()
    path = tmp_path / "model.json"
    save_model(model, path)
    again = load_model(path)
    assert again.version == "1"
    assert again.subsample_fraction == 0.25
    assert again.image_count == 30
    assert np.array_equal(again.stain_matrix.rows, model.stain_matrix.rows)
    for space in ALL_SPACES:
        a, b = again.spaces[space], model.spaces[space]
        assert np.array_equal(a.unimodal.mean, b.unimodal.mean)
        assert np.array_equal(a.unimodal.std, b.unimodal.std)
        assert np.array_equal(a.gmm.weights, b.gmm.weights)
        assert np.array_equal(a.gmm.means, b.gmm.means)
        assert np.array_equal(a.gmm.covariances, b.gmm.covariances)


def test_model_file_schema_errors(tmp_path):
    model = _tiny_model_file()
    path = tmp_path / "model.json"
    save_model(model, path)
    data = json.loads(path.read_text())

    bad = dict(data, version="2")
    p = tmp_path / "v.json"
    p.write_text(json.dumps(bad))
    with pytest.raises(SchemaError):
        load_model(p)

    bad = json.loads(path.read_text())
    del bad["spaces"]["LAB"]
    p.write_text(json.dumps(bad))
    with pytest.raises(SchemaError):
        load_model(p)

    bad = json.loads(path.read_text())
    bad["spaces"]["HSV"]["gmm"]["k"] = 9
    p.write_text(json.dumps(bad))
    with pytest.raises(SchemaError):
        load_model(p)

    p.write_text("{not json")
    with pytest.raises(SchemaError):
        load_model(p)

    with pytest.raises(IoError):
        load_model(tmp_path / "missing.json")


def test_partial_model_rejected_on_save(tmp_path):
    full = _tiny_model_file()
    partial = StainModelFile(
        full.stain_matrix, 1.0, 30, {HSV: full.spaces[HSV]}
    )
    with pytest.raises(SchemaError):
        save_model(partial, tmp_path / "p.json")
    with pytest.raises(ModelMissingSpace):
        partial.model_for(LAB, "gmm")
    with pytest.raises(ValueError):
        partial.model_for(HSV, "bogus")


# ---------------------------------------------------------------------------
# Subsampling helpers

def test_subsample_count_rule():
    assert subsample_count(0, 0.5) == 0
    assert subsample_count(10, 0.1) == 1
    assert subsample_count(1000, 0.1) == 100
    assert subsample_count(5, 0.5) == 3  # 2.5 rounds half away from zero
    assert subsample_count(7, 0.0) == 1  # nonempty input keeps at least one
    assert subsample_count(3, 1.0) == 3


def test_reservoir_indices_properties():
    rng = derive_rng(50)
    picked = reservoir_indices(100, 10, rng)
    assert len(picked) == 10
    assert picked == sorted(picked)
    assert all(0 <= i < 100 for i in picked)
    assert reservoir_indices(5, 9, derive_rng(0)) == [0, 1, 2, 3, 4]
    a = reservoir_indices(50, 7, derive_rng(8))
    b = reservoir_indices(50, 7, derive_rng(8))
    assert a == b


def test_reservoir_is_roughly_uniform():
    hits = np.zeros(10)
    for seed in range(300):
        for i in reservoir_indices(10, 5, derive_rng(seed)):
            hits[i] += 1
    freq = hits / 300.0
    assert freq.min() > 0.35 and freq.max() < 0.65
