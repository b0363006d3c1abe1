"""Streaming mixture estimator: densities, creation/update rules, snapshots."""

from __future__ import annotations

import math

import numpy as np
import pytest

from flowcast.igmm import IgmmConfig, Mixture, SnapshotError

from _oracles import StreamingReplay, as_component_tuples, gaussian_logpdf

LOG_2PI = math.log(2.0 * math.pi)


def random_spd(rng, d, scale=1.0):
    a = rng.normal(size=(d, d)) * scale
    return a @ a.T + 0.5 * scale * scale * np.eye(d)


def separated_1d_mixture(**config_overrides):
    cfg = dict(sigma_ini_x=0.5, novelty_mahalanobis=3.0)
    cfg.update(config_overrides)
    return Mixture(1, 0, IgmmConfig(**cfg))


# ------------------------------------------------------------- configuration


@pytest.mark.parametrize(
    "bad",
    [
        dict(novelty_mahalanobis=0.0),
        dict(sigma_warmup=0),
        dict(sigma_scale=0.0),
        dict(update_skip_threshold=-0.1),
        dict(update_skip_threshold=1.0),
        dict(regularization_floor=0.0),
        dict(min_mass_fraction_for_prediction=0.0),
        dict(min_mass_fraction_for_prediction=1.5),
        dict(max_components=0),
    ],
)
def test_config_rejects_invalid_values(bad):
    with pytest.raises(ValueError):
        IgmmConfig(**bad)


def test_mixture_rejects_bad_dimensions():
    with pytest.raises(ValueError):
        Mixture(0, 2)
    with pytest.raises(ValueError):
        Mixture(2, -1)


# ----------------------------------------------------------------- densities


def test_joint_loglik_at_mean_with_identity_covariances():
    mix = Mixture.from_components(
        [(np.array([1.0, -2.0]), np.eye(2), np.array([0.5, 3.0]), np.eye(2), 1.0)],
        d_x=2,
        d_y=2,
    )
    value = mix.component_loglik(0, np.array([1.0, -2.0]), np.array([0.5, 3.0]))
    assert value == pytest.approx(-2.0 * LOG_2PI, abs=1e-12)
    assert value == pytest.approx(-3.6758, abs=5e-5)


def test_input_only_loglik_at_mean():
    mix = Mixture.from_components(
        [(np.array([0.0, 0.0]), np.eye(2), None, None, 1.0)], d_x=2, d_y=0
    )
    value = mix.component_loglik(0, np.zeros(2))
    assert value == pytest.approx(-LOG_2PI, abs=1e-12)
    assert value == pytest.approx(-1.8379, abs=5e-5)


def test_densities_match_dense_oracle():
    rng = np.random.default_rng(7)
    comps = [
        (rng.normal(size=3), random_spd(rng, 3), rng.normal(size=2), random_spd(rng, 2), float(m))
        for m in rng.uniform(0.5, 5.0, size=4)
    ]
    mix = Mixture.from_components(comps, d_x=3, d_y=2)
    X = rng.normal(size=(20, 3))
    Y = rng.normal(size=(20, 2))
    lx = mix.log_density_x(X)
    ly = mix.log_density_y(Y)
    for i in range(20):
        for j, (mu_x, cov_x, mu_y, cov_y, _) in enumerate(comps):
            assert lx[i, j] == pytest.approx(gaussian_logpdf(X[i], mu_x, cov_x), abs=1e-10)
            assert ly[i, j] == pytest.approx(gaussian_logpdf(Y[i], mu_y, cov_y), abs=1e-10)
            joint = mix.component_loglik(j, X[i], Y[i])
            expected = gaussian_logpdf(X[i], mu_x, cov_x) + gaussian_logpdf(Y[i], mu_y, cov_y)
            assert joint == pytest.approx(expected, abs=1e-10)


def test_density_shape_and_dimension_errors():
    mix = Mixture.from_components(
        [(np.zeros(2), np.eye(2), np.zeros(2), np.eye(2), 1.0)], d_x=2, d_y=2
    )
    with pytest.raises(ValueError):
        mix.log_density_x(np.zeros((1, 3)))
    with pytest.raises(IndexError):
        mix.component_loglik(1, np.zeros(2), np.zeros(2))
    x_only = Mixture(2, 0, IgmmConfig(sigma_ini_x=1.0))
    with pytest.raises(ValueError):
        x_only.log_density_y(np.zeros((1, 2)))


# ------------------------------------------------------------------ learning


def test_first_sample_bootstraps_one_component():
    mix = Mixture(2, 2, IgmmConfig(sigma_ini_x=0.5, sigma_ini_y=0.25))
    x, y = np.array([1.5, -0.5]), np.array([2.0, 0.25])
    mix.learn_one(x, y)
    assert mix.n_components == 1 and mix.n_samples == 1
    comp = mix.component(0)
    assert comp.mass == 1.0
    assert np.array_equal(comp.mu_x, x) and np.array_equal(comp.mu_y, y)
    assert np.array_equal(comp.cov_x, np.diag([0.25, 0.25]))
    assert np.array_equal(comp.cov_y, np.diag([0.0625, 0.0625]))


def test_learn_one_input_validation():
    mix = Mixture(2, 2, IgmmConfig(sigma_ini_x=0.5, sigma_ini_y=0.5))
    with pytest.raises(ValueError):
        mix.learn_one(np.zeros(3), np.zeros(2))
    with pytest.raises(ValueError):
        mix.learn_one(np.zeros(2), None)
    with pytest.raises(ValueError):
        mix.learn_one(np.array([np.nan, 0.0]), np.zeros(2))
    assert mix.n_samples == 0 and mix.n_components == 0


def test_single_cluster_mean_is_running_sample_mean():
    rng = np.random.default_rng(11)
    samples_x = rng.normal([1.0, -2.0], 0.4, size=(400, 2))
    samples_y = rng.normal([0.5, 0.5], 0.3, size=(400, 2))
    mix = Mixture(
        2,
        2,
        IgmmConfig(
            sigma_ini_x=0.4, sigma_ini_y=0.3, update_skip_threshold=0.0, max_components=1
        ),
    )
    replay = StreamingReplay(2, 2, sigma_x=0.4, sigma_y=0.3, novelty=1e6, skip=0.0)
    for x, y in zip(samples_x, samples_y):
        mix.learn_one(x, y)
        replay.learn(x, y)
    comp = mix.component(0)
    np.testing.assert_allclose(comp.mu_x, samples_x.mean(axis=0), rtol=0, atol=1e-8)
    np.testing.assert_allclose(comp.mu_y, samples_y.mean(axis=0), rtol=0, atol=1e-8)
    # covariance equals the same recurrence applied naively, one plain loop
    ref = replay.comps[0]
    np.testing.assert_allclose(comp.cov_x, ref["cov_x"], rtol=0, atol=1e-8)
    np.testing.assert_allclose(comp.cov_y, ref["cov_y"], rtol=0, atol=1e-8)
    assert comp.mass == pytest.approx(ref["mass"], abs=1e-8)


def test_two_far_clusters_recover_counts():
    rng = np.random.default_rng(12)
    centers = np.array([[0.0, 0.0], [12.0, 12.0]])
    labels = rng.integers(0, 2, size=500)
    X = centers[labels] + rng.normal(0.0, 0.5, size=(500, 2))
    # creation scale above the within-cluster spread and a wide novelty
    # margin: a tight scale lets the covariance recurrence collapse on the
    # second sample, and chi-square leakage past a narrow radius would
    # spawn spurious components over 500 draws
    mix = Mixture(2, 0, IgmmConfig(sigma_ini_x=1.0, novelty_mahalanobis=10.0))
    for x in X:
        mix.learn_one(x)
    assert mix.n_components == 2
    # brute-force assignment of the generated data to the nearest true center
    counts = np.bincount(labels, minlength=2)
    mus = np.array([c.mu_x for c in mix.components()])
    order = np.argsort(((mus[:, None, :] - centers[None, :, :]) ** 2).sum(-1).argmin(1))
    np.testing.assert_allclose(mix.masses[order], counts, rtol=0.01)


def test_priors_sum_to_one_after_every_learn():
    rng = np.random.default_rng(13)
    mix = Mixture(2, 0, IgmmConfig(sigma_ini_x=0.3, novelty_mahalanobis=2.0))
    for x in rng.normal(0.0, 2.0, size=(300, 2)):
        mix.learn_one(x)
        assert abs(mix.priors().sum() - 1.0) < 1e-12


def test_covariances_stay_positive_definite():
    rng = np.random.default_rng(14)
    mix = Mixture(2, 2, IgmmConfig(sigma_ini_x=0.3, sigma_ini_y=0.2, novelty_mahalanobis=2.0))
    X = rng.normal(0.0, 1.5, size=(600, 2))
    Y = 0.5 * X + rng.normal(0.0, 0.3, size=(600, 2))
    for x, y in zip(X, Y):
        mix.learn_one(x, y)
    floor = mix.config.regularization_floor
    for comp in mix.components():
        assert np.linalg.eigvalsh(comp.cov_x).min() >= floor * (1 - 1e-9)
        assert np.linalg.eigvalsh(comp.cov_y).min() >= floor * (1 - 1e-9)
        np.testing.assert_allclose(comp.cov_x, comp.cov_x.T, rtol=0, atol=1e-15)


def test_identical_samples_converge_mean_to_sample():
    target = np.array([2.0, -1.0])
    first = np.array([5.0, 5.0])
    mix = Mixture(2, 0, IgmmConfig(sigma_ini_x=1.0, update_skip_threshold=0.0, max_components=1))
    mix.learn_one(first)
    n = 500
    for _ in range(n):
        mix.learn_one(target)
    # with a single component the mean is exactly the running average
    expected = (first + n * target) / (n + 1)
    np.testing.assert_allclose(mix.component(0).mu_x, expected, rtol=0, atol=1e-10)


def test_sample_and_component_counters_are_monotone():
    rng = np.random.default_rng(15)
    mix = Mixture(2, 0, IgmmConfig(sigma_ini_x=0.4, novelty_mahalanobis=2.0))
    accepted = 0
    last_components = 0
    for x in rng.normal(0.0, 3.0, size=(200, 2)):
        mix.learn_one(x)
        accepted += 1
        assert mix.n_samples == accepted
        assert mix.n_components >= last_components
        last_components = mix.n_components


def test_max_components_caps_creation():
    mix = separated_1d_mixture(max_components=2)
    for value in (0.0, 10.0, 20.0, 30.0):
        mix.learn_one(np.array([value]))
    assert mix.n_components == 2


def test_absolute_novelty_threshold_branch():
    never = Mixture(1, 0, IgmmConfig(sigma_ini_x=0.5, novelty_log_density=-1e9))
    for value in (0.0, 10.0, 20.0):
        never.learn_one(np.array([value]))
    assert never.n_components == 1  # nothing is ever novel enough
    always = Mixture(1, 0, IgmmConfig(sigma_ini_x=0.5, novelty_log_density=1e9))
    for value in (0.0, 0.1, 0.2):
        always.learn_one(np.array([value]))
    assert always.n_components == 3


def test_update_skip_leaves_far_components_untouched():
    mix = separated_1d_mixture()
    mix.learn_one(np.array([0.0]))
    mix.learn_one(np.array([10.0]))
    before = mix.component(1)
    for _ in range(8):
        mix.learn_one(np.array([0.0]))
    after = mix.component(1)
    assert after.mass == before.mass == 1.0
    assert np.array_equal(after.mu_x, before.mu_x)
    assert np.array_equal(after.cov_x, before.cov_x)
    assert mix.component(0).mass == pytest.approx(9.0, abs=1e-9)


def test_update_skip_rarely_changes_map_choice():
    rng = np.random.default_rng(16)
    centers = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0], [4.0, 4.0], [2.0, 2.0]])
    train = centers[rng.integers(0, 5, size=2000)] + rng.normal(0.0, 0.5, size=(2000, 2))
    probe = centers[rng.integers(0, 5, size=500)] + rng.normal(0.0, 0.5, size=(500, 2))
    picks = {}
    for skip in (1e-4, 0.0):
        mix = Mixture(2, 0, IgmmConfig(sigma_ini_x=0.5, update_skip_threshold=skip))
        for x in train:
            mix.learn_one(x)
        scores = mix.log_density_x(probe) + np.log(mix.masses)[None, :]
        mus = np.array([c.mu_x for c in mix.components()])
        chosen = mus[np.argmax(scores, axis=1)]
        # label each probe by the true center its MAP component sits nearest,
        # so the comparison survives either model growing extra components
        picks[skip] = ((chosen[:, None, :] - centers[None, :, :]) ** 2).sum(-1).argmin(1)
    disagreement = np.mean(picks[1e-4] != picks[0.0])
    assert disagreement < 0.01


def test_cache_coherence_after_interleaved_learning():
    rng = np.random.default_rng(17)
    mix = Mixture(2, 2, IgmmConfig(sigma_ini_x=0.4, sigma_ini_y=0.3, novelty_mahalanobis=2.5))
    X = rng.normal(0.0, 1.0, size=(150, 2))
    Y = rng.normal(0.0, 0.5, size=(150, 2))
    probes = rng.normal(0.0, 1.0, size=(10, 4))
    for i, (x, y) in enumerate(zip(X, Y)):
        mix.learn_one(x, y)
        if i % 37 == 0:
            comps = as_component_tuples(mix)
            for px, py in zip(probes[:, :2], probes[:, 2:]):
                for j, (_, mu_x, cov_x, mu_y, cov_y) in enumerate(comps):
                    expected = gaussian_logpdf(px, mu_x, cov_x) + gaussian_logpdf(py, mu_y, cov_y)
                    # relative tolerance: far-tail log densities reach 1e5
                    # in magnitude, where absolute 1e-10 exceeds fp precision
                    assert mix.component_loglik(j, px, py) == pytest.approx(
                        expected, rel=1e-10, abs=1e-10
                    )


def test_warmup_derives_sigma_from_data():
    rng = np.random.default_rng(18)
    cfg = IgmmConfig(sigma_warmup=50, sigma_scale=0.3)
    mix = Mixture(2, 2, cfg)
    X = rng.normal(0.0, 2.0, size=(60, 2))
    Y = rng.normal(0.0, 0.7, size=(60, 2))
    for i in range(49):
        mix.learn_one(X[i], Y[i])
    assert not mix.sigma_resolved
    assert mix.n_components == 0 and mix.n_samples == 49
    mix.learn_one(X[49], Y[49])
    assert mix.sigma_resolved
    np.testing.assert_allclose(mix.sigma_ini_x, X[:50].std(axis=0) * 0.3, rtol=1e-12)
    np.testing.assert_allclose(mix.sigma_ini_y, Y[:50].std(axis=0) * 0.3, rtol=1e-12)
    assert mix.n_samples == 50 and mix.n_components >= 1


def test_finalize_warmup_without_samples_errors():
    mix = Mixture(2, 2, IgmmConfig())
    with pytest.raises(ValueError):
        mix.finalize_warmup()


# ------------------------------------------------------------ prediction set


def masses_9_1():
    mix = separated_1d_mixture()
    mix.learn_one(np.array([0.0]))
    mix.learn_one(np.array([10.0]))
    for _ in range(8):
        mix.learn_one(np.array([0.0]))
    return mix


def test_prediction_set_exact_boundary_nine_one():
    mix = masses_9_1()
    np.testing.assert_array_equal(np.sort(mix.masses)[::-1], [9.0, 1.0])
    assert list(mix.prediction_set(0.9)) == [0]


def test_prediction_set_five_four_one():
    mix = separated_1d_mixture()
    for value, repeats in ((0.0, 1), (10.0, 1), (20.0, 1)):
        for _ in range(repeats):
            mix.learn_one(np.array([value]))
    for _ in range(4):
        mix.learn_one(np.array([0.0]))
    for _ in range(3):
        mix.learn_one(np.array([10.0]))
    np.testing.assert_array_equal(mix.masses, [5.0, 4.0, 1.0])
    assert list(mix.prediction_set(0.9)) == [0, 1]


def test_prediction_set_uniform_hundred():
    mix = separated_1d_mixture()
    for k in range(100):
        mix.learn_one(np.array([10.0 * k]))
    assert mix.n_components == 100
    np.testing.assert_array_equal(mix.masses, np.ones(100))
    pset = mix.prediction_set(0.9)
    assert len(pset) == 90
    # equal masses tie-break by creation order
    np.testing.assert_array_equal(pset, np.arange(90))


def test_prediction_set_validates_fraction():
    mix = masses_9_1()
    with pytest.raises(ValueError):
        mix.prediction_set(0.0)
    with pytest.raises(ValueError):
        mix.prediction_set(1.2)
    assert len(mix.prediction_set(1.0)) == 2


# ------------------------------------------------------------------ credit


def test_collision_credit_accumulates_per_occurrence():
    mix = masses_9_1()
    mix.add_collision_credit(np.array([0, 0, 1]), 0.5)
    np.testing.assert_allclose(mix.collision_values, [1.0, 0.5])
    mix.add_collision_credit(np.array([], dtype=int), 1.0)
    np.testing.assert_allclose(mix.collision_values, [1.0, 0.5])
    with pytest.raises(IndexError):
        mix.add_collision_credit(np.array([2]), 1.0)
    with pytest.raises(IndexError):
        mix.add_collision_credit(np.array([-1]), 1.0)


# --------------------------------------------------------------- persistence


def build_fifty_component_mixture():
    mix = separated_1d_mixture()
    rng = np.random.default_rng(19)
    base = np.arange(50) * 10.0
    stream = np.concatenate([base, rng.choice(base, size=400)])
    for value in stream:
        mix.learn_one(np.array([value]))
    assert mix.n_components == 50
    return mix


def test_snapshot_round_trips_field_for_field():
    mix = build_fifty_component_mixture()
    mix.add_collision_credit(np.array([3, 7]), 1.25)
    restored = Mixture.restore(mix.snapshot())
    assert restored.n_components == mix.n_components
    assert restored.n_samples == mix.n_samples
    assert restored.config == mix.config
    for a, b in zip(mix.components(), restored.components()):
        assert a.mass == b.mass and a.created_at == b.created_at
        assert a.collision_value == b.collision_value
        np.testing.assert_array_equal(a.mu_x, b.mu_x)
        np.testing.assert_array_equal(a.cov_x, b.cov_x)
        np.testing.assert_array_equal(a.mu_y, b.mu_y)
        np.testing.assert_array_equal(a.cov_y, b.cov_y)
    assert restored.snapshot() == mix.snapshot()


def test_restored_model_predicts_identically_on_random_inputs():
    mix = build_fifty_component_mixture()
    restored = Mixture.restore(mix.snapshot())
    rng = np.random.default_rng(20)
    probes = rng.uniform(-20.0, 520.0, size=(1000, 1))
    lx_a = mix.log_density_x(probes)
    lx_b = restored.log_density_x(probes)
    np.testing.assert_array_equal(lx_a, lx_b)
    scores_a = lx_a + np.log(mix.masses)[None, :]
    scores_b = lx_b + np.log(restored.masses)[None, :]
    np.testing.assert_array_equal(np.argmax(scores_a, 1), np.argmax(scores_b, 1))


def test_snapshot_survives_file_round_trip(tmp_path):
    mix = build_fifty_component_mixture()
    path = tmp_path / "mixture.txt"
    mix.save(str(path))
    assert Mixture.load(str(path)).snapshot() == mix.snapshot()


def test_restore_rejects_bad_payloads():
    with pytest.raises(SnapshotError):
        Mixture.restore("")
    with pytest.raises(SnapshotError):
        Mixture.restore("format=unrelated\n")
    mix = separated_1d_mixture()
    mix.learn_one(np.array([0.0]))
    text = mix.snapshot()
    truncated = "\n".join(text.splitlines()[:-2]) + "\n"
    with pytest.raises(SnapshotError):
        Mixture.restore(truncated)


def test_snapshot_preserves_warmup_buffer():
    mix = Mixture(2, 2, IgmmConfig(sigma_warmup=100))
    rng = np.random.default_rng(21)
    for x, y in zip(rng.normal(size=(5, 2)), rng.normal(size=(5, 2))):
        mix.learn_one(x, y)
    restored = Mixture.restore(mix.snapshot())
    assert not restored.sigma_resolved
    assert restored.n_samples == 5
    assert restored.snapshot() == mix.snapshot()
