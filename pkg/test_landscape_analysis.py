"""Tests for Hessian estimates, robustness loss, correlation, similarity and ensembling"""
import math

import numpy as np
import pytest

from conftest import quadratic_grad, random_psd
from curve_space.curves import init_curve
from curve_space.path_trainer import train_path
from landscape_analysis.correlation import correlation_profile, prop1_toy_validation
from landscape_analysis.ensemble import ensemble_eval
from landscape_analysis.evaluators import clean_loss
from landscape_analysis.hessian import hvp, hvp_fd, lambda_max, mean_lambda_max, power_iteration
from landscape_analysis.robustness import barrier_height, pearson, robustness_loss
from landscape_analysis.similarity import cosine_distance, input_grad_similarity
from nn_core.architectures import mlp_spec
from nn_core.engine import init_model, zero_model
from nn_core.evaluation import mean_loss
from nn_core.trainer import train
from shared.errors import MetricMissingError, SimilarityUndefinedError
from shared.schemas import PathProfile, PathRecord, PathTrainConfig, PGDConfig, TrainConfig


def test_hvp_exact_on_quadratic():
    grad = quadratic_grad(np.diag([3.0, 1.0]))
    out = hvp_fd(grad, np.array([0.3, -0.2]), np.array([1.0, 0.0]))
    assert out == pytest.approx([3.0, 0.0], abs=1e-6)


@pytest.mark.parametrize("h", [1e-6, 1e-3, 0.5])
def test_hvp_exact_on_quadratic_for_any_step(h):
    a = random_psd(6, 8.0, seed=1)
    v = np.random.default_rng(2).standard_normal(6)
    assert np.allclose(hvp_fd(quadratic_grad(a), np.ones(6), v, h), a @ v, atol=1e-6)


def test_hvp_rejects_zero_direction_and_bad_step():
    grad = quadratic_grad(np.eye(2))
    with pytest.raises(ValueError):
        hvp_fd(grad, np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        hvp_fd(grad, np.zeros(2), np.ones(2), h=0.0)


def test_power_iteration_on_known_spectrum():
    est = power_iteration(quadratic_grad(np.diag([3.0, 1.0])), np.zeros(2))
    assert est.lambda_max == pytest.approx(3.0, abs=1e-3)
    assert np.linalg.norm(est.eigvec) == pytest.approx(1.0, abs=1e-10)
    assert est.converged


@pytest.mark.parametrize("dim", [4, 8, 12, 16])
def test_power_iteration_matches_dense_eigensolver(dim):
    a = random_psd(dim, 8.0, seed=dim)
    est = power_iteration(quadratic_grad(a), np.zeros(dim), rel_tol=1e-4, seed=dim)
    top = np.linalg.eigvalsh(a)[-1]
    assert abs(est.lambda_max - top) <= 1e-3 * top


def test_rayleigh_bound_on_quadratic():
    a = random_psd(8, 8.0, seed=3)
    lam = power_iteration(quadratic_grad(a), np.zeros(8)).lambda_max
    rng = np.random.default_rng(4)
    for _ in range(20):
        v = rng.standard_normal(8)
        v /= np.linalg.norm(v)
        assert lam >= v @ a @ v - 1e-6


def test_negative_dominant_eigenvalue_is_flagged():
    est = power_iteration(quadratic_grad(np.diag([-5.0, 1.0])), np.zeros(2))
    assert est.negative_dominant
    assert est.lambda_max == pytest.approx(-5.0, abs=1e-2)


def test_non_convergence_is_reported():
    est = power_iteration(quadratic_grad(np.diag([1.0, 0.999])), np.zeros(2), rel_tol=1e-14, max_iter=3)
    assert not est.converged
    assert est.iterations_used == 3


def test_alignment_is_one_when_gradient_is_the_eigenvector():
    a = np.diag([4.0, 1.0])
    est = power_iteration(lambda x: a @ x + np.array([2.0, 0.0]), np.zeros(2))
    assert est.alignment_c == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("seed", range(5))
def test_hvp_is_symmetric_on_random_linear_nets(seed, tiny_data):
    model = init_model(mlp_spec(tiny_data.image_shape, [], tiny_data.num_classes), seed)
    rng = np.random.default_rng(seed)
    x, label = tiny_data.images[0], int(tiny_data.labels[0])
    u, v = rng.standard_normal(x.shape), rng.standard_normal(x.shape)
    uhv = float(np.sum(u * hvp(model, x, label, v)))
    vhu = float(np.sum(v * hvp(model, x, label, u)))
    assert abs(uhv - vhu) <= 1e-3 * max(abs(uhv), abs(vhu), 1e-8)


def test_lambda_max_on_network_is_seeded(mlp, tiny_data):
    a = lambda_max(mlp, tiny_data.images[1], int(tiny_data.labels[1]), seed=7)
    b = lambda_max(mlp, tiny_data.images[1], int(tiny_data.labels[1]), seed=7)
    assert a.lambda_max == b.lambda_max
    assert 0.0 <= a.alignment_c <= 1.0


def test_mean_lambda_max_uses_requested_subset(mlp, tiny_data):
    mean, estimates = mean_lambda_max(mlp, tiny_data, n_samples=5, seed=0, max_iter=20)
    assert len(estimates) == 5
    assert mean == pytest.approx(np.mean([p.lambda_max for p in estimates]))


def test_robustness_loss_zero_radius_equals_clean(mlp, tiny_data):
    assert robustness_loss(mlp, tiny_data, PGDConfig(epsilon=0.0)) == mean_loss(mlp, tiny_data.images, tiny_data.labels)


def test_robustness_loss_exceeds_clean_on_linear_model(tiny_data):
    model = init_model(mlp_spec(tiny_data.image_shape, [], tiny_data.num_classes), 0)
    clean = mean_loss(model, tiny_data.images, tiny_data.labels)
    assert robustness_loss(model, tiny_data, PGDConfig(epsilon=0.05, steps=5)) >= clean


@pytest.mark.parametrize("a,b,expected", [
    ([1, 2, 3, 4], [1, 2, 3, 4], 1.0),
    ([1, 2, 3, 4], [-1, -2, -3, -4], -1.0),
    ([1, 2, 3, 4], [1, 3, 2, 4], 0.8),
])
def test_pearson_values(a, b, expected):
    assert pearson(a, b) == pytest.approx(expected)


def test_pearson_undefined_for_constant_sequence():
    assert pearson([1, 1, 1], [1, 2, 3]) is None


def test_pearson_is_permutation_consistent():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(9), rng.standard_normal(9)
    order = rng.permutation(9)
    assert pearson(a[order], b[order]) == pytest.approx(pearson(a, b))


def _profile(values, metric="loss"):
    grid = np.linspace(0.0, 1.0, len(values)).round(6).tolist()
    return PathProfile(t_grid=grid, records=[PathRecord(t=t, metrics={metric: v}) for t, v in zip(grid, values)])


def test_barrier_height_direct_formula():
    assert barrier_height(_profile([1.0, 3.0, 1.0]), "loss") == 2.0


def test_monotone_and_constant_profiles_have_no_barrier():
    assert barrier_height(_profile([1.0, 2.0, 3.0, 4.0]), "loss") <= 0.0
    assert barrier_height(_profile([2.0, 2.0, 2.0]), "loss") <= 0.0


def test_barrier_height_missing_metric():
    with pytest.raises(MetricMissingError):
        barrier_height(_profile([1.0, 2.0, 3.0]), "robustness_loss")
    with pytest.raises(MetricMissingError):
        barrier_height(_profile([1.0, math.nan, 3.0]), "loss")


def test_prop1_family_tracks_lambda():
    report = prop1_toy_validation(epsilon=0.1)
    assert report.pcc > 0.999
    assert report.estimated_lambdas == pytest.approx(report.lambdas, rel=1e-3)
    assert all(c == pytest.approx(1.0, abs=1e-6) for c in report.alignments)
    assert max(report.grad_norms_at_origin) - min(report.grad_norms_at_origin) <= 1e-12


def test_prop1_constant_lambda_gives_constant_robust_loss():
    report = prop1_toy_validation(epsilon=0.1, lam_fn=lambda t: 2.0)
    assert max(report.robust_losses) - min(report.robust_losses) <= 1e-9
    assert report.pcc is None


def test_prop1_pgd_search_follows_lambda_ordering():
    report = prop1_toy_validation(epsilon=0.1)
    assert report.pgd_robust_losses == pytest.approx(report.robust_losses, abs=1e-9)
    assert all(b > a for a, b in zip(report.pgd_robust_losses, report.pgd_robust_losses[1:]))
    assert report.pgd_pcc > 0.999


def test_prop1_rejects_ball_leaving_the_box():
    with pytest.raises(ValueError):
        prop1_toy_validation(epsilon=0.6)


@pytest.mark.parametrize("s,m", [(1.0, 0.0), (-1.0, 1.0), (0.0, 0.5)])
def test_cosine_distance_formula(s, m):
    a = np.array([[1.0, 0.0]])
    b = np.array([[s, math.sqrt(1.0 - s * s)]])
    dist, valid = cosine_distance(a, b)
    assert valid.all()
    assert dist[0] == pytest.approx(m)


def test_zero_gradient_rows_are_invalid():
    _, valid = cosine_distance(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([[1.0, 0.0], [1.0, 1.0]]))
    assert valid.tolist() == [False, True]


def test_similarity_to_first_endpoint_vanishes_at_zero(mlp, tiny_data):
    other = init_model(mlp.spec, 99)
    records = input_grad_similarity(init_curve(mlp, other), tiny_data.subset(range(10)),
                                    tiny_data.subset(range(10, 20)), [0.5])
    assert [r.t for r in records] == [0.0, 0.5, 1.0]
    assert records[0].m_clean_to_w1 == 0.0 and records[0].m_tampered_to_w1 == 0.0
    assert records[-1].m_clean_to_w2 == 0.0


def test_similarity_with_only_zero_gradients_is_undefined(mlp, tiny_data):
    flat = zero_model(mlp.spec)
    with pytest.raises(SimilarityUndefinedError):
        input_grad_similarity(init_curve(flat, flat.copy()), tiny_data.subset(range(5)),
                              tiny_data.subset(range(5, 10)), [0.5])


def test_degenerate_ensemble_is_white_box(mlp, tiny_data):
    curve = init_curve(mlp, init_model(mlp.spec, 5))
    report = ensemble_eval(curve, [0.0], tiny_data, mlp, PGDConfig(epsilon=0.1, steps=3))
    assert report.transfer_attack_success == report.whitebox_attack_success
    assert report.clean_accuracy == report.member_clean_accuracy[0]


def test_path_ensemble_transfer_success_is_at_most_white_box(tiny_data):
    spec = mlp_spec(tiny_data.image_shape, [12], tiny_data.num_classes)
    cfg = TrainConfig(epochs=10, batch_size=16, seed=0)
    w1 = train(init_model(spec, 0), tiny_data, cfg)
    w2 = train(init_model(spec, 1), tiny_data, cfg.model_copy(update={"seed": 1}))
    curve = train_path(init_curve(w1, w2), tiny_data,
                       PathTrainConfig(epochs=5, batch_size=16, learning_rate=0.05, seed=2))
    report = ensemble_eval(curve, [0.25, 0.5, 0.75], tiny_data, w1, PGDConfig(epsilon=0.1, steps=10))
    assert report.transfer_attack_success <= report.whitebox_attack_success


def test_correlation_profile_records_both_sequences(mlp, tiny_data):
    curve = init_curve(mlp, init_model(mlp.spec, 8))
    profile, pcc = correlation_profile(curve, tiny_data.subset(range(12)), PGDConfig(epsilon=0.05, steps=2),
                                       [0.5], hessian_samples=3)
    assert {"robustness_loss", "lambda_max", "log_lambda_max", "clean_loss"} <= set(profile.metric_names())
    assert pcc is None or -1.0 <= pcc <= 1.0
    assert profile.column("clean_loss")[0] == pytest.approx(clean_loss(tiny_data.subset(range(12)))(mlp))
