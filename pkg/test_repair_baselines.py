"""Tests for path-connection repair, the baselines, t-selection and stability summaries"""
import numpy as np
import pytest

from curve_space.curves import init_curve
from data_forge.dataset import LabeledDataset
from landscape_analysis.evaluators import clean_loss
from nn_core.engine import WeightVector, init_model
from nn_core.evaluation import logits
from repair_baselines.baselines import (
    PRUNE_PRESETS,
    finetune,
    gaussian_noise_models,
    noise_sweep,
    preset_fraction,
    prune_and_retrain,
    prune_mask,
    train_scratch,
)
from repair_baselines.repair import repair_by_connection, repair_single_model
from repair_baselines.stability import multi_seed_profiles, stability_summary
from repair_baselines.t_selection import select_t, select_t_from_accuracy
from shared.errors import LayoutMismatchError, PoisoningError
from shared.schemas import Conv2D, Dense, PathProfile, PathRecord, PathTrainConfig, TrainConfig, TSelectConfig


def _profile(values, metric="clean_accuracy"):
    grid = np.linspace(0.0, 1.0, len(values)).round(6).tolist()
    return PathProfile(t_grid=grid, records=[PathRecord(t=t, metrics={metric: v}) for t, v in zip(grid, values)])


def test_noise_models_of_identical_pair_are_exact_copies(mlp):
    models = gaussian_noise_models(mlp, mlp.copy(), n=3, seed=0)
    assert len(models) == 6
    assert all(np.array_equal(m.weights.data, mlp.weights.data) for m in models)


def test_noise_models_order_and_seed(mlp):
    other = init_model(mlp.spec, 42)
    first = gaussian_noise_models(mlp, other, n=4, seed=5)
    again = gaussian_noise_models(mlp, other, n=4, seed=5)
    assert all(np.array_equal(a.weights.data, b.weights.data) for a, b in zip(first, again))
    spread = np.abs(mlp.weights.data - other.weights.data)
    for model in first[:4]:
        assert np.all(np.abs(model.weights.data - mlp.weights.data) <= 8 * spread + 1e-12)
    assert not np.array_equal(first[0].weights.data, first[1].weights.data)


def test_noise_models_need_matching_specs(mlp, cnn):
    with pytest.raises(LayoutMismatchError):
        gaussian_noise_models(mlp, cnn, n=1)


def test_noise_sweep_histogram_counts_every_model(mlp):
    sweep = noise_sweep(mlp, init_model(mlp.spec, 9), n=5, seed=1,
                        clean_metric=lambda m: 0.5, attack_metric=lambda m: 0.25)
    assert len(sweep.clean_accuracy) == 10
    assert sum(map(sum, sweep.histogram)) == 10
    assert sweep.mean_clean_accuracy == 0.5 and sweep.mean_attack_success == 0.25


def _pruned_units(model, mask):
    """(layer index, pruned unit indices) for every parametric layer but the last."""
    view = WeightVector(model.weights.layout, mask)
    parametric = [i for i, layer in enumerate(model.spec.layers) if isinstance(layer, (Dense, Conv2D))]
    out = []
    for i in parametric[:-1]:
        rows = view.tensor(i, "weight").reshape(view.tensor(i, "weight").shape[0], -1)
        out.append((i, np.flatnonzero(~rows.any(axis=1))))
    return out


@pytest.mark.parametrize("fixture", ["mlp", "cnn"])
def test_pruned_units_have_no_effect_on_logits(fixture, request, tiny_data):
    model = request.getfixturevalue(fixture)
    mask = prune_mask(model, 0.5)
    pruned = model.with_weights(model.weights.data * mask)
    assert any(units.size for _, units in _pruned_units(model, mask))

    scrambled = pruned.copy()
    rng = np.random.default_rng(0)
    for i, units in _pruned_units(model, mask):
        weight = scrambled.weights.tensor(i, "weight")
        weight[units] = rng.standard_normal(weight[units].shape)
        scrambled.weights.tensor(i, "bias")[units] = 1.0
    images = tiny_data.images[:16]
    assert np.allclose(logits(pruned, images), logits(scrambled, images), rtol=0.0, atol=1e-12)


@pytest.mark.parametrize("fraction, expected", [(0.25, 3), (0.5, 6), (0.99, 11)])
def test_prune_fraction_counts_per_layer(mlp, fraction, expected):
    [(_, units)] = _pruned_units(mlp, prune_mask(mlp, fraction))
    assert units.size == expected


def test_prune_zero_fraction_is_plain_finetune(mlp, tiny_data):
    cfg = TrainConfig(epochs=1, batch_size=16, seed=4)
    assert np.array_equal(prune_and_retrain(mlp, 0.0, tiny_data, cfg).weights.data,
                          finetune(mlp, tiny_data, cfg).weights.data)


def test_pruned_weights_stay_zero_through_retraining(mlp, tiny_data):
    mask = prune_mask(mlp, 0.5)
    out = prune_and_retrain(mlp, 0.5, tiny_data, TrainConfig(epochs=2, batch_size=16))
    assert np.all(out.weights.data[mask == 0.0] == 0.0)


@pytest.mark.parametrize("fraction", [-0.1, 1.0])
def test_prune_rejects_fraction_removing_whole_layers(mlp, fraction):
    with pytest.raises(ValueError):
        prune_mask(mlp, fraction)


def test_prune_presets():
    assert preset_fraction("vgg") == PRUNE_PRESETS["vgg"] == 0.6
    assert preset_fraction("resnet") == 0.2
    assert preset_fraction(None, 0.3) == 0.3
    with pytest.raises(ValueError):
        preset_fraction("alexnet")


def test_zero_epoch_baselines(mlp, tiny_data):
    cfg = TrainConfig(epochs=0, seed=11)
    assert np.array_equal(finetune(mlp, tiny_data, cfg).weights.data, mlp.weights.data)
    assert np.array_equal(train_scratch(mlp.spec, tiny_data, cfg).weights.data,
                          init_model(mlp.spec, 11).weights.data)


def test_threshold_rule_picks_smallest_passing_t():
    selection = select_t_from_accuracy([0.0, 0.25, 0.5, 0.75, 1.0], [0.9, 0.5, 0.85, 0.88, 0.9], 0.9, 0.06)
    assert selection.success
    assert selection.t == 0.5
    assert selection.threshold == pytest.approx(0.84)


def test_threshold_rule_reports_best_t_on_failure():
    selection = select_t_from_accuracy([0.0, 0.25, 0.5, 0.75, 1.0], [0.9, 0.5, 0.7, 0.6, 0.9], 0.9, 0.06)
    assert not selection.success
    assert selection.t == 0.5


def test_threshold_rule_input_errors():
    with pytest.raises(ValueError):
        select_t_from_accuracy([0.0, 1.0], [0.9, 0.9], 0.9, 0.1)
    with pytest.raises(ValueError):
        select_t_from_accuracy([0.0, 0.5, 1.0], [0.9, 0.9], 0.9, 0.1)


def test_flat_path_selects_first_interior_point(mlp, tiny_data):
    curve = init_curve(mlp, mlp.copy())
    selection = select_t(curve, tiny_data.subset(np.arange(20)), TSelectConfig(k=2, delta_a=0.1),
                         PathTrainConfig(epochs=0))
    assert selection.success
    assert selection.t == 0.1
    assert selection.folds == 2


def test_select_t_needs_enough_samples_for_folds(mlp, tiny_data):
    with pytest.raises(ValueError):
        select_t(init_curve(mlp, mlp.copy()), tiny_data.subset(np.arange(3)), TSelectConfig(k=5))


def test_identical_runs_have_zero_spread():
    summary = stability_summary([_profile([0.2, 0.5, 0.9])] * 3, [0, 1, 2])
    stats = summary.metrics["clean_accuracy"]
    assert stats.std == [0.0, 0.0, 0.0]
    assert stats.mean == pytest.approx([0.2, 0.5, 0.9])
    assert summary.rows()[1] == {"t": 0.5, "clean_accuracy_mean": 0.5, "clean_accuracy_std": 0.0}


def test_stability_uses_population_std():
    profiles, summary = multi_seed_profiles(lambda seed: _profile([0.0, float(seed), 1.0]), seeds=[0, 2])
    assert len(profiles) == 2
    assert summary.metrics["clean_accuracy"].mean[1] == 1.0
    assert summary.metrics["clean_accuracy"].std[1] == 1.0


def test_stability_rejects_mismatched_inputs():
    with pytest.raises(ValueError):
        stability_summary([_profile([0.1, 0.2, 0.3])], [0, 1])
    with pytest.raises(ValueError):
        stability_summary([_profile([0.1, 0.2, 0.3]), _profile([0.1, 0.2])], [0, 1])


def test_connecting_a_model_to_itself_gives_a_flat_profile(mlp, tiny_data):
    _, profile = repair_by_connection(mlp, mlp.copy(), tiny_data, PathTrainConfig(epochs=0))
    errors = profile.column("clean_error")
    assert max(errors) - min(errors) == 0.0
    assert profile.column("clean_loss") == pytest.approx([profile.column("clean_loss")[0]] * 11, rel=1e-9)


def test_repair_rejects_poisoned_bonafide(mlp, tiny_data):
    flags = np.zeros(len(tiny_data), dtype=bool)
    flags[0] = True
    tainted = LabeledDataset(images=tiny_data.images, labels=tiny_data.labels,
                             num_classes=tiny_data.num_classes, poisoned=flags)
    with pytest.raises(PoisoningError):
        repair_by_connection(mlp, mlp.copy(), tainted, PathTrainConfig(epochs=0))


def test_repair_rejects_mismatched_models(mlp, cnn, tiny_data):
    with pytest.raises(LayoutMismatchError):
        repair_by_connection(mlp, cnn, tiny_data, PathTrainConfig(epochs=0))


def test_single_model_repair_ends_at_finetuned_model(mlp, tiny_split):
    train, test = tiny_split
    tune_cfg = TrainConfig(epochs=2, batch_size=16, seed=3)
    curve, profile = repair_single_model(mlp, test, PathTrainConfig(epochs=1, batch_size=16), tune_cfg)
    tuned = finetune(mlp, test, tune_cfg)
    assert np.array_equal(curve.w2.data, tuned.weights.data)
    assert profile.column("clean_loss")[-1] == clean_loss(test)(tuned)
    assert profile.column("clean_loss")[0] == clean_loss(test)(mlp)
