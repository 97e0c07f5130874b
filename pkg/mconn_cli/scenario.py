"""
Scenario Runner - executes a declarative experiment stage by stage
generate/poison -> train endpoints -> attack -> connect -> profile -> report
"""
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from attacks.adaptive import adaptive_backdoor_endpoints, train_endpoint_pair
from attacks.injection import choose_injection_targets, inject_errors
from attacks.pgd import adv_train
from curve_space.curves import init_curve, linear_path
from curve_space.path_trainer import Evaluator, normalize_grid, sample_path, train_path
from data_forge.dataset import LabeledDataset, assert_disjoint
from data_forge.idx import load_idx
from data_forge.poisoning import make_triggered, poison, split_bonafide
from data_forge.synthetic import gen_synthetic, split_train_test
from landscape_analysis.correlation import correlation_profile, prop1_toy_validation
from landscape_analysis.ensemble import ensemble_eval
from landscape_analysis.evaluators import (
    attack_success,
    clean_accuracy,
    clean_loss,
    clean_metrics,
    injection_success,
    triggered_true_error,
)
from landscape_analysis.robustness import barrier_height
from landscape_analysis.similarity import input_grad_similarity
from mconn_cli.checkpoints import save_curve, save_model
from mconn_cli.config import ScenarioConfig
from mconn_cli.reports import write_profile_csv, write_repair_reports, write_similarity_csv
from nn_core.engine import Model, init_model
from repair_baselines.baselines import finetune, noise_sweep, prune_and_retrain, train_scratch
from repair_baselines.repair import repair_by_connection
from repair_baselines.stability import multi_seed_profiles
from repair_baselines.t_selection import select_t, select_t_from_accuracy
from shared.errors import ConfigError, StageFailure
from shared.logging_config import get_logger
from shared.schemas import PathTrainConfig, RepairReport, TrainConfig
from shared.storage import Manifest, output_root

logger = get_logger("cli")

# Raised unwrapped from a stage so the CLI maps them to the configuration exit code
CONFIG_ERRORS = (ConfigError, FileNotFoundError, ValidationError)

TRACKED_PACKAGES = ("numpy", "pydantic", "scikit-learn", "pandas", "PyYAML")


def package_versions() -> Dict[str, str]:
    versions = {}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


@dataclass(slots=True)
class AttackMetrics:
    """How a scenario measures its attack on held-out data"""
    success: Evaluator
    extras: Dict[str, Evaluator] = field(default_factory=dict)
    tampered: Optional[LabeledDataset] = None


class ScenarioRunner:
    def __init__(self, config: ScenarioConfig, output_dir: Optional[Path] = None):
        self.config = config
        self.seed = config.seed
        self.root = Path(output_dir or config.output_dir or output_root() / config.name)
        self.digest = config.digest()
        self.spec = config.model_spec()
        self.grid = normalize_grid(config.analysis.t_grid)
        self.manifest = Manifest(self.root, run={
            "scenario": config.name,
            "kind": config.kind,
            "seed": config.seed,
            "config_digest": self.digest,
            "config": config.model_dump(mode="json"),
            "versions": package_versions(),
        })
        self.summary: Dict[str, Any] = {}
        self.current_stage: Optional[str] = None

    def lineage(self, stage: str, **extra: Any) -> Dict[str, Any]:
        return {"scenario": self.config.name, "seed": self.seed, "config_digest": self.digest,
                "stage": stage, **extra}

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        logger.info("[%s] stage %s started", self.config.name, name)
        started = time.perf_counter()
        self.current_stage = name
        try:
            yield
        except (StageFailure, *CONFIG_ERRORS):
            raise
        except Exception as exc:
            raise StageFailure(name, f"{type(exc).__name__}: {exc}") from exc
        logger.info("[%s] stage %s finished in %.1fs", self.config.name, name, time.perf_counter() - started)

    # configs derived from the scenario seed
    def train_cfg(self, offset: int = 0) -> TrainConfig:
        return self.config.training.model_copy(update={"seed": self.seed + offset})

    def path_cfg(self, seed: Optional[int] = None) -> PathTrainConfig:
        return self.config.repair.path.model_copy(update={"seed": self.seed if seed is None else seed})

    def finetune_cfg(self) -> TrainConfig:
        return self.config.repair.finetune.model_copy(update={"seed": self.seed})

    def run(self) -> Path:
        """Execute every stage; on failure the manifest records the failed stage and partial artifacts stay."""
        handlers = {
            "backdoor": self.run_backdoor,
            "adaptive_backdoor": self.run_backdoor,
            "injection": self.run_injection,
            "evasion": self.run_evasion,
        }
        try:
            with self.stage("data"):
                train, test = self.load_data()
            handlers[self.config.kind](train, test)
            with self.stage("report"):
                self.manifest.json("summary.json", self.summary, self.lineage("report"), kind="summary")
        except StageFailure as exc:
            logger.error("[%s] %s", self.config.name, exc)
            self.manifest.finalize("failed", failed_stage=exc.stage)
            raise
        except CONFIG_ERRORS as exc:
            logger.error("[%s] configuration error in stage %s: %s", self.config.name, self.current_stage, exc)
            self.manifest.finalize("failed", failed_stage=self.current_stage)
            raise
        self.manifest.finalize("ok")
        logger.info("[%s] artifacts written to %s", self.config.name, self.root)
        return self.root

    def load_data(self) -> Tuple[LabeledDataset, LabeledDataset]:
        d = self.config.dataset
        if d.source == "idx":
            full = load_idx(d.idx_images, d.idx_labels, d.num_classes)
        else:
            full = gen_synthetic(d.num_classes, d.samples_per_class, d.image_size, d.noise_level,
                                 seed=self.seed, channels=d.channels)
        if full.image_shape != tuple(self.spec.input_shape):
            raise ConfigError(f"data images {full.image_shape} do not match model input {self.spec.input_shape}")
        train, test = split_train_test(full, d.test_fraction, self.seed)
        assert_disjoint(train, test)
        self.summary["data"] = {"train": len(train), "test": len(test), "source": full.source}
        return train, test

    def save_endpoints(self, stage: str, models: Dict[str, Model]) -> None:
        for name, model in models.items():
            save_model(f"checkpoints/{name}.ckpt", model, self.lineage(stage, model=name), self.manifest)

    # backdoor and adaptive backdoor
    def run_backdoor(self, train: LabeledDataset, test: LabeledDataset) -> None:
        attack = self.config.attack
        with self.stage("poison"):
            poisoned = poison(train, attack.poison_fraction, attack.rule, attack.trigger, self.seed)
            self.summary["poisoned_samples"] = int(poisoned.poisoned.sum())
        with self.stage("endpoints"):
            if self.config.kind == "adaptive_backdoor":
                w1, w2 = adaptive_backdoor_endpoints(self.spec, poisoned, self.path_cfg(), self.train_cfg())
            else:
                w1, w2 = train_endpoint_pair(self.spec, poisoned, self.train_cfg())
            self.save_endpoints("endpoints", {"w1": w1, "w2": w2})

        def attack_metrics(heldout: LabeledDataset) -> AttackMetrics:
            triggered = make_triggered(heldout, attack.rule, attack.trigger)
            return AttackMetrics(
                success=attack_success(triggered),
                extras={"triggered_true_error": triggered_true_error(triggered)},
                tampered=triggered,
            )
        self.repair_sweep(w1, w2, test, attack_metrics)

    def run_injection(self, train: LabeledDataset, test: LabeledDataset) -> None:
        block = self.config.attack.injection
        with self.stage("endpoints"):
            clean1, clean2 = train_endpoint_pair(self.spec, train, self.train_cfg())
        with self.stage("inject"):
            n_keep = min(block.n_keep, len(test) - block.n_targets)
            injspec = choose_injection_targets(
                test, block.n_targets, n_keep, self.seed,
                keep_weight=block.keep_weight, steps=block.steps,
                learning_rate=block.learning_rate, momentum=block.momentum,
            )
            w1, w2 = inject_errors(clean1, test, injspec), inject_errors(clean2, test, injspec)
            self.save_endpoints("inject", {"w1": w1, "w2": w2})
            self.summary["injection"] = injspec.model_dump()

        pool = test.subset(np.setdiff1d(np.arange(len(test)), injspec.target_indices), role="test")
        success = injection_success(test, injspec.target_indices, injspec.target_labels)
        self.repair_sweep(w1, w2, pool, lambda heldout: AttackMetrics(success=success))

    def repair_sweep(self, w1: Model, w2: Model, pool: LabeledDataset,
                     metrics_of: Callable[[LabeledDataset], AttackMetrics]) -> None:
        repair = self.config.repair
        reports: List[RepairReport] = []
        for position, size in enumerate(repair.bonafide_sizes):
            with self.stage(f"bonafide-{size}"):
                bonafide, heldout = split_bonafide(pool, size, self.seed)
                assert_disjoint(bonafide, heldout)
                attack_metrics = metrics_of(heldout)
                evaluators = {
                    "clean": clean_metrics(heldout),
                    "attack_success": attack_metrics.success,
                    **attack_metrics.extras,
                }

            with self.stage(f"connect-{size}"):
                started = time.perf_counter()
                curve, profile = repair_by_connection(w1, w2, bonafide, self.path_cfg(), self.grid,
                                                      evaluators, repair.curve)
                runtime = time.perf_counter() - started
                lineage = self.lineage(f"connect-{size}", bonafide_size=size)
                save_curve(f"checkpoints/curve_n{size}.ckpt", curve, lineage, self.manifest)
                write_profile_csv(f"profile_n{size}.csv", profile, self.manifest, lineage)

                acc = profile.column("clean_accuracy")
                selection = select_t_from_accuracy(self.grid, acc, (acc[0] + acc[-1]) / 2.0, repair.delta_a)
                notes = "" if selection.success else "no t met the accuracy threshold"
                if repair.t_select is not None:
                    kfold = select_t(init_curve(w1, w2, repair.curve), bonafide, repair.t_select,
                                     self.path_cfg(), self.grid)
                    self.summary[f"t_select_kfold_n{size}"] = kfold.model_dump()
                self.summary[f"t_select_n{size}"] = selection.model_dump()
                index = self.grid.index(selection.t)
                attack_col = profile.column("attack_success")
                for label, i in (("endpoint_w1", 0), ("endpoint_w2", len(self.grid) - 1)):
                    reports.append(RepairReport(method=label, bonafide_size=size, chosen_t=self.grid[i],
                                                clean_accuracy=acc[i], attack_success=attack_col[i],
                                                seed=self.seed))
                reports.append(RepairReport(
                    method="path_connection", bonafide_size=size, chosen_t=selection.t,
                    clean_accuracy=acc[index], attack_success=attack_col[index],
                    runtime=runtime, seed=self.seed, notes=notes,
                ))

            with self.stage(f"baselines-{size}"):
                reports.extend(self.baselines(w1, w2, bonafide, heldout, attack_metrics, size))

            if position == 0 and self.config.analysis.similarity and attack_metrics.tampered is not None:
                with self.stage("similarity"):
                    n = self.config.analysis.similarity_samples
                    clean = heldout.subset(np.arange(min(n, len(heldout))))
                    tampered = attack_metrics.tampered.subset(np.arange(min(n, len(attack_metrics.tampered))))
                    records = input_grad_similarity(curve, clean, tampered, self.grid)
                    write_similarity_csv(f"similarity_n{size}.csv", records, self.manifest,
                                         self.lineage("similarity", bonafide_size=size))

            if position == 0 and self.config.analysis.stability_seeds:
                with self.stage("stability"):
                    def run(seed: int):
                        return repair_by_connection(w1, w2, bonafide, self.path_cfg(seed), self.grid,
                                                    evaluators, repair.curve)[1]
                    _, summary = multi_seed_profiles(run, self.config.analysis.stability_seeds)
                    rows = summary.rows()
                    self.manifest.csv(f"stability_n{size}.csv", rows, list(rows[0]),
                                      self.lineage("stability", seeds=summary.seeds), kind="stability")

        with self.stage("report"):
            write_repair_reports("repair_report", reports, self.manifest, self.lineage("report"))

    def baselines(self, w1: Model, w2: Model, bonafide: LabeledDataset, heldout: LabeledDataset,
                  attack_metrics: AttackMetrics, size: int) -> List[RepairReport]:
        repair = self.config.repair
        measure_clean = clean_accuracy(heldout)
        reports = []
        for method in repair.baselines:
            started = time.perf_counter()
            notes = ""
            if method == "noise":
                sweep = noise_sweep(w1, w2, repair.noise_repetitions, self.seed, measure_clean, attack_metrics.success)
                clean, attack = sweep.mean_clean_accuracy, sweep.mean_attack_success
                notes = f"mean over {2 * repair.noise_repetitions} noisy models"
            else:
                if method == "finetune":
                    model = finetune(w1, bonafide, self.finetune_cfg())
                elif method == "scratch":
                    model = train_scratch(self.spec, bonafide, self.finetune_cfg())
                else:
                    model = prune_and_retrain(w1, repair.prune_fraction, bonafide, self.finetune_cfg())
                    notes = f"fraction {repair.prune_fraction}"
                clean, attack = measure_clean(model), attack_metrics.success(model)
            reports.append(RepairReport(
                method=method, bonafide_size=size, clean_accuracy=clean, attack_success=attack,
                runtime=time.perf_counter() - started, seed=self.seed, notes=notes,
            ))
        return reports

    def run_evasion(self, train: LabeledDataset, test: LabeledDataset) -> None:
        pgd = self.config.attack.pgd
        analysis = self.config.analysis
        with self.stage("endpoints"):
            r1, r2 = train_endpoint_pair(self.spec, train, self.train_cfg())
            a1 = adv_train(init_model(self.spec, self.seed), train, pgd, self.train_cfg())
            a2 = adv_train(init_model(self.spec, self.seed + 1), train, pgd, self.train_cfg(1))
            self.save_endpoints("endpoints", {"regular1": r1, "regular2": r2, "robust1": a1, "robust2": a2})

        eval_set = test.subset(np.arange(min(analysis.eval_samples, len(test))))
        pairs = {"regular-regular": (r1, r2), "regular-robust": (r1, a1), "robust-robust": (a1, a2)}
        curves = {}
        for label, (m1, m2) in pairs.items():
            with self.stage(f"connect-{label}"):
                curves[label] = train_path(init_curve(m1, m2, self.config.repair.curve), train, self.path_cfg())
                save_curve(f"checkpoints/curve_{label}.ckpt", curves[label],
                           self.lineage(f"connect-{label}"), self.manifest)
            with self.stage(f"profile-{label}"):
                profile, pcc = correlation_profile(curves[label], eval_set, pgd, self.grid,
                                                   analysis.hessian_samples, self.seed)
                write_profile_csv(f"profile_{label}.csv", profile, self.manifest,
                                  self.lineage(f"profile-{label}"))
                self.summary[label] = {
                    "pcc_robustness_lambda_max": pcc,
                    "barrier_clean_loss": barrier_height(profile, "clean_loss"),
                    "barrier_robustness_loss": barrier_height(profile, "robustness_loss"),
                }
                straight = sample_path(linear_path(m1, m2), self.grid, {"clean_loss": clean_loss(eval_set)})
                self.summary[label]["barrier_clean_loss_linear"] = barrier_height(straight, "clean_loss")

        with self.stage("ensemble"):
            report = ensemble_eval(curves["regular-regular"], analysis.ensemble_t, eval_set, r1, pgd)
            self.summary["ensemble"] = report.model_dump()
        with self.stage("prop1"):
            self.summary["prop1"] = prop1_toy_validation(pgd.epsilon, self.grid).model_dump()


def run_scenario(config: ScenarioConfig, output_dir: Optional[Path] = None) -> Path:
    return ScenarioRunner(config, output_dir).run()
