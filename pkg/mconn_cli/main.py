"""
mconn - command-line entry point for the mode connectivity lab
Exit codes: 0 success, 2 configuration error, 3 stage failure
"""
import argparse
import os
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

# Ensure sibling packages are importable when run as a script
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from attacks.injection import choose_injection_targets, run_injection  # noqa: E402
from attacks.pgd import adv_train, attack_dataset  # noqa: E402
from curve_space.curves import BEZIER2, CURVE_KINDS, init_curve  # noqa: E402
from curve_space.path_trainer import sample_path, train_path, train_path_robust  # noqa: E402
from data_forge.idx import load_idx, save_idx  # noqa: E402
from data_forge.poisoning import make_triggered, poison  # noqa: E402
from data_forge.synthetic import gen_synthetic, split_train_test  # noqa: E402
from landscape_analysis.evaluators import (  # noqa: E402
    attack_success,
    clean_accuracy,
    clean_metrics,
    lambda_max_stats,
    robustness_loss_metric,
    triggered_true_error,
)
from landscape_analysis.hessian import lambda_max  # noqa: E402
from landscape_analysis.similarity import input_grad_similarity  # noqa: E402
from mconn_cli.checkpoints import load_curve, load_dataset, load_model, save_curve, save_dataset, save_model  # noqa: E402
from mconn_cli.config import load_scenario  # noqa: E402
from mconn_cli.reports import write_profile_csv, write_similarity_csv  # noqa: E402
from mconn_cli.scenario import run_scenario  # noqa: E402
from nn_core.architectures import build_spec  # noqa: E402
from nn_core.engine import init_model  # noqa: E402
from nn_core.evaluation import evaluate  # noqa: E402
from nn_core.trainer import train  # noqa: E402
from repair_baselines.baselines import (  # noqa: E402
    PRUNE_PRESETS,
    finetune,
    noise_sweep,
    preset_fraction,
    prune_and_retrain,
    train_scratch,
)
from repair_baselines.repair import repair_by_connection, repair_single_model  # noqa: E402
from repair_baselines.t_selection import DELTA_A_KFOLD, select_t  # noqa: E402
from shared.errors import ConfigError, MConnError, StageFailure  # noqa: E402
from shared.logging_config import configure_logging, get_logger  # noqa: E402
from shared.schemas import (  # noqa: E402
    AllTargets,
    PathTrainConfig,
    PGDConfig,
    SingleTarget,
    TrainConfig,
    TriggerSpec,
    TSelectConfig,
)
from shared.storage import dumps_json, write_json  # noqa: E402

logger = get_logger("cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def _train_cfg(args, cls=TrainConfig):
    return cls(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
               momentum=args.momentum, weight_decay=args.weight_decay, seed=args.seed)


def _pgd_cfg(args) -> PGDConfig:
    return PGDConfig(epsilon=args.epsilon, steps=args.pgd_steps, step_size=args.step_size,
                     random_start=args.random_start, seed=args.seed)


def _rule(args):
    if args.rule == "all":
        return AllTargets(modulus=args.modulus)
    return SingleTarget(target=args.target)


def _emit(obj, out: Optional[str]) -> None:
    if out:
        write_json(out, obj)
    else:
        sys.stdout.write(dumps_json(obj))


def cmd_gen_data(args) -> int:
    if args.from_idx:
        data = load_idx(args.from_idx[0], args.from_idx[1], args.num_classes)
    else:
        data = gen_synthetic(args.num_classes, args.samples_per_class, args.image_size,
                             args.noise, args.seed, args.channels)
    if args.test_out:
        train_set, test_set = split_train_test(data, args.test_fraction, args.seed)
        save_dataset(args.out, train_set)
        save_dataset(args.test_out, test_set)
    else:
        save_dataset(args.out, data)
    return EXIT_OK


def cmd_poison(args) -> int:
    data = load_dataset(args.data)
    trig = TriggerSpec(height=args.trigger_size, width=args.trigger_size)
    rule = _rule(args)
    if args.triggered:
        save_dataset(args.out, make_triggered(data, rule, trig))
    else:
        save_dataset(args.out, poison(data, args.fraction, rule, trig, args.seed))
    return EXIT_OK


def cmd_train(args) -> int:
    data = load_dataset(args.data)
    spec = build_spec(args.arch, data.image_shape, data.num_classes, tuple(args.hidden), tuple(args.channels))
    model = init_model(spec, args.seed)
    if args.command == "advtrain":
        model = adv_train(model, data, _pgd_cfg(args), _train_cfg(args))
    else:
        model = train(model, data, _train_cfg(args))
    save_model(args.out, model, {"seed": args.seed, "data": str(args.data), "command": args.command})
    return EXIT_OK


def cmd_inject(args) -> int:
    model = load_model(args.model)
    data = load_dataset(args.data)
    spec = choose_injection_targets(data, args.n_targets, args.n_keep, args.seed, model=model,
                                    steps=args.steps, learning_rate=args.lr, keep_weight=args.keep_weight)
    result = run_injection(model, data, spec)
    save_model(args.out, result.model, {"seed": args.seed, "source_model": str(args.model)})
    _emit({"success": result.success, "steps_used": result.steps_used,
           "target_success": result.target_success, "keep_agreement": result.keep_agreement,
           "spec": spec}, args.report)
    return EXIT_OK if result.success else EXIT_STAGE


def cmd_connect(args) -> int:
    w1, w2 = load_model(args.w1), load_model(args.w2)
    data = load_dataset(args.data)
    curve = init_curve(w1, w2, args.curve, endpoints_trainable=args.endpoints_trainable)
    cfg = _train_cfg(args, PathTrainConfig)
    if args.command == "connect-robust":
        curve = train_path_robust(curve, data, _pgd_cfg(args), cfg)
    else:
        curve = train_path(curve, data, cfg)
    save_curve(args.out, curve, {"seed": args.seed, "w1": str(args.w1), "w2": str(args.w2), "command": args.command})
    return EXIT_OK


def cmd_attack_pgd(args) -> int:
    model = load_model(args.model)
    data = load_dataset(args.data)
    adversarial = data.evolve(images=attack_dataset(model, data, _pgd_cfg(args)), role="adversarial")
    save_dataset(args.out, adversarial)
    if args.idx_out:
        save_idx(adversarial.images, adversarial.labels, f"{args.idx_out}-images.idx", f"{args.idx_out}-labels.idx")
    _emit({"clean": evaluate(model, data.images, data.labels),
           "adversarial": evaluate(model, adversarial.images, adversarial.labels)}, args.report)
    return EXIT_OK


def _eval_set(args):
    evaluators = {}
    if args.eval:
        evaluators["clean"] = clean_metrics(load_dataset(args.eval))
    if args.triggered:
        triggered = load_dataset(args.triggered)
        evaluators["attack_success"] = attack_success(triggered)
        evaluators["triggered_true_error"] = triggered_true_error(triggered)
    return evaluators or None


def cmd_repair(args) -> int:
    bonafide = load_dataset(args.bonafide)
    cfg = _train_cfg(args, PathTrainConfig)
    w1 = load_model(args.w1)
    if args.w2:
        curve, profile = repair_by_connection(w1, load_model(args.w2), bonafide, cfg,
                                              evaluators=_eval_set(args), kind=args.curve)
    else:
        curve, profile = repair_single_model(w1, bonafide, cfg, evaluators=_eval_set(args), kind=args.curve)
    out = Path(args.out_dir)
    save_curve(out / "curve.ckpt", curve, {"seed": args.seed, "bonafide": str(args.bonafide)})
    write_profile_csv(out / "profile.csv", profile)
    return EXIT_OK


def cmd_baseline(args) -> int:
    bonafide = load_dataset(args.bonafide)
    cfg = _train_cfg(args)
    if args.method == "noise":
        if not (args.w2 and args.eval and args.triggered):
            raise ConfigError("noise baseline needs --w2, --eval and --triggered")
        clean, triggered = load_dataset(args.eval), load_dataset(args.triggered)
        sweep = noise_sweep(load_model(args.model), load_model(args.w2), args.repetitions, args.seed,
                            clean_accuracy(clean), attack_success(triggered))
        _emit(sweep, args.report)
        return EXIT_OK
    if not args.out:
        raise ConfigError(f"{args.method} baseline needs --out")
    if args.method == "scratch":
        model = train_scratch(load_model(args.model).spec, bonafide, cfg)
    elif args.method == "prune":
        model = prune_and_retrain(load_model(args.model), preset_fraction(args.preset, args.fraction), bonafide, cfg)
    else:
        model = finetune(load_model(args.model), bonafide, cfg)
    save_model(args.out, model, {"seed": args.seed, "baseline": args.method})
    return EXIT_OK


def cmd_select_t(args) -> int:
    curve = load_curve(args.curve)
    bonafide = load_dataset(args.bonafide)
    cfg = TSelectConfig(k=args.k, delta_a=args.delta_a, seed=args.seed)
    _emit(select_t(curve, bonafide, cfg, _train_cfg(args, PathTrainConfig)), args.report)
    return EXIT_OK


def cmd_profile(args) -> int:
    curve = load_curve(args.curve)
    data = load_dataset(args.data)
    evaluators = {"clean": clean_metrics(data)}
    if args.triggered:
        triggered = load_dataset(args.triggered)
        evaluators["attack_success"] = attack_success(triggered)
        evaluators["triggered_true_error"] = triggered_true_error(triggered)
    if args.robust:
        evaluators["robustness_loss"] = robustness_loss_metric(data, _pgd_cfg(args))
    if args.hessian_samples:
        evaluators["lambda_max"] = lambda_max_stats(data, args.hessian_samples, args.seed)
    profile = sample_path(curve, args.grid, evaluators, max_workers=args.workers)
    write_profile_csv(args.out, profile)
    return EXIT_OK


def cmd_hessian(args) -> int:
    model = load_model(args.model)
    data = load_dataset(args.data)
    est = lambda_max(model, data.images[args.index], int(data.labels[args.index]),
                     args.rel_tol, args.max_iter, args.seed)
    _emit(est.summary(), args.report)
    return EXIT_OK


def cmd_similarity(args) -> int:
    curve = load_curve(args.curve)
    records = input_grad_similarity(curve, load_dataset(args.clean), load_dataset(args.tampered), args.grid)
    write_similarity_csv(args.out, records)
    return EXIT_OK


def cmd_scenario(args) -> int:
    config = load_scenario(args.config, args.set or [])
    run_scenario(config, Path(args.output_dir) if args.output_dir else None)
    return EXIT_OK


def _add_train_flags(p, epochs=100, lr=0.05):
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)


def _add_pgd_flags(p):
    p.add_argument("--epsilon", type=float, default=8 / 255)
    p.add_argument("--pgd-steps", type=int, default=10)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--random-start", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mconn", description="Mode connectivity laboratory")
    parser.add_argument("--log-level", default=None, help="overrides MCONN_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic glyph dataset or import IDX files")
    p.add_argument("--out", required=True)
    p.add_argument("--test-out", default=None, help="also write a stratified test split here")
    p.add_argument("--test-fraction", type=float, default=0.3)
    p.add_argument("--from-idx", nargs=2, metavar=("IMAGES", "LABELS"))
    p.add_argument("--num-classes", type=int, default=10)
    p.add_argument("--samples-per-class", type=int, default=500)
    p.add_argument("--image-size", type=int, default=12)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("poison", help="poison a dataset or build a fully triggered evaluation set")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fraction", type=float, default=0.1)
    p.add_argument("--rule", choices=["single", "all"], default="single")
    p.add_argument("--target", type=int, default=1)
    p.add_argument("--modulus", type=int, default=9)
    p.add_argument("--trigger-size", type=int, default=3)
    p.add_argument("--triggered", action="store_true", help="stamp every sample and label it with its target")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_poison)

    for name in ("train", "advtrain"):
        p = sub.add_parser(name, help=f"{'adversarially ' if name == 'advtrain' else ''}train a fresh model")
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--arch", choices=["cnn", "mlp"], default="cnn")
        p.add_argument("--hidden", type=int, nargs="+", default=[32])
        p.add_argument("--channels", type=int, nargs="+", default=[8, 16])
        _add_train_flags(p)
        if name == "advtrain":
            _add_pgd_flags(p)
        p.set_defaults(handler=cmd_train)

    p = sub.add_parser("inject", help="inject errors into a model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--n-targets", type=int, default=4)
    p.add_argument("--n-keep", type=int, default=996)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--keep-weight", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_inject)

    for name in ("connect", "connect-robust"):
        p = sub.add_parser(name, help="train a curve between two models")
        p.add_argument("--w1", required=True)
        p.add_argument("--w2", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--curve", choices=CURVE_KINDS, default=BEZIER2)
        p.add_argument("--endpoints-trainable", action="store_true")
        _add_train_flags(p, lr=0.01)
        if name == "connect-robust":
            _add_pgd_flags(p)
        p.set_defaults(handler=cmd_connect)

    p = sub.add_parser("attack-pgd", help="craft PGD adversarial examples")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--idx-out", default=None, help="also export as <prefix>-images.idx / <prefix>-labels.idx")
    p.add_argument("--report", default=None)
    p.add_argument("--seed", type=int, default=0)
    _add_pgd_flags(p)
    p.set_defaults(handler=cmd_attack_pgd)

    p = sub.add_parser("repair", help="repair by path connection (one model: fine-tune, then connect)")
    p.add_argument("--w1", required=True)
    p.add_argument("--w2", default=None)
    p.add_argument("--bonafide", required=True)
    p.add_argument("--eval", default=None)
    p.add_argument("--triggered", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--curve", choices=CURVE_KINDS, default=BEZIER2)
    _add_train_flags(p, lr=0.01)
    p.set_defaults(handler=cmd_repair)

    p = sub.add_parser("baseline", help="comparison baselines")
    p.add_argument("method", choices=["finetune", "scratch", "noise", "prune"])
    p.add_argument("--model", required=True)
    p.add_argument("--w2", default=None)
    p.add_argument("--bonafide", required=True)
    p.add_argument("--eval", default=None)
    p.add_argument("--triggered", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--report", default=None)
    p.add_argument("--repetitions", type=int, default=50)
    p.add_argument("--preset", choices=sorted(PRUNE_PRESETS), default="resnet")
    p.add_argument("--fraction", type=float, default=None)
    _add_train_flags(p)
    p.set_defaults(handler=cmd_baseline)

    p = sub.add_parser("select-t", help="k-fold t-selection on bonafide data")
    p.add_argument("--curve", required=True)
    p.add_argument("--bonafide", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--delta-a", type=float, default=DELTA_A_KFOLD)
    p.add_argument("--report", default=None)
    _add_train_flags(p, lr=0.01)
    p.set_defaults(handler=cmd_select_t)

    p = sub.add_parser("profile", help="sample metrics along a curve")
    p.add_argument("--curve", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--triggered", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=float, nargs="+", default=None)
    p.add_argument("--robust", action="store_true", help="record robustness loss")
    p.add_argument("--hessian-samples", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    _add_pgd_flags(p)
    p.set_defaults(handler=cmd_profile)

    p = sub.add_parser("hessian", help="dominant input-Hessian eigenvalue at one sample")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--rel-tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--report", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_hessian)

    p = sub.add_parser("similarity", help="input-gradient similarity along a curve")
    p.add_argument("--curve", required=True)
    p.add_argument("--clean", required=True)
    p.add_argument("--tampered", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=float, nargs="+", default=None)
    p.set_defaults(handler=cmd_similarity)

    p = sub.add_parser("scenario", help="declarative end-to-end experiments")
    scenario_sub = p.add_subparsers(dest="scenario_command", required=True)
    run = scenario_sub.add_parser("run", help="run a scenario file")
    run.add_argument("config")
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted override, repeatable")
    run.add_argument("--output-dir", default=None)
    run.set_defaults(handler=cmd_scenario)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        configure_logging(args.log_level.upper())
    else:
        configure_logging()
    try:
        return args.handler(args)
    except (ValidationError, ConfigError, FileNotFoundError) as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except StageFailure as exc:
        logger.error("%s", exc)
        return EXIT_STAGE
    except (MConnError, ValueError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
