"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/schema error, 3 numerical
failure. Failures print one JSON line to stderr.
"""
import argparse
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import io
from . import kd_loss as kd
from .eigen import ConvergenceError
from .metrics import evaluate_errors
from .pipeline import (
    VARIANTS,
    ExperimentConfig,
    SyntheticSpec,
    evaluate,
    generate_synthetic,
    predict_teachers,
    prepare_soft_labels,
    run_ablation,
    run_experiment,
    train_student,
    train_teacher,
)
from .shape_model import fit_shape_model, soften

OUT_ROOT_ENV = "KDLANDMARKS_OUT"

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _out_path(args, default_name):
    if args.out is not None:
        return Path(args.out)
    return Path(os.environ.get(OUT_ROOT_ENV, ".")) / default_name


def _echo(config):
    print(json.dumps(config, indent=1, sort_keys=True))


def _parse_norm_pair(text):
    try:
        a, b = (int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--norm-pair expects 'i,j', got {text!r}") from None
    return a, b


# -- config resolution ----------------------------------------------------------

_CONFIG_FLAGS = {
    "seed": "seed",
    "teacher_epochs": "teacher_epochs",
    "student_epochs": "student_epochs",
    "teacher_batch": "teacher_batch",
    "student_batch": "student_batch",
    "m_tilde": "m_tilde",
}


def _add_config_flags(p):
    p.add_argument("--config", help="ExperimentConfig JSON file")
    p.add_argument("--seed", type=int)
    p.add_argument("--teacher-epochs", type=int)
    p.add_argument("--student-epochs", type=int)
    p.add_argument("--teacher-batch", type=int)
    p.add_argument("--student-batch", type=int)
    p.add_argument("--m-tilde", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--phi", type=float)


def resolve_config(args):
    """defaults < config file < flags."""
    data = {}
    if getattr(args, "config", None):
        data = io.load_json(args.config)
    try:
        config = ExperimentConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise io.FormatError(f"invalid config: {exc}", args.config) from exc
    overrides = {
        field: getattr(args, flag)
        for flag, field in _CONFIG_FLAGS.items()
        if getattr(args, flag, None) is not None
    }
    config = replace(config, **overrides)
    loss_overrides = {k: getattr(args, k) for k in ("sigma", "phi") if getattr(args, k, None) is not None}
    if loss_overrides:
        config = replace(config, loss=replace(config.loss, **loss_overrides))
    return config


# -- subcommands -----------------------------------------------------------

def cmd_gen_data(args):
    spec_data = io.load_json(args.spec) if args.spec else {}
    if args.seed is not None:
        spec_data["seed"] = args.seed
    try:
        spec = SyntheticSpec(**spec_data)
    except TypeError as exc:
        raise io.FormatError(f"invalid synthetic spec: {exc}", args.spec) from exc
    resolved = asdict(spec)
    _echo(resolved)
    out = _out_path(args, "data")
    out.mkdir(parents=True, exist_ok=True)
    io.dump_json(resolved, out / "config.json")
    io.save_dataset(generate_synthetic(spec), out / "dataset.json")


def cmd_fit_asm(args):
    dataset = io.load_dataset(args.data)
    model = fit_shape_model(dataset.hard[dataset.indices("train")], rank_epsilon=args.rank_epsilon)
    _echo({"data": args.data, "rank_epsilon": args.rank_epsilon,
           "retained_count": model.retained_count})
    io.save_shape_model(model, _out_path(args, "shape_model.json"))


def cmd_gen_soft(args):
    dataset = io.load_dataset(args.data)
    model = io.load_shape_model(args.model)
    _echo({"data": args.data, "model": args.model, "m_tilde": args.m_tilde})
    dataset = replace(dataset, soft=soften(model, dataset.hard, args.m_tilde))
    io.save_dataset(dataset, _out_path(args, "dataset_soft.json"))


def _with_soft(dataset, config):
    if dataset.soft is None:
        dataset, _ = prepare_soft_labels(dataset, config.m_tilde)
    return dataset


def cmd_train_teacher(args):
    config = resolve_config(args)
    _echo(config.to_dict())
    dataset = io.load_dataset(args.data)
    if args.labels == "soft":
        dataset = _with_soft(dataset, config)
    model = train_teacher(dataset, args.labels, config)
    io.save_checkpoint(model, _out_path(args, f"teacher_{args.labels}.json"))


def cmd_train_student(args):
    config = resolve_config(args)
    _echo({**config.to_dict(), "variant": args.variant})
    dataset = io.load_dataset(args.data)
    tough = io.load_checkpoint(args.tough)
    tolerant = io.load_checkpoint(args.tolerant)
    preds = predict_teachers(tough, tolerant, dataset)
    model = train_student(dataset, preds, config, args.variant, (tough, tolerant))
    io.save_checkpoint(model, _out_path(args, "student.json"))


def cmd_eval(args):
    dataset = io.load_dataset(args.data)
    model = io.load_checkpoint(args.model)
    norm_pair = _parse_norm_pair(args.norm_pair) if args.norm_pair else None
    _echo({"model": args.model, "data": args.data, "split": args.split,
           "norm_pair": norm_pair, "tag": args.tag})
    report = evaluate(model, dataset, args.split, norm_pair, args.tag)
    io.save_report(report, _out_path(args, "report.json"))
    print(json.dumps({"nme": report.nme_percent, "fr": report.fr_percent, "auc": report.auc}))


def cmd_ablate(args):
    config = resolve_config(args)
    resolved = {**config.to_dict(), "seeds": args.seeds}
    _echo(resolved)
    dataset = io.load_dataset(args.data)
    out = _out_path(args, "ablation")
    out.mkdir(parents=True, exist_ok=True)
    io.dump_json(resolved, out / "config.json")
    report = run_ablation(dataset, config, seeds=args.seeds, jobs=args.jobs)
    io.export_ablation_csv(report.rows, out / "ablation.csv")
    io.dump_json(report.to_dict(), out / "ablation.json")
    for variant, med in report.medians().items():
        print(f"{variant}: median nme {med['nme']:.4f} fr {med['fr']:.2f} auc {med['auc']:.4f}")


def cmd_run(args):
    config = resolve_config(args)
    _echo(config.to_dict())
    dataset = io.load_dataset(args.data)
    out = _out_path(args, "run")
    out.mkdir(parents=True, exist_ok=True)
    io.dump_json(config.to_dict(), out / "config.json")
    result = run_experiment(dataset, config)
    if result["shape_model"] is not None:
        io.save_shape_model(result["shape_model"], out / "shape_model.json")
    io.save_checkpoint(result["tough"], out / "teacher_tough.json")
    io.save_checkpoint(result["tolerant"], out / "teacher_tolerant.json")
    io.save_teacher_predictions(result["teacher_preds"], out / "teacher_preds.json")
    io.save_checkpoint(result["student"], out / "student.json")
    io.save_report(result["report"], out / "report.json")
    io.export_ced_csv(result["report"].ced, out / "ced_student.csv")
    print(json.dumps({"nme": result["report"].nme_percent, "fr": result["report"].fr_percent,
                      "auc": result["report"].auc}))


def cmd_ced(args):
    if bool(args.errors) == bool(args.from_eval):
        raise UsageError("ced: exactly one of --errors or --from-eval is required")
    if args.errors:
        report = evaluate_errors(io.read_errors_csv(args.errors), args.max_threshold, args.samples)
        ced = report.ced
    else:
        ced = io.load_report(args.from_eval).ced
    _echo({"errors": args.errors, "from_eval": args.from_eval})
    io.export_ced_csv(ced, _out_path(args, "ced.csv"))
    if args.svg:
        io.write_ced_svg(ced, args.svg)


def loss_sweep_rows(gt, te, sigma, grid, te_tolerant=None, phi=2.0):
    """Rows ``(pr, region, omega, aloss, kd_loss)`` over ``grid + 1`` points in [-0.5, 0.5]."""
    te_tolerant = te if te_tolerant is None else te_tolerant
    config = kd.LossConfig(sigma=sigma, phi=phi)
    pr = np.linspace(-0.5, 0.5, grid + 1)
    gt_a = np.full_like(pr, gt)
    te_a = np.full_like(pr, te)
    regions = kd.classify_region(gt_a, pr, te_a, sigma)
    omega = kd.assist_weight(gt_a, pr, te_a, sigma)
    aloss = kd.aloss_scalar(gt_a, pr, te_a, sigma)
    total = kd.kd_terms(gt_a, pr, te_a, np.full_like(pr, te_tolerant), config)[0]
    names = {r.value: r.name.lower() for r in kd.Region}
    return [(float(p), names[int(r)], float(w), float(a), float(t))
            for p, r, w, a, t in zip(pr, regions, omega, aloss, total)]


def cmd_loss_sweep(args):
    if args.grid < 1:
        raise UsageError("loss-sweep: --grid must be >= 1")
    _echo({"gt": args.gt, "te": args.te, "te_tolerant": args.te_tolerant,
           "sigma": args.sigma, "phi": args.phi, "grid": args.grid})
    rows = loss_sweep_rows(args.gt, args.te, args.sigma, args.grid, args.te_tolerant, args.phi)
    io.write_csv(_out_path(args, "loss_sweep.csv"), ["pr", "region", "omega", "aloss", "kd_loss"], rows)


def build_parser():
    parser = _Parser(prog="kdlandmarks", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--spec", help="SyntheticSpec JSON file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("fit-asm", help="fit and save a shape model on the train split")
    p.add_argument("--data", required=True)
    p.add_argument("--rank-epsilon", type=float, default=1e-10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit_asm)

    p = sub.add_parser("gen-soft", help="add soft landmarks to a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--m-tilde", type=float, default=0.9)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_soft)

    p = sub.add_parser("train-teacher", help="train a teacher with L2")
    p.add_argument("--data", required=True)
    p.add_argument("--labels", choices=["hard", "soft"], required=True)
    _add_config_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("train-student", help="train a student against two teachers")
    p.add_argument("--data", required=True)
    p.add_argument("--tough", required=True)
    p.add_argument("--tolerant", required=True)
    p.add_argument("--variant", choices=VARIANTS, default="KD-full")
    _add_config_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--norm-pair")
    p.add_argument("--tag")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="loss-function ablation over several seeds")
    p.add_argument("--data", required=True)
    _add_config_flags(p)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("run", help="full two-phase protocol, writing a run directory")
    p.add_argument("--data", required=True)
    _add_config_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ced", help="export a CED curve")
    p.add_argument("--errors")
    p.add_argument("--from-eval")
    p.add_argument("--max-threshold", type=float, default=0.1)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--svg")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ced)

    p = sub.add_parser("loss-sweep", help="tabulate ALoss and KD-Loss over a prediction grid")
    p.add_argument("--gt", type=float, default=0.0)
    p.add_argument("--te", type=float, default=0.4)
    p.add_argument("--te-tolerant", type=float)
    p.add_argument("--sigma", type=float, default=0.4)
    p.add_argument("--phi", type=float, default=2.0)
    p.add_argument("--grid", type=int, default=1000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_loss_sweep)
    return parser


def _fail(kind, exc, code):
    sys.stderr.write(json.dumps({"error": kind, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except (FloatingPointError, ConvergenceError, OverflowError) as exc:
        return _fail("numerical", exc, EXIT_NUMERIC)
    except (io.FormatError, ValueError, KeyError, OSError, IndexError) as exc:
        return _fail("data", exc, EXIT_DATA)
    return 0


if __name__ == "__main__":
    sys.exit(main())
