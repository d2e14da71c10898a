"""Command line entry point: ``advlab <subcommand> [flags]``.

Subcommands: gen-data, train, attack, sweep, defend, transfer. Every
command writes a ``<output stem>.config.json`` sidecar holding its fully
resolved settings. A ``--config FILE`` JSON object may supply any flag
(keys spelled like the flags, without leading dashes); explicit flags win.

Exit status: 0 on success, 1 on runtime failure, 2 on usage errors.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import desk
from .attacks import (ALL_METHODS, DEFAULT_ALPHA, DEFAULT_ITERATIONS, AttackConfig,
                      AttackMethod, RandomTarget, attack_batch, run_attack, write_pnm)
from .datasets import Dataset, generate_synthetic, load_split, save_split
from .defenses import (AdvTrainConfig, DistillConfig, adversarial_train, distill,
                       train_detector, write_verdicts_csv)
from .evaluation import (DEFAULT_EPS_GRID, METRICS, SweepConfig, TransferReport,
                         render_plot_svg, run_sweep, run_transfer, write_report_csv)
from .network import (LayerSpec, TrainConfig, accuracy, conv2d, dense, desk_layers, flatten,
                      init_network, load_checkpoint, maxpool2x2, relu, save_checkpoint,
                      train_sgd)


class UsageError(Exception):
    pass


def _eps_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad epsilon list {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty epsilon list")
    return values


def _methods(text: str) -> list[AttackMethod]:
    if text == "all":
        return list(ALL_METHODS)
    aliases = {"fgsm": AttackMethod.FAST_GRADIENT_SIGN,
               "nontargeted": AttackMethod.ITERATIVE_NONTARGETED,
               "targeted": AttackMethod.ITERATIVE_TARGETED}
    out = []
    for name in text.split(","):
        name = name.strip()
        try:
            out.append(aliases.get(name) or AttackMethod(name))
        except ValueError:
            raise argparse.ArgumentTypeError(f"unknown attack method {name!r}") from None
    return out


def _method(text: str) -> AttackMethod:
    methods = _methods(text)
    if len(methods) != 1:
        raise argparse.ArgumentTypeError("exactly one method expected")
    return methods[0]


def _target(text: str):
    if text == "random":
        return "random"
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("target must be a class index or 'random'") from None


# ---------------------------------------------------------------------------
# parser

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of flag values (flags on the command line win)")
    p.add_argument("--seed", type=int, default=0, help="the single seed for this run")
    p.add_argument("--jobs", type=int, default=1,
                   help="worker cap; results do not depend on it")


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data-dir", help="directory of IDX files (MNIST names); "
                                      "default: the built-in synthetic corpus")


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--grad-norm-limit", type=float, default=None)
    p.add_argument("--label-smoothing", type=float, default=0.0)


def _attack_flags(p: argparse.ArgumentParser, eps_default) -> None:
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--iterations", type=int, default=DEFAULT_ITERATIONS)
    p.add_argument("--eps", type=_eps_list, default=list(eps_default),
                   help="comma-separated epsilon values in [0, 1] pixel units")
    p.add_argument("--target", type=_target, default="random",
                   help="class index or 'random' (targeted attacks only)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advlab", description=__doc__.splitlines()[0],
                                     allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    parser.subcommands = sub.choices

    p = sub.add_parser("gen-data", allow_abbrev=False,
                       help="write the synthetic corpus as IDX files")
    _common(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-train", type=int, default=desk.TRAIN_SIZE)
    p.add_argument("--n-test", type=int, default=desk.TEST_SIZE)
    p.add_argument("--size", type=int, default=desk.IMAGE_SIZE)
    p.add_argument("--classes", type=int, default=desk.CLASS_COUNT)
    p.set_defaults(seed=desk.TRAIN_SEED)

    p = sub.add_parser("train", allow_abbrev=False,
                       help="train the reference model and save a checkpoint")
    _common(p)
    _data_flags(p)
    _train_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path (.json)")

    p = sub.add_parser("attack", allow_abbrev=False,
                       help="attack one test image; export images and predictions")
    _common(p)
    _data_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--index", type=int, default=0, help="test-split image index")
    p.add_argument("--method", type=_method, default=AttackMethod.FAST_GRADIENT_SIGN)
    _attack_flags(p, [0.05])
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("sweep", allow_abbrev=False,
                       help="epsilon sweep; writes CSV and SVG")
    _common(p)
    _data_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--methods", type=_methods, default=list(ALL_METHODS))
    p.add_argument("--n", type=int, default=20, help="subset size")
    p.add_argument("--metric", choices=METRICS, default="top1_rel")
    _attack_flags(p, DEFAULT_EPS_GRID)
    p.add_argument("--out", required=True, help="CSV path; the SVG goes next to it")

    p = sub.add_parser("defend", allow_abbrev=False,
                       help="train a defended model")
    _common(p)
    _data_flags(p)
    _train_flags(p)
    p.add_argument("--method", choices=("adversarial", "distill", "detector"), required=True)
    p.add_argument("--attack", type=_method, default=AttackMethod.FAST_GRADIENT_SIGN)
    _attack_flags(p, [0.1])
    p.add_argument("--mix-ratio", type=float, default=0.5)
    p.add_argument("--temperature", type=float, default=20.0)
    p.add_argument("--model", help="victim model whose adversarial examples the detector "
                                   "learns to flag (detector only)")
    p.add_argument("--n", type=int, default=1000, help="clean/adversarial pairs (detector)")
    p.add_argument("--verdicts", help="CSV of detector verdicts on held-out test images")
    p.add_argument("--out", required=True, help="checkpoint path (.json)")

    p = sub.add_parser("transfer", allow_abbrev=False,
                       help="surrogate-to-target transfer experiment")
    _common(p)
    _data_flags(p)
    p.add_argument("--source", required=True)
    p.add_argument("--target-model", required=True)
    p.add_argument("--method", type=_method, default=AttackMethod.FAST_GRADIENT_SIGN)
    p.add_argument("--n", type=int, default=20)
    _attack_flags(p, [0.1])
    p.add_argument("--out", required=True)
    return parser


def _config_tokens(path: str, parser: argparse.ArgumentParser, command: str) -> list[str]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"config {path} is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    subparser = parser.subcommands[command]
    known = {opt for action in subparser._actions for opt in action.option_strings}
    tokens = []
    for key, value in doc.items():
        flag = "--" + key.replace("_", "-")
        if flag not in known or flag == "--config":
            raise UsageError(f"config key {key!r} is not a flag of {command!r}")
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        tokens += [flag, str(value)]
    return tokens


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    command = argv[0] if argv else None
    if command in parser.subcommands:
        # find --config before the full parse so the file can supply required flags
        pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
        pre.add_argument("--config")
        known, _ = pre.parse_known_args(argv[1:])
        if known.config:
            try:
                tokens = _config_tokens(known.config, parser, command)
            except UsageError as e:
                parser.subcommands[command].error(str(e))
            # config first so repeated command-line flags override it
            argv = [command] + tokens + argv[1:]
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# helpers

def _jsonable(value):
    if isinstance(value, AttackMethod):
        return value.value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def _write_sidecar(output: str | Path, args: argparse.Namespace, extra: dict | None = None,
                   outputs: list | None = None) -> Path:
    resolved = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k != "config"}
    doc = {"command": args.command, "resolved_config": resolved, "seed": args.seed}
    if outputs:
        doc["outputs"] = [str(o) for o in outputs]
    if extra:
        doc.update(extra)
    path = Path(output)
    path = path.with_name(path.stem + ".config.json") if path.suffix else path / "run.config.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")
    return path


def _load_data(args, split: str, class_count: int | None = None) -> Dataset:
    if args.data_dir:
        return load_split(args.data_dir, split, class_count)
    train, test = desk.desk_corpus()
    return train if split == "train" else test


def _train_config(args) -> TrainConfig:
    return TrainConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                       seed=args.seed, grad_norm_limit=args.grad_norm_limit,
                       label_smoothing=args.label_smoothing)


def _attack_config(args, method: AttackMethod, eps: float, seed: int) -> AttackConfig:
    target = None
    if method is AttackMethod.ITERATIVE_TARGETED:
        target = RandomTarget(seed) if args.target == "random" else args.target
    return AttackConfig(method, eps, args.alpha, args.iterations, target)


def _ensure_parent(path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def _student_layers(class_count: int) -> list[LayerSpec]:
    return [conv2d(4, 3, 1), relu(), maxpool2x2(), conv2d(8, 3, 1), relu(), maxpool2x2(),
            flatten(), dense(class_count)]


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(args) -> None:
    out = Path(args.out_dir)
    train = generate_synthetic(args.n_train, args.size, args.classes, args.seed)
    test = generate_synthetic(args.n_test, args.size, args.classes, args.seed + 1)
    save_split(train, out, "train")
    save_split(test, out, "test")
    _write_sidecar(out, args, {"class_names": train.class_names})
    print(f"wrote {len(train)} train and {len(test)} test images to {out}")


def cmd_train(args) -> None:
    train = _load_data(args, "train")
    test = _load_data(args, "test", train.class_count)
    net = init_network(desk_layers(train.class_count), train.image_shape, train.class_count,
                       args.seed)
    net, history = train_sgd(net, train, _train_config(args))
    _ensure_parent(args.out)
    save_checkpoint(net, args.out)
    test_acc = accuracy(net, test.images, test.labels)
    _write_sidecar(args.out, args, {"history": history, "test_accuracy": test_acc})
    print(f"test accuracy {test_acc:.4f}; checkpoint written to {args.out}")


def cmd_attack(args) -> None:
    net = load_checkpoint(args.model)
    data = _load_data(args, "test", net.class_count)
    if not 0 <= args.index < len(data):
        raise ValueError(f"--index {args.index} outside the test split (size {len(data)})")
    if len(args.eps) != 1:
        raise ValueError("attack takes a single --eps value")
    item = data[args.index]
    outcome = run_attack(net, item, _attack_config(args, args.method, args.eps[0], args.seed))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = "pgm" if item.pixels.shape[2] == 1 else "ppm"
    write_pnm(out / f"original.{ext}", item.pixels)
    write_pnm(out / f"adversarial.{ext}", outcome.adversarial)
    prediction = {
        "index": args.index,
        "label": item.label,
        "method": args.method.value,
        "epsilon": args.eps[0],
        "target": outcome.target,
        "clean_top1": int(np.argmax(outcome.clean_probs)),
        "adversarial_top1": int(np.argmax(outcome.adv_probs)),
        "clean_probs": [round(float(p), 6) for p in outcome.clean_probs],
        "adversarial_probs": [round(float(p), 6) for p in outcome.adv_probs],
        "linf_norm": outcome.linf_norm,
        "iterations_run": outcome.iterations_run,
        "flipped_top1": outcome.success_flipped_top1,
        "hit_target": outcome.success_hit_target,
    }
    (out / "prediction.json").write_text(json.dumps(prediction, indent=2) + "\n")
    _write_sidecar(out, args)
    print(f"class {prediction['clean_top1']} -> {prediction['adversarial_top1']} "
          f"(linf {outcome.linf_norm:.4f})")


def cmd_sweep(args) -> None:
    net = load_checkpoint(args.model)
    data = _load_data(args, "test", net.class_count)
    cfg = SweepConfig(methods=args.methods, eps_grid=args.eps, subset_size=args.n,
                      alpha=args.alpha, iterations=args.iterations, seed=args.seed)
    report = run_sweep(net, data, cfg)
    _ensure_parent(args.out)
    write_report_csv(report, args.out)
    svg_path = Path(args.out).with_suffix(".svg")
    svg_path.write_text(render_plot_svg(report, args.metric))
    _write_sidecar(args.out, args, outputs=[args.out, svg_path])
    for row in report.rows:
        print(f"{row.method:22s} eps={row.epsilon:<6g} top1_rel={row.top1_rel:.2f} "
              f"top5_rel={row.top5_rel:.2f}")


def cmd_defend(args) -> None:
    train = _load_data(args, "train")
    test = _load_data(args, "test", train.class_count)
    tcfg = _train_config(args)
    extra = {}
    if args.method == "adversarial":
        if len(args.eps) != 1:
            raise ValueError("adversarial training takes a single --eps value")
        attack = _attack_config(args, args.attack, args.eps[0], args.seed)
        net0 = init_network(desk_layers(train.class_count), train.image_shape,
                            train.class_count, args.seed)
        net, history = adversarial_train(net0, train, AdvTrainConfig(tcfg, attack, args.mix_ratio))
        extra = {"history": history, "test_accuracy": accuracy(net, test.images, test.labels)}
    elif args.method == "distill":
        cfg = DistillConfig(tcfg, _student_layers(train.class_count), args.temperature)
        result = distill(train, cfg, args.seed)
        net = result.student
        extra = {"teacher_test_accuracy": accuracy(result.teacher, test.images, test.labels),
                 "student_test_accuracy": accuracy(net, test.images, test.labels),
                 "teacher_parameters": result.teacher.parameter_count(),
                 "student_parameters": net.parameter_count()}
    else:
        if not args.model:
            raise ValueError("the detector needs --model (the classifier being attacked)")
        if len(args.eps) != 1:
            raise ValueError("the detector takes a single --eps value")
        victim = load_checkpoint(args.model)
        attack = _attack_config(args, args.attack, args.eps[0], args.seed)
        clean = train.take(np.arange(min(args.n, len(train))))
        adv = _adversarial_copy(victim, clean, attack)
        detector = train_detector(clean, adv, desk_layers(2), tcfg)
        net = detector.network
        extra = {"holdout_accuracy": detector.holdout_accuracy,
                 "false_flag_rate": detector.false_flag_rate}
        if args.verdicts:
            probe = test.take(np.arange(min(100, len(test))))
            probe_adv = _adversarial_copy(victim, probe, attack)
            images = np.concatenate([probe.images, probe_adv.images])
            ids = [f"clean-{i}" for i in range(len(probe))] + \
                  [f"adv-{i}" for i in range(len(probe))]
            _ensure_parent(args.verdicts)
            write_verdicts_csv(detector, images, args.verdicts, ids)
    _ensure_parent(args.out)
    save_checkpoint(net, args.out)
    _write_sidecar(args.out, args, extra)
    summary = {k: v for k, v in extra.items() if k != "history"}
    print(f"{args.method} model written to {args.out}: {json.dumps(summary)}")


def _adversarial_copy(victim, data: Dataset, attack: AttackConfig) -> Dataset:
    chunks = [attack_batch(victim, data.images[i:i + 256], data.labels[i:i + 256], attack)
              for i in range(0, len(data), 256)]
    return Dataset(np.concatenate(chunks), data.labels, data.class_count)


def cmd_transfer(args) -> None:
    source = load_checkpoint(args.source)
    target = load_checkpoint(args.target_model)
    data = _load_data(args, "test", source.class_count)
    report = TransferReport()
    for eps in args.eps:
        attack = _attack_config(args, args.method, eps, args.seed)
        report.rows += run_transfer(source, target, attack, data, args.seed, args.n).rows
    _ensure_parent(args.out)
    write_report_csv(report, args.out)
    _write_sidecar(args.out, args)
    for row in report.rows:
        print(f"eps={row.epsilon:g} transfer_top1_rel={row.transfer_top1_rel:.2f} "
              f"noise_control_top1_rel={row.noise_control_top1_rel:.2f}")


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "attack": cmd_attack,
            "sweep": cmd_sweep, "defend": cmd_defend, "transfer": cmd_transfer}


def run_command(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    except FileNotFoundError as e:
        print(f"advlab: error: {e}", file=sys.stderr)
        return 1
    try:
        COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError) as e:
        print(f"advlab: error: {e}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
