"""Command-line entry point: generate, match, train, bench.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .errors import ConfigError, EpimatchError, NoImprovement
from .evaluation import BenchConfig, matching_accuracy
from .geometry import parse_sigma
from .learn import (DEFAULT_CHANGE_THRESHOLD, TrainHyper, TrainedModel, classify_change,
                    degenerate_pair_config, fit_lambda, fit_projection, make_instance)
from .report import report_csv, write_report
from .scenegen import (GENERATOR_VERSION, TRAIN_STREAM, ChangeModel, NoiseModel, PairConfig,
                       SceneConfig, ViewpointProtocol, generate_pair, pair_seed)
from .serialization import dumps, load_model, load_pair, save_model, save_pair
from .solver import METHODS, MatchOptions, infer_matching, method_spec, score_pair

log = logging.getLogger("epimatch")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# flag helpers

def _int_list(text) -> List[int]:
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _str_list(text) -> List[str]:
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _sigma(text):
    try:
        return parse_sigma(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"sigma must be fixed:<value>, <value> or adaptive, got {text!r}")


def _gamma(text):
    if str(text).strip().lower() == "calibrate":
        return "calibrate"
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"gamma must be a number or 'calibrate', got {text!r}")


def _add_scene_flags(p):
    d_scene, d_noise, d_change = SceneConfig(), NoiseModel(), ChangeModel()
    g = p.add_argument_group("scene and noise")
    g.add_argument("--objects", type=int, default=d_scene.n_objects, help="objects per scene")
    g.add_argument("--class-spread", type=float, default=d_scene.class_spread)
    g.add_argument("--sigma-view", type=float, default=d_noise.sigma_view,
                   help="descriptor noise per radian of yaw gap")
    g.add_argument("--sigma-det", type=float, default=d_noise.sigma_det,
                   help="per-observation descriptor noise")
    g.add_argument("--dropout", type=float, default=d_noise.dropout)
    g.add_argument("--spurious", type=float, default=d_noise.spurious)
    g.add_argument("--center-jitter", type=float, default=d_noise.center_jitter)
    g.add_argument("--change-rate", type=float, default=d_change.change_rate)


def _pair_config(args) -> PairConfig:
    if args.objects < 1:
        raise ConfigError("--objects must be at least 1")
    for name in ("sigma_view", "sigma_det", "dropout", "spurious", "center_jitter", "class_spread"):
        if getattr(args, name) < 0:
            raise ConfigError(f"--{name.replace('_', '-')} must be nonnegative")
    if not 0 <= args.dropout <= 1:
        raise ConfigError("--dropout must lie in [0, 1]")
    return PairConfig(SceneConfig(n_objects=args.objects, class_spread=args.class_spread),
                      NoiseModel(args.sigma_view, args.sigma_det, args.dropout, args.spurious,
                                 args.center_jitter),
                      ChangeModel(args.change_rate))


def _check_sets(sets):
    if not sets:
        raise ConfigError("no viewpoint sets given")
    for s in sets:
        if s not in (1, 2, 3, 4):
            raise ConfigError(f"viewpoint set must be 1-4, got {s}")


def resolve_method(name: str, topology: Optional[str] = None) -> str:
    """Method name, with ``--topology`` choosing the GMN / EGMNet variant."""
    aliases = {m.lower(): m for m in METHODS + ("GMN-DT", "GMN-FC")}
    key = name.strip().lower()
    if topology:
        topology = topology.lower()
        if topology not in ("dt", "fc"):
            raise ConfigError(f"topology must be dt or fc, got {topology!r}")
        base = key.split("-")[0]
        if base not in ("gmn", "egmnet"):
            raise ConfigError(f"--topology does not apply to {name}")
        if "-" in key and key.split("-", 1)[1] != topology:
            raise ConfigError(f"{name} conflicts with --topology {topology}")
        key = f"{base}-{topology}"
    elif key == "egmnet":
        key = "egmnet-dt"
    if key not in aliases:
        raise ConfigError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    return aliases[key]


def _options(args, gamma: float = 0.0) -> MatchOptions:
    return MatchOptions(gamma=gamma, sigma=args.sigma, normalize_by=args.normalize_by)


def _echo(args, skip=("func", "config", "out", "jobs", "command")) -> Dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# ---------------------------------------------------------------------------
# commands

def cmd_generate(args) -> int:
    _check_sets(args.sets)
    if args.pairs < 1:
        raise ConfigError("--pairs must be at least 1")
    cfg = _pair_config(args)
    out = Path(args.out)
    files = []
    for s in args.sets:
        sub = out / f"set{s}"
        sub.mkdir(parents=True, exist_ok=True)
        protocol = ViewpointProtocol.from_set(s)
        for k in range(args.pairs):
            seed = pair_seed(args.seed, s, k)
            rel = f"set{s}/pair_{k:05d}.json"
            save_pair(generate_pair(protocol, seed, cfg), out / rel)
            files.append({"set": s, "index": k, "seed": seed, "path": rel})
    manifest = {"generator_version": GENERATOR_VERSION, "seed": args.seed, "sets": args.sets,
                "pairs": args.pairs, "config": _echo(args), "files": files}
    (out / "manifest.json").write_text(dumps(manifest), encoding="utf-8")
    print(f"wrote {len(files)} pairs and manifest.json to {out}")
    return EXIT_OK


def _load_lambda(args, descriptor_dim: int):
    if not getattr(args, "model", None):
        return None, None
    model = load_model(args.model)
    if model.d_e != 2 * descriptor_dim + 2:
        raise ConfigError(f"model has d_e={model.d_e}, pairs need {2 * descriptor_dim + 2}")
    return model.lam, model.projection


def cmd_match(args) -> int:
    method = resolve_method(args.method, args.topology)
    if args.gamma < 0:
        raise ConfigError("--gamma must be nonnegative")
    pair = load_pair(args.pair)
    d = len(pair.detections1[0].descriptor)
    lam, proj = _load_lambda(args, d)
    uses_graph, uses_epi, _ = method_spec(method)
    scores = score_pair(method, pair, lam, _options(args, args.gamma))
    assignment = infer_matching(scores, args.gamma)
    print(f"method {method}  n={pair.n} m={pair.m}  gamma={args.gamma:g}  "
          f"fundamental={'yes' if pair.f is not None and uses_epi else 'no'}")
    print("scores scaled to unit Frobenius norm before thresholding")
    if uses_graph and not scores.converged:
        print(f"warning: power iteration did not converge (residual {scores.residual:.3g})")
    for (i, j), conf in zip(assignment.pairs, assignment.confidence):
        v = classify_change(pair.detections1[i].descriptor, pair.detections2[j].descriptor,
                            args.change_threshold, proj)
        print(f"  {i:3d} -> {j:3d}  score {conf:.4f}  {v.label} (d={v.distance:.4f})")
    print(f"unmatched view 1 (changed): {assignment.unmatched1}")
    print(f"unmatched view 2 (changed): {assignment.unmatched2}")
    print(f"accuracy {matching_accuracy(assignment, pair):.4f}")
    if args.dump_scores:
        with open(args.dump_scores, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for row in scores.s:
                w.writerow([format(float(x), ".17g") for x in row])
        print(f"scores written to {args.dump_scores}")
    return EXIT_OK


def cmd_train(args) -> int:
    method = resolve_method(args.method, args.topology)
    if not method_spec(method)[0]:
        raise ConfigError(f"{method} has no edge metric to train")
    _check_sets(args.sets)
    if args.pairs < 1:
        raise ConfigError("--pairs must be at least 1")
    if args.lr < 0 or args.epochs < 0 or args.batch < 1 or not 0 <= args.momentum < 1:
        raise ConfigError("need lr >= 0, epochs >= 0, batch >= 1 and momentum in [0, 1)")
    cfg = degenerate_pair_config(args.objects) if args.degenerate else _pair_config(args)
    pairs = [generate_pair(ViewpointProtocol.from_set(s), pair_seed(args.seed, s, k, TRAIN_STREAM), cfg)
             for s in args.sets for k in range(args.pairs)]
    options = _options(args)
    instances = [make_instance(p, method, options) for p in pairs]
    d_e = instances[0].h1.shape[1]
    init = load_model(args.model) if args.model else TrainedModel(np.eye(d_e))
    if init.d_e != d_e:
        raise ConfigError(f"model has d_e={init.d_e}, training pairs need {d_e}")
    hyper = TrainHyper(lr=args.lr, epochs=args.epochs, batch=args.batch, seed=args.seed,
                       grad_mode=args.grad_mode, momentum=args.momentum, steps=args.steps)
    model = fit_lambda(instances, hyper, init)
    if args.fit_projection:
        model.projection = fit_projection(pairs, init=init.projection)
    model.metadata.update({"method": method, "config": _echo(args)})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    curve_path = out.with_name(out.stem + "_loss.csv")
    with open(curve_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for e, loss in enumerate(model.metadata["loss_curve"]):
            w.writerow([e, format(loss, ".17g")])
    print(f"loss {model.metadata['initial_loss']:.6f} -> {model.metadata['final_loss']:.6f} "
          f"over {args.epochs} epochs; model written to {out}, loss curve to {curve_path}")
    return EXIT_OK


def cmd_bench(args) -> int:
    methods = tuple(resolve_method(m) for m in args.methods)
    _check_sets(args.sets)
    cfg = _pair_config(args)
    lam, proj = _load_lambda(args, cfg.scene.descriptor_dim)
    as_rows = (lambda a: None if a is None else tuple(tuple(float(x) for x in r) for r in a))
    bench = BenchConfig(methods=methods, sets=tuple(args.sets), pairs=args.pairs, seed=args.seed,
                        scene=cfg.scene, noise=cfg.noise, changes=cfg.changes, gamma=args.gamma,
                        calibration_pairs=args.calibration_pairs,
                        change_threshold=args.change_threshold, sigma=args.sigma,
                        normalize_by=args.normalize_by, accuracy_mode=args.accuracy_mode,
                        lam=as_rows(lam), projection=as_rows(proj), timing=not args.no_timing)
    bench.validate()
    from .evaluation import run_benchmark

    jobs = args.jobs if args.jobs and args.jobs > 0 else (os.cpu_count() or 1)
    report = run_benchmark(bench, jobs)
    if args.config_text is not None:
        report.config["config_file"] = args.config_text
    paths = write_report(report, args.out)
    sys.stdout.write(report_csv(report))
    print("gamma per method: " + ", ".join(f"{m}={g:g}" for m, g in report.gammas.items()))
    print("wrote " + ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser():
    parser = _Parser(prog="epimatch", description="Epipolar-guided object graph matching toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver diagnostics")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    subs = {}

    def common(p, pairs_default, out_default):
        p.add_argument("--config", help="flat key=value file; flags override it")
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--sets", type=_int_list, default=[1, 2, 3, 4], help="viewpoint sets, e.g. 1,4")
        p.add_argument("--pairs", type=int, default=pairs_default, help="pairs per set")
        p.add_argument("--out", default=out_default)

    def matching(p):
        p.add_argument("--sigma", type=_sigma, default=2.0, help="fixed:<value> or adaptive")
        p.add_argument("--normalize-by", choices=("second", "first", "geometric_mean"),
                       default="second", help="whose box size normalizes epipolar offsets")
        p.add_argument("--change-threshold", type=float, default=DEFAULT_CHANGE_THRESHOLD)
        p.add_argument("--model", help="trained model file (lambda and projection)")

    p = sub.add_parser("generate", help="write synthetic scene pairs and a manifest")
    common(p, 10, "pairs")
    _add_scene_flags(p)
    p.set_defaults(func=cmd_generate)
    subs["generate"] = p

    p = sub.add_parser("match", help="match one scene-pair file")
    p.add_argument("pair", help="scene-pair JSON file")
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--method", default="EGMNet-DT")
    p.add_argument("--topology", choices=("dt", "fc"), default=None)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--dump-scores", metavar="CSV", help="write the score matrix")
    matching(p)
    p.set_defaults(func=cmd_match)
    subs["match"] = p

    p = sub.add_parser("train", help="fit the edge metric (and optionally a change projection)")
    common(p, 50, "model.json")
    _add_scene_flags(p)
    p.add_argument("--method", default="EGMNet-DT")
    p.add_argument("--topology", choices=("dt", "fc"), default=None)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=30, help="unrolled power steps")
    p.add_argument("--grad-mode", choices=("unrolled", "finite_diff"), default="unrolled")
    p.add_argument("--degenerate", action="store_true",
                   help="train on identical-descriptor, noise-free scenes")
    p.add_argument("--fit-projection", action="store_true",
                   help="also fit the change-feature projection")
    p.add_argument("--sigma", type=_sigma, default=2.0)
    p.add_argument("--normalize-by", choices=("second", "first", "geometric_mean"), default="second")
    p.add_argument("--model", help="resume from this model file")
    p.set_defaults(func=cmd_train)
    subs["train"] = p

    p = sub.add_parser("bench", help="run every method on every viewpoint set")
    common(p, 200, "bench_out")
    _add_scene_flags(p)
    p.add_argument("--methods", type=_str_list, default=list(METHODS))
    p.add_argument("--gamma", type=_gamma, default="calibrate",
                   help="threshold, or 'calibrate' to pick it per method on validation pairs")
    p.add_argument("--calibration-pairs", type=int, default=25, help="validation pairs per set")
    p.add_argument("--accuracy-mode", choices=("node", "pair"), default="node")
    p.add_argument("--jobs", type=int, default=0, help="worker processes (default: all cores)")
    p.add_argument("--no-timing", action="store_true",
                   help="write 0 in the seconds column so reports are byte-reproducible")
    matching(p)
    p.set_defaults(func=cmd_bench)
    subs["bench"] = p
    return parser, subs


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def read_config_file(path) -> (Dict[str, str], str):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror or exc}") from exc
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (t.strip() for t in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values, text


def _apply_config(sub: argparse.ArgumentParser, values: Dict[str, str], path) -> None:
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, value in values.items():
        if key not in actions:
            raise ConfigError(f"{path}: unknown key {key!r}")
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            low = value.lower()
            if low not in _TRUE | _FALSE:
                raise ConfigError(f"{path}: {key} expects true/false, got {value!r}")
            defaults[key] = low in _TRUE
        elif action.type is not None:
            try:
                defaults[key] = action.type(value)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise ConfigError(f"{path}: bad value for {key}: {exc}") from exc
            if action.choices is not None and defaults[key] not in action.choices:
                raise ConfigError(f"{path}: {key} must be one of {list(action.choices)}")
        else:
            if action.choices is not None and value not in action.choices:
                raise ConfigError(f"{path}: {key} must be one of {list(action.choices)}")
            defaults[key] = value
    sub.set_defaults(**defaults)


def parse_args(argv=None):
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise ConfigError("a command is required: generate, match, train or bench")
    args.config_text = None
    if getattr(args, "config", None):
        values, text = read_config_file(args.config)
        _apply_config(subs[args.command], values, args.config)
        args = parser.parse_args(argv)
        args.config_text = text
    else:
        args.config_text = None
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoImprovement as exc:
        md = exc.model.metadata if exc.model is not None else {}
        print(f"error: {exc}", file=sys.stderr)
        if md:
            print(f"  initial loss {md.get('initial_loss')}, final loss {md.get('final_loss')}, "
                  f"lr {md.get('lr')}, epochs {md.get('epochs')}", file=sys.stderr)
        return EXIT_RUNTIME
    except (EpimatchError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
