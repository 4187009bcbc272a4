"""Command-line pipeline: synth -> build -> train -> eval / cluster, plus baselines.

Exit codes: 0 success, 1 contract/format/configuration failure (one ``status=error``
line on stderr), 2 usage error. Every output file gets a ``<output>.manifest``
key=value file next to it; passing that file back through ``--config`` re-runs
the same command with the same inputs.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import clusterset, fileio, metrics, trainer
from .config import TrainConfig
from .datagen import SynthSpec, synth_blobs
from .qsim import ConfigurationError, ContractError, DegenerateInputError, NumericError, qubits_for_dim
from .qtransformer import FUSION_MODES, SHARING_MODES

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
# manifest keys that describe a run rather than configure it
_MANIFEST_ONLY = ("command",)
_MANIFEST_PREFIXES = ("sha256.", "resolved.")
_FAILURES = (ConfigurationError, ContractError, DegenerateInputError, NumericError, fileio.FormatError, OSError)


def read_kv_file(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {line!r}")
        values[key.strip()] = value.strip()
    return values


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _kv(key, value) -> str:
    return f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}"


def write_manifest(args, inputs: dict, outputs: dict, resolved: dict = None) -> None:
    """key=value record of every option, derived settings and input/output hashes."""
    lines = [f"command={args.command}"]
    for key in sorted(vars(args)):
        if key not in ("command", "config", "handler") and getattr(args, key) is not None:
            lines.append(_kv(key, getattr(args, key)))
    for key, value in sorted((resolved or {}).items()):
        lines.append(_kv(f"resolved.{key}", value))
    for role, path in sorted({**inputs, **outputs}.items()):
        if path is not None:
            lines.append(f"sha256.{role}={sha256_file(path)}")
    for path in outputs.values():
        if path is not None:
            fileio.atomic_write(f"{path}.manifest", ("\n".join(lines) + "\n").encode("utf-8"))


def _load_features(args) -> clusterset.FeatureSet:
    return fileio.read_features(args.features, args.labels)


# -- subcommands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = SynthSpec(args.n_classes, args.samples_per_class, args.dim, args.sigma, args.min_separation, args.seed)
    fs = synth_blobs(spec)
    fileio.write_features(args.out, fs, args.labels_out)
    write_manifest(args, {}, {"features": args.out, "labels": args.labels_out})
    print(f"wrote n={fs.n} dim={fs.dim} classes={spec.n_classes} to {args.out}")
    return EXIT_OK


def cmd_build(args) -> int:
    fs = _load_features(args)
    clusters = clusterset.knn_clusters(fs, args.k)
    fileio.write_clusters(args.out, clusters)
    write_manifest(args, {"features": args.features, "labels": args.labels}, {"clusters": args.out})
    line = f"wrote instances={len(clusters)} k={args.k}"
    if fs.labels is not None:
        line += f" positive_rate={np.mean([c.mask[1:].mean() for c in clusters if c.k > 1] or [0.0]):.4f}"
    print(line)
    return EXIT_OK


def _train_config(args, dim: int) -> TrainConfig:
    values = {f.name: getattr(args, f.name) for f in dataclasses.fields(TrainConfig)
              if getattr(args, f.name, None) is not None}
    values.setdefault("n_qubits", qubits_for_dim(dim))
    values.pop("k", None)
    values["input_dim"] = dim
    return TrainConfig(**values)


def cmd_train(args) -> int:
    fs = _load_features(args)
    clusters = fileio.read_clusters(args.clusters)
    cfg = _train_config(args, fs.dim).replace(k=clusters[0].k)
    resume = fileio.read_checkpoint(args.resume) if args.resume else None
    log_lines = []
    ckpt = trainer.train(cfg, fs, clusters, checkpoint_path=args.out, resume=resume, log_fn=log_lines.append)
    if args.log:
        fileio.atomic_write(args.log, "".join(line + "\n" for line in log_lines).encode("utf-8"))
    inputs = {"features": args.features, "labels": args.labels, "clusters": args.clusters, "resume": args.resume}
    write_manifest(args, inputs, {"checkpoint": args.out, "log": args.log}, cfg.to_dict())
    _, _, _, losses = trainer.unpack_checkpoint(ckpt)
    for epoch, loss in enumerate(losses):
        print(f"epoch={epoch} mean_loss={loss!r}")
    return EXIT_OK


def _checkpoint_expectations(args) -> dict:
    expect = {}
    if args.sharing_mode is not None:
        expect["sharing_mode"] = args.sharing_mode
    if args.fusion_mode is not None:
        expect["fusion_mode"] = args.fusion_mode
    return expect


def _print_report(report: metrics.MetricReport, prefix: str = "") -> str:
    text = report.to_kv(prefix)
    print(report.summary())
    print(text)
    return text + "\n"


def cmd_eval(args) -> int:
    fs = _load_features(args)
    if fs.labels is None:
        raise ContractError("eval needs ground-truth labels (--labels)")
    clusters = fileio.read_clusters(args.clusters)
    ckpt = fileio.read_checkpoint(args.checkpoint, _checkpoint_expectations(args))
    report, _, labels = trainer.evaluate(ckpt, fs, clusters, args.tau)
    text = _print_report(report)
    text += f"n_clusters={int(labels.max()) + 1}\n"
    print(f"n_clusters={int(labels.max()) + 1}")
    if args.out:
        fileio.atomic_write(args.out, text.encode("utf-8"))
        inputs = {"features": args.features, "labels": args.labels, "clusters": args.clusters,
                  "checkpoint": args.checkpoint}
        write_manifest(args, inputs, {"report": args.out})
    return EXIT_OK


def cmd_cluster(args) -> int:
    fs = _load_features(args)
    clusters = fileio.read_clusters(args.clusters)
    ckpt = fileio.read_checkpoint(args.checkpoint)
    _, _, labels = trainer.evaluate(ckpt, clusterset.FeatureSet(fs.features), clusters, args.tau)
    fileio.write_labels(args.out, labels)
    inputs = {"features": args.features, "clusters": args.clusters, "checkpoint": args.checkpoint}
    write_manifest(args, inputs, {"predicted": args.out})
    print(f"wrote n={len(labels)} clusters={int(labels.max()) + 1} to {args.out}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    fs = _load_features(args)
    if fs.labels is None:
        raise ContractError("baseline needs ground-truth labels (--labels)")
    clusters = fileio.read_clusters(args.clusters)
    n_clusters = args.n_clusters or len(np.unique(fs.labels))
    km = metrics.evaluate_labels(fs.labels, trainer.kmeans_baseline(fs, n_clusters, args.seed))
    keep = metrics.evaluate_labels(fs.labels, trainer.link_with_constant(clusters, fs.n, 1.0))
    print("k-means")
    text = _print_report(km, "kmeans.")
    print("raw kNN, all neighbors kept")
    text += "\n" + _print_report(keep, "allkeep.")
    if args.out:
        fileio.atomic_write(args.out, (text + "\n").encode("utf-8"))
        write_manifest(args, {"features": args.features, "labels": args.labels, "clusters": args.clusters},
                       {"report": args.out}, {"n_clusters": n_clusters})
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file (a .manifest works); explicit flags win")
    common.add_argument("--seed", type=int, default=7)
    common.add_argument("--threads", type=int, default=0, help="BLAS worker cap, 0 = all cores")

    parser = argparse.ArgumentParser(prog="qcluster", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic features and labels")
    p.add_argument("--out", required=True, help="feature file to write")
    p.add_argument("--labels-out", help="label file to write")
    p.add_argument("--n-classes", type=int, default=20)
    p.add_argument("--samples-per-class", type=int, default=50)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--sigma", type=float, default=0.25)
    p.add_argument("--min-separation", type=float, default=0.6)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("build", parents=[common], help="kNN cluster instances")
    p.add_argument("--features", required=True)
    p.add_argument("--labels")
    p.add_argument("--k", type=int, help="neighbors per instance, center included (required)")
    p.add_argument("--out", required=True, help="cluster dataset to write")
    p.set_defaults(handler=cmd_build)

    p = sub.add_parser("train", parents=[common], help="train the cluster encoder")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--clusters", required=True)
    p.add_argument("--out", required=True, help="checkpoint to write (rewritten every epoch)")
    p.add_argument("--log", help="training log (key=value lines)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--n-qubits", type=int, help="default: ceil(log2 D)")
    p.add_argument("--depth", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--sharing-mode", choices=SHARING_MODES)
    p.add_argument("--fusion-mode", choices=FUSION_MODES)
    p.add_argument("--entangle", choices=("ring", "line"))
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--pos-weight", type=float)
    p.add_argument("--tau", type=float)
    p.set_defaults(handler=cmd_train)

    for name, handler, text in (("eval", cmd_eval, "score a checkpoint"),
                                ("cluster", cmd_cluster, "write predicted cluster labels")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--features", required=True)
        p.add_argument("--labels", required=name == "eval")
        p.add_argument("--clusters", required=True)
        p.add_argument("--tau", type=float, help="default: the checkpoint's tau")
        p.add_argument("--out", required=name == "cluster")
        if name == "eval":
            p.add_argument("--sharing-mode", choices=SHARING_MODES, help="require this checkpoint setting")
            p.add_argument("--fusion-mode", choices=FUSION_MODES, help="require this checkpoint setting")
        p.set_defaults(handler=handler)

    p = sub.add_parser("baseline", parents=[common], help="k-means and all-keep kNN reports")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--clusters", required=True)
    p.add_argument("--n-clusters", type=int, help="default: number of ground-truth classes")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_baseline)
    return parser


def _subparser_map(parser) -> dict:
    action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return action.choices


def parse_args(argv=None):
    """Two passes so a --config file slots in between defaults and explicit flags."""
    parser = build_parser()
    sub_actions = [a for sp in _subparser_map(parser).values() for a in sp._actions]
    required = {id(a): a.required for a in sub_actions}
    for action in sub_actions:
        action.required = False
    try:
        first = parser.parse_args(argv)
    finally:
        for action in sub_actions:
            action.required = required[id(action)]
    if first.config:
        sub = _subparser_map(parser)[first.command]
        known = {a.dest for a in sub._actions}
        values = read_kv_file(first.config)
        if values.get("command", first.command) != first.command:
            raise ConfigurationError(f"{first.config} is for '{values['command']}', not '{first.command}'")
        file_defaults = {}
        for key, value in values.items():
            if key in _MANIFEST_ONLY or key.startswith(_MANIFEST_PREFIXES):
                continue
            dest = key.replace("-", "_")
            if dest not in known or dest == "config":
                raise ConfigurationError(f"{first.config}: unknown option {key!r} for '{first.command}'")
            file_defaults[dest] = value
        for action in sub._actions:
            if action.dest in file_defaults:
                action.required = False
        sub.set_defaults(**file_defaults)
    args = parser.parse_args(argv)
    sub = _subparser_map(parser)[args.command]
    if args.command == "build" and args.k is None:
        sub.error("the following arguments are required: --k")
    if args.threads < 0:
        sub.error("--threads must be >= 0")
    return args


def error_record(exc: BaseException) -> str:
    return f"status=error type={type(exc).__name__} message={json.dumps(str(exc))}"


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        with threadpool_limits(limits=args.threads or None):
            return args.handler(args)
    except _FAILURES as exc:
        print(error_record(exc), file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
