"""Command-line entry point: ``wuxingnet {build,train,eval,baseline}``.

Options come from three layers, later ones winning: built-in defaults, a
TOML file given with ``--config`` (top-level keys, then the table named
after the subcommand), and command-line flags.  The resolved options are
echoed as ``# key = value`` lines at the top of every CSV written.

Seeds.  ``--seed`` is the root seed.  Any of ``topology_seed``,
``train_subset_seed``, ``test_subset_seed`` and ``shuffle_seed`` left
unset is taken, in that order, from
``numpy.random.SeedSequence(seed).generate_state(4)``.

Exit codes: 0 success, 2 bad arguments, 3 data error, 4 diverged simulation.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import baseline_mlp, topology as topo_mod, trainer
from .data_mnist import Dataset, load_idx, require_nonempty, subset
from .errors import DataFormatError, EmptyDatasetError, SimulationDivergedError, TopologyError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
SEED_KEYS = ("topology_seed", "train_subset_seed", "test_subset_seed", "shuffle_seed")
# options that never change results stay out of the echo
NOT_ECHOED = {"config", "threads", "resume", "command", "out_dir"}

DEFAULTS = {
    "common": {"seed": 0, "out_dir": "runs", "threads": 1},
    "build": {"model": None, "layers": None, "fan_in_adders": False, "out": None},
    "train": {
        "topology": None, "model": "MODEL1", "resume": None,
        "train_images": None, "train_labels": None, "test_images": None, "test_labels": None,
        "train_size": 2000, "test_size": 1000, "stratified": True,
        **{k: v for k, v in trainer.TrainConfig().to_dict().items() if k != "shuffle_seed"},
    },
    "eval": {"checkpoint": None, "topology": None, "images": None, "labels": None,
             "size": None, "stratified": True, "subset_seed": None},
    "baseline": {
        "lr": "1.0,0.5,0.2,0.1,0.05,0.03", "layers": ",".join(map(str, topo_mod.MODEL_LAYERS["MODEL1"])),
        "images": None, "labels": None, "size": 5000, "stratified": True, "subset_seed": None,
        "epochs": 10, "seeds": "0,1,2", "learning_rate": 0.01, "activation": "relu",
    },
}


class UsageError(Exception):
    pass


def _parse_ints(text, what) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise UsageError(f"bad {what}: {text!r}") from None
    if not values:
        raise UsageError(f"empty {what}")
    return values


def _parse_floats(text, what) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise UsageError(f"bad {what}: {text!r}") from None
    if not values:
        raise UsageError(f"empty {what}")
    return values


def _load_toml(path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags; fill derived seeds."""
    cmd = args.command
    opts = {**DEFAULTS["common"], **DEFAULTS[cmd]}
    if cmd == "train":
        opts.update({k: None for k in SEED_KEYS})
    elif cmd == "build":
        opts["topology_seed"] = None
    if args.config:
        doc = _load_toml(args.config)
        layered = {k: v for k, v in doc.items() if not isinstance(v, dict)}
        layered.update(doc.get(cmd, {}))
        unknown = set(layered) - set(opts)
        if unknown:
            raise UsageError(f"unknown config keys for {cmd}: {sorted(unknown)}")
        opts.update(layered)
    for key, value in vars(args).items():
        if value is not None and key in opts:
            opts[key] = value
    if cmd in ("train", "build"):
        derived = np.random.SeedSequence(int(opts["seed"])).generate_state(len(SEED_KEYS))
        for key, value in zip(SEED_KEYS, derived):
            if key in opts and opts[key] is None:
                opts[key] = int(value)
    if cmd in ("eval", "baseline") and opts["subset_seed"] is None:
        opts["subset_seed"] = int(opts["seed"])
    return opts


def echo_lines(opts: dict) -> list[str]:
    return [f"{k} = {json.dumps(opts[k])}" for k in sorted(opts) if k not in NOT_ECHOED and not k.startswith("_")]


def _dataset(images, labels, size, seed, stratified, what) -> Dataset:
    if not images or not labels:
        raise UsageError(f"{what} image and label paths are required")
    data = load_idx(images, labels)
    if size is not None:
        if int(size) > len(data):
            raise UsageError(f"{what} subset of {size} requested, file holds {len(data)}")
        data = subset(data, int(size), int(seed), bool(stratified))
    return require_nonempty(data)


def _out_dir(opts) -> Path:
    out = Path(opts["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ------------------------------------------------------------------ commands

def cmd_build(opts: dict) -> int:
    if opts["layers"]:
        layers = _parse_ints(opts["layers"], "layer list")
        try:
            net = topo_mod.build_random(layers, seed=opts["topology_seed"], fan_in_adders=opts["fan_in_adders"])
        except (TopologyError, ValueError) as exc:
            raise UsageError(str(exc)) from None
        name = "layers-" + "-".join(map(str, layers))
    else:
        name = opts["model"] or "MODEL1"
        if name not in topo_mod.MODEL_LAYERS:
            raise UsageError(f"unknown model {name!r}; choose from {sorted(topo_mod.MODEL_LAYERS)}")
        net = topo_mod.build_named_model(name, seed=opts["topology_seed"])
    path = Path(opts["out"]) if opts["out"] else _out_dir(opts) / f"{name}.json"
    try:
        topo_mod.save(net, path)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc}") from None
    print(f"wrote {path}")
    print(topo_mod.link_ratio(net).format())
    return EXIT_OK


def _train_config(opts: dict) -> trainer.TrainConfig:
    keys = trainer.TrainConfig().to_dict().keys()
    try:
        return trainer.TrainConfig.from_dict({k: opts[k] for k in keys})
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def cmd_train(opts: dict) -> int:
    out = _out_dir(opts)
    ckpt_path = out / "checkpoint.json"
    state = None
    if opts.get("resume"):
        resume_path = Path(opts["resume"])
        doc = json.loads(resume_path.read_text(encoding="utf-8"))
        saved = doc.get("run_config")
        if saved is None or "training_state" not in doc:
            raise UsageError(f"{resume_path} is not a training checkpoint")
        epochs = opts["epochs"] if opts.get("_epochs_given") else saved["epochs"]
        opts = {**saved, "epochs": epochs, "out_dir": opts["out_dir"], "threads": opts["threads"],
                "command": "train"}
        net, coeffs, state = trainer.load_checkpoint(resume_path)
    else:
        if opts["topology"]:
            net = topo_mod.load(opts["topology"])
        else:
            name = opts["model"]
            if name not in topo_mod.MODEL_LAYERS:
                raise UsageError(f"unknown model {name!r}")
            net = topo_mod.build_named_model(name, seed=opts["topology_seed"])
        coeffs = net.coefficients()
    cfg = _train_config(opts)
    if state is not None:
        state.config = cfg
    train = _dataset(opts["train_images"], opts["train_labels"], opts["train_size"],
                     opts["train_subset_seed"], opts["stratified"], "training")
    test = _dataset(opts["test_images"], opts["test_labels"], opts["test_size"],
                    opts["test_subset_seed"], opts["stratified"], "test")
    header = echo_lines(opts)
    metrics_path = out / "metrics.csv"

    def save(st, c):
        _save_train_checkpoint(ckpt_path, net, c, st, opts)
        trainer.write_metrics_csv(st.metrics, metrics_path, header)

    try:
        state = trainer.run_training(net, coeffs, train, test, cfg, state=state, threads=opts["threads"],
                                     on_epoch=save)
    except SimulationDivergedError as exc:
        print(f"error: {exc} (epoch {exc.epoch}, sample {exc.sample}); "
              f"last good checkpoint kept at {ckpt_path}", file=sys.stderr)
        return EXIT_DIVERGED
    save(state, coeffs)
    for row in state.metrics:
        print(f"epoch {row.epoch} {row.split} accuracy {row.accuracy:.4f}")
    return EXIT_OK


def _save_train_checkpoint(path, net, coeffs, state, opts) -> None:
    trainer.save_checkpoint(path, net, coeffs, state)
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    doc["run_config"] = {k: v for k, v in opts.items() if k not in NOT_ECHOED and not k.startswith("_")}
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def cmd_eval(opts: dict) -> int:
    if not opts["checkpoint"]:
        raise UsageError("--checkpoint is required")
    net, coeffs, state = trainer.load_checkpoint(opts["checkpoint"])
    if opts["topology"]:
        ref = topo_mod.load(opts["topology"])
        if ref.layer_sizes != net.layer_sizes or [c.src for c in ref.connections] != [c.src for c in net.connections] \
                or [c.dst for c in ref.connections] != [c.dst for c in net.connections]:
            raise UsageError("checkpoint does not match the given topology")
    cfg = state.config if state is not None else trainer.TrainConfig()
    data = _dataset(opts["images"], opts["labels"], opts["size"], opts["subset_seed"], opts["stratified"], "evaluation")
    preds = trainer.predict(net, coeffs, data, cfg, threads=opts["threads"])
    acc = float(np.mean(preds == data.labels))
    matrix = trainer.confusion_matrix(data.labels, preds)
    path = _out_dir(opts) / "confusion.csv"
    with open(path, "w", newline="") as fh:
        for line in echo_lines(opts):
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["true"] + [f"pred_{k}" for k in range(matrix.shape[1])])
        for k, row in enumerate(matrix):
            writer.writerow([k, *row.tolist()])
    print(f"accuracy {acc!r} ({int(np.sum(preds == data.labels))}/{len(data)})")
    return EXIT_OK


def cmd_baseline(opts: dict) -> int:
    ratios = _parse_floats(opts["lr"], "link-ratio list")
    bad = [v for v in ratios if not 0 < v <= 1]
    if bad:
        raise UsageError(f"link ratios must lie in (0, 1]: {bad}")
    layers = _parse_ints(opts["layers"], "layer list")
    seeds = _parse_ints(opts["seeds"], "seed list")
    data = _dataset(opts["images"], opts["labels"], opts["size"], opts["subset_seed"], opts["stratified"], "training")
    try:
        rows = baseline_mlp.lr_sweep(layers, ratios, data, int(opts["epochs"]), seeds,
                                     learning_rate=float(opts["learning_rate"]), activation=opts["activation"],
                                     threads=int(opts["threads"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    path = _out_dir(opts) / "baseline.csv"
    baseline_mlp.write_sweep_csv(rows, path, echo_lines(opts))
    for ratio in ratios:
        final = [r.accuracy for r in rows if r.link_ratio == ratio and r.epoch == int(opts["epochs"])]
        if final:
            print(f"LR {ratio:g}: mean final accuracy {np.mean(final):.4f} over {len(final)} seeds")
    print(f"wrote {path}")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with option values")
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--threads", type=int)
    common.add_argument("--seed", type=int, help="root seed")

    parser = argparse.ArgumentParser(prog="wuxingnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", parents=[common], help="build a topology file")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--model")
    g.add_argument("--layers", help="comma-separated layer sizes")
    p.add_argument("--fan-in-adders", dest="fan_in_adders", action="store_const", const=True)
    p.add_argument("--out")
    p.add_argument("--topology-seed", dest="topology_seed", type=int)

    p = sub.add_parser("train", parents=[common], help="train connection coefficients")
    p.add_argument("--topology")
    p.add_argument("--model")
    p.add_argument("--resume", help="checkpoint to continue from")
    for name in ("train-images", "train-labels", "test-images", "test-labels"):
        p.add_argument(f"--{name}", dest=name.replace("-", "_"))
    p.add_argument("--train-size", dest="train_size", type=int)
    p.add_argument("--test-size", dest="test_size", type=int)
    p.add_argument("--stratified", action=argparse.BooleanOptionalAction, default=None)
    for name, kind in (("epochs", int), ("kt", float), ("step-scale", float), ("step-decay", float), ("c-min", float),
                       ("c-max", float), ("input-scale", float), ("error-scale", float), ("batch-size", int),
                       ("t-end", float), ("dt", float)):
        p.add_argument(f"--{name}", dest=name.replace("-", "_"), type=kind)
    p.add_argument("--error-mode", dest="error_mode", choices=trainer.ERROR_MODES)
    p.add_argument("--integrator", choices=("rk4", "euler"))
    for key in SEED_KEYS:
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=int)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--topology")
    p.add_argument("--images")
    p.add_argument("--labels")
    p.add_argument("--size", type=int)
    p.add_argument("--stratified", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--subset-seed", dest="subset_seed", type=int)

    p = sub.add_parser("baseline", parents=[common], help="masked-MLP link-ratio sweep")
    p.add_argument("--lr", help="comma-separated link ratios in (0, 1]")
    p.add_argument("--layers")
    p.add_argument("--images")
    p.add_argument("--labels")
    p.add_argument("--size", type=int)
    p.add_argument("--stratified", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--subset-seed", dest="subset_seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seeds")
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--activation", choices=("sigmoid", "relu"))
    return parser


COMMANDS = {"build": cmd_build, "train": cmd_train, "eval": cmd_eval, "baseline": cmd_baseline}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on malformed flags
    try:
        opts = resolve(args)
        opts["command"] = args.command
        if args.command == "train":
            opts["_epochs_given"] = args.epochs is not None
        return COMMANDS[args.command](opts)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, EmptyDatasetError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SimulationDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
