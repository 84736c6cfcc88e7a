"""Command-line entry point: generate, train, attribute, evaluate, bench, axioms, pipeline.

Every option resolves as command-line flag > ``--config`` JSON file > built-in
default, and the resolved values are echoed to ``config.resolved.json`` next to
the outputs. All randomness is derived from ``--seed``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import attribution, causality, evaluation, generators, npp, seqdata

log = logging.getLogger("eventgc")

EXIT_MODULE_ERROR = 1
EXIT_CONFIG_ERROR = 2


class ConfigError(ValueError):
    """Bad flag values, unknown config keys or missing required paths."""


def _ints(text):
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def _strs(text):
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [v.strip() for v in str(text).split(",") if v.strip()]


# name -> (default, type, help); ``None`` defaults for paths mean "required"
COMMON = {
    "seed": (0, int, "seed for every random choice"),
    "threads": (1, int, "cap on BLAS threads; 1 is bit-deterministic"),
}
TRAIN = {
    "epochs": (200, int, "training epochs"),
    "lr": (2e-3, float, "Adam learning rate"),
    "batch_size": (16, int, "training mini-batch size"),
    "eta": (0.0, float, "weight of the null-history regularizer"),
    "hidden": (32, int, "GRU state size"),
    "d_emb": (32, int, "type embedding size"),
    "R": (None, int, "number of basis functions (auto from gap quantiles when unset)"),
    "L": (None, float, "largest basis center (auto from gap quantiles when unset)"),
    "valid_frac": (0.1, float, "fraction of sequences held out for model selection"),
}
ATTRIBUTE = {
    "ig_steps": (50, int, "Integrated Gradients path steps"),
    "naive": (False, bool, "use one attribution call per interval (slow reference path)"),
    "include_survival": (True, bool, "attribute the final interval (t_n, T]"),
}
COMMANDS = {
    "generate": {
        "process": ("excitation", str, "excitation, inhibition or synergy"),
        "scale": ("desk", str, "full or desk"),
        "out": (None, str, "output directory"),
    },
    "train": {
        "data": (None, str, "training dataset (JSONL)"),
        "out": (None, str, "output directory for model.ckpt"),
        **TRAIN,
    },
    "attribute": {
        "model": (None, str, "model checkpoint"),
        "data": (None, str, "dataset (JSONL)"),
        "out": (None, str, "path of the K x K matrix CSV; a .json sidecar is written next to it"),
        "batch_size": (16, int, "sequences per attribution call"),
        **ATTRIBUTE,
    },
    "evaluate": {
        "estimate": (None, str, "estimated matrix CSV"),
        "truth": (None, str, "ground-truth matrix CSV"),
        "model": ("", str, "optional checkpoint for hold-out NLL"),
        "data": ("", str, "optional test dataset for hold-out NLL"),
        "out": ("", str, "optional directory for report.json (always printed)"),
    },
    "bench": {
        "model": ("", str, "checkpoint to time; a freshly initialized model when empty"),
        "K": (5, int, "number of types for the fresh model"),
        "hidden": (64, int, "GRU state size for the fresh model"),
        "lengths": ("25,50,100,150", _ints, "comma-separated sequence lengths"),
        "batch_sizes": ("1,4,16", _ints, "comma-separated batch sizes"),
        "ig_steps": (50, int, "Integrated Gradients path steps"),
        "reps": (3, int, "repetitions per grid point (median reported)"),
        "naive_mode": ("extrapolate", str, "extrapolate or full"),
        "out": (None, str, "output directory for bench.csv"),
    },
    "axioms": {
        "method": ("both", str, "ig, shapley or both"),
        "n_targets": (200, int, "number of random targets"),
        "families": (",".join(attribution.FAMILIES), _strs, "comma-separated target families"),
        "max_dim": (16, int, "largest input dimension"),
        "tol": (1e-8, float, "tolerance for the exact axioms"),
        "completeness_tol": (1e-4, float, "tolerance for the IG completeness gap"),
        "steps": (200, int, "IG path steps"),
        "out": (None, str, "output directory for axioms.json"),
    },
    "pipeline": {
        "process": ("excitation", str, "excitation, inhibition or synergy"),
        "scale": ("desk", str, "full or desk"),
        "out": (None, str, "output directory"),
        **TRAIN,
        "attr_batch_size": (16, int, "sequences per attribution call"),
        **ATTRIBUTE,
    },
}
CHOICES = {
    "process": ("excitation", "inhibition", "synergy"),
    "scale": ("full", "desk"),
    "method": ("ig", "shapley", "both"),
    "naive_mode": ("extrapolate", "full"),
}


def _flag(name):
    return "--" + name.replace("_", "-")


def build_parser():
    parser = argparse.ArgumentParser(prog="eventgc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for cmd, opts in COMMANDS.items():
        p = sub.add_parser(cmd, help=f"{cmd} step")
        p.add_argument("--config", default=None, help="JSON file of option values (default: none)")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr (default: off)")
        for name, (default, typ, text) in {**COMMON, **opts}.items():
            shown = "auto" if default is None and name in ("R", "L") else ("required" if default is None else default)
            text = f"{text} (default: {shown})"
            if typ is bool:
                p.add_argument(_flag(name), dest=name, action=argparse.BooleanOptionalAction, default=None, help=text)
            else:
                p.add_argument(_flag(name), dest=name, type=typ, default=None, choices=CHOICES.get(name), help=text)
    return parser


def resolve(command, args):
    """Merge defaults, the optional config file and explicit flags."""
    spec = {**COMMON, **COMMANDS[command]}
    cfg = {name: (typ(d) if typ in (_ints, _strs) and d is not None else d) for name, (d, typ, _) in spec.items()}
    if args.config:
        try:
            body = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from None
        if not isinstance(body, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(body) - set(spec) - {"command"})
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
        for name, value in body.items():
            if name == "command" or value is None:
                continue
            typ = spec[name][1]
            if typ is bool and not isinstance(value, bool):
                raise ConfigError(f"{name} must be true or false")
            try:
                cfg[name] = value if typ is bool else typ(value)
            except (TypeError, ValueError):
                raise ConfigError(f"bad value for {name}: {value!r}") from None
            if name in CHOICES and cfg[name] not in CHOICES[name]:
                raise ConfigError(f"{name} must be one of {', '.join(CHOICES[name])}")
    for name in spec:
        value = getattr(args, name, None)
        if value is not None:
            cfg[name] = value
    missing = [_flag(n) for n, (d, _, _) in spec.items() if d is None and cfg[n] is None and n not in ("R", "L")]
    if missing:
        raise ConfigError(f"{command}: missing required option(s) {', '.join(missing)}")
    _check(cfg)
    return {"command": command, **cfg}


def _check(cfg):
    positive = ["threads", "epochs", "batch_size", "hidden", "d_emb", "attr_batch_size", "ig_steps",
                "K", "reps", "n_targets", "max_dim", "steps", "R"]
    for name in positive:
        if cfg.get(name) is not None and cfg[name] < 1:
            raise ConfigError(f"{_flag(name)} must be >= 1")
    for name in ("lr", "L", "tol", "completeness_tol"):
        if cfg.get(name) is not None and not cfg[name] > 0:
            raise ConfigError(f"{_flag(name)} must be positive")
    if cfg.get("eta") is not None and cfg["eta"] < 0:
        raise ConfigError("--eta must be nonnegative")
    if cfg.get("valid_frac") is not None and not 0 <= cfg["valid_frac"] < 1:
        raise ConfigError("--valid-frac must lie in [0, 1)")
    for name in ("lengths", "batch_sizes"):
        if name in cfg and (not cfg[name] or min(cfg[name]) < 1):
            raise ConfigError(f"{_flag(name)} needs positive integers")
    if "families" in cfg:
        bad = sorted(set(cfg["families"]) - set(attribution.FAMILIES))
        if bad or not cfg["families"]:
            raise ConfigError(f"unknown target families: {', '.join(bad) or '(none given)'}")


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _echo(cfg, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _dump_json(cfg, directory / "config.resolved.json")


def _train_model(train_set, cfg):
    basis = None
    if cfg["R"] is not None or cfg["L"] is not None:
        auto = npp.BasisFamily.from_gaps(np.concatenate([s.gaps() for s in train_set.sequences] + [np.zeros(0)]))
        basis = npp.BasisFamily(cfg["R"] or auto.R, cfg["L"] or auto.L)
    model = npp.NppModel.for_dataset(train_set, cfg["d_emb"], cfg["hidden"], rng=cfg["seed"], basis=basis)
    tcfg = npp.TrainConfig(
        lr=cfg["lr"], epochs=cfg["epochs"], batch_size=cfg["batch_size"], eta=cfg["eta"],
        valid_frac=cfg["valid_frac"], seed=cfg["seed"],
    )
    best, hist = npp.train(model, train_set, tcfg)
    return best, hist


def _attr_batch_size(cfg):
    return cfg["attr_batch_size"] if "attr_batch_size" in cfg else cfg["batch_size"]


def _attribute(model, dataset, cfg):
    if model.K != dataset.K:
        raise seqdata.DataError(f"model has K={model.K} but data has K={dataset.K}")
    if cfg["naive"]:
        return causality.naive_statistic(model, dataset, cfg["ig_steps"], cfg["include_survival"])
    return causality.batched_statistic(
        model, dataset, _attr_batch_size(cfg), cfg["ig_steps"], cfg["include_survival"], rng=cfg["seed"]
    )


def _write_matrix(result, cfg, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    seqdata.save_matrix_csv(result.Y, path)
    side = {**result.to_dict(), "mode": "naive" if cfg["naive"] else "batched",
            "ig_steps": cfg["ig_steps"], "include_survival": cfg["include_survival"]}
    if not cfg["naive"]:
        side["batch_size"] = _attr_batch_size(cfg)
    _dump_json(side, path.with_suffix(".json"))


def cmd_generate(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    gcfg, dataset = generators.generate(cfg["process"], cfg["scale"], cfg["seed"])
    seqdata.save_jsonl(dataset, out / "dataset.jsonl")
    seqdata.save_matrix_csv(dataset.ground_truth, out / "ground_truth.csv")
    (out / "config.json").write_text(generators.config_to_json(gcfg) + "\n")
    _echo(cfg, out)
    log.info("wrote %d sequences (%d events) to %s", len(dataset), dataset.num_events(), out)
    return dataset


def cmd_train(cfg):
    dataset = seqdata.load_jsonl(cfg["data"])
    out = Path(cfg["out"])
    _echo(cfg, out)
    best, hist = _train_model(dataset, cfg)
    npp.save_checkpoint(best, out / "model.ckpt")
    _dump_json({"train_loss": hist.train_loss, "valid_loss": hist.valid_loss,
                "best_epoch": hist.best_epoch, "diverged": hist.diverged}, out / "history.json")
    log.info("best epoch %d; checkpoint in %s", hist.best_epoch, out / "model.ckpt")


def cmd_attribute(cfg):
    model = npp.load_checkpoint(cfg["model"])
    dataset = seqdata.load_jsonl(cfg["data"])
    result = _attribute(model, dataset, cfg)
    _write_matrix(result, cfg, cfg["out"])
    _echo(cfg, Path(cfg["out"]).parent)


def cmd_evaluate(cfg):
    estimate = seqdata.load_matrix_csv(cfg["estimate"])
    truth = seqdata.load_matrix_csv(cfg["truth"])
    if estimate.shape != truth.shape:
        raise evaluation.EvalError(f"estimate is {estimate.shape} but truth is {truth.shape}")
    if bool(cfg["model"]) != bool(cfg["data"]):
        raise ConfigError("--model and --data must be given together")
    model = npp.load_checkpoint(cfg["model"]) if cfg["model"] else None
    test = seqdata.load_jsonl(cfg["data"]) if cfg["data"] else None
    report = evaluation.evaluate(estimate, truth, model, test, config=cfg)
    if cfg["out"]:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json())
        _echo(cfg, out)
    sys.stdout.write(report.to_json())
    return report


def cmd_bench(cfg):
    if cfg["model"]:
        model = npp.load_checkpoint(cfg["model"])
    else:
        model = npp.NppModel.init(cfg["K"], npp.BasisFamily(8, 10.0), cfg["hidden"], cfg["hidden"], rng=cfg["seed"])
    rows = causality.benchmark_speedup(
        model, cfg["lengths"], cfg["batch_sizes"], cfg["ig_steps"], cfg["reps"], cfg["naive_mode"], rng=cfg["seed"]
    )
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.csv").write_text(causality.bench_csv(rows))
    _echo(cfg, out)
    for r in rows:
        log.info("n=%d B=%d speedup %.1fx", r["n"], r["batch_size"], r["speedup"])
    return rows


def cmd_axioms(cfg):
    methods = ["ig", "shapley"] if cfg["method"] == "both" else [cfg["method"]]
    reports = {}
    for m in methods:
        rep = attribution.axiom_harness(
            m, cfg["n_targets"], tuple(cfg["families"]), cfg["max_dim"], cfg["tol"],
            cfg["completeness_tol"], cfg["steps"], rng=cfg["seed"],
        )
        reports[m] = rep.to_dict()
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(reports, out / "axioms.json")
    _echo(cfg, out)
    bad = sum(len(r["violations"]) for r in reports.values())
    sys.stdout.write(f"{bad} violation(s)\n")
    return reports


def cmd_pipeline(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _echo(cfg, out)
    gcfg, dataset = generators.generate(cfg["process"], cfg["scale"], cfg["seed"])
    seqdata.save_jsonl(dataset, out / "dataset.jsonl")
    seqdata.save_matrix_csv(dataset.ground_truth, out / "ground_truth.csv")
    (out / "config.json").write_text(generators.config_to_json(gcfg) + "\n")
    tr, te = seqdata.kfold_split(dataset, 5, cfg["seed"])[0]
    train_set, test_set = dataset.subset(tr), dataset.subset(te)
    seqdata.save_jsonl(train_set, out / "train.jsonl")
    seqdata.save_jsonl(test_set, out / "test.jsonl")
    log.info("training on %d sequences", len(train_set))
    model, _ = _train_model(train_set, cfg)
    npp.save_checkpoint(model, out / "model.ckpt")
    log.info("attributing")
    result = _attribute(model, train_set, cfg)
    _write_matrix(result, cfg, out / "Y.csv")
    report = evaluation.evaluate(result.Y, dataset.ground_truth, model, test_set, config=cfg)
    report.baselines = {
        "poisson_nll_per_event": evaluation.poisson_nll(train_set, test_set),
        "true_nll_per_event": generators.exact_nll(gcfg, test_set) / test_set.num_events(),
    }
    (out / "report.json").write_text(report.to_json())
    sys.stdout.write(report.to_json())
    return report


HANDLERS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "attribute": cmd_attribute,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
    "axioms": cmd_axioms,
    "pipeline": cmd_pipeline,
}

MODULE_ERRORS = (
    seqdata.DataError,
    generators.GeneratorError,
    npp.TrainingError,
    attribution.AttributionError,
    evaluation.EvalError,
    OSError,
    ValueError,
)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_CONFIG_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args.command, args)
    except ConfigError as exc:
        sys.stderr.write(f"eventgc {args.command}: config error: {exc}\n")
        return EXIT_CONFIG_ERROR
    try:
        with threadpool_limits(limits=cfg["threads"]):
            HANDLERS[args.command](cfg)
    except ConfigError as exc:
        sys.stderr.write(f"eventgc {args.command}: config error: {exc}\n")
        return EXIT_CONFIG_ERROR
    except MODULE_ERRORS as exc:
        sys.stderr.write(f"eventgc {args.command}: error: {exc}\n")
        return EXIT_MODULE_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
