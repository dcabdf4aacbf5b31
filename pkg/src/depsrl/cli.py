"""``depsrl`` command line: data preparation, training, search, evaluation."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import click
import yaml

from depsrl import __version__
from depsrl.corpus import (
    SplitSpec,
    SyntheticConfig,
    generate_synthetic,
    read_corpus,
    split_leak_safe,
    write_corpus,
    write_splits,
)
from depsrl.dp import evaluate_dp
from depsrl.errors import ConfigError, DataError, DepSrlError
from depsrl.hpo import PruningConfig, SearchSpace, hpo_config, hpo_search
from depsrl.model import ModelConfig, MultitaskModel
from depsrl.report import EvalReport, aggregate_reports, format_aggregate_table, report_ablation
from depsrl.srl import evaluate_srl
from depsrl.tokenize import SubwordModel, learn_subwords
from depsrl.trainer import TrainConfig, evaluate_checkpoint, train_multitask, train_single

logger = logging.getLogger("depsrl")


# ---------------------------------------------------------------- helpers


def _fmt_of(path) -> str:
    return "jsonl" if ".jsonl" in Path(path).name else "conllu"


def _read(path, trees: bool = True) -> list:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"no such file: {p}")
    return read_corpus(p, trees)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def write_run_manifest(path, command: str, config: dict, inputs: Sequence, seed, checkpoint_hash: Optional[str] = None) -> str:
    """Write the run manifest to ``path`` and return the manifest hash.

    The hash covers everything except the timestamp, so repeating a run
    reproduces it; data files are identified by name and SHA-256.
    """
    body = {
        "command": command,
        "config": config,
        "data_checksums": {Path(p).name: _sha256(p) for p in inputs},
        "seed": seed,
        "toolkit_version": __version__,
        "checkpoint_hash": checkpoint_hash,
    }
    digest = hashlib.sha1(json.dumps(body, sort_keys=True).encode("utf-8")).hexdigest()
    out = {**body, "manifest_hash": digest, "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat()}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    _dump_json(out, path)
    return digest


def load_run_config(path) -> Dict[str, dict]:
    """Read a YAML or JSON run configuration with ``train`` and ``model`` blocks."""
    if path is None:
        return {"train": {}, "model": {}}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"no such config file: {p}")
    try:
        obj = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    unknown = set(obj) - {"train", "model", "search_space"}
    if unknown:
        raise ConfigError(f"{p}: unknown config blocks {sorted(unknown)}")
    for block in ("train", "model"):
        obj.setdefault(block, {})
        if not isinstance(obj[block], dict):
            raise ConfigError(f"{p}: block {block!r} must be a mapping")
    return obj


_TRAIN_FLAGS = {
    "epochs": "epochs",
    "lr": "learning_rate",
    "batch_size": "batch_size",
    "seed": "seed",
    "max_tokens": "max_tokens",
    "encoder_dropout": "encoder_dropout",
    "dp_dropout": "dp_dropout",
    "lstm_dropout": "lstm_dropout",
    "dp_loss_scale": "dp_loss_scale",
    "srl_ratio": "srl_ratio",
    "weight_decay": "weight_decay",
}
_MODEL_FLAGS = {
    "hidden_size": "hidden_size",
    "embed_size": "embed_size",
    "n_layers": "n_layers",
    "merges": "n_merges",
    "setting": "srl_setting",
    "dp_mode": "dp_mode",
}


def resolve_configs(opts: dict, multitask: bool = False):
    """Config file values overridden by explicitly given flags."""
    raw = load_run_config(opts.get("config"))
    train = dict(raw["train"])
    model = dict(raw["model"])
    if multitask:
        model.setdefault("dp_mode", "root_known")
    for flag, key in _TRAIN_FLAGS.items():
        if opts.get(flag) is not None:
            train[key] = opts[flag]
    for flag, key in _MODEL_FLAGS.items():
        if opts.get(flag) is not None:
            model[key] = opts[flag]
    if opts.get("no_srl_predicate"):
        model["srl_predicate"] = False
    if opts.get("no_bpe"):
        model["use_bpe"] = False
    if opts.get("no_bilstm"):
        model["srl_bilstm"] = False
    if opts.get("no_dp_predicate"):
        model["dp_mode"] = "root_unknown"
    try:
        return TrainConfig.from_dict(train), ModelConfig.from_dict(model), raw
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def training_options(fn):
    opts = [
        click.option("--config", type=click.Path(dir_okay=False), help="YAML/JSON run configuration."),
        click.option("--epochs", type=int),
        click.option("--lr", type=float, help="Learning rate."),
        click.option("--batch-size", type=int),
        click.option("--seed", type=int),
        click.option("--max-tokens", type=int),
        click.option("--encoder-dropout", type=float),
        click.option("--dp-dropout", type=float),
        click.option("--lstm-dropout", type=float),
        click.option("--dp-loss-scale", type=float),
        click.option("--srl-ratio", type=float, help="Probability of drawing an SRL batch."),
        click.option("--weight-decay", type=float),
        click.option("--hidden-size", type=int),
        click.option("--embed-size", type=int),
        click.option("--n-layers", type=int),
        click.option("--merges", type=int, help="Number of BPE merges."),
        click.option("--setting", type=click.Choice(["morpheme", "span_given"])),
        click.option("--dp-mode", type=click.Choice(["root_unknown", "root_known"])),
        click.option("--subwords", type=click.Path(dir_okay=False), help="Use a learned subword file."),
        click.option("--no-srl-predicate", is_flag=True, help="Drop the predicate segment from SRL inputs."),
        click.option("--no-bpe", is_flag=True, help="Whole SUWs as tokens."),
        click.option("--no-bilstm", is_flag=True, help="No BiLSTM in the SRL head."),
        click.option("--no-dp-predicate", is_flag=True, help="Multitask DP without the root segment."),
    ]
    for o in reversed(opts):
        fn = o(fn)
    return fn


def _subwords(path) -> Optional[SubwordModel]:
    if path is None:
        return None
    if not Path(path).is_file():
        raise DataError(f"no such file: {path}")
    return SubwordModel.load(path)


def _finish_training(result, out, command, train_cfg, model_cfg, inputs) -> str:
    out = Path(out)
    ckpt_hash = result.model.save(out)
    config = {"train": asdict(train_cfg), "model": asdict(result.model.config)}
    digest = write_run_manifest(out / "run_manifest.json", command, config, inputs, train_cfg.seed, ckpt_hash)
    _dump_json(
        {
            "manifest_hash": digest,
            "best_epoch": result.best_epoch,
            "best_value": result.best_value,
            "history": result.history,
        },
        out / "history.json",
    )
    click.echo(json.dumps({"checkpoint": str(out), "content_hash": ckpt_hash, "best_epoch": result.best_epoch, "best_value": result.best_value}))
    return digest


# ---------------------------------------------------------------- commands


@click.group()
@click.version_option(__version__, prog_name="depsrl")
@click.option("-v", "--verbose", count=True, help="-v for progress, -vv for debug output.")
def cli(verbose):
    """Multitask dependency parsing and semantic role labeling."""
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


@cli.command("gen-synth")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Output file (.jsonl or .conllu).")
@click.option("--n-sentences", default=100, show_default=True)
@click.option("--vocab-size", default=200, show_default=True)
@click.option("--n-roles", default=5, show_default=True)
@click.option("--min-phrases", default=1, show_default=True)
@click.option("--max-phrases", default=4, show_default=True)
@click.option("--seed", default=0, show_default=True)
def gen_synth(out, n_sentences, vocab_size, n_roles, min_phrases, max_phrases, seed):
    """Generate a synthetic corpus with gold trees and frames."""
    cfg = SyntheticConfig(n_sentences, vocab_size, n_roles, min_phrases, max_phrases)
    sents = generate_synthetic(cfg, seed)
    write_corpus(sents, out, _fmt_of(out))
    click.echo(json.dumps({"sentences": len(sents), "out": str(out)}))


@cli.command()
@click.option("--dp", "dp_path", type=click.Path(dir_okay=False), help="DP corpus.")
@click.option("--srl", "srl_path", type=click.Path(dir_okay=False), help="SRL corpus.")
@click.option("--ratios", default="80:10:10", show_default=True)
@click.option("--shared-map", type=click.Path(dir_okay=False), help="JSON map sentence id -> split.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
def split(dp_path, srl_path, ratios, shared_map, seed, out_dir):
    """Leak-safe train/dev/test split of a DP and an SRL corpus."""
    if dp_path is None and srl_path is None:
        raise ConfigError("give --dp and/or --srl")
    shared = {}
    if shared_map:
        if not Path(shared_map).is_file():
            raise DataError(f"no such file: {shared_map}")
        shared = json.loads(Path(shared_map).read_text(encoding="utf-8"))
    spec = SplitSpec(ratios, shared)
    dp = _read(dp_path) if dp_path else []
    srl = _read(srl_path) if srl_path else []
    dp_splits, srl_splits = split_leak_safe(dp, srl, spec, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    for path, splits in ((dp_path, dp_splits), (srl_path, srl_splits)):
        if path:
            files = write_splits(splits, out / Path(path).name, _fmt_of(path))
            written[Path(path).name] = {f.suffix[1:]: len(splits[f.suffix[1:]]) for f in files}
    inputs = [p for p in (dp_path, srl_path, shared_map) if p]
    write_run_manifest(out / "run_manifest.json", "split", {"ratios": list(spec.ratios), "seed": seed}, inputs, seed)
    click.echo(json.dumps(written, sort_keys=True))


@cli.command("learn-bpe")
@click.option("--corpus", "corpora", multiple=True, required=True, type=click.Path(dir_okay=False))
@click.option("--merges", default=500, show_default=True)
@click.option("--no-bpe", is_flag=True, help="Atomic SUW vocabulary instead of merges.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def learn_bpe(corpora, merges, no_bpe, out):
    """Learn a subword model within SUW boundaries."""
    sents = [s for p in corpora for s in _read(p)]
    model = learn_subwords(sents, merges, atomic=no_bpe)
    model.save(out)
    click.echo(json.dumps({"vocab_size": len(model), "merges": len(model.merges), "out": str(out)}))


@cli.command()
@click.option("--task", type=click.Choice(["dp", "srl"]), required=True)
@click.option("--train", "train_path", required=True, type=click.Path(dir_okay=False))
@click.option("--dev", "dev_path", type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Checkpoint directory.")
@training_options
def train(task, train_path, dev_path, out, **opts):
    """Single-task training; keeps the best validation epoch."""
    train_cfg, model_cfg, _ = resolve_configs(opts)
    data = _read(train_path)
    dev = _read(dev_path) if dev_path else None
    result = train_single(task, train_cfg, data, dev, model_cfg, _subwords(opts["subwords"]))
    inputs = [p for p in (train_path, dev_path, opts["subwords"]) if p]
    _finish_training(result, out, f"train --task {task}", train_cfg, model_cfg, inputs)


@cli.command("train-multi")
@click.option("--dp-train", required=True, type=click.Path(dir_okay=False))
@click.option("--srl-train", required=True, type=click.Path(dir_okay=False))
@click.option("--srl-dev", type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Checkpoint directory.")
@training_options
def train_multi(dp_train, srl_train, srl_dev, out, **opts):
    """Multitask training with a shared encoder."""
    train_cfg, model_cfg, _ = resolve_configs(opts, multitask=True)
    result = train_multitask(
        train_cfg,
        _read(dp_train),
        _read(srl_train),
        _read(srl_dev) if srl_dev else None,
        model_cfg,
        _subwords(opts["subwords"]),
    )
    inputs = [p for p in (dp_train, srl_train, srl_dev, opts["subwords"]) if p]
    _finish_training(result, out, "train-multi", train_cfg, model_cfg, inputs)


@cli.command()
@click.option("--task", type=click.Choice(["dp", "srl", "multi"]), required=True)
@click.option("--train", "train_path", type=click.Path(dir_okay=False), help="Training corpus (SRL for multi).")
@click.option("--dev", "dev_path", type=click.Path(dir_okay=False))
@click.option("--dp-train", type=click.Path(dir_okay=False), help="DP corpus for --task multi.")
@click.option("--n-trials", default=50, show_default=True)
@click.option("--search-seed", default=0, show_default=True)
@click.option("--search-space", type=click.Path(dir_okay=False), help="YAML/JSON ranges; overrides the config block.")
@click.option("--trial-epochs", type=int, help="Epochs per trial (default 3 for dp, 10 otherwise).")
@click.option("--trial-max-tokens", type=int, help="Input limit during search (default 270).")
@click.option("--no-prune", is_flag=True)
@click.option("--n-startup", default=2, show_default=True, help="Completed trials needed before pruning.")
@click.option("--force-complete", is_flag=True, help="Keep pruned trials running to audit pruning.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@training_options
def hpo(task, train_path, dev_path, dp_train, n_trials, search_seed, search_space, trial_epochs, trial_max_tokens, no_prune, n_startup, force_complete, out, **opts):
    """Random search with median pruning; writes trials.jsonl and best_config.json."""
    train_cfg, model_cfg, raw = resolve_configs(opts, multitask=task == "multi")
    if train_path is None:
        raise ConfigError("--train is required")
    data = _read(train_path)
    dev = _read(dev_path) if dev_path else None
    dp = None
    if task == "multi":
        if dp_train is None:
            raise ConfigError("--task multi needs --dp-train")
        dp = _read(dp_train)
    if search_space:
        space = SearchSpace.from_dict(_read_mapping(search_space))
    elif "search_space" in raw:
        space = SearchSpace.from_dict(raw["search_space"])
    else:
        space = SearchSpace.default(task)
    subwords = _subwords(opts["subwords"])
    base = hpo_config(train_cfg, task, trial_epochs, trial_max_tokens)

    def train_fn(config, callback):
        if task == "multi":
            return train_multitask(config, dp, data, dev, model_cfg, subwords, callback=callback)
        return train_single(task, config, data, dev, model_cfg, subwords, callback=callback)

    pruning = PruningConfig(enabled=not no_prune, n_startup=n_startup, force_complete=force_complete)
    result = hpo_search(space, n_trials, train_fn, base, pruning, search_seed)
    out = Path(out)
    inputs = [p for p in (train_path, dev_path, dp_train, search_space, opts["subwords"]) if p]
    config = {"task": task, "search_space": space.to_dict(), "base": asdict(base), "model": asdict(model_cfg), "n_trials": n_trials}
    digest = write_run_manifest(out / "run_manifest.json", f"hpo --task {task}", config, inputs, search_seed)
    result.write_log(out / "trials.jsonl")
    best_train = {k: v for k, v in asdict(result.best_config).items() if k != "max_tokens" and k != "epochs"}
    _dump_json({"manifest_hash": digest, "best_trial": result.best.trial, "best_value": result.best.value, "train": best_train, "model": asdict(model_cfg)}, out / "best_config.json")
    click.echo(json.dumps({"best_trial": result.best.trial, "best_value": result.best.value, "pruned": sum(t.pruned for t in result.trials)}))


def _read_mapping(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"no such file: {p}")
    obj = yaml.safe_load(p.read_text(encoding="utf-8"))
    if not isinstance(obj, dict):
        raise ConfigError(f"{p}: expected a mapping")
    return obj.get("search_space", obj)


@cli.command("eval")
@click.option("--task", type=click.Choice(["dp", "srl"]), required=True)
@click.option("--checkpoint", "checkpoints", multiple=True, type=click.Path(file_okay=False), help="Repeat for multi-seed aggregation.")
@click.option("--data", "data_path", type=click.Path(dir_okay=False))
@click.option("--gold", type=click.Path(dir_okay=False), help="Score a prediction file against gold instead.")
@click.option("--pred", type=click.Path(dir_okay=False))
@click.option("--setting", help="DP mode or SRL setting; must match the checkpoint.")
@click.option("--root-checkpoint", type=click.Path(file_okay=False), help="Root-unknown parser that supplies roots to a root-known one.")
@click.option("--out", type=click.Path(dir_okay=False), help="Report JSON.")
@click.option("--per-label-csv", type=click.Path(dir_okay=False))
def eval_cmd(task, checkpoints, data_path, gold, pred, setting, root_checkpoint, out, per_label_csv):
    """Metric report for checkpoints on a corpus, or for predictions vs gold."""
    if checkpoints and (gold or pred):
        raise ConfigError("use either --checkpoint/--data or --gold/--pred")
    if gold or pred:
        if not (gold and pred):
            raise ConfigError("--gold and --pred go together")
        g, p = _read(gold), _read(pred, trees=False)
        if task == "dp":
            metrics = evaluate_dp(p, g)
            counts = {k: metrics.pop(k) for k in ("tokens", "sentences", "cycles")}
            report = EvalReport("dp", setting or "root_unknown", metrics, meta={"counts": counts})
        else:
            report = evaluate_srl(p, g, setting or "morpheme")
        report.meta["eval_data"] = _sha256(gold)
        reports = [report]
        inputs = [gold, pred]
    else:
        if not checkpoints or not data_path:
            raise ConfigError("--checkpoint and --data are required")
        data = _read(data_path)
        root_model = MultitaskModel.load(root_checkpoint) if root_checkpoint else None
        reports = []
        for ckpt in checkpoints:
            rep = evaluate_checkpoint(ckpt, data, task, setting, root_model)
            rep.meta["eval_data"] = _sha256(data_path)
            rep.meta["checkpoint"] = MultitaskModel.load(ckpt).content_hash
            reports.append(rep)
        inputs = [data_path]
    if len(reports) == 1:
        rep = reports[0]
        payload = rep.to_dict()
        click.echo(json.dumps(rep.metrics, sort_keys=True))
    else:
        agg = aggregate_reports(reports)
        payload = {"aggregate": agg.to_dict(), "runs": [r.to_dict() for r in reports]}
        click.echo(format_aggregate_table({f"{task} ({len(reports)} runs)": agg}), nl=False)
    if out:
        digest = _manifest_for_eval(out, task, checkpoints, inputs, setting)
        payload["manifest_hash"] = digest
        _dump_json(payload, out)
    if per_label_csv:
        if task != "srl":
            raise ConfigError("--per-label-csv applies to SRL reports")
        Path(per_label_csv).write_text(reports[0].per_label_csv(), encoding="utf-8")


def _manifest_for_eval(out, task, checkpoints, inputs, setting) -> str:
    config = {"task": task, "setting": setting, "checkpoints": [MultitaskModel.load(c).content_hash for c in checkpoints]}
    return write_run_manifest(Path(out).with_suffix(".manifest.json"), "eval", config, inputs, None)


@cli.command()
@click.option("--checkpoint", required=True, type=click.Path(file_okay=False))
@click.option("--data", "data_path", required=True, type=click.Path(dir_okay=False))
@click.option("--task", type=click.Choice(["dp", "srl"]), required=True)
@click.option("--setting", help="Expected DP mode or SRL setting of the checkpoint.")
@click.option("--root-checkpoint", type=click.Path(file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False), help=".conllu or .jsonl output.")
def predict(checkpoint, data_path, task, setting, root_checkpoint, out):
    """Write predictions: DP heads/labels or SRL frames."""
    model = MultitaskModel.load(checkpoint)
    data = _read(data_path)
    if task == "dp":
        if setting and setting != model.config.dp_mode:
            raise ConfigError(f"checkpoint is {model.config.dp_mode}, not {setting}")
        roots = None
        if model.config.dp_mode == "root_known":
            if root_checkpoint is None:
                raise ConfigError("a root_known checkpoint needs --root-checkpoint")
            roots = MultitaskModel.load(root_checkpoint).predict_roots(data)
        predicted = model.predict_dp(data, roots)
    else:
        if setting and setting != model.config.srl_setting:
            raise ConfigError(f"checkpoint is {model.config.srl_setting}, not {setting}")
        predicted = model.predict_srl(data)
    write_corpus(predicted, out, _fmt_of(out))
    click.echo(json.dumps({"sentences": len(predicted), "out": str(out)}))


@cli.command()
@click.argument("runs", nargs=-1, required=True)
@click.option("--columns", help="Comma-separated metric keys.")
@click.option("--out", type=click.Path(dir_okay=False))
def ablation(runs, columns, out):
    """Compare eval reports against the first one.

    Each RUN is ``[NAME=]PATH`` where PATH is a report JSON or a directory
    holding ``report.json``.
    """
    named: Dict[str, EvalReport] = {}
    for spec in runs:
        name, _, path = spec.rpartition("=")
        p = Path(path)
        if p.is_dir():
            p = p / "report.json"
        if not p.is_file():
            raise DataError(f"no report at {p}")
        if not name:
            name = Path(path).name if Path(path).is_dir() else Path(path).stem
        if name in named:
            raise ConfigError(f"duplicate run name {name!r}")
        named[name] = EvalReport.load(p)
    table = report_ablation(named, columns.split(",") if columns else None)
    if out:
        Path(out).write_text(table, encoding="utf-8")
    click.echo(table, nl=False)


# ---------------------------------------------------------------- entry point


def _fail(kind: str, message: str, code: int) -> int:
    click.echo(json.dumps({"error": kind, "message": message, "exit_code": code}), err=True)
    return code


def main(argv: Optional[List[str]] = None) -> None:
    try:
        rv = cli.main(args=argv, prog_name="depsrl", standalone_mode=False)
        code = rv if isinstance(rv, int) else 0
    except click.exceptions.Abort:
        code = _fail("Aborted", "aborted", 1)
    except click.ClickException as exc:
        code = _fail("UsageError", exc.format_message(), 2)
    except DepSrlError as exc:
        code = _fail(type(exc).__name__, str(exc), exc.exit_code)
    except OSError as exc:
        code = _fail("DataError", str(exc), 3)
    sys.exit(code)


if __name__ == "__main__":
    main()
