"""Command-line front end.

Subcommands cover the full pipeline: ``pretrain`` fits and freezes the
response model, ``train`` learns a selection policy against it, ``eval``
scores a policy on the test partition, ``analyze`` exports the ratio
distributions behind the plots, and ``sweep`` fans ``train`` out over the
regularization-weight grid.

Configuration comes from a JSON file plus flag overrides (flags > file >
defaults). Each run writes into a directory named by a hash of its resolved
config, so reruns land in the same place and different configs never collide.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

from . import cdm, dataset, evaluation, selector, trainer
from .errors import CatlabError, ConfigError, ParseError
from .util import atomic_write_json, atomic_write_text, dump_jsonl

DEFAULTS: dict = {
    # data and orchestration
    "data": None,
    "out": "runs",
    "cdm": "irt",
    "bundle": None,
    "policy": None,
    "split_seed": 0,
    "split_ratios": [0.7, 0.1, 0.2],
    "min_interactions": 1,
    # response-model pretraining
    "pretrain_lr": 0.002,
    "pretrain_epochs": 50,
    "pretrain_batch": 256,
    "pretrain_patience": 5,
    "valid_frac": 0.1,
    "learn_theta_init": False,
    # policy training
    "t": 5,
    "k_steps": 5,
    "lr_inner": 0.1,
    "lr_outer": 0.002,
    "omega": 0.6,
    "mixup_alpha": 0.6,
    "strategy": "ERM",
    "epochs": 30,
    "batch_size": 64,
    "seed": 0,
    "patience": 5,
    "meta_frac": 0.5,
    "groupdro_eta": 0.01,
    "irm_lambda": 1.0,
    "per_step_updates": False,
    # evaluation
    "ood": False,
}

OMEGA_GRID = (0.2, 0.4, 0.6, 0.8, 1.0)

OVERRIDE_FLAGS = ("seed", "strategy", "omega", "mixup_alpha", "t", "out", "ood")


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    path = getattr(args, "config", None)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        unknown = sorted(set(file_cfg) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(file_cfg)
    for flag in OVERRIDE_FLAGS:
        value = getattr(args, flag, None)
        if value is not None:
            cfg[flag] = value
    return cfg


def run_dir(cfg: dict, command: str) -> str:
    digest = hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:8]
    return os.path.join(cfg["out"], f"{command}-{digest}")


def _load_corpus(cfg: dict, index_map_path: str | None = None) -> dataset.Corpus:
    if not cfg["data"]:
        raise ConfigError("no data path configured (set \"data\" or pass --config)")
    if not os.path.exists(cfg["data"]):
        raise ConfigError(f"data file {cfg['data']} does not exist")
    corpus = dataset.load_corpus(cfg["data"], index_map_path)
    if cfg["min_interactions"] > 1:
        corpus = dataset.filter_min_interactions(corpus, cfg["min_interactions"])
    return corpus


def _splits(corpus: dataset.Corpus, cfg: dict):
    return dataset.split_examinees(corpus, tuple(cfg["split_ratios"]), cfg["split_seed"])


def _train_config(cfg: dict) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        t=cfg["t"], k_steps=cfg["k_steps"], lr_inner=cfg["lr_inner"],
        lr_outer=cfg["lr_outer"], omega=cfg["omega"], mixup_alpha=cfg["mixup_alpha"],
        strategy=cfg["strategy"], epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        seed=cfg["seed"], patience=cfg["patience"], meta_frac=cfg["meta_frac"],
        groupdro_eta=cfg["groupdro_eta"], irm_lambda=cfg["irm_lambda"],
        per_step_updates=cfg["per_step_updates"])


def _require_file(path, what: str) -> str:
    if not path:
        raise ConfigError(f"no {what} path configured")
    if not os.path.exists(path):
        raise ConfigError(f"{what} file {path} does not exist")
    return path


def cmd_pretrain(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    corpus = _load_corpus(cfg)
    train_ids, _, _ = _splits(corpus, cfg)
    corpus_train = dataset.Corpus(
        examinee_logs={eid: corpus.examinee_logs[eid] for eid in sorted(train_ids)},
        questions=corpus.questions, n_concepts=corpus.n_concepts)
    pcfg = cdm.PretrainConfig(
        kind=cfg["cdm"], batch_size=cfg["pretrain_batch"], lr=cfg["pretrain_lr"],
        max_epochs=cfg["pretrain_epochs"], patience=cfg["pretrain_patience"],
        valid_frac=cfg["valid_frac"], seed=cfg["seed"],
        learn_theta_init=cfg["learn_theta_init"])
    bundle, history = cdm.pretrain(corpus_train, pcfg)

    out = run_dir(cfg, "pretrain")
    os.makedirs(out, exist_ok=True)
    _load_corpus(cfg, os.path.join(out, "index_map.json"))  # persist the id maps
    cdm.save_bundle(bundle, os.path.join(out, "bundle.json"))
    atomic_write_text(os.path.join(out, "pretrain_log.jsonl"), dump_jsonl(history))
    atomic_write_json(os.path.join(out, "config.json"), cfg)
    last = history[-1] if history else {}
    print(f"pretrained {cfg['cdm']} model on {len(train_ids)} examinees"
          f" (valid_acc {last.get('valid_acc', float('nan')):.4f})")
    print(out)
    return 0


def _train_once(cfg: dict) -> str:
    corpus = _load_corpus(cfg)
    bundle = cdm.load_bundle(_require_file(cfg["bundle"], "bundle"))
    train_ids, valid_ids, _ = _splits(corpus, cfg)
    tcfg = _train_config(cfg)

    out = run_dir(cfg, "train")
    os.makedirs(out, exist_ok=True)

    def checkpoint(epoch: int, policy, log) -> None:
        selector.save_policy(policy, os.path.join(out, "policy_last.json"))
        atomic_write_text(os.path.join(out, "train_log.jsonl"), dump_jsonl(log))

    policy, log = trainer.train(corpus, bundle, tcfg, train_ids, valid_ids,
                                on_epoch=checkpoint)
    selector.save_policy(policy, os.path.join(out, "policy.json"))
    atomic_write_text(os.path.join(out, "train_log.jsonl"), dump_jsonl(log))
    atomic_write_json(os.path.join(out, "config.json"), cfg)
    best = max((r["valid_avg"] for r in log), default=float("nan"))
    print(f"trained {cfg['strategy']} policy for {len(log)} epochs"
          f" (best valid_avg {best:.4f})")
    print(out)
    return out


def cmd_train(args: argparse.Namespace) -> int:
    _train_once(resolve_config(args))
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    for omega in OMEGA_GRID:
        _train_once(dict(cfg, omega=omega))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    corpus = _load_corpus(cfg)
    bundle = cdm.load_bundle(_require_file(cfg["bundle"], "bundle"))
    policy = selector.load_policy(_require_file(cfg["policy"], "policy"))
    _, _, test_ids = _splits(corpus, cfg)
    tcfg = _train_config(cfg)
    rep, _ = trainer.evaluate_policy(corpus, test_ids, bundle, policy, tcfg,
                                     ood=cfg["ood"])

    out = run_dir(cfg, "eval")
    os.makedirs(out, exist_ok=True)
    evaluation.write_report(rep, os.path.join(out, "report.json"))
    evaluation.write_groups_csv(rep.groups, os.path.join(out, "groups.csv"))
    atomic_write_json(os.path.join(out, "records.json"), {
        "selected_ratios": [[eid, attr.value, ratio]
                            for eid, attr, ratio in rep.selected_ratios],
        "meta_ratios": [[eid, attr.value, ratio]
                        for eid, attr, ratio in rep.meta_ratios],
    })
    atomic_write_json(os.path.join(out, "config.json"), cfg)
    label = "OOD" if cfg["ood"] else "IID"
    print(f"{label} Metrics@{rep.t}: Worst {rep.worst:.4f}, Avg {rep.avg:.4f}")
    print(out)
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    records_path = os.path.join(args.run_dir, "records.json")
    if not os.path.exists(records_path):
        raise ConfigError(f"no evaluation records at {records_path}; run eval first")
    with open(records_path, encoding="utf-8") as fh:
        records = json.load(fh)
    parsed = {
        name: [(int(eid), dataset.Attribute(attr), float(ratio))
               for eid, attr, ratio in records[name]]
        for name in ("selected_ratios", "meta_ratios")
    }
    evaluation.write_ratio_csv(parsed["selected_ratios"],
                               os.path.join(args.run_dir, "selected_ratios.csv"))
    evaluation.write_ratio_csv(parsed["meta_ratios"],
                               os.path.join(args.run_dir, "meta_ratios.csv"))
    print(f"wrote ratio distributions for {len(parsed['selected_ratios'])} examinees")
    print(args.run_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="catlab",
        description="adaptive-testing policy training and debiasing workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--strategy", choices=sorted(("ERM", "IRM", "GroupDRO",
                                                     "Reweight", "MixupB",
                                                     "MixupSelf", "MixupInner")))
        p.add_argument("--omega", type=float)
        p.add_argument("--mixup-alpha", dest="mixup_alpha", type=float)
        p.add_argument("--t", type=int)
        p.add_argument("--ood", action="store_const", const=True, default=None)
        p.add_argument("--out")

    for name, func in (("pretrain", cmd_pretrain), ("train", cmd_train),
                       ("eval", cmd_eval), ("sweep", cmd_sweep)):
        p = sub.add_parser(name)
        add_common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("analyze")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except CatlabError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
