"""Command line entry point: ``cacl <subcommand>`` or ``python -m cacl``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .augment import SynonymDict
from .community import cluster_to_k, encode_users, louvain_k
from .contrast import LOSS_MODES
from .encoder import user_input_matrix
from .graph import induce_subgraph, load_dataset, save_dataset, zscore_normalize
from .pipeline import (
    DESK_OVERRIDES,
    Model,
    TrainConfig,
    _streams,
    ca_checkpoint,
    evaluate,
    load_json,
    pretrain,
    save_json,
    train,
    write_csv,
)
from .synth import SynthSpec, generate_synth, synth_synonyms

log = logging.getLogger("cacl")

# Row labels of the loss-variant table.
TABLE_LABELS = {
    "unsupervised": "unsuper",
    "supervised_all": "super",
    "cacl_static": "static",
    "cacl_dynamic": "dynamic",
}


def _parse_bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s!r}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file mirroring TrainConfig fields")
    p.add_argument("--desk", action="store_true", help=f"start from desk-scale settings {DESK_OVERRIDES}")
    g = p.add_argument_group("TrainConfig overrides")
    for f in fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        kind = type(f.default)
        if kind is bool:
            g.add_argument(flag, dest=f"cfg_{f.name}", type=_parse_bool, metavar="BOOL")
        elif f.name == "loss_mode":
            g.add_argument(flag, dest=f"cfg_{f.name}", choices=LOSS_MODES)
        elif f.name == "backbone":
            g.add_argument(flag, dest=f"cfg_{f.name}", choices=("gcn", "rsage"))
        else:
            g.add_argument(flag, dest=f"cfg_{f.name}", type=kind)
    g.add_argument("--lambda", dest="cfg_lam", type=float, help="alias of --lam")


def config_from_args(args) -> TrainConfig:
    data = dict(DESK_OVERRIDES) if args.desk else {}
    if args.config:
        with open(args.config) as fh:
            file_data = json.load(fh)
        if "lambda" in file_data:
            file_data["lam"] = file_data.pop("lambda")
        data.update(file_data)
    for k, v in vars(args).items():
        if k.startswith("cfg_") and v is not None:
            data[k[4:]] = v
    return TrainConfig.from_dict(data)


def _synonyms(path) -> SynonymDict:
    return SynonymDict.load(path) if path else SynonymDict()


def _default_synonyms_path(data: str) -> Path | None:
    p = Path(data).with_suffix(".synonyms.json")
    return p if p.exists() else None


def _load_synonyms(args) -> SynonymDict:
    path = args.synonyms or _default_synonyms_path(args.data)
    return _synonyms(path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_generate_synth(args) -> int:
    spec = SynthSpec.from_json(args.spec) if args.spec else SynthSpec()
    g = generate_synth(spec, np.random.default_rng(args.seed))
    save_dataset(g, args.out)
    syn_path = Path(args.synonyms) if args.synonyms else Path(args.out).with_suffix(".synonyms.json")
    synth_synonyms(spec, np.random.default_rng(args.seed + 1)).save(syn_path)
    print(f"wrote {args.out} ({len(g.user_ids)} users, {g.n} nodes, {g.num_edges} edges) and {syn_path}")
    return 0


def cmd_pretrain_ca(args) -> int:
    cfg = config_from_args(args)
    g = zscore_normalize(load_dataset(args.data))
    rngs = _streams(cfg.seed)
    model = Model.init(g, cfg, rngs["init"])
    history = pretrain(model, g, cfg, rngs["pretrain"])
    save_json(ca_checkpoint(model.ca, cfg, history), args.out)
    if history:
        write_csv(Path(args.out).with_suffix(".pretrain.csv"), history)
        print(f"pretrained {len(history)} epochs, final L_CA {history[-1]['L_CA']:.6f}")
    else:
        print("user graph has no edges; community encoder left at its initialisation")
    if args.partition:
        full = induce_subgraph(g, g.user_ids)
        ug = full.user_graph()
        k = louvain_k(ug) if ug.edge_count else ug.n
        h = encode_users(model.ca, ug, user_input_matrix(model.enc, full)).value
        part = cluster_to_k(ug, h, k)
        save_json(part.to_json(), args.partition)
        print(f"partition with k={part.k} written to {args.partition}")
    return 0


def cmd_train(args) -> int:
    cfg = config_from_args(args)
    g = load_dataset(args.data)
    ca_state = None
    if args.ca:
        ca_state = load_json(args.ca)
        if ca_state.get("kind") != "cacl-ca":
            raise SystemExit(f"{args.ca} is not a community-encoder checkpoint")
    ckpt, report = train(g, cfg, _load_synonyms(args), ca_state)
    save_json(ckpt, args.out)
    if args.metrics:
        report.save(args.metrics)
    print(
        f"test accuracy {report.accuracy:.4f}  f1 {report.f1:.4f}  mcc {report.mcc:.4f}"
        f"  (best epoch {report.best_epoch}, val mcc {report.best_val_mcc:.4f})"
    )
    return 0


def cmd_evaluate(args) -> int:
    g = load_dataset(args.data)
    model = Model.from_checkpoint(load_json(args.ckpt), g)
    rep = evaluate(model, g, args.split)
    out = {"split": args.split, "accuracy": rep.accuracy, "f1": rep.f1, "mcc": rep.mcc}
    print(json.dumps(out, indent=1))
    if args.metrics:
        save_json(out, args.metrics)
    return 0


def ablation_rows(g, base: TrainConfig, modes, seeds, synonyms) -> list[dict]:
    """Mean test scores (in percent) per loss mode over paired seeds, deltas against the first mode."""
    rows = []
    for mode in modes:
        scores = []
        for s in seeds:
            cfg = TrainConfig.from_dict({**base.to_dict(), "loss_mode": mode, "seed": s})
            _, rep = train(g, cfg, synonyms)
            scores.append((rep.accuracy, rep.f1, rep.mcc))
            log.info("%s seed %d: %s", mode, s, scores[-1])
        m = 100.0 * np.mean(scores, axis=0)
        rows.append({"loss": TABLE_LABELS[mode], "mode": mode, "accuracy": m[0], "f1": m[1], "mcc": m[2]})
    ref = rows[0]
    for r in rows:
        for key in ("accuracy", "f1", "mcc"):
            r[f"delta_{key}"] = r[key] - ref[key]
    for r in rows:
        r["seeds"] = len(seeds)
    return rows


def cmd_ablate(args) -> int:
    base = config_from_args(args)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    bad = [m for m in modes if m not in LOSS_MODES]
    if bad:
        raise SystemExit(f"unknown loss modes: {bad}")
    seeds = [int(s) for s in args.seeds.split(",")]
    g = load_dataset(args.data)
    rows = ablation_rows(g, base, modes, seeds, _load_synonyms(args))
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.2f}" if isinstance(v, float) else v) for k, v in r.items()})
    with open(args.out) as fh:
        sys.stdout.write(fh.read())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cacl", description="Community-aware contrastive bot detection")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-synth", help="write a planted-community dataset (JSONL) and its synonym table")
    p.add_argument("--spec", help="SynthSpec JSON (defaults if omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--synonyms", help="synonym table path (default: <out>.synonyms.json)")
    p.set_defaults(func=cmd_generate_synth)

    p = sub.add_parser("pretrain-ca", help="pretrain the community-aware encoder")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--partition", help="also export the community partition as JSON")
    _add_config_flags(p)
    p.set_defaults(func=cmd_pretrain_ca)

    p = sub.add_parser("train", help="contrastive + supervised training")
    p.add_argument("--data", required=True)
    p.add_argument("--ca", help="pretrained community-encoder checkpoint (skips pretraining)")
    p.add_argument("--synonyms")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", help="metrics JSON (per-epoch CSV sidecars are written next to it)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on one split")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--metrics")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="compare loss modes over seeds, write a CSV table")
    p.add_argument("--data", required=True)
    p.add_argument("--synonyms")
    p.add_argument("--modes", default="unsupervised,supervised_all,cacl_static,cacl_dynamic")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--out", default="ablation.csv")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
