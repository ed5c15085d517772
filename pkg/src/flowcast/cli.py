"""``flowcast`` command line entry point."""
from __future__ import annotations

import argparse
import contextlib
import csv
import datetime as _dt
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, model_io
from .dataset import Dataset, format_csv, read_csv, write_csv
from .errors import FlowcastError
from .evaluation import evaluate, predict_labels
from .flowspace import (
    FlowSpec,
    default_spec,
    flow_to_string,
    read_flows,
    read_spec,
    sample_unique_flows,
    space_size,
    write_flows,
)
from .nn import ModelConfig, build_model
from .oracle import (
    derive_technology,
    generate_dataset,
    load_technology,
    make_technology,
    save_technology,
    simulate_batch,
)
from .train import TrainConfig, seed_streams, train
from .transfer import STANDARD_KS, TransferStrategy, fine_tune, fine_tune_config, scratch_baseline

log = logging.getLogger("flowcast")


# ------------------------------------------------------------------- helpers


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _spec_from(args) -> FlowSpec:
    if getattr(args, "spec", None):
        return read_spec(args.spec)
    return default_spec()


def _provenance(args) -> list[str]:
    if args.no_provenance:
        return []
    resolved = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    return [
        f"flowcast {__version__} {args.command}",
        "config " + json.dumps(resolved, sort_keys=True, default=str),
        "created " + _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    ]


def _write_text(path, text: str) -> None:
    model_io.atomic_write_text(path, text)


def _history_csv(history, header) -> str:
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("epoch", "train_loss", "val_loss"))
    for e, tl, vl in history.rows():
        w.writerow((e, repr(tl), repr(vl)))
    return buf.getvalue()


def _stamp(model, args) -> None:
    if not args.no_provenance:
        model.provenance["created"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        model.provenance["flowcast"] = __version__


def _load_data(path, spec: FlowSpec, target: str) -> Dataset:
    data = read_csv(path, spec, target)
    if data.dropped:
        log.warning("%s: skipped %d rows with missing or unparsable QoR", path, data.dropped)
    return data


def _require_stats(stats, path):
    if stats is None:
        raise FlowcastError(f"{path} carries no label statistics; train it with flowcast first")
    return stats


# --------------------------------------------------------------- subcommands


def cmd_space(args) -> int:
    spec = FlowSpec(tuple(f"t{i}" for i in range(len(args.reps))), tuple(args.reps)) \
        if args.reps else _spec_from(args)
    print(space_size(spec))
    return 0


def cmd_gen(args) -> int:
    spec = _spec_from(args)
    flows = sample_unique_flows(spec, args.count, np.random.default_rng(args.seed))
    if args.out:
        write_flows(args.out, flows, spec, _provenance(args))
    else:
        for f in flows:
            print(flow_to_string(f, spec))
    return 0


def cmd_oracle_new(args) -> int:
    tech = make_technology(_spec_from(args), args.seed, args.state_dim, args.noise_sd, args.id)
    save_technology(tech, args.out)
    print(f"wrote technology {tech.id} to {args.out}")
    return 0


def cmd_oracle_derive(args) -> int:
    parent = load_technology(args.parent)
    child = derive_technology(parent, args.drift, args.scale, args.seed, args.id)
    out = args.out or str(Path(args.parent).with_suffix("")) + f"-d{args.drift:g}-s{args.scale:g}.flt"
    save_technology(child, out)
    print(f"wrote technology {child.id} to {out}")
    return 0


def cmd_simulate(args) -> int:
    tech = load_technology(args.tech)
    if args.flows:
        flows = read_flows(args.flows, tech.spec)
        steps = np.array([f.steps for f in flows], dtype=np.int64).reshape(len(flows), tech.spec.length)
        delay, area = simulate_batch(steps, tech, seed=args.seed)
        ok = np.isfinite(delay) & np.isfinite(area) & (delay > 0) & (area > 0)
        data = Dataset(tech.spec, steps[ok], delay[ok], area[ok], dropped=int((~ok).sum()))
    else:
        data = generate_dataset(tech.spec, tech, args.count, args.seed)
    if data.dropped:
        log.warning("dropped %d flows with non-finite QoR", data.dropped)
    if args.out:
        write_csv(data, args.out, _provenance(args))
    else:
        sys.stdout.write(format_csv(data, _provenance(args)))
    return 0


def cmd_train(args) -> int:
    spec = _spec_from(args)
    data = _load_data(args.data, spec, args.target)
    mcfg = ModelConfig(spec.n, spec.length, lstm_units=args.hidden, dense_units=args.dense_units,
                       dropout_rate=args.dropout, recurrent_init=args.recurrent_init)
    tcfg = TrainConfig(lr=args.lr, batch_size=args.batch, epochs=args.epochs,
                       val_fraction=args.val_fraction, master_seed=args.seed, best_val=args.best_val)
    model = build_model(mcfg, seed_streams(args.seed)["init"])
    model, history, stats = train(model, data, tcfg)
    _stamp(model, args)
    model_io.save(model, stats, args.out)
    if args.history:
        _write_text(args.history, _history_csv(history, _provenance(args)))
    last_val = history.val_loss[-1] if history.val_loss else float("nan")
    print(f"trained {args.epochs} epochs: train_loss={history.train_loss[-1]:.6g} val_loss={last_val:.6g}")
    return 0


def cmd_transfer(args) -> int:
    pre, _ = model_io.load(args.model)
    spec = pre.spec or _spec_from(args)
    data = _load_data(args.data, spec, args.target or pre.target or "delay")
    cfg = fine_tune_config(TrainConfig(lr=args.lr, batch_size=args.batch), args.epochs, args.seed)
    model, history, stats = fine_tune(pre, data, args.k, args.strategy, cfg)
    _stamp(model, args)
    model_io.save(model, stats, args.out)
    if args.history:
        _write_text(args.history, _history_csv(history, _provenance(args)))
    print(f"fine-tuned on {args.k} points ({args.strategy}); trainable parameters "
          f"{model.param_count(trainable_only=True)}")
    return 0


def run_transfer_study(pre, pool: Dataset, held: Dataset, ks, seeds, strategies, epochs, lr=0.001):
    """Rows ``(k, strategy, seed, accuracy, mre, n_test)`` for every combination."""
    rows = []
    for k in ks:
        for strategy in strategies:
            for seed in seeds:
                cfg = fine_tune_config(TrainConfig(lr=lr), epochs, seed)
                if strategy == "scratch":
                    model, _, stats = scratch_baseline(pool, k, cfg, pre.config)
                else:
                    model, _, stats = fine_tune(pre, pool, k, strategy, cfg)
                rep = evaluate(model, held, stats, seed=seed)
                rows.append((k, strategy, seed, rep.accuracy, rep.mean_relative_error, rep.n_points))
                log.info("k=%d %s seed=%d accuracy=%.4f", k, strategy, seed, rep.accuracy)
    return rows


def _study_csv(rows, header) -> str:
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("k", "strategy", "seed", "accuracy", "mre", "n_test"))
    for k, s, seed, acc, mre, n in rows:
        w.writerow((k, s, seed, repr(acc), repr(mre), n))
    return buf.getvalue()


def cmd_transfer_study(args) -> int:
    pre, _ = model_io.load(args.model)
    spec = pre.spec or _spec_from(args)
    data = _load_data(args.data, spec, args.target or pre.target or "delay")
    pool_size = args.pool or max(args.ks)
    if args.holdout:
        pool, held = data, _load_data(args.holdout, spec, data.target)
    else:
        order = np.random.default_rng(args.split_seed).permutation(len(data))
        if pool_size >= len(data):
            raise FlowcastError(f"need more than {pool_size} rows to hold out a test set")
        pool, held = data.subset(order[:pool_size]), data.subset(order[pool_size:])
    strategies = [s if s == "scratch" else TransferStrategy.parse(s).value
                  for s in (t.strip().lower() for t in args.strategies.split(",")) if s]
    rows = run_transfer_study(pre, pool, held, args.ks, args.seeds, strategies, args.epochs, args.lr)
    text = _study_csv(rows, _provenance(args))
    if args.report:
        _write_text(args.report, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_predict(args) -> int:
    model, stats = model_io.load(args.model)
    stats = _require_stats(stats, args.model)
    spec = model.spec or _spec_from(args)
    flows = read_flows(args.flows, spec)
    steps = np.array([f.steps for f in flows], dtype=np.int64).reshape(len(flows), spec.length)
    data = Dataset(spec, steps, np.ones(len(flows)), np.ones(len(flows)), target=model.target or "delay")
    preds = predict_labels(model, data, stats)
    unit = data.units
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(("flow", f"{data.target}_{unit}"))
    for f, p in zip(flows, preds):
        w.writerow((flow_to_string(f, spec), repr(float(p))))
    sys.stdout.write(out.getvalue())
    return 0


def cmd_eval(args) -> int:
    model, stats = model_io.load(args.model)
    stats = _require_stats(stats, args.model)
    spec = model.spec or _spec_from(args)
    data = _load_data(args.data, spec, args.target or model.target or "delay")
    rep = evaluate(model, data, stats, seed=args.seed)
    report = Path(args.report)
    header = _provenance(args)
    prefix = "".join(f"# {h}\n" for h in header)
    _write_text(report / "summary.txt", prefix + rep.summary(data.units))
    lines = [prefix + "true,pred"] if prefix else ["true,pred"]
    lines += [f"{t!r},{p!r}" for t, p in zip(rep.truths.tolist(), rep.preds.tolist())]
    _write_text(report / "scatter.csv", "\n".join(lines) + "\n")
    sub = [prefix + "subset,n_points,mre,accuracy"] if prefix else ["subset,n_points,mre,accuracy"]
    sub += [f"{i},{n},{e!r},{100.0 - e!r}" for i, (n, e) in
            enumerate(zip(rep.subset_sizes, rep.subset_errors), 1)]
    _write_text(report / "subsets.csv", "\n".join(sub) + "\n")
    print(f"accuracy {rep.accuracy:.4f}% over {rep.n_points} points")
    return 0


def cmd_ingest(args) -> int:
    spec = _spec_from(args)
    data = read_csv(args.csv, spec, args.target)
    print(f"rows {len(data)} skipped {data.dropped}")
    if args.out:
        write_csv(data, args.out, _provenance(args))
    return 0


def cmd_make_paper_protocol(args) -> int:
    """Root technology plus two derived children, pretraining and transfer studies."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = _spec_from(args)
    header = _provenance(args)
    root = make_technology(spec, args.seed, tech_id="root")
    children = {
        "rvt": derive_technology(root, 0.1, 0.7, args.seed + 1, tech_id="child-rvt"),
        "lvt": derive_technology(root, 0.1, 0.6, args.seed + 2, tech_id="child-lvt"),
    }
    save_technology(root, out / "root.flt")
    for name, tech in children.items():
        save_technology(tech, out / f"{name}.flt")
    root_data = generate_dataset(spec, root, args.rows, args.seed, args.target)
    write_csv(root_data, out / "root.csv", header)
    train_rows = root_data.subset(np.arange(args.train_rows))
    test_rows = root_data.subset(np.arange(args.train_rows, len(root_data)))
    mcfg = ModelConfig(spec.n, spec.length, lstm_units=args.hidden)
    model = build_model(mcfg, seed_streams(args.seed)["init"])
    model, history, stats = train(model, train_rows, TrainConfig(epochs=args.epochs, master_seed=args.seed))
    _stamp(model, args)
    model_io.save(model, stats, out / "pretrained.flm")
    _write_text(out / "history.csv", _history_csv(history, header))
    rep = evaluate(model, test_rows, stats, seed=args.seed)
    _write_text(out / "root_eval.txt", "".join(f"# {h}\n" for h in header) + rep.summary(root_data.units))
    print(f"root: accuracy {rep.accuracy:.4f}% on {rep.n_points} held-out flows")
    for i, (name, tech) in enumerate(children.items()):
        data = generate_dataset(spec, tech, args.rows, args.seed + 10 + i, args.target)
        write_csv(data, out / f"{name}.csv", header)
        pool = data.subset(np.arange(max(args.ks)))
        held = data.subset(np.arange(max(args.ks), len(data)))
        rows = run_transfer_study(model, pool, held, args.ks, args.seeds,
                                  ("dense_only", "all_layers", "scratch"), args.transfer_epochs)
        _write_text(out / f"study_{name}.csv", _study_csv(rows, header))
        for k in args.ks:
            accs = {s: np.mean([r[3] for r in rows if r[0] == k and r[1] == s])
                    for s in ("dense_only", "all_layers", "scratch")}
            print(f"{name} k={k}: " + " ".join(f"{s}={a:.3f}" for s, a in accs.items()))
    return 0


# -------------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of option values; command-line flags win")
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS threads (falls back to $FLOWCAST_THREADS)")
    p.add_argument("--no-provenance", action="store_true",
                   help="omit provenance headers so reruns are byte-identical")
    p.add_argument("-v", "--verbose", action="store_true")


def _spec_opt(p) -> None:
    p.add_argument("--spec", help="flow spec file ('name count' per line); default: b,rw,rwz,rs,rf,rfz x4")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowcast", description=__doc__)
    parser.add_argument("--version", action="version", version=f"flowcast {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("space", help="size of the flow search space")
    _common(p)
    _spec_opt(p)
    p.add_argument("--reps", type=_int_list, help="repetition counts, e.g. 4,4,4,4,4,4")
    p.set_defaults(func=cmd_space)

    p = sub.add_parser("gen", help="sample unique random flows")
    _common(p)
    _spec_opt(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("oracle", help="create or derive synthetic technologies")
    osub = p.add_subparsers(dest="oracle_command", required=True)
    q = osub.add_parser("new", help="root technology")
    _common(q)
    _spec_opt(q)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--state-dim", type=int, default=8)
    q.add_argument("--noise-sd", type=float, default=0.0)
    q.add_argument("--id")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_oracle_new)
    q = osub.add_parser("derive", help="child technology of an existing one")
    _common(q)
    q.add_argument("--parent", required=True)
    q.add_argument("--drift", type=float, default=0.1)
    q.add_argument("--scale", type=float, default=1.0)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--id")
    q.add_argument("--out")
    q.set_defaults(func=cmd_oracle_derive)

    p = sub.add_parser("simulate", help="QoR of flows under a technology, as CSV")
    _common(p)
    p.add_argument("--tech", required=True)
    p.add_argument("--flows", help="flows file; otherwise --count random unique flows")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a regressor from scratch")
    _common(p)
    _spec_opt(p)
    p.add_argument("--data", required=True)
    p.add_argument("--target", choices=("delay", "area"), default="delay")
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--dense-units", type=int, default=30)
    p.add_argument("--dropout", type=float, default=0.4)
    p.add_argument("--recurrent-init", choices=("glorot", "orthogonal"), default="glorot")
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--best-val", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--history")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", help="fine-tune a pre-trained model on a few new points")
    _common(p)
    _spec_opt(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--target", choices=("delay", "area"))
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--strategy", choices=("all", "dense", "all_layers", "dense_only"), default="all")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--history")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("transfer-study", help="accuracy vs. k for dense/all/scratch")
    _common(p)
    _spec_opt(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="new-technology CSV (pool + held-out)")
    p.add_argument("--holdout", help="separate held-out CSV; otherwise split from --data")
    p.add_argument("--target", choices=("delay", "area"))
    p.add_argument("--ks", type=_int_list, default=list(STANDARD_KS))
    p.add_argument("--seeds", type=_int_list, default=[1, 2, 3])
    p.add_argument("--strategies", default="dense_only,all_layers,scratch")
    p.add_argument("--pool", type=int, help="fine-tuning pool size (default max k)")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--report")
    p.set_defaults(func=cmd_transfer_study)

    p = sub.add_parser("predict", help="predicted QoR for each flow in a flows file")
    _common(p)
    _spec_opt(p)
    p.add_argument("--model", required=True)
    p.add_argument("--flows", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="accuracy report of a model on a dataset")
    _common(p)
    _spec_opt(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--target", choices=("delay", "area"))
    p.add_argument("--report", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ingest", help="validate an externally generated QoR CSV")
    _common(p)
    _spec_opt(p)
    p.add_argument("--csv", required=True)
    p.add_argument("--target", choices=("delay", "area"), default="delay")
    p.add_argument("--out", help="write the cleaned rows here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("make-paper-protocol",
                       help="root + two derived technologies, pretraining and transfer studies")
    _common(p)
    _spec_opt(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--target", choices=("delay", "area"), default="delay")
    p.add_argument("--rows", type=int, default=25000)
    p.add_argument("--train-rows", type=int, default=5000)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--transfer-epochs", type=int, default=200)
    p.add_argument("--ks", type=_int_list, default=list(STANDARD_KS))
    p.add_argument("--seeds", type=_int_list, default=[1, 2, 3])
    p.set_defaults(func=cmd_make_paper_protocol)
    return parser


def _subparser_for(parser, argv):
    """Subparser matching the command words in ``argv`` (for config defaults)."""
    node = parser
    for word in argv:
        actions = [a for a in node._actions if isinstance(a, argparse._SubParsersAction)]
        if not actions or word not in actions[0].choices:
            break
        node = actions[0].choices[word]
    return node


def _config_path(argv):
    for i, word in enumerate(argv):
        if word == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if word.startswith("--config="):
            return word.split("=", 1)[1]
    return None


def parse_args(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    path = _config_path(argv)
    if path:
        try:
            values = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read config {path}: {exc}")
        if not isinstance(values, dict):
            parser.error("config file must hold a JSON object")
        values = {k.replace("-", "_"): v for k, v in values.items()}
        target = _subparser_for(parser, argv)
        actions = {a.dest: a for a in target._actions}
        unknown = set(values) - set(actions)
        if unknown:
            parser.error(f"unknown config keys: {', '.join(sorted(unknown))}")
        for dest in values:
            actions[dest].required = False
        target.set_defaults(**values)
    args = parser.parse_args(argv)
    if args.command == "oracle":
        args.command = f"oracle {args.oracle_command}"
    return args


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="flowcast: %(levelname)s: %(message)s")
    threads = args.threads or (int(os.environ["FLOWCAST_THREADS"])
                               if os.environ.get("FLOWCAST_THREADS") else None)
    limiter = contextlib.nullcontext()
    if threads:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=threads)
    try:
        with limiter:
            return args.func(args)
    except (FlowcastError, OSError, ValueError) as exc:
        print(f"flowcast: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
