"""Command-line front end: ``hybridav <subcommand> [flags]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path
from typing import Sequence

from . import __version__
from . import trainer
from .dataprep import SPLIT_NAMES, SUBSETS, load_pan_pairs, one_pass_quota, read_corpus, resample_pairs, \
    split_corpus, usage_counts, write_corpus, write_pan_pairs
from .ensemble import predict as ensemble_predict
from .errors import ConfigError, DataError, EvenEnsemble, NumericError
from .experiment import SPLIT_RATIOS
from .gradcheck import COMPONENTS, grad_check
from .metrics import METRIC_NAMES, evaluate, join_answers, read_answers, read_truth, reliability
from .model import TrainConfig, config_hash, load_bundle, save_bundle
from .synthetic import gen_synthetic

log = logging.getLogger("hybridav")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so ``run`` owns the exit code."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- configuration -------------------------------------------------------------

def _config_fields():
    for f in fields(TrainConfig):
        default = f.default if not callable(f.default_factory) else f.default_factory()
        if isinstance(default, dict):
            continue  # file-only settings
        yield f.name, default


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training configuration (flags > --config file > defaults)")
    g.add_argument("--config", help="JSON or YAML file with configuration keys")
    for name, default in _config_fields():
        flag = "--" + name.replace("_", "-")
        if isinstance(default, bool):
            g.add_argument(flag, dest=f"cfg_{name}", action=argparse.BooleanOptionalAction, default=None)
        elif isinstance(default, tuple):
            kind = float if name == "eps_grid" else int
            g.add_argument(flag, dest=f"cfg_{name}", type=kind, nargs="+", default=None)
        elif default is None:
            g.add_argument(flag, dest=f"cfg_{name}", type=float, default=None)
        else:
            g.add_argument(flag, dest=f"cfg_{name}", type=type(default), default=None)


def _read_config_file(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith((".yaml", ".yml")):
        import yaml
        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return data


def resolve_config(args, base: dict | None = None) -> TrainConfig:
    """Defaults, then ``base`` (e.g. a stored checkpoint config), then the file, then flags."""
    d = TrainConfig().to_dict()
    if base:
        d.update(base)
    if getattr(args, "config", None):
        d.update(_read_config_file(args.config))
    for name, _ in _config_fields():
        val = getattr(args, f"cfg_{name}", None)
        if val is not None:
            d[name] = val
    return TrainConfig.from_dict(d)


# -- shared helpers ------------------------------------------------------------

def _announce(seed, chash) -> None:
    log.info("seed=%s config_hash=%s", seed, chash)


def _write_jsonl(path, records) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _trials(pairs, truth=None):
    return load_pan_pairs(pairs, truth)


def _member_seeds(seed: int, members: int) -> list[int]:
    return [seed + m for m in range(members)]


def _train_member(args):
    docs, config, dev = args
    return trainer.train_stage1(docs, config, dev_trials=dev)


def format_table(metrics: dict, keys: Sequence[str]) -> str:
    width = max(len(k) for k in keys)
    lines = [f"{'metric':<{width}}  value", "-" * (width + 10)]
    for k in keys:
        v = metrics.get(k)
        lines.append(f"{k:<{width}}  {'nan' if v is None else f'{v:.4f}'}")
    return "\n".join(lines)


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args) -> int:
    docs = gen_synthetic(args.n_authors, args.docs_per_author, args.n_fandoms,
                         style_strength=args.style_strength, topic_strength=args.topic_strength, seed=args.seed)
    chash = config_hash({"cmd": "synth", **{k: v for k, v in vars(args).items() if k not in ("func", "out")}})
    _announce(args.seed, chash)
    write_corpus(args.out, docs)
    log.info("wrote %d documents to %s", len(docs), args.out)
    return EXIT_OK


def cmd_split(args) -> int:
    docs = read_corpus(args.corpus)
    ratios = tuple(args.ratios)
    chash = config_hash({"cmd": "split", "ratios": list(ratios), "seed": args.seed})
    _announce(args.seed, chash)
    split = split_corpus(docs, ratios=ratios, seed=args.seed)
    split.check_disjoint()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in SPLIT_NAMES:
        write_corpus(out / f"{name}.jsonl", split.docs[name])
    info = split.to_json()
    info["config_hash"] = chash
    info["quotas"] = {name: {s: one_pass_quota(split.docs[name], s) for s in SUBSETS} for name in SPLIT_NAMES}
    (out / "split.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    for name in SPLIT_NAMES:
        log.info("%s: %d documents", name, len(split.docs[name]))
    log.info("removed %d documents", len(split.removed))
    return EXIT_OK


def cmd_sample_pairs(args) -> int:
    docs = read_corpus(args.corpus)
    chash = config_hash({"cmd": "sample-pairs", "passes": args.passes, "seed": args.seed})
    _announce(args.seed, chash)
    trials = resample_pairs(docs, epoch_seed=args.seed, id_prefix=args.id_prefix, passes=args.passes)
    write_pan_pairs(args.out_pairs, args.out_truth, trials)
    counts = {s: sum(1 for t in trials if t.subset == s) for s in SUBSETS}
    spread = {s: (max(c.values()) - min(c.values())) if c else 0 for s, c in usage_counts(trials).items()}
    log.info("wrote %d pairs %s (usage spread per subset %s)", len(trials), counts, spread)
    return EXIT_OK


def cmd_train(args) -> int:
    config = resolve_config(args)
    if args.members < 1 or args.members % 2 == 0:
        raise EvenEnsemble(f"--members must be odd and >= 1, got {args.members}")
    chash = config.hash()
    _announce(config.seed, chash)
    docs = read_corpus(args.corpus)
    dev = _trials(args.dev_pairs, args.dev_truth) if args.dev_pairs else None
    seeds = _member_seeds(config.seed, args.members)
    jobs = [(docs, config.replace(seed=s), dev) for s in seeds]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_train_member, jobs))
    else:
        results = [_train_member(j) for j in jobs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_records = []
    for m, res in enumerate(results):
        res.pipeline.meta.update({"best_epoch": res.best_epoch, "member": m,
                                  "history": res.history[-1] if res.history else {}})
        for rec in res.history:
            log_records.append({"member": m, "seed": seeds[m], "config_hash": chash, **rec})
    save_bundle(out, [r.pipeline for r in results], seeds)
    _write_jsonl(out / "train_log.jsonl", log_records)
    log.info("saved %d member(s) to %s", len(results), out)
    return EXIT_OK


def _bundle_config(args, pipes) -> TrainConfig:
    return resolve_config(args, base=pipes[0].config.to_dict())


def cmd_train_o2d2(args) -> int:
    pipes, manifest = load_bundle(args.model)
    config = _bundle_config(args, pipes)
    _announce(config.seed, manifest["config_hash"])
    docs = read_corpus(args.corpus)
    eps = config.epsilon
    for m, pipe in enumerate(pipes):
        seed = manifest["members"][m]["seed"]
        pipe.o2d2 = trainer.train_o2d2(docs, pipe, config, epsilon=eps, seed=seed)
    save_bundle(args.out or args.model, pipes, [m["seed"] for m in manifest["members"]])
    log.info("trained detector(s) with epsilon=%s", eps)
    return EXIT_OK


def cmd_tune_epsilon(args) -> int:
    pipes, manifest = load_bundle(args.model)
    config = _bundle_config(args, pipes)
    _announce(config.seed, manifest["config_hash"])
    docs = read_corpus(args.corpus)
    val = _trials(args.pairs, args.truth)
    out = Path(args.out or args.model)
    records = []
    for m, pipe in enumerate(pipes):
        seed = manifest["members"][m]["seed"]
        eps, table = trainer.tune_epsilon(val, docs, pipe, config.replace(seed=seed))
        for row in table:
            records.append({"member": m, "selected": row["epsilon"] == eps,
                            "config_hash": manifest["config_hash"], **row})
        print(f"member {m}: epsilon = {eps:.3f}")
        for row in table:
            mark = "*" if row["epsilon"] == eps else " "
            print(f"  {mark} eps={row['epsilon']:.3f} overall={row['overall']:.4f} "
                  f"nonresponse={row['nonresponse_rate']:.3f}")
    save_bundle(out, pipes, [m["seed"] for m in manifest["members"]])
    _write_jsonl(out / "epsilon_table.jsonl", records)
    return EXIT_OK


def cmd_predict(args) -> int:
    pipes, manifest = load_bundle(args.model)
    chash = manifest["config_hash"]
    _announce(pipes[0].config.seed, chash)
    trials = _trials(args.pairs)
    verdicts = ensemble_predict(trials, pipes)
    _write_jsonl(args.out, ({"id": t.id, "value": v.value, "config_hash": chash}
                            for t, v in zip(trials, verdicts)))
    n_nr = sum(v.is_nonresponse for v in verdicts)
    log.info("wrote %d answers (%d non-responses) to %s", len(verdicts), n_nr, args.out)
    return EXIT_OK


def _answers_hash(path) -> str | None:
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                try:
                    return json.loads(line).get("config_hash")
                except (json.JSONDecodeError, AttributeError):
                    return None
    return None


def cmd_evaluate(args) -> int:
    answers = read_answers(args.answers)
    truth = read_truth(args.truth)
    ans = join_answers(answers, truth)
    chash = _answers_hash(args.answers)
    _announce(None, chash)
    metrics = evaluate(ans, n_bins=args.bins)
    keys = list(METRIC_NAMES) + ["ECE", "MCE", "nonresponse_rate"]
    print(format_table(metrics, keys))
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_jsonl(out / "metrics.jsonl", ({"metric": k, "value": metrics[k], "config_hash": chash}
                                            for k in keys))
        cal = reliability(ans, args.bins)
        plot = {"config_hash": chash, "edges": cal.bins.edges.tolist(), "counts": cal.bins.counts.tolist(),
                "conf": [r["conf"] for r in cal.bins.to_records()],
                "acc": [r["acc"] for r in cal.bins.to_records()]}
        (out / "reliability.json").write_text(json.dumps(plot, indent=2) + "\n")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    _announce(args.seed, config_hash({"cmd": "grad-check", "n_cases": args.n_cases,
                                      "max_dim": args.max_dim, "seed": args.seed}))
    ok = True
    for comp in args.components:
        rep = grad_check(comp, args.n_cases, args.max_dim, args.seed)
        status = "ok" if rep.passed(args.tol) else "FAIL"
        ok &= rep.passed(args.tol)
        print(f"{comp:<8} cases={rep.n_cases:<4} max_rel_error={rep.max_rel_error:.3e} "
              f"worst={rep.worst or '-':<14} {rep.seconds:6.2f}s  {status}")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_probe_fandom(args) -> int:
    config = resolve_config(args)
    _announce(config.seed, config.hash())
    docs = read_corpus(args.corpus)
    dev = _trials(args.dev_pairs, args.dev_truth) if args.dev_pairs else None
    res = trainer.fandom_probe(docs, config, dev)
    keys = ["epoch", "train_acc", "fandom_acc", "dev_acc", "dev_fandom_acc"]
    print("  ".join(f"{k:>14}" for k in keys))
    for rec in res.history:
        print("  ".join(f"{rec.get(k, float('nan')):>14.4f}" if k != "epoch" else f"{rec[k]:>14d}" for k in keys))
    if args.out:
        _write_jsonl(args.out, ({"config_hash": config.hash(), **{k: r.get(k) for k in keys}}
                                for r in res.history))
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hybridav", description="Hybrid neural-probabilistic authorship verification.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", metavar="subcommand", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--n-authors", type=int, default=200)
    s.add_argument("--docs-per-author", type=int, default=2)
    s.add_argument("--n-fandoms", type=int, default=8)
    s.add_argument("--style-strength", type=float, default=1.0)
    s.add_argument("--topic-strength", type=float, default=0.3)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("split", help="author- and fandom-disjoint corpus split")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--ratios", type=float, nargs=3, default=list(SPLIT_RATIOS))
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("sample-pairs", help="draw balanced pairs into PAN pairs/truth files")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out-pairs", required=True)
    s.add_argument("--out-truth", required=True)
    s.add_argument("--passes", type=int, default=1)
    s.add_argument("--id-prefix", default="")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_sample_pairs)

    s = sub.add_parser("train", help="stage-1 training of one or more ensemble members")
    s.add_argument("--corpus", required=True, help="training split (corpus JSONL)")
    s.add_argument("--out", required=True, help="model bundle directory")
    s.add_argument("--dev-pairs", help="development pairs for early stopping")
    s.add_argument("--dev-truth")
    s.add_argument("--members", type=int, default=1)
    s.add_argument("--jobs", type=int, default=1, help="members trained in parallel")
    _add_config_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("train-o2d2", help="stage-2 detector training on the calibration split")
    s.add_argument("--model", required=True)
    s.add_argument("--corpus", required=True, help="calibration split (corpus JSONL)")
    s.add_argument("--out", help="output bundle (default: overwrite --model)")
    _add_config_flags(s)
    s.set_defaults(func=cmd_train_o2d2)

    s = sub.add_parser("tune-epsilon", help="grid search of the detector margin")
    s.add_argument("--model", required=True)
    s.add_argument("--corpus", required=True, help="calibration split (corpus JSONL)")
    s.add_argument("--pairs", required=True, help="validation pairs")
    s.add_argument("--truth", required=True, help="validation truth")
    s.add_argument("--out")
    _add_config_flags(s)
    s.set_defaults(func=cmd_tune_epsilon)

    s = sub.add_parser("predict", help="answers for a PAN pairs file")
    s.add_argument("--model", required=True)
    s.add_argument("--pairs", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="PAN and calibration metrics")
    s.add_argument("--answers", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--bins", type=int, default=10)
    s.add_argument("--out-dir", help="write metrics.jsonl and reliability.json here")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("grad-check", help="finite-difference gradient checks")
    s.add_argument("--n-cases", type=int, default=200)
    s.add_argument("--max-dim", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--components", nargs="+", choices=COMPONENTS, default=list(COMPONENTS))
    s.set_defaults(func=cmd_grad_check)

    s = sub.add_parser("probe-fandom", help="stage-1 training with the fandom probe")
    s.add_argument("--corpus", required=True)
    s.add_argument("--dev-pairs")
    s.add_argument("--dev-truth")
    s.add_argument("--out", help="curve as JSONL")
    _add_config_flags(s)
    s.set_defaults(func=cmd_probe_fandom)
    return p


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
