"""Command-line entry point: ``geowalk <subcommand> ...``.

Exit codes: 0 ok, 2 invalid input, 3 numerical failure, 4 I/O error.  On
failure a JSON object ``{"error": ..., "message": ..., "exit_code": ...}``
is written to stderr.

Configuration precedence is flag > config file > built-in default.
"""

import argparse
from dataclasses import asdict
import json
import logging
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .bench import checkpoint_extra, dump_json, run_bench
from .errors import GeowalkError, InvalidInput, StoreError
from .features import NormStats, feature_matrix, load_dataset, normalize, prices, read_houses_csv, taint
from .geo_graph import KernelConfig, SimilarityGraph, build_graph
from .lasso import lasso_fit
from .net import load_checkpoint, save_checkpoint
from .pipeline import (TrainConfig, TrainedModel, global_mean_baseline, lasso_baseline, metrics,
                       metrics_report, predict, read_predictions, split, train,
                       write_predictions, write_training_log)
from .synth import SynthConfig, generate, write_city
from .walks import WalkConfig, random_walks, write_sequences

log = logging.getLogger("geowalk")


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as e:
        raise StoreError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise InvalidInput(f"{path}: invalid JSON ({e})") from e


def resolve(defaults, config_path, flags):
    """Merge built-in defaults, a flat JSON config file and explicit flags."""
    out = dict(defaults)
    if config_path:
        out.update(_read_json(config_path))
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _sequences_path(predictions_path):
    root, ext = os.path.splitext(predictions_path)
    return root + ".sequences" + (ext or ".csv")


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(a):
    cfg = resolve(asdict(SynthConfig()), a.config, {"seed": a.seed})
    houses, truth = generate(SynthConfig(**cfg))
    write_city(a.out, houses, truth)
    return {"houses": len(houses), "out": a.out}


def cmd_graph(a):
    rows, problems = read_houses_csv(a.houses)
    if problems:
        raise InvalidInput("; ".join(problems))
    kcfg = KernelConfig(a.sigma, a.epsilon, a.kernel_form)
    if not rows:
        raise InvalidInput(f"{a.houses}: no houses")
    g = build_graph(np.array([(r[1], r[2]) for r in rows]), kcfg, ids=[r[0] for r in rows])
    adj = os.path.splitext(a.out)[0] + ".npz"
    tmp = adj + ".tmp.npz"
    g.save(tmp)
    os.replace(tmp, adj)
    summary = g.summary()
    summary.update({"sigma": kcfg.sigma, "epsilon": kcfg.epsilon,
                    "kernel_form": kcfg.kernel_form.value, "adjacency": os.path.basename(adj)})
    dump_json(a.out, summary)
    return {"node_count": summary["node_count"], "edge_count": summary["edge_count"]}


def _load_graph(path):
    meta = _read_json(path)
    return SimilarityGraph.load(os.path.join(os.path.dirname(os.path.abspath(path)), meta["adjacency"]))


def cmd_walk(a):
    g = _load_graph(a.graph)
    seqs = random_walks(g, WalkConfig(a.length, a.count, a.seed), threads=a.threads)
    tmp = a.out + ".tmp"
    write_sequences(tmp, seqs, g.ids)
    os.replace(tmp, a.out)
    return {"sequences": len(seqs)}


TRAIN_FLAGS = ("split_fraction", "num_sequences", "length", "batch_size", "max_steps", "seed",
               "hidden1", "hidden2", "lr", "rho", "delta", "clip_norm", "l2", "sigma", "epsilon",
               "per_test")


def cmd_train(a):
    flags = {k: getattr(a, k) for k in TRAIN_FLAGS}
    flags["threads"] = a.threads
    cfg = TrainConfig.from_dict(resolve(asdict(TrainConfig()), a.config, flags))
    houses = load_dataset(a.houses, a.features)
    tr, te = split(houses, cfg.split_fraction, cfg.seed)
    trained = train(tr, cfg)
    save_checkpoint(a.out, trained.model, seed=cfg.seed, step=trained.steps,
                    rmsprop={"rho": cfg.rho, "lr": cfg.lr, "delta": cfg.delta},
                    extra=checkpoint_extra(trained, te, os.path.abspath(a.houses),
                                           os.path.abspath(a.features)))
    write_training_log(os.path.join(a.out, "training_log.csv"), trained.log)
    return {"steps": trained.steps, "final_loss": trained.log[-1][1] if trained.log else None}


def cmd_predict(a):
    model, manifest = load_checkpoint(a.model)
    cfg_d = dict(manifest["train_config"])
    cfg_d["threads"] = a.threads
    cfg = TrainConfig.from_dict(cfg_d)
    houses = load_dataset(a.houses or manifest["houses"], a.features or manifest["features"])
    by_id = {h.id: h for h in houses}
    try:
        tr = [by_id[i] for i in manifest["train_ids"]]
        te = taint([by_id[i] for i in manifest["test_ids"]])
    except KeyError as e:
        raise InvalidInput(f"house {e} recorded in the checkpoint is missing from the dataset") from e
    trained = TrainedModel(model, NormStats.from_json(manifest["feature_stats"]),
                           NormStats.from_json(manifest["price_stats"]), cfg, manifest["train_ids"])
    per_test = a.per_test if a.per_test is not None else cfg.per_test
    summaries = predict(trained, tr, te, per_test, cfg, threads=a.threads)
    seq_path = _sequences_path(a.out)
    write_predictions(a.out + ".tmp", summaries, seq_path + ".tmp")
    os.replace(seq_path + ".tmp", seq_path)
    os.replace(a.out + ".tmp", a.out)
    return {"houses": len(summaries), "flagged": sum(s.flagged for s in summaries)}


def cmd_eval(a):
    seq_path = _sequences_path(a.predictions)
    summaries = read_predictions(a.predictions, seq_path if os.path.exists(seq_path) else None)
    report = metrics_report(summaries, "average", a.groups)
    if a.diagnostic_best:
        report["diagnostic_best"] = metrics_report(summaries, "best", 0)
    dump_json(a.out, report)
    return {"mae": report["mae"], "mape_percent": report["mape_percent"]}


def cmd_lasso(a):
    houses = load_dataset(a.houses, a.features)
    tr, te = split(houses, a.split_fraction, a.seed)
    if a.lam is not None:
        X, stats = normalize(feature_matrix(tr))
        fit = lasso_fit(X, prices(tr), lam=a.lam)
        m = metrics(prices(te), fit.predict(stats.apply(feature_matrix(te))))
    else:
        fit, m = lasso_baseline(tr, te, a.seed)
    gm = global_mean_baseline(tr, te)
    out = {
        "lasso": {"mae": m.mae, "mape_percent": round(m.mape_percent, 2), "lambda": fit.lam,
                  "n_nonzero": int((fit.coef != 0).sum())},
        "global_mean": {"mae": gm.mae, "mape_percent": round(gm.mape_percent, 2)},
        "n_train": len(tr),
        "n_test": len(te),
    }
    dump_json(a.out, out)
    return out["lasso"]


def cmd_bench(a):
    config = {}
    seed = a.seed
    if a.from_manifest:
        man = _read_json(a.from_manifest)
        config = dict(man["config"])
        seed = man["seed"] if seed is None else seed
    if a.config:
        config.update(_read_json(a.config))
    seed = 0 if seed is None else seed
    config.pop("threads", None)
    res = run_bench(a.out, seed, config, threads=a.threads, diagnostic_best=a.diagnostic_best)
    return {"mae": res["metrics"]["mae"], "mape_percent": res["metrics"]["mape_percent"],
            "lasso_mape_percent": res["baselines"]["lasso"]["mape_percent"]}


# --------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="geowalk", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"geowalk {__version__}")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads (outputs do not depend on this)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic city")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("graph", help="build the epsilon-neighborhood graph")
    s.add_argument("--houses", required=True)
    s.add_argument("--sigma", type=float, default=0.5)
    s.add_argument("--epsilon", type=float, default=5.0)
    s.add_argument("--kernel-form", default="squared_exponential",
                   choices=["squared_exponential", "linear_exponent"])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_graph)

    s = sub.add_parser("walk", help="generate training random walks")
    s.add_argument("--graph", required=True)
    s.add_argument("--length", type=int, default=10)
    s.add_argument("--count", type=int, default=200_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_walk)

    s = sub.add_parser("train", help="split the data and train the B-LSTM")
    s.add_argument("--houses", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    for name in TRAIN_FLAGS:
        typ = float if name in ("split_fraction", "lr", "rho", "delta", "clip_norm", "l2",
                                "sigma", "epsilon") else int
        s.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="predict held-out houses with a checkpoint")
    s.add_argument("--model", required=True)
    s.add_argument("--houses")
    s.add_argument("--features")
    s.add_argument("--per-test", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", help="MAE/MAPE and confidence groups from predictions.csv")
    s.add_argument("--predictions", required=True)
    s.add_argument("--groups", type=int, default=3)
    s.add_argument("--diagnostic-best", action="store_true",
                   help="also report the ground-truth-selected best prediction (upper bound)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("lasso", help="LASSO and global-mean baselines")
    s.add_argument("--houses", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split-fraction", type=float, default=0.8)
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_lasso)

    s = sub.add_parser("bench", help="full synthetic end-to-end run")
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.add_argument("--from-manifest")
    s.add_argument("--diagnostic-best", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        # pin BLAS to one thread so results never depend on the machine's core count
        with threadpool_limits(1):
            result = a.func(a)
    except GeowalkError as e:
        _fail(type(e).__name__, str(e), e.exit_code)
        return e.exit_code
    except (OSError, json.JSONDecodeError) as e:
        _fail(type(e).__name__, str(e), 4)
        return 4
    except (KeyError, TypeError, ValueError) as e:
        _fail(type(e).__name__, str(e), 2)
        return 2
    if result is not None:
        print(json.dumps(result, sort_keys=True))
    return 0


def _fail(kind, message, code):
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")


if __name__ == "__main__":
    sys.exit(main())
