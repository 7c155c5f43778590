"""End-to-end synthetic benchmark: city -> graph -> walks -> B-LSTM -> metrics.

Everything is derived from one seed.  Outputs are written atomically into
the run directory; ``manifest.json`` records the resolved configuration so
``run_bench(out, config=manifest["config"])`` repeats the run exactly.
"""

from dataclasses import asdict, fields
import json
import os
import tempfile
import time

from . import __version__
from .errors import InvalidInput
from .features import load_dataset
from .net import save_checkpoint
from .pipeline import (BENCH_TRAIN, TrainConfig, global_mean_baseline, lasso_baseline,
                       metrics_report, predict, split, train, write_predictions,
                       write_training_log)
from .synth import SynthConfig, generate, write_city

SYNTH_KEYS = {f.name for f in fields(SynthConfig)}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


def atomic_write(path, data):
    """Write text or bytes to ``path`` via a temp file and rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def resolve_bench_config(seed, config=None):
    """Flat config dict -> (SynthConfig, TrainConfig).

    ``seed`` feeds both; keys are routed by field name.
    """
    config = dict(config or {})
    config.pop("seed", None)
    unknown = set(config) - SYNTH_KEYS - TRAIN_KEYS
    if unknown:
        raise InvalidInput(f"unknown config keys: {sorted(unknown)}")
    scfg = SynthConfig(seed=seed, **{k: v for k, v in config.items() if k in SYNTH_KEYS})
    tkw = {**BENCH_TRAIN, **{k: v for k, v in config.items() if k in TRAIN_KEYS}}
    tcfg = TrainConfig(seed=seed, **tkw)
    return scfg, tcfg


def run_bench(out_dir, seed=0, config=None, threads=1, diagnostic_best=False):
    """Run the whole synthetic benchmark and return a result dict."""
    timings = {}
    scfg, tcfg = resolve_bench_config(seed, config)
    tcfg = TrainConfig(**{**asdict(tcfg), "threads": int(threads)})
    os.makedirs(out_dir, exist_ok=True)

    t = time.perf_counter()
    houses, truth = generate(scfg)
    write_city(out_dir, houses, truth)
    houses = load_dataset(os.path.join(out_dir, "houses.csv"), os.path.join(out_dir, "features.bin"))
    timings["synth"] = time.perf_counter() - t

    t = time.perf_counter()
    tr, te = split(houses, tcfg.split_fraction, seed)
    trained = train(tr, tcfg)
    timings["train"] = time.perf_counter() - t
    save_checkpoint(os.path.join(out_dir, "model.ckpt"), trained.model, seed=seed, step=trained.steps,
                    rmsprop={"rho": tcfg.rho, "lr": tcfg.lr, "delta": tcfg.delta},
                    extra=checkpoint_extra(trained, te, "houses.csv", "features.bin"))
    write_training_log(os.path.join(out_dir, "training_log.csv"), trained.log)

    t = time.perf_counter()
    summaries = predict(trained, tr, te, tcfg.per_test, tcfg, threads=threads)
    timings["predict"] = time.perf_counter() - t
    write_predictions(os.path.join(out_dir, "predictions.csv"), summaries,
                      os.path.join(out_dir, "predictions.sequences.csv"))
    report = metrics_report(summaries, "average", 3)
    if diagnostic_best:
        report["diagnostic_best"] = metrics_report(summaries, "best", 0)
    dump_json(os.path.join(out_dir, "metrics.json"), report)

    t = time.perf_counter()
    fit, lasso_m = lasso_baseline(tr, te, seed)
    gm = global_mean_baseline(tr, te)
    timings["lasso"] = time.perf_counter() - t
    baselines = {
        "lasso": {"mae": lasso_m.mae, "mape_percent": round(lasso_m.mape_percent, 2),
                  "lambda": fit.lam, "n_nonzero": int((fit.coef != 0).sum())},
        "global_mean": {"mae": gm.mae, "mape_percent": round(gm.mape_percent, 2)},
        "n_train": len(tr),
        "n_test": len(te),
    }
    dump_json(os.path.join(out_dir, "lasso_metrics.json"), baselines)

    resolved = {**asdict(scfg), **{k: v for k, v in asdict(tcfg).items() if k != "threads"}}
    manifest = {
        "tool": "geowalk",
        "version": __version__,
        "seed": seed,
        "config": resolved,
        "threads": threads,
        "artifacts": ["houses.csv", "features.bin", "truth.json", "model.ckpt", "training_log.csv",
                      "predictions.csv", "predictions.sequences.csv", "metrics.json",
                      "lasso_metrics.json"],
        "timings_seconds": timings,
    }
    dump_json(os.path.join(out_dir, "manifest.json"), manifest)
    return {"metrics": report, "baselines": baselines, "summaries": summaries,
            "trained": trained, "manifest": manifest}


def checkpoint_extra(trained, test_houses, houses_path, features_path):
    return {
        "train_config": asdict(trained.config),
        "feature_stats": trained.feature_stats.to_json(),
        "price_stats": trained.price_stats.to_json(),
        "train_ids": list(trained.train_ids),
        "test_ids": [h.id for h in test_houses],
        "houses": houses_path,
        "features": features_path,
    }
