"""Command-line pipeline: synth | preprocess | train | explain | evaluate | report.

Stages talk only through files in ``--output-dir``. Every command writes a
``<command>.config.json`` echo of the fully resolved configuration.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from eegcf import cfsearch, compactnet, kpmetrics, report, tfa, trial_store

DEFAULTS = {
    "global": {"seed": 0, "workers": 0, "output_dir": "run"},
    "synth": {
        "n_trials_per_class": 200, "n_channels": 22, "n_samples": 750, "sample_rate_hz": 250.0,
        "alpha_hz": 10.0, "snr": 2.0, "alpha_amplitude": 1.0, "erd_depth": 0.8, "lateral_shift_hz": 2.0,
        "n_subjects": 1, "n_sessions": 1, "subject_spread_hz": 0.0, "label_mode": "task",
        "nuisance_gain": 2.0, "nuisance_band_hz": [18.0, 30.0],
    },
    "tfa": {
        "downsample_factor": 3, "n_freqs": 224, "f_lo": 1.0, "f_hi": 41.0, "channel_agg": "mean",
        "channel_index": 0, "clip_percentile": 99.5,
    },
    "train": {
        "regimes": ["well_trained"], "epochs": 30, "batch_size": 16, "learning_rate": 0.01, "momentum": 0.9,
        "weight_decay": 5e-4, "mixup_alpha": 0.2, "patience": 5, "widths": [8, 16, 32, 64],
        "split": [0.5, 0.25, 0.25],
    },
    "explain": {"modes": ["single", "all"], "max_edits": 49, "require_correct": True, "split": "test",
                "overlays": 2},
    "evaluate": {},
    "report": {"regimes": list(compactnet.REGIMES)},
}

STAGE_SEEDS = {"synth": 0, "split": 1, "train": 2, "explain": 3}


class ConfigError(ValueError):
    pass


def merge_config(user: dict) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    for block, values in (user or {}).items():
        if block not in cfg:
            raise ConfigError(f"unknown config block {block!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"config block {block!r} must be an object")
        for key, value in values.items():
            if key not in cfg[block]:
                raise ConfigError(f"unknown config key {block}.{key}")
            cfg[block][key] = value
    return cfg


def stage_seed(cfg, stage: str) -> int:
    ss = np.random.SeedSequence([int(cfg["global"]["seed"]), STAGE_SEEDS[stage]])
    return int(ss.generate_state(1)[0])


def workers(cfg) -> int:
    n = int(cfg["global"]["workers"])
    return n if n > 0 else (os.cpu_count() or 1)


# --------------------------------------------------------------------------
# file layout


def out_dir(cfg) -> Path:
    return Path(cfg["global"]["output_dir"])


def _trials_path(cfg):
    return out_dir(cfg) / "trials.json"


def _cache_path(cfg):
    return out_dir(cfg) / "spectrograms.json"


def _write_echo(cfg, command):
    out_dir(cfg).mkdir(parents=True, exist_ok=True)
    (out_dir(cfg) / f"{command}.config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n")


def _digest(*paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def _tfa_config(cfg) -> tfa.TfaConfig:
    return tfa.TfaConfig(**cfg["tfa"])


def _require(path: Path, what: str):
    if not path.is_file():
        raise FileNotFoundError(f"missing {what}: {path}")


# --------------------------------------------------------------------------
# commands


def cmd_synth(cfg):
    s = dict(cfg["synth"])
    s["nuisance_band_hz"] = tuple(s["nuisance_band_hz"])
    if s["n_trials_per_class"] < 1:
        raise ConfigError("empty dataset: synth.n_trials_per_class must be >= 1")
    ts = trial_store.synth_mi_trials(trial_store.SynthConfig(seed=stage_seed(cfg, "synth"), **s))
    trial_store.save_trialset(ts, _trials_path(cfg))
    counts = np.bincount(ts.labels, minlength=ts.class_count)
    print(f"wrote {len(ts)} trials ({ts.n_channels} ch x {ts.n_samples} samples @ {ts.sample_rate_hz:g} Hz) "
          f"to {_trials_path(cfg)}")
    for name, n in zip(ts.class_names, counts):
        print(f"  {name}: {n}")


def load_cache(cfg):
    """Spectrogram array (N, 224, 224) if the cache matches the config and trials, else None."""
    path = _cache_path(cfg)
    if not path.is_file():
        return None
    manifest = json.loads(path.read_text())
    tp = _trials_path(cfg)
    if manifest.get("tfa_config") != _tfa_config(cfg).as_dict():
        return None
    if manifest.get("source_digest") != _digest(tp, tp.with_suffix(".bin")):
        return None
    ts = trial_store.load_trialset(path)
    n = _tfa_config(cfg).n_freqs
    return np.stack([t.signal.reshape(n, -1) for t in ts.trials]) if len(ts) else np.zeros((0, n, n), np.float32)


def cmd_preprocess(cfg):
    tp = _trials_path(cfg)
    _require(tp, "trialset")
    cached = load_cache(cfg)
    if cached is not None:
        print(f"cache hit: {len(cached)} spectrograms in {_cache_path(cfg)}")
        values = cached
    else:
        ts = trial_store.load_trialset(tp)
        tcfg = _tfa_config(cfg)

        def one(trial):
            return tfa.build_spectrogram(trial, ts.sample_rate_hz, tcfg).values

        n_workers = workers(cfg)
        if n_workers > 1:
            with ThreadPoolExecutor(max_workers=n_workers) as pool:
                specs = list(pool.map(one, ts.trials))
        else:
            specs = [one(t) for t in ts.trials]
        cache = trial_store.TrialSet(
            trials=tuple(trial_store.Trial(s.reshape(1, -1), t.label, t.subject, t.session)
                         for s, t in zip(specs, ts.trials)),
            sample_rate_hz=ts.sample_rate_hz,
            class_count=ts.class_count,
            class_names=ts.class_names,
            label_mode=ts.label_mode,
        )
        path = _cache_path(cfg)
        trial_store.save_trialset(cache, path)
        manifest = json.loads(path.read_text())
        manifest["tfa_config"] = tcfg.as_dict()
        manifest["source_digest"] = _digest(tp, tp.with_suffix(".bin"))
        path.write_text(json.dumps(manifest, indent=1) + "\n")
        values = np.stack(specs) if specs else np.zeros((0, tcfg.n_freqs, tcfg.n_times), np.float32)
        print(f"built {len(values)} spectrograms -> {path}")
    if len(values):
        print(f"magnitude min={values.min():.6g} max={values.max():.6g} mean={values.mean():.6g}")
    return values


def _load_inputs(cfg):
    tp = _trials_path(cfg)
    _require(tp, "trialset")
    _require(_cache_path(cfg), "spectrogram cache (run preprocess)")
    values = load_cache(cfg)
    if values is None:
        raise ConfigError("spectrogram cache is stale for this config; rerun preprocess")
    ts = trial_store.load_trialset(_cache_path(cfg))
    return ts, values


def _split(cfg, ts):
    fr = cfg["train"]["split"]
    spec = trial_store.SplitSpec(*fr, seed=stage_seed(cfg, "split"))
    return trial_store.split_indices(ts, spec)


def _model_path(cfg, regime):
    return out_dir(cfg) / f"model_{regime}.eegcf"


def cmd_train(cfg):
    ts, values = _load_inputs(cfg)
    parts = _split(cfg, ts)
    (out_dir(cfg) / "split.json").write_text(json.dumps(parts.as_dict()) + "\n")
    labels = ts.labels
    t = cfg["train"]
    arch = compactnet.Architecture(in_size=values.shape[1], widths=tuple(t["widths"]), class_count=ts.class_count)
    tr, va, te = (np.array(p, dtype=np.int64) for p in (parts.train, parts.val, parts.test))
    rows = ["regime,class_mode,n_train,n_val,n_test,epochs_run,best_epoch,val_top1,test_top1"]
    for regime in t["regimes"]:
        tc = compactnet.TrainConfig(
            epochs=t["epochs"], batch_size=t["batch_size"], learning_rate=t["learning_rate"],
            momentum=t["momentum"], weight_decay=t["weight_decay"], mixup_alpha=t["mixup_alpha"],
            patience=t["patience"], seed=stage_seed(cfg, "train"), regime=regime,
        )
        model, hist = compactnet.train(values[tr], labels[tr], values[va], labels[va], tc, arch,
                                       log=lambda s, r=regime: print(f"[{r}] {s}"))
        compactnet.save_model(model, _model_path(cfg, regime))
        (out_dir(cfg) / f"history_{regime}.csv").write_text(hist.to_csv())
        _, val_acc = compactnet.evaluate(model, values[va], labels[va])
        _, test_acc = compactnet.evaluate(model, values[te], labels[te])
        fmt = lambda a: "" if a is None else f"{a:.2f}"  # noqa: E731
        rows.append(f"{regime},{ts.class_count}-class,{len(tr)},{len(va)},{len(te)},{hist.epoch[-1]},"
                    f"{hist.best_epoch},{fmt(val_acc)},{fmt(test_acc)}")
        print(f"[{regime}] val_top1={fmt(val_acc)} test_top1={fmt(test_acc)} -> {_model_path(cfg, regime)}")
    (out_dir(cfg) / "table1.csv").write_text("\n".join(rows) + "\n")


def _results_path(cfg, regime, mode):
    return out_dir(cfg) / f"explain_{regime}_{mode}.jsonl"


def write_jsonl(results, path):
    Path(path).write_text("".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in results))


def read_jsonl(path):
    return [cfsearch.ExplainResult.from_json(json.loads(line))
            for line in Path(path).read_text().splitlines() if line.strip()]


def cmd_explain(cfg):
    ts, values = _load_inputs(cfg)
    parts = _split(cfg, ts)
    e = cfg["explain"]
    pool_ids = {"test": parts.test, "val": parts.val, "eval": tuple(sorted(parts.val + parts.test))}.get(e["split"])
    if pool_ids is None:
        raise ConfigError(f"explain.split must be test, val or eval, got {e['split']!r}")
    labels = ts.labels
    items = [(int(i), values[i], int(labels[i])) for i in pool_ids]
    pairing = cfsearch.PairingPolicy(seed=stage_seed(cfg, "explain"), require_correct=bool(e["require_correct"]))
    ran = False
    for regime in cfg["train"]["regimes"]:
        mp = _model_path(cfg, regime)
        _require(mp, f"model for regime {regime}")
        model = compactnet.load_model(mp)
        samples = cfsearch.featurize(model, items)
        for mode in e["modes"]:
            results = cfsearch.explain_pairs(model, samples, samples, pairing, mode=mode,
                                             max_edits=e["max_edits"], workers=workers(cfg))
            if not results:
                print(f"warning: [{regime}/{mode}] no eligible query/distractor pairs", file=sys.stderr)
            ran = ran or bool(results)
            write_jsonl(results, _results_path(cfg, regime, mode))
            flips = sum(r.flipped for r in results)
            print(f"[{regime}/{mode}] {len(results)} pairs, {flips} flipped -> {_results_path(cfg, regime, mode)}")
            for k, r in enumerate(results[:int(e["overlays"])]):
                report.emit_edit_overlay(values[r.query_id], values[r.distractor_id], r,
                                         out_dir(cfg) / f"overlay_{regime}_{mode}_{k}.svg")
    if not ran:
        raise cfsearch.SearchError("no eligible pairs")


def cmd_evaluate(cfg):
    tp = _trials_path(cfg)
    _require(tp, "trialset")
    ts_manifest = json.loads(tp.read_text())
    class_mode = f"{ts_manifest['class_count']}-class"
    kp = kpmetrics.default_keypoints(tfa.GridSpec(), tfa.freq_axis(_tfa_config(cfg)))
    rows, out = [], {}
    for regime in compactnet.REGIMES:
        for mode in cfsearch.MODES:
            path = _results_path(cfg, regime, mode)
            if not path.is_file():
                continue
            results = read_jsonl(path)
            if not results:
                print(f"warning: {path} has no results; skipped", file=sys.stderr)
                continue
            if any(r.mode != mode for r in results):
                raise kpmetrics.MetricsError(f"mode mismatch in {path}: expected {mode!r}")
            rep = kpmetrics.metrics_report(results, kp, {"mode": mode, "class_mode": class_mode, "regime": regime})
            rows.append((regime, rep))
            out[f"{regime}/{mode}"] = rep.to_json()
    if not rows:
        raise FileNotFoundError(f"no explain_*.jsonl results in {out_dir(cfg)}")
    out["keypoints"] = {"cells": sorted(list(c) for c in kp.cells), "provenance": kp.provenance}
    out["reference"] = {
        "note": "published real-data values, for context only",
        "2-class": {"single": {"near_kp": 92.88, "same_kp": 19.55},
                    "all": {"near_kp": 81.80, "same_kp": 14.51, "edits": 2.08}},
        "18-class": {"single": {"near_kp": 74.50, "same_kp": 13.80},
                     "all": {"near_kp": 71.15, "same_kp": 11.19, "edits": 2.49}},
    }
    (out_dir(cfg) / "metrics.json").write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")
    (out_dir(cfg) / "table2.csv").write_text(kpmetrics.table2_csv(rows))
    print(kpmetrics.table2_csv(rows), end="")


def cmd_report(cfg):
    panels = {}
    for regime in cfg["report"]["regimes"]:
        if regime not in compactnet.REGIMES:
            raise ConfigError(f"unknown regime {regime!r}")
    for regime in compactnet.REGIMES:
        path = _results_path(cfg, regime, "all")
        if not path.is_file():
            raise FileNotFoundError(f"missing regime results: {regime} ({path})")
        results = read_jsonl(path)
        if not any(r.edits for r in results):
            raise report.ReportError(f"regime {regime} has no edits to plot ({path})")
        panels[regime] = (report.edit_pair_histogram(results), report.kde2d(results))
    written = report.emit_regime_grid(panels, out_dir(cfg) / "fig3", tfa.GridSpec(), tfa.freq_axis(_tfa_config(cfg)))
    for p in written:
        print(p)


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "explain": cmd_explain,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser():
    p = argparse.ArgumentParser(prog="eegcf", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--workers", type=int)
    return p


def resolve_config(args) -> dict:
    user = {}
    if args.config:
        user = json.loads(Path(args.config).read_text())
    cfg = merge_config(user)
    if args.seed is not None:
        cfg["global"]["seed"] = args.seed
    if args.output_dir is not None:
        cfg["global"]["output_dir"] = args.output_dir
    if args.workers is not None:
        cfg["global"]["workers"] = args.workers
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        _write_echo(cfg, args.command)
        COMMANDS[args.command](cfg)
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        msg = str(exc).replace("\n", " ")
        print(json.dumps({"error": type(exc).__name__, "command": args.command, "message": msg}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
