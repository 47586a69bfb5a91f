"""Command line entry point: ``neaw <command> [flags]``.

Every flag can also come from a ``--config`` file of ``key=value`` lines
(``#`` starts a comment, dashes and underscores in keys are interchangeable).
Explicit flags win over the file, which wins over built-in defaults.

Exit codes: 0 ok, 1 verification violation or integrity failure, 2 usage or
configuration error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, analysis, classifier as clf_mod, data, persist, rules
from .encoder import DEFAULT_DIMS, global_features, init_encoder
from .numerics import derive_seed

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

COMMANDS = ("gen", "train-encoder", "train-classifier", "eval", "analyze", "verify", "sweep-ab", "export")


class UsageError(Exception):
    pass


class IntegrityError(Exception):
    pass


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _floats(v):
    return [float(t) for t in str(v).split(",") if t.strip()]


def _opt_float(v):
    return None if v in (None, "", "auto") else float(v)


# key: (type, default, help)
OPTIONS = {
    "dataset": (str, "synthetic", "synthetic | point-mnist | modelnet-off (gen)"),
    "data": (str, None, "dataset directory (gen output; for gen: MNIST IDX dir or ModelNet root)"),
    "out": (str, ".", "output directory"),
    "model": (str, None, "model file (default <out>/model.neaw)"),
    "seed": (int, 0, "master seed; phase seeds are derived from it"),
    "threads": (int, 1, "worker cap (results do not depend on it)"),
    "points": (int, None, "points per cloud (default 1024, point-mnist 256)"),
    "n_train": (int, 200, "synthetic train clouds per class"),
    "n_test": (int, 50, "synthetic test clouds per class"),
    "jitter": (float, 0.02, "synthetic surface jitter (std, pre-normalisation)"),
    "mnist_train": (int, 2000, "point-mnist train subset size (stratified)"),
    "mnist_test": (int, 500, "point-mnist test subset size (stratified)"),
    "rule": (str, "neaw", "neaw | neaw-h | neaw-ah | hebb | oja | grossberg"),
    "eta": (_opt_float, None, "encoder learning rate (default 0.01/fraction clamped to [0.01, 0.1])"),
    "a": (float, 1.0, "NeAW Hebbian gain"),
    "b": (float, 1.0, "NeAW anti-Hebbian gain"),
    "epsilon": (float, 0.0, "activity tolerance around 1/d"),
    "activity_window": (str, "batch", "batch | ema"),
    "ema_decay": (float, 0.9, "decay for activity_window=ema"),
    "neaw_layers": (str, "all", "all | last"),
    "schedule": (str, "simultaneous", "simultaneous | greedy"),
    "epochs": (int, 50, "encoder epochs"),
    "batch": (int, 4, "encoder batch (clouds)"),
    "init": (str, "gaussian", "gaussian | data"),
    "init_scale": (float, 0.5, "init standard deviation"),
    "clf_epochs": (int, 100, "classifier epochs"),
    "clf_lr": (float, 1e-3, "classifier learning rate"),
    "clf_batch": (int, 32, "classifier batch"),
    "clf_order": (str, "ln-relu", "ln-relu | relu-ln"),
    "fraction": (float, 1.0, "fraction of training clouds kept per class"),
    "split": (str, "test", "split used by eval/analyze/export"),
    "prototype": (str, "mean", "class prototype for dissimilarity: mean | medoid"),
    "plots": (_bool, False, "also render PNG diagnostics (analyze, verify ordering, sweep-ab)"),
    "suite": (str, "theorem1", "verify suite: theorem1 | corollaries | eq5 | ordering"),
    "n": (int, None, "verify: instances (theorem1/corollaries 100000, eq5 1000) or seeds (ordering, 3)"),
    "a_values": (_floats, [0.0, 1.0], "sweep-ab: comma-separated a grid"),
    "b_values": (_floats, [0.0, 1.0], "sweep-ab: comma-separated b grid"),
    "sweep_seeds": (int, 1, "sweep-ab: seeds per grid point"),
    "sweep_accuracy": (_bool, True, "sweep-ab: train a classifier for final accuracy"),
}


def _norm_key(k: str) -> str:
    return k.strip().lstrip("-").replace("-", "_")


def read_config_file(path) -> dict:
    out = {}
    for i, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{i}: expected key=value")
        k, v = line.split("=", 1)
        k = _norm_key(k)
        if k not in OPTIONS:
            raise UsageError(f"{path}:{i}: unknown key {k!r}")
        out[k] = v.strip()
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    raw = {}
    if getattr(args, "config", None):
        try:
            raw.update(read_config_file(args.config))
        except OSError as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from e
    for k in OPTIONS:
        if hasattr(args, k):
            raw[k] = getattr(args, k)
    cfg = {}
    for k, (typ, default, _) in OPTIONS.items():
        if k in raw:
            try:
                cfg[k] = typ(raw[k]) if raw[k] is not None else None
            except ValueError as e:
                raise UsageError(f"bad value for {k}: {raw[k]!r} ({e})") from e
        else:
            cfg[k] = default
    _validate(cfg)
    return cfg


def _validate(cfg):
    choices = {"dataset": ("synthetic", "point-mnist", "modelnet-off"), "rule": tuple(r.value for r in rules.RuleKind),
               "activity_window": ("batch", "ema"), "neaw_layers": ("all", "last"),
               "schedule": ("simultaneous", "greedy"), "init": ("gaussian", "data"),
               "clf_order": ("ln-relu", "relu-ln"), "split": ("train", "test"), "prototype": ("mean", "medoid"),
               "suite": ("theorem1", "corollaries", "eq5", "ordering")}
    for k, allowed in choices.items():
        if cfg[k] not in allowed:
            raise UsageError(f"{k} must be one of {', '.join(allowed)}; got {cfg[k]!r}")
    positive = ("threads", "n_train", "n_test", "mnist_train", "mnist_test", "batch", "clf_epochs", "clf_batch",
                "sweep_seeds")
    for k in positive:
        if cfg[k] < 1:
            raise UsageError(f"{k} must be >= 1")
    if cfg["points"] is not None and cfg["points"] < 1:
        raise UsageError("points must be >= 1")
    if cfg["epochs"] < 0:
        raise UsageError("epochs must be >= 0")
    if not 0 < cfg["fraction"] <= 1:
        raise UsageError("fraction must be in (0, 1]")
    if cfg["eta"] is not None and cfg["eta"] < 0:
        raise UsageError("eta must be >= 0")
    if cfg["clf_lr"] < 0:
        raise UsageError("clf_lr must be >= 0")
    if cfg["n"] is not None and cfg["n"] < 1:
        raise UsageError("n must be >= 1")
    if not cfg["a_values"] or not cfg["b_values"]:
        raise UsageError("sweep grids must be nonempty")
    if cfg["a"] < 0 or cfg["b"] < 0 or min(cfg["a_values"] + cfg["b_values"]) < 0:
        raise UsageError("a and b must be >= 0")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    for k, (typ, default, hlp) in OPTIONS.items():
        flag = "--" + k.replace("_", "-")
        common.add_argument(flag, dest=k, default=argparse.SUPPRESS, help=f"{hlp} [default: {default}]")
    p = argparse.ArgumentParser(prog="neaw", description="Activity-aware Hebbian point-cloud encoders.")
    p.add_argument("--version", action="version", version=f"neaw {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for c in COMMANDS:
        sub.add_parser(c, parents=[common], help=HANDLERS[c].__doc__.splitlines()[0])
    return p


# -- helpers --------------------------------------------------------------

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out}: {e}") from e
    return out


def write_manifest(out: Path, command: str, cfg: dict, files, phases: dict) -> Path:
    files = sorted({Path(f) for f in files})
    body = {
        "command": command,
        "version": __version__,
        "config": {k: v for k, v in cfg.items()},
        "phases_s": {k: round(v, 3) for k, v in phases.items()},
        "files": {str(f.relative_to(out) if f.is_relative_to(out) else f): _sha256(f) for f in files},
    }
    path = out / f"manifest_{command.replace('-', '_')}.json"
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)
    return path


def _json_out(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    print(text)
    if path is not None:
        Path(path).write_text(text + "\n")


def _data_dir(cfg) -> Path:
    if not cfg["data"]:
        raise UsageError("--data is required")
    return Path(cfg["data"])


def load_dataset(cfg, split: str) -> data.DatasetSplit:
    path = _data_dir(cfg) / f"{split}.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"missing {path}; run `neaw gen` first")
    ds = data.load_split(path)
    if not ds.clouds:
        raise UsageError(f"{path} lists no clouds")
    return ds


def encoder_eta(cfg) -> float:
    return cfg["eta"] if cfg["eta"] is not None else rules.limited_data_eta(cfg["fraction"])


def rule_config(cfg, **over) -> rules.RuleConfig:
    kw = dict(kind=cfg["rule"], eta=encoder_eta(cfg), a=cfg["a"], b=cfg["b"], activity_epsilon=cfg["epsilon"],
              activity_window=cfg["activity_window"], ema_decay=cfg["ema_decay"], neaw_layers=cfg["neaw_layers"],
              schedule=cfg["schedule"])
    kw.update(over)
    return rules.RuleConfig(**kw)


def _model_path(cfg) -> Path:
    return Path(cfg["model"]) if cfg["model"] else Path(cfg["out"]) / "model.neaw"


def _load_model(cfg):
    path = _model_path(cfg)
    if not path.exists():
        raise FileNotFoundError(f"missing model file {path}")
    enc, clf = persist.load_model(path)
    return path, enc, clf


def _train_subset(cfg, train: data.DatasetSplit) -> data.DatasetSplit:
    if cfg["fraction"] >= 1:
        return train
    return data.stratified_subset(train, cfg["fraction"], derive_seed(cfg["seed"], "subset"))


def _fit_encoder(cfg, train, rcfg, seed, telemetry=None, probe=None, callback=None):
    clouds = train.clouds
    dims = (clouds[0].dim,) + DEFAULT_DIMS[1:]
    pts = np.concatenate([c.points for c in clouds]) if cfg["init"] == "data" else None
    m0 = init_encoder(dims, seed=derive_seed(seed, "encoder-init"), scale=cfg["init_scale"], scheme=cfg["init"],
                      points=pts)
    info = {}
    m = rules.train_encoder(m0, clouds, rcfg, cfg["epochs"], derive_seed(seed, "encoder-train"),
                            batch=cfg["batch"], telemetry=telemetry, probe=probe, callback=callback,
                            on_diverge="stop", info=info)
    if info["diverged_epoch"] is not None:
        print(f"neaw: warning: {rcfg.kind.value} weights became non-finite in epoch {info['diverged_epoch']}; "
              f"keeping epoch {info['epochs_completed']} weights", file=sys.stderr)
    return m, info


def _fit_classifier(cfg, enc, train, seed):
    F = global_features(enc, train.clouds)
    k = len(train.class_names)
    model = clf_mod.init_classifier(k, (F.shape[1],) + clf_mod.DEFAULT_WIDTHS[1:], derive_seed(seed, "classifier-init"),
                                    cfg["clf_order"])
    tc = clf_mod.TrainConfig(epochs=cfg["clf_epochs"], lr=cfg["clf_lr"], batch=cfg["clf_batch"],
                             seed=derive_seed(seed, "classifier-train"))
    return clf_mod.train(model, F, train.labels, tc)


def eval_report(enc, clf, ds: data.DatasetSplit, name: str) -> dict:
    F = global_features(enc, ds.clouds)
    acc, per = clf_mod.accuracy(clf, F, ds.labels)
    return {"dataset": name, "n": len(ds), "accuracy": float(acc),
            "per_class_accuracy": [None if np.isnan(v) else float(v) for v in per],
            "class_names": list(ds.class_names)}


# -- commands -------------------------------------------------------------

def cmd_gen(cfg):
    """Generate or ingest a dataset and write it as CSV clouds plus JSONL manifests."""
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    seed = derive_seed(cfg["seed"], "gen")
    kind = cfg["dataset"]
    if kind == "synthetic":
        n = cfg["points"] or 1024
        train = data.synthetic_dataset(cfg["n_train"], n, seed, "train", cfg["jitter"])
        test = data.synthetic_dataset(cfg["n_test"], n, seed, "test", cfg["jitter"])
    elif kind == "point-mnist":
        train, test = _mnist_splits(cfg, seed)
    else:
        root = _data_dir(cfg)
        n = cfg["points"] or 1024
        train = data.load_modelnet(root, n, seed, "train")
        test = data.load_modelnet(root, n, seed, "test")
    t1 = time.perf_counter()
    files = []
    for name, split in (("train", train), ("test", test)):
        files.append(data.save_split(split, out, name))
        files += [out / name / f"{i:06d}.csv" for i in range(len(split))]
    phases = {"build": t1 - t0, "write": time.perf_counter() - t1}
    write_manifest(out, "gen", cfg, files, phases)
    _json_out({"train": len(train), "test": len(test), "classes": list(train.class_names), "out": str(out)})
    return EXIT_OK


MNIST_FILES = {"train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
               "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")}


def _find(root: Path, stem: str) -> Path:
    for cand in (root / stem, root / (stem + ".gz")):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"missing {root / stem}[.gz]; point-mnist expects the four standard IDX files")


def _mnist_splits(cfg, seed):
    root = _data_dir(cfg)
    n_pts = cfg["points"] or 256
    out = []
    for split, count in (("train", cfg["mnist_train"]), ("test", cfg["mnist_test"])):
        imgs = data.read_idx(_find(root, MNIST_FILES[split][0]))
        labs = data.read_idx(_find(root, MNIST_FILES[split][1]))
        keep = data.stratified_indices(labs, count, derive_seed(seed, "mnist", split))
        out.append(data.mnist_dataset(imgs[keep], labs[keep], n_pts, seed, split))
    return tuple(out)


def cmd_train_encoder(cfg):
    """Train the encoder with an unsupervised rule; writes the model file and telemetry CSV."""
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    train = _train_subset(cfg, load_dataset(cfg, "train"))
    rcfg = rule_config(cfg)
    t1 = time.perf_counter()
    tele = out / "telemetry.csv"
    enc, info = _fit_encoder(cfg, train, rcfg, cfg["seed"], telemetry=tele)
    t2 = time.perf_counter()
    path = _model_path(cfg)
    meta = {"rule": rcfg.kind.value, "eta": rcfg.eta, "a": rcfg.a, "b": rcfg.b, "epochs": cfg["epochs"],
            "batch": cfg["batch"], "fraction": cfg["fraction"], "seed": cfg["seed"],
            "train_clouds": len(train), "class_names": list(train.class_names),
            "epochs_completed": info["epochs_completed"], "diverged_epoch": info["diverged_epoch"]}
    persist.save_model(path, enc, None, meta)
    files = [path, persist.sidecar_path(path), tele]
    write_manifest(out, "train-encoder", cfg, files,
                   {"load": t1 - t0, "train": t2 - t1, "write": time.perf_counter() - t2})
    _json_out({"model": str(path), "rule": rcfg.kind.value, "eta": rcfg.eta, "train_clouds": len(train),
               "epochs_completed": info["epochs_completed"], "diverged_epoch": info["diverged_epoch"],
               "last_layer_variance": rules.last_layer_variance(enc, train.clouds)})
    return EXIT_OK


def cmd_train_classifier(cfg):
    """Train the classifier head on frozen encoder features; the encoder bytes are hash-guarded."""
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    path, enc, _ = _load_model(cfg)
    meta = persist.load_sidecar(path)
    before = persist.encoder_hash(enc)
    if meta.get("encoder_sha256") not in (None, before):
        raise IntegrityError(f"{path}: encoder bytes do not match the sidecar hash")
    train = _train_subset(cfg, load_dataset(cfg, "train"))
    test = load_dataset(cfg, "test")
    t1 = time.perf_counter()
    clf = _fit_classifier(cfg, enc, train, cfg["seed"])
    t2 = time.perf_counter()
    if persist.encoder_hash(enc) != before:
        raise IntegrityError("encoder weights changed while training the classifier")
    meta.update({"clf_epochs": cfg["clf_epochs"], "clf_lr": cfg["clf_lr"], "clf_batch": cfg["clf_batch"],
                 "clf_seed": cfg["seed"]})
    for k in ("dims", "encoder_sha256", "format_version", "classifier_widths", "classifier_order"):
        meta.pop(k, None)
    dest = Path(cfg["out"]) / "model.neaw" if cfg["model"] is None else path
    persist.save_model(dest, enc, clf, meta)
    enc2, _ = persist.load_model(dest)
    if persist.encoder_hash(enc2) != before:
        raise IntegrityError(f"{dest}: encoder section changed on write")
    report = {"encoder_sha256": before, "train": eval_report(enc, clf, train, "train"),
              "test": eval_report(enc, clf, test, "test")}
    rep = out / "classifier_report.json"
    _json_out(report, rep)
    write_manifest(out, "train-classifier", cfg, [dest, persist.sidecar_path(dest), rep],
                   {"load": t1 - t0, "train": t2 - t1, "write": time.perf_counter() - t2})
    return EXIT_OK


def cmd_eval(cfg):
    """Instance accuracy and per-class accuracy of a trained model on one split (JSON report)."""
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    path, enc, clf = _load_model(cfg)
    if clf is None:
        raise UsageError(f"{path} has no classifier section; run train-classifier first")
    ds = load_dataset(cfg, cfg["split"])
    report = eval_report(enc, clf, ds, cfg["split"])
    rep = out / f"eval_{cfg['split']}.json"
    _json_out(report, rep)
    write_manifest(out, "eval", cfg, [rep], {"eval": time.perf_counter() - t0})
    return EXIT_OK


def cmd_analyze(cfg):
    """Activity statistics, class dissimilarity and per-neuron deactivation ablation."""
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    _, enc, _ = _load_model(cfg)
    ds = load_dataset(cfg, cfg["split"])
    k = len(ds.class_names)
    rep = analysis.activity_report(enc, ds.clouds, k)
    F = global_features(enc, ds.clouds)
    protos = analysis.class_prototypes(F, ds.labels, k, cfg["prototype"])
    files = []
    d = enc.d_out
    cols = [f"n{j}" for j in range(d)]
    files.append(analysis.write_matrix_csv(out / "per_class_activity_fraction.csv", rep.per_class, cols,
                                           ds.class_names, "class"))
    files.append(analysis.write_matrix_csv(out / "per_class_activity_share.csv", rep.per_class_share, cols,
                                           ds.class_names, "class"))
    summary = {"split": cfg["split"], "n": len(ds), "last_layer_variance": rep.variance,
               "active_neurons": int((rep.counts > 0).sum()), "layer_variances": rules.layer_variances(enc, ds.clouds)}
    try:
        dm = analysis.dissimilarity(protos, ds.class_names)
    except ValueError as e:
        summary["dissimilarity_error"] = str(e)
        dm = None
    if dm is not None:
        files.append(analysis.write_matrix_csv(out / "dissimilarity.csv", dm.D, ds.class_names, ds.class_names,
                                               "class"))
        summary["dissimilarity_frobenius"] = dm.frobenius
        abl = analysis.ablation_sweep(F, ds.labels, k)
        files.append(analysis.write_rows_csv(
            out / "ablation.csv",
            [{"neuron": r.neuron, "delta_frobenius": r.delta_frobenius, "cross_class_variance": r.cross_class_variance}
             for r in abl], ["neuron", "delta_frobenius", "cross_class_variance"]))
        if abl:
            deltas = np.array([r.delta_frobenius for r in abl])
            xs = np.array([r.cross_class_variance for r in abl])
            summary["ablation_neurons"] = len(abl)
            summary["ablation_mean_delta"] = float(deltas.mean())
            if len(abl) > 2 and xs.std() > 0 and deltas.std() > 0:
                summary["ablation_corr_variance_delta"] = float(np.corrcoef(xs, deltas)[0, 1])
    if cfg["plots"]:
        from . import plotting
        files.append(plotting.activity_map(rep.per_class, out / "per_class_activity.png", ds.class_names))
        if dm is not None:
            files.append(plotting.dissimilarity_heatmap(dm.D, out / "dissimilarity.png", ds.class_names))
    js = out / "analysis.json"
    _json_out(summary, js)
    files.append(js)
    write_manifest(out, "analyze", cfg, files, {"analyze": time.perf_counter() - t0})
    return EXIT_OK


def _synthetic_or_data(cfg):
    if cfg["data"]:
        return _train_subset(cfg, load_dataset(cfg, "train")), load_dataset(cfg, "test")
    seed = derive_seed(cfg["seed"], "gen")
    n = cfg["points"] or 1024
    return (data.synthetic_dataset(cfg["n_train"], n, seed, "train", cfg["jitter"]),
            data.synthetic_dataset(cfg["n_test"], n, seed, "test", cfg["jitter"]))


def cmd_verify(cfg):
    """Run a verification suite; exit 1 and print the first counterexample on any violation."""
    suite, n, seed = cfg["suite"], cfg["n"], cfg["seed"]
    out = Path(cfg["out"])
    t0 = time.perf_counter()
    files = []
    if suite == "theorem1":
        res = analysis.theorem1_suite(n or 100_000, seed).to_json()
    elif suite == "corollaries":
        parts = [analysis.corollary_suite(n or 100_000, seed, m).to_json() for m in ("both_hebbian", "both_anti")]
        res = {"suite": "corollaries", "instances": sum(p["instances"] for p in parts),
               "violations": sum(p["violations"] for p in parts), "seed": seed, "modes": parts}
        bad = [p for p in parts if "counterexample" in p]
        if bad:
            res["counterexample"] = dict(bad[0]["counterexample"], mode=bad[0]["suite"])
    elif suite == "eq5":
        res = analysis.eq5_suite(n or 1000, seed).to_json()
    else:
        n_seeds = n or 3
        if n_seeds < 3:
            raise UsageError("ordering needs n >= 3 seeds")
        train, test = _synthetic_or_data(cfg)
        seeds = [derive_seed(seed, "ordering", i) for i in range(n_seeds)]
        rows = analysis.variance_ordering_experiment(train.clouds, test.clouds, seeds, cfg["epochs"],
                                                     encoder_eta(cfg), cfg["batch"], a=cfg["a"], b=cfg["b"],
                                                     init_scale=cfg["init_scale"])
        med = analysis.median_final_variance(rows)
        ok = med["neaw"] > med["neaw-h"] and med["neaw"] > med["neaw-ah"]
        res = {"suite": "ordering", "instances": n_seeds, "violations": 0 if ok else 1, "seed": seed,
               "median_final_variance": med, "final_variance": {r: [v[s] for s in seeds] for r, v in
                                                                analysis.final_variances(rows).items()}}
        if not ok:
            res["counterexample"] = {"median_final_variance": med}
        _out_dir(cfg)
        files.append(analysis.write_rows_csv(out / "ordering_variance.csv", rows, ["rule", "seed", "epoch", "variance"]))
        if cfg["plots"]:
            from . import plotting
            files.append(plotting.variance_curves(rows, out / "ordering_variance.png"))
    res["wall_time_s"] = round(time.perf_counter() - t0, 3)
    dest = None
    if cfg["out"] != ".":
        _out_dir(cfg)
        dest = out / f"verify_{suite}.json"
        files.append(dest)
    _json_out(res, dest)
    if files:
        write_manifest(out, "verify", cfg, files, {"verify": time.perf_counter() - t0})
    return EXIT_OK if res["violations"] == 0 else EXIT_VIOLATION


def cmd_sweep_ab(cfg):
    """Short encoder runs over an (a, b) grid; CSV of variance trajectory and final accuracy."""
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    train, test = _synthetic_or_data(cfg)
    traj_rows, rows = [], []
    for a in cfg["a_values"]:
        for b in cfg["b_values"]:
            finals, accs = [], []
            for s in range(cfg["sweep_seeds"]):
                seed = derive_seed(cfg["seed"], "sweep", s)
                rcfg = rule_config(cfg, a=a, b=b)
                traj = []

                def record(epoch, model, traj=traj):
                    traj.append((epoch, rules.last_layer_variance(model, test.clouds)))

                enc, _ = _fit_encoder(cfg, train, rcfg, seed, callback=record)
                v0 = None
                if not traj:
                    v0 = rules.last_layer_variance(enc, test.clouds)
                traj_rows += [{"a": a, "b": b, "seed": seed, "epoch": e, "variance": v} for e, v in traj]
                finals.append(traj[-1][1] if traj else v0)
                if cfg["sweep_accuracy"]:
                    clf = _fit_classifier(cfg, enc, train, seed)
                    accs.append(eval_report(enc, clf, test, "test")["accuracy"])
            row = {"a": a, "b": b, "seeds": cfg["sweep_seeds"], "final_variance": statistics.median(finals)}
            row["accuracy"] = statistics.median(accs) if accs else ""
            rows.append(row)
    files = [analysis.write_rows_csv(out / "sweep_ab.csv", rows, ["a", "b", "seeds", "final_variance", "accuracy"]),
             analysis.write_rows_csv(out / "sweep_ab_trajectory.csv", traj_rows,
                                     ["a", "b", "seed", "epoch", "variance"])]
    if cfg["plots"]:
        from . import plotting
        files.append(plotting.variance_curves(
            [{"rule": f"a={r['a']:g},b={r['b']:g}", "seed": r["seed"], "epoch": r["epoch"], "variance": r["variance"]}
             for r in traj_rows], out / "sweep_ab.png"))
    write_manifest(out, "sweep-ab", cfg, files, {"sweep": time.perf_counter() - t0})
    _json_out({"rows": rows})
    return EXIT_OK


def cmd_export(cfg):
    """Export last-layer weights, global features, activity maps and histogram as CSV."""
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    _, enc, _ = _load_model(cfg)
    ds = load_dataset(cfg, cfg["split"])
    files = analysis.export_artifacts(enc, ds.clouds, out, ds.class_names)
    write_manifest(out, "export", cfg, files.values(), {"export": time.perf_counter() - t0})
    _json_out({k: str(v) for k, v in files.items()})
    return EXIT_OK


HANDLERS = {"gen": cmd_gen, "train-encoder": cmd_train_encoder, "train-classifier": cmd_train_classifier,
            "eval": cmd_eval, "analyze": cmd_analyze, "verify": cmd_verify, "sweep-ab": cmd_sweep_ab,
            "export": cmd_export}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        cfg = resolve_config(args)
        return HANDLERS[args.command](cfg)
    except UsageError as e:
        print(f"neaw: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except IntegrityError as e:
        print(f"neaw: integrity failure: {e}", file=sys.stderr)
        return EXIT_VIOLATION
    except (OSError, data.MeshParseError) as e:
        print(f"neaw: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"neaw: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
