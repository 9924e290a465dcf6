"""Command-line interface: ``python -m x3ecg {synth,preprocess,train,cv,rpeaks}``.

Exit codes: 0 success, 1 domain error, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import data, evaluate, rpeak, train
from .errors import DivergenceError, FormatError, ParameterError, X3ECGError
from .model import BackboneConfig, X3Config, X3ECG, save_checkpoint


class UsageError(Exception):
    pass


PRESETS = {"desk": BackboneConfig.desk, "full": BackboneConfig.full, "tiny": BackboneConfig.tiny}


@dataclass
class RunConfig:
    """Effective configuration of a train/cv run (file keys = flag names)."""

    manifest: str = ""
    preset: str = "desk"
    seed: int = 0
    lam: float = 0.02
    use_hc: bool = True
    use_demographics: bool = True
    epochs: int = 70
    cosine_epochs: int = 40
    lr0: float = 1e-3
    lr_min: float = 1e-4
    weight_decay: float = 5e-5
    batch_size: int = 32
    dropout_p: float = 0.2
    folds: int = 10
    round: int = 0
    init_hc_bias: bool = True

    # file/flag spelling differs from the attribute only for lambda
    _ALIASES = {"lambda": "lam"}

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    def set(self, key: str, value: str) -> None:
        key = self._ALIASES.get(key, key).replace("-", "_")
        if key not in self.keys():
            raise UsageError(f"unknown config key {key!r}")
        typ = type(getattr(self, key))
        try:
            if typ is bool:
                low = value.strip().lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                setattr(self, key, low in ("true", "1", "yes"))
            else:
                setattr(self, key, typ(value.strip()))
        except ValueError:
            raise UsageError(f"config key {key!r}: cannot parse {value!r} as {typ.__name__}") from None

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        cfg = cls()
        try:
            lines = Path(path).read_text().splitlines()
        except OSError as e:
            raise UsageError(f"cannot read config {path}: {e.strerror}") from None
        for n, line in enumerate(lines, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key=value")
            k, v = line.split("=", 1)
            cfg.set(k.strip(), v)
        return cfg

    def to_text(self) -> str:
        out = []
        for k in self.keys():
            v = getattr(self, k)
            if isinstance(v, bool):
                text = str(v).lower()
            elif isinstance(v, float):
                text = repr(v)
            else:
                text = str(v)
            out.append(f"{'lambda' if k == 'lam' else k}={text}")
        return "\n".join(out) + "\n"

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise UsageError(f"unknown preset {self.preset!r} (choose from {', '.join(PRESETS)})")
        if not self.manifest:
            raise UsageError("no manifest given")
        if not 0 <= self.round < self.folds:
            raise UsageError(f"round must lie in [0, {self.folds})")
        if self.cosine_epochs > self.epochs:
            raise UsageError("cosine_epochs must not exceed epochs")
        try:  # surface numeric range errors before any data is touched
            self.train_config("multi-class", self.seed)
            self.model_config(data.SCHEMAS["chapman"])
        except ParameterError as e:
            raise UsageError(str(e)) from None

    def model_config(self, schema: data.LabelSchema) -> X3Config:
        return X3Config(backbone=PRESETS[self.preset](), num_classes=schema.num_classes, task=schema.task,
                        lam=self.lam, dropout_p=self.dropout_p, use_demographics=self.use_demographics,
                        use_hc=self.use_hc)

    def train_config(self, task: str, seed: int) -> train.TrainConfig:
        return train.TrainConfig(lr0=self.lr0, lr_min=self.lr_min, cosine_epochs=self.cosine_epochs,
                                 epochs=self.epochs, weight_decay=self.weight_decay,
                                 lam=self.lam if self.use_hc else 0.0, batch_size=self.batch_size,
                                 seed=seed, task=task, init_hc_bias=self.init_hc_bias)


# -- run directories --------------------------------------------------------

def make_run_dir(tag: str) -> Path:
    root = Path(os.environ.get("X3ECG_RUN_DIR", "runs"))
    stamp = time.strftime("%Y%m%d-%H%M%S")
    run = root / f"{stamp}-{tag}"
    n = 1
    while run.exists():
        run = root / f"{stamp}-{tag}.{n}"
        n += 1
    run.mkdir(parents=True)
    return run


def run_round(cfg: RunConfig, r: int, out_dir, log=None) -> tuple:
    """One fit on fold-plan round ``r``; writes history, checkpoint and thresholds."""
    schema, ds = data.load_dataset(cfg.manifest)
    plan = data.make_folds(ds.ids, ds.y, schema.task, cfg.folds, seed=cfg.seed)
    tr_ids, va_ids, te_ids = plan.split(r)
    tr, va, te = ds.select_ids(tr_ids), ds.select_ids(va_ids), ds.select_ids(te_ids)
    seed = cfg.seed + r
    model = X3ECG(cfg.model_config(schema), seed=seed)
    cbs = []
    if log is not None:
        cbs.append(lambda row, m: log(f"round {r} epoch {row['epoch']}: train_cls={row['train_cls']:.4f} "
                                      f"val_macro_f1={row['val_macro_f1']:.4f}"))
    try:
        res = train.fit(model, tr, va, cfg.train_config(schema.task, seed), cbs)
    except DivergenceError as e:
        raise DivergenceError(f"round {r}: {e}") from None
    metrics = evaluate.evaluate_round(model, te, res.thresholds)
    out = Path(out_dir) / f"round_{r}"
    out.mkdir(parents=True, exist_ok=True)
    train.write_history(res.history, out / "history.csv")
    save_checkpoint(model, out / "checkpoint")
    thr = res.thresholds if res.thresholds is not None else np.full(schema.num_classes, np.nan)
    evaluate.write_thresholds(thr, schema.classes, out / "thresholds.csv")
    with open(out / "metrics.csv", "w") as f:
        f.write("metric,value\n")
        f.write(f"macro_f1,{metrics.macro_f1!r}\naccuracy,{metrics.accuracy!r}\n")
        for c, v in zip(schema.classes, metrics.per_class_f1):
            f.write(f"f1_{c},{v!r}\n")
        f.write(f"best_epoch,{res.best_epoch}\n")
    return metrics, res.history


# -- commands ---------------------------------------------------------------

def _require_empty(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()) and not force:
        raise UsageError(f"output directory {path} is not empty (use --force)")


def cmd_synth(args) -> int:
    if args.per_class < 1:
        raise UsageError("--per-class must be at least 1")
    if not 2 <= args.classes <= len(data.SYNTH_CLASSES):
        raise UsageError(f"--classes must lie in [2, {len(data.SYNTH_CLASSES)}]")
    out = Path(args.out)
    _require_empty(out, args.force)
    manifest = data.synth_corpus(out, args.classes, args.per_class, args.seed)
    _, ds = data.load_dataset(manifest)
    print(f"wrote {len(ds)} recordings to {out} (manifest {manifest.name}, counts {data.ngt_path(manifest).name})")
    return 0


def cmd_preprocess(args) -> int:
    schema, descs = data.load_manifest(args.manifest)
    out = Path(args.out)
    if out.resolve() == Path(args.manifest).resolve().parent:
        raise UsageError("output directory must differ from the input corpus")
    for d in descs:
        _, _, done = data.read_signal(d.path)
        if done:
            print(f"error: {d.path} is already preprocessed", file=sys.stderr)
            return 1
    _require_empty(out, args.force)
    (out / "sig").mkdir(parents=True, exist_ok=True)
    rows, counts, skipped = [], {}, 0
    for d in descs:
        try:
            leads, fs, _ = data.read_signal(d.path)
            rec = data.load_recording(d, preprocess=True)
        except (X3ECGError, OSError) as e:
            print(f"skip {d.id}: {e}", file=sys.stderr)
            skipped += 1
            continue
        n = leads.shape[1]
        action = "kept" if n == data.TARGET_LEN else (f"truncated {n}->{data.TARGET_LEN}" if n > data.TARGET_LEN
                                                      else f"padded {n}->{data.TARGET_LEN}")
        rel = f"sig/{d.id}.bin"
        data.write_signal(out / rel, rec.leads, rec.fs, preprocessed=True)
        rows.append(data.descriptor_row(d, schema, rel))
        counts[d.id] = rec.n_gt
        print(f"{d.id}: {action}, beats={rec.n_gt}")
    data.write_manifest(out / "manifest.csv", schema, rows)
    data.write_ngt(out / "manifest.csv", counts)
    if skipped:
        print(f"{skipped} file(s) skipped", file=sys.stderr)
        return 1
    return 0


def _run_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    for key in ("manifest", "seed", "epochs", "preset", "round", "batch_size"):
        v = getattr(args, key, None)
        if v is not None:
            cfg.set(key, str(v))
    if args.lam is not None:
        cfg.lam = args.lam
    if args.no_hc:
        cfg.use_hc = False
    if args.no_demographics:
        cfg.use_demographics = False
    for kv in args.set or ():
        if "=" not in kv:
            raise UsageError(f"--set expects key=value, got {kv!r}")
        cfg.set(*kv.split("=", 1))
    cfg.validate()
    if not Path(cfg.manifest).is_file():
        raise FileNotFoundError(f"manifest not found: {cfg.manifest}")
    return cfg


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def cmd_train(args) -> int:
    cfg = _run_config(args)
    run = make_run_dir(args.tag or "train")
    (run / "config.echo").write_text(cfg.to_text())
    metrics, _ = run_round(cfg, cfg.round, run, _log if args.verbose else None)
    print(f"{run}: round {cfg.round} macro_f1={metrics.macro_f1:.4f} accuracy={metrics.accuracy:.4f}")
    return 0


def _cv_worker(job):
    cfg, r, run = job
    return run_round(cfg, r, run)


def cmd_cv(args) -> int:
    cfg = _run_config(args)
    schema, _ = data.load_dataset(cfg.manifest)  # validates the corpus and fills the count sidecar once
    run = make_run_dir(args.tag or "cv")
    (run / "config.echo").write_text(cfg.to_text())
    jobs = [(cfg, r, run) for r in range(cfg.folds)]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_cv_worker, jobs))
    else:
        results = [run_round(cfg, r, run, _log if args.verbose else None) for r in range(cfg.folds)]
    report = evaluate.aggregate([m for m, _ in results], expected=cfg.folds)
    evaluate.write_report(report, schema.classes, run / "report.csv")
    evaluate.write_curves([h for _, h in results], run / "curves.csv")
    print(f"{run}: macro_f1={report.macro_f1_mean:.4f}±{report.macro_f1_std:.4f} "
          f"accuracy={report.accuracy_mean:.4f}±{report.accuracy_std:.4f}")
    return 0


def cmd_rpeaks(args) -> int:
    leads, fs, _ = data.read_signal(args.signal)
    res = rpeak.detect_rpeaks(leads[0], fs)
    for i in res.peak_indices:
        print(int(i))
    print(f"count={res.count}", file=sys.stderr)
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="x3ecg", description="3-lead ECG classifier with lead-wise attention.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic labelled corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--per-class", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="filter/standardize a raw corpus into ECGC files")
    s.add_argument("manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_preprocess)

    for name, func, hlp in (("train", cmd_train, "fit one fold-plan round"),
                            ("cv", cmd_cv, "10-fold cross-validation")):
        s = sub.add_parser(name, help=hlp)
        s.add_argument("manifest", nargs="?")
        s.add_argument("--config")
        s.add_argument("--seed", type=int)
        s.add_argument("--lambda", dest="lam", type=float)
        s.add_argument("--no-hc", action="store_true")
        s.add_argument("--no-demographics", action="store_true")
        s.add_argument("--epochs", type=int)
        s.add_argument("--batch-size", type=int)
        s.add_argument("--preset", choices=sorted(PRESETS))
        s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
        s.add_argument("--tag")
        s.add_argument("--verbose", action="store_true")
        if name == "train":
            s.add_argument("--round", type=int)
        else:
            s.add_argument("--jobs", type=int, default=1)
        s.set_defaults(func=func)

    s = sub.add_parser("rpeaks", help="print R-peak indices of lead I")
    s.add_argument("signal")
    s.set_defaults(func=cmd_rpeaks)
    return p


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except (OSError, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (X3ECGError, DivergenceError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
