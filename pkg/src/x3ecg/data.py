"""Manifests, binary signal files, preprocessing orchestration, fold planning
and the synthetic corpus emitter."""
from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import dsp, rpeak
from .demographics import Demographics, encode, parse_gender
from .errors import FormatError, ParameterError, UnsupportedRateError

FS = 500
TARGET_LEN = 5000
MAGIC_RAW = b"ECG3"
MAGIC_PREPROCESSED = b"ECGC"
_HEADER = struct.Struct("<4sHQI")
MANIFEST_HEADER = ["id", "path", "age", "gender", "labels"]


@dataclass(frozen=True)
class LabelSchema:
    name: str
    classes: tuple
    task: str

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def encode_labels(self, names: Sequence[str]):
        idx = []
        for n in names:
            if n not in self.classes:
                raise FormatError(f"unknown class {n!r} for schema {self.name} ({', '.join(self.classes)})")
            idx.append(self.classes.index(n))
        if self.task == "multi-class":
            if len(idx) != 1:
                raise FormatError(f"multi-class schema {self.name} needs exactly one label, got {list(names)}")
            return idx[0]
        vec = np.zeros(self.num_classes)
        vec[idx] = 1.0
        return vec

    def header_line(self) -> str:
        if self.name in SCHEMAS and SCHEMAS[self.name] == self:
            return f"# schema={self.name}"
        return f"# schema={self.name} task={self.task} classes={'|'.join(self.classes)}"


SCHEMAS = {
    "chapman": LabelSchema("chapman", ("AFIB", "GSVT", "SB", "SR"), "multi-class"),
    "cpsc2018": LabelSchema("cpsc2018", ("SNR", "AF", "IAVB", "LBBB", "RBBB", "PAC", "PVC", "STD", "STE"),
                            "multi-label"),
}


@dataclass
class RecordDescriptor:
    id: str
    path: Path
    demographics: Demographics
    labels: Union[int, np.ndarray]
    row: int = 0


@dataclass
class Recording:
    id: str
    leads: np.ndarray
    fs: int
    labels: Union[int, np.ndarray]
    demographics: Demographics
    n_gt: Optional[int] = None


def _parse_schema_line(line: str) -> LabelSchema:
    opts = dict(tok.split("=", 1) for tok in line.lstrip("#").split() if "=" in tok)
    name = opts.get("schema")
    if name is None:
        raise FormatError(f"schema comment without 'schema=': {line!r}")
    if "classes" not in opts:
        if name not in SCHEMAS:
            raise FormatError(f"unknown schema {name!r}")
        return SCHEMAS[name]
    return LabelSchema(name, tuple(opts["classes"].split("|")), opts.get("task", "multi-class"))


def load_manifest(path, schema: Optional[LabelSchema] = None) -> tuple[LabelSchema, list[RecordDescriptor]]:
    """Parse a manifest CSV (``id,path,age,gender,labels``).

    The schema comes from ``schema`` or from a leading ``# schema=...``
    comment line. Signal paths are resolved relative to the manifest.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    with open(path, newline="") as f:
        lines = f.read().splitlines()
    body_start = 0
    while body_start < len(lines) and lines[body_start].startswith("#"):
        if schema is None and "schema=" in lines[body_start]:
            schema = _parse_schema_line(lines[body_start])
        body_start += 1
    if schema is None:
        raise FormatError(f"{path}: no schema given and no '# schema=' line")
    rows = list(csv.reader(lines[body_start:]))
    if not rows or [c.strip() for c in rows[0]] != MANIFEST_HEADER:
        raise FormatError(f"{path}: header must be {','.join(MANIFEST_HEADER)}")

    seen = set()
    out = []
    for offset, row in enumerate(rows[1:]):
        lineno = body_start + offset + 2
        if not row:
            continue
        if len(row) != 5:
            raise FormatError(f"{path}: row {lineno} has {len(row)} fields, expected 5")
        rid, rel, age_s, gender_s, labels_s = (c.strip() for c in row)
        if not rid:
            raise FormatError(f"{path}: row {lineno} has an empty id")
        if rid in seen:
            raise FormatError(f"{path}: duplicate id {rid!r} at row {lineno}")
        seen.add(rid)
        try:
            age = float(age_s) if age_s else None
            demo = Demographics(age, parse_gender(gender_s))
        except ValueError as e:
            raise FormatError(f"{path}: row {lineno}: {e}") from None
        names = [n.strip() for n in labels_s.split("|") if n.strip()]
        try:
            labels = schema.encode_labels(names)
        except FormatError as e:
            raise FormatError(f"{path}: row {lineno}: {e}") from None
        out.append(RecordDescriptor(rid, (path.parent / rel), demo, labels, lineno))
    return schema, out


def write_manifest(path, schema: LabelSchema, rows: Sequence[Sequence[str]]) -> None:
    with open(path, "w", newline="") as f:
        f.write(schema.header_line() + "\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        w.writerows(rows)


def descriptor_row(d: RecordDescriptor, schema: LabelSchema, rel_path: str) -> list[str]:
    age = "" if d.demographics.age is None else f"{d.demographics.age:g}"
    gender = {"male": "m", "female": "f", None: ""}[d.demographics.gender]
    if schema.task == "multi-class":
        labels = schema.classes[int(d.labels)]
    else:
        labels = "|".join(c for c, v in zip(schema.classes, d.labels) if v)
    return [d.id, rel_path, age, gender, labels]


# -- binary signal files ----------------------------------------------------

def write_signal(path, leads: np.ndarray, fs: int = FS, preprocessed: bool = False) -> None:
    leads = np.atleast_2d(np.asarray(leads))
    magic = MAGIC_PREPROCESSED if preprocessed else MAGIC_RAW
    with open(path, "wb") as f:
        f.write(_HEADER.pack(magic, leads.shape[0], leads.shape[1], int(fs)))
        f.write(np.ascontiguousarray(leads, dtype="<f4").tobytes())


def read_signal(path) -> tuple[np.ndarray, int, bool]:
    """Return ``(leads as float64, fs, preprocessed flag)``."""
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, n_leads, n_samples, fs = _HEADER.unpack(head)
        if magic not in (MAGIC_RAW, MAGIC_PREPROCESSED):
            raise FormatError(f"{path}: bad magic {magic!r}")
        raw = f.read()
    need = 4 * n_leads * n_samples
    if len(raw) < need:
        raise FormatError(f"{path}: truncated data ({len(raw)} of {need} bytes)")
    leads = np.frombuffer(raw[:need], dtype="<f4").reshape(n_leads, n_samples).astype(np.float64)
    return leads, int(fs), magic == MAGIC_PREPROCESSED


def preprocess_raw(leads: np.ndarray, fs: int) -> np.ndarray:
    """Lead selection -> fix_length -> 1-47 Hz zero-phase bandpass -> standardize.

    The result is rounded to float32 precision, the precision of the signal
    file format, so in-memory and on-disk preprocessed data are identical.
    """
    if fs != FS:
        raise UnsupportedRateError(f"sampling rate {fs} Hz is unsupported (expected {FS} Hz, no resampling)")
    if leads.shape[0] == 12:
        leads = dsp.select_leads(leads)
    elif leads.shape[0] != 3:
        raise FormatError(f"expected 3 or 12 leads, got {leads.shape[0]}")
    out = dsp.preprocess_leads(leads, fs=fs, target_len=TARGET_LEN)
    return out.astype(np.float32).astype(np.float64)


def load_recording(desc: RecordDescriptor, preprocess: bool = True, n_gt: Optional[int] = None) -> Recording:
    leads, fs, done = read_signal(desc.path)
    if fs != FS:
        raise UnsupportedRateError(f"{desc.path}: sampling rate {fs} Hz is unsupported (expected {FS} Hz)")
    if done:
        if leads.shape != (3, TARGET_LEN):
            raise FormatError(f"{desc.path}: preprocessed file must be 3x{TARGET_LEN}, got {leads.shape}")
    elif preprocess:
        leads = preprocess_raw(leads, fs)
    else:
        if leads.shape[0] == 12:
            leads = dsp.select_leads(leads)
        return Recording(desc.id, dsp.fix_length(leads, TARGET_LEN), fs, desc.labels, desc.demographics, None)
    rec = Recording(desc.id, leads, fs, desc.labels, desc.demographics, n_gt)
    if rec.n_gt is None:
        rec.n_gt = rpeak.count_heartbeats(rec)
    return rec


# -- heartbeat-count sidecar ------------------------------------------------

def ngt_path(manifest) -> Path:
    return Path(str(manifest) + ".ngt")


def read_ngt(manifest) -> dict[str, int]:
    p = ngt_path(manifest)
    if not p.is_file():
        return {}
    with open(p, newline="") as f:
        return {row[0]: int(row[1]) for row in csv.reader(f) if row and row[0] != "id"}


def write_ngt(manifest, counts: dict[str, int]) -> None:
    with open(ngt_path(manifest), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "count"])
        for k, v in counts.items():
            w.writerow([k, v])


@dataclass
class Dataset:
    """Stacked model inputs for a list of recordings."""

    ids: list
    x: np.ndarray  # [N, 3, L]
    demog: np.ndarray  # [N, 11]
    y: np.ndarray  # [N] class indices or [N, C] 0/1
    n_gt: np.ndarray  # [N]

    def __len__(self):
        return len(self.ids)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset([self.ids[i] for i in idx], self.x[idx], self.demog[idx], self.y[idx], self.n_gt[idx])

    def select_ids(self, ids) -> "Dataset":
        pos = {rid: i for i, rid in enumerate(self.ids)}
        return self.subset([pos[i] for i in ids])


def stack(recordings: Sequence[Recording]) -> Dataset:
    return Dataset(
        [r.id for r in recordings],
        np.stack([r.leads for r in recordings]),
        np.stack([encode(r.demographics) for r in recordings]),
        np.array([r.labels for r in recordings]),
        np.array([r.n_gt for r in recordings], dtype=np.float64),
    )


def load_dataset(manifest, schema: Optional[LabelSchema] = None) -> tuple[LabelSchema, Dataset]:
    """Load and preprocess every recording, reusing/creating the n_gt sidecar."""
    schema, descs = load_manifest(manifest, schema)
    cached = read_ngt(manifest)
    recs = [load_recording(d, True, cached.get(d.id)) for d in descs]
    counts = {r.id: int(r.n_gt) for r in recs}
    if counts != cached:
        write_ngt(manifest, counts)
    return schema, stack(recs)


# -- fold planning ----------------------------------------------------------

@dataclass
class FoldPlan:
    fold_of: dict
    k: int = 10
    rounds: list = field(default_factory=list)

    def __post_init__(self):
        if not self.rounds:
            self.rounds = [self.round_roles(r) for r in range(self.k)]

    def round_roles(self, r: int) -> dict:
        val, test = (r + self.k - 2) % self.k, (r + self.k - 1) % self.k
        return {"train": [f for f in range(self.k) if f not in (val, test)], "val": val, "test": test}

    def ids_in(self, folds) -> list:
        folds = set(np.atleast_1d(folds).tolist())
        return [i for i, f in self.fold_of.items() if f in folds]

    def split(self, r: int) -> tuple[list, list, list]:
        roles = self.rounds[r]
        return self.ids_in(roles["train"]), self.ids_in(roles["val"]), self.ids_in(roles["test"])


def make_folds(ids: Sequence[str], labels, task: str, k: int = 10, seed: int = 0) -> FoldPlan:
    """Stratified assignment of ``ids`` to ``k`` folds.

    Multi-class: seeded shuffle inside each class, then one round-robin
    pointer runs across all classes so folds differ in size by at most one.
    Multi-label: iterative stratification, rarest label first.
    """
    ids = list(ids)
    if len(ids) < k:
        raise ParameterError(f"need at least {k} records for {k} folds, got {len(ids)}")
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    fold_of: dict = {}
    if task == "multi-class":
        classes = np.unique(labels)
        ptr = 0
        for c in classes:
            members = np.flatnonzero(labels == c)
            for i in rng.permutation(members):
                fold_of[ids[i]] = ptr % k
                ptr += 1
    else:
        if labels.ndim != 2:
            raise ParameterError("multi-label stratification needs an [N, C] label matrix")
        empty = np.flatnonzero(labels.sum(axis=0) == 0)
        if len(empty):
            raise ParameterError(f"label columns {empty.tolist()} have no examples")
        fold_of = _iterative_stratification(ids, labels, k, rng)
    return FoldPlan({i: fold_of[i] for i in ids}, k)


def _iterative_stratification(ids, labels: np.ndarray, k: int, rng) -> dict:
    n = len(ids)
    capacity = np.full(k, n / k)
    label_demand = np.tile(labels.sum(axis=0) / k, (k, 1))  # [k, C]
    remaining = np.ones(n, dtype=bool)
    fold_of = {}

    def assign(i, candidates):
        f = candidates[0] if len(candidates) == 1 else rng.choice(candidates)
        fold_of[ids[i]] = int(f)
        capacity[f] -= 1
        label_demand[f] -= labels[i]
        remaining[i] = False

    while remaining.any():
        counts = labels[remaining].sum(axis=0)
        if not counts.any():
            for i in rng.permutation(np.flatnonzero(remaining)):
                assign(i, np.flatnonzero(capacity == capacity.max()))
            break
        lab = int(np.argmin(np.where(counts > 0, counts, np.inf)))
        for i in rng.permutation(np.flatnonzero(remaining & (labels[:, lab] > 0))):
            d = label_demand[:, lab]
            cand = np.flatnonzero(d == d.max())
            if len(cand) > 1:
                cap = capacity[cand]
                cand = cand[cap == cap.max()]
            assign(i, cand)
    return fold_of


# -- synthetic corpus -------------------------------------------------------

# bpm range, rhythm jitter, P-wave amplitude, age mean/std, male fraction
SYNTH_CLASSES = {
    "AFIB": dict(bpm=(90, 140), jitter=0.25, p_amp=0.0, age=(72.9, 11.7), male=0.58),
    "GSVT": dict(bpm=(150, 190), jitter=0.02, p_amp=0.10, age=(55.4, 20.5), male=0.50),
    "SB": dict(bpm=(40, 57), jitter=0.03, p_amp=0.15, age=(58.3, 14.0), male=0.64),
    "SR": dict(bpm=(62, 95), jitter=0.03, p_amp=0.15, age=(50.8, 19.3), male=0.46),
}
# per-lead (QRS, P, T) gains for leads I, II, V1
_LEAD_GAINS = ((1.0, 1.0, 1.0), (1.4, 1.3, 1.2), (-0.8, 0.6, -0.4))


def synth_recording(class_name: str, seed: int, fs: int = FS):
    """One 3-lead synthetic recording in microvolts plus its metadata."""
    kind = SYNTH_CLASSES[class_name]
    rng = np.random.default_rng(seed)
    bpm = rng.uniform(*kind["bpm"])
    duration = float(rng.choice([8.0, 10.0, 12.0]))
    scale = rng.uniform(600.0, 1400.0)
    first = rng.uniform(0.05, 60.0 / bpm)
    beat_seed = int(rng.integers(2**31))
    leads, peaks = [], None
    for qrs_g, p_g, t_g in _LEAD_GAINS:
        spec = rpeak.SynthSpec(fs=fs, duration_s=duration, bpm=bpm, jitter=kind["jitter"],
                               p_amp=kind["p_amp"] * p_g, qrs_amp=qrs_g, t_amp=0.3 * t_g,
                               seed=beat_seed, first_peak_s=first)
        sig, peaks = rpeak.synthesize_ecg(spec)
        power = np.mean(sig**2)
        snr = rng.uniform(18.0, 30.0)
        sig = sig + rng.normal(0.0, np.sqrt(power / 10 ** (snr / 10)), size=sig.shape)
        t = np.arange(len(sig)) / fs
        sig = sig + 0.2 * np.sin(2 * np.pi * rng.uniform(0.1, 0.4) * t + rng.uniform(0, 2 * np.pi))
        leads.append(scale * sig)
    age = float(np.clip(np.round(rng.normal(*kind["age"])), 0, 100))
    gender = "male" if rng.random() < kind["male"] else "female"
    if rng.random() < 0.05:
        age = None
    if rng.random() < 0.05:
        gender = None
    beats_10s = int(np.sum(peaks < TARGET_LEN))
    return np.array(leads), Demographics(age, gender), beats_10s


def synth_corpus(out_dir, n_classes: int = 4, per_class: int = 16, seed: int = 0) -> Path:
    """Write ``manifest.csv``, ``truth.csv`` and ``sig/*.bin`` under ``out_dir``."""
    if not 2 <= n_classes <= len(SYNTH_CLASSES):
        raise ParameterError(f"classes must lie in [2, {len(SYNTH_CLASSES)}], got {n_classes}")
    if per_class < 1:
        raise ParameterError(f"per-class count must be positive, got {per_class}")
    names = tuple(SYNTH_CLASSES)[:n_classes]
    schema = SCHEMAS["chapman"] if n_classes == 4 else LabelSchema("synthetic", names, "multi-class")
    out_dir = Path(out_dir)
    (out_dir / "sig").mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(seed).spawn(n_classes * per_class)
    rows, truth = [], []
    for ci, name in enumerate(names):
        for j in range(per_class):
            rid = f"{name.lower()}_{j:04d}"
            rec_seed = int(seeds[ci * per_class + j].generate_state(1)[0])
            leads, demo, beats = synth_recording(name, rec_seed)
            rel = f"sig/{rid}.bin"
            write_signal(out_dir / rel, leads, FS)
            desc = RecordDescriptor(rid, out_dir / rel, demo, schema.classes.index(name))
            rows.append(descriptor_row(desc, schema, rel))
            truth.append((rid, name, beats))
    write_manifest(out_dir / "manifest.csv", schema, rows)
    with open(out_dir / "truth.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "label", "beats_10s"])
        w.writerows(truth)
    return out_dir / "manifest.csv"
