import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from x3ecg import data, dsp
from x3ecg.data import SCHEMAS, FoldPlan, LabelSchema, load_manifest, make_folds, read_signal, write_signal
from x3ecg.errors import FormatError, ParameterError, UnsupportedRateError

CHAPMAN, CPSC = SCHEMAS["chapman"], SCHEMAS["cpsc2018"]
HEADER = "id,path,age,gender,labels\n"


def _manifest(tmp_path, body, schema_line="# schema=chapman\n"):
    p = tmp_path / "m.csv"
    p.write_text(schema_line + HEADER + body)
    return p


# -- schemas ------------------------------------------------------------------

def test_schema_class_orders():
    assert CHAPMAN.classes == ("AFIB", "GSVT", "SB", "SR") and CHAPMAN.task == "multi-class"
    assert CPSC.classes == ("SNR", "AF", "IAVB", "LBBB", "RBBB", "PAC", "PVC", "STD", "STE")
    assert CPSC.task == "multi-label"


def test_multiclass_needs_single_label():
    with pytest.raises(FormatError):
        CHAPMAN.encode_labels(["AFIB", "SR"])


def test_custom_schema_header_round_trip(tmp_path):
    schema = LabelSchema("toy", ("A", "B", "C"), "multi-label")
    p = tmp_path / "m.csv"
    data.write_manifest(p, schema, [["a", "a.bin", "", "", "A|C"]])
    got, descs = load_manifest(p)
    assert got == schema
    np.testing.assert_array_equal(descs[0].labels, [1, 0, 1])


# -- manifest -----------------------------------------------------------------

def test_chapman_row(tmp_path):
    schema, descs = load_manifest(_manifest(tmp_path, "r1,sig/r1.bin,72,m,AFIB\n"))
    d = descs[0]
    assert schema is CHAPMAN
    assert d.labels == 0
    assert d.demographics.age == 72 and d.demographics.gender == "male"
    assert d.path == tmp_path / "sig" / "r1.bin"


def test_cpsc_row_with_missing_age(tmp_path):
    _, descs = load_manifest(_manifest(tmp_path, "r2,sig/r2.bin,,f,AF|RBBB\n", "# schema=cpsc2018\n"))
    d = descs[0]
    assert np.flatnonzero(d.labels).tolist() == [1, 4]
    assert d.demographics.age is None and d.demographics.gender == "female"


def test_explicit_schema_overrides_missing_comment(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(HEADER + "r1,a.bin,50,,SR\n")
    _, descs = load_manifest(p, CHAPMAN)
    assert descs[0].labels == 3


def test_duplicate_id_names_the_id(tmp_path):
    with pytest.raises(FormatError, match="r7"):
        load_manifest(_manifest(tmp_path, "r7,a.bin,1,m,SR\nr7,b.bin,2,f,SB\n"))


def test_unknown_class(tmp_path):
    with pytest.raises(FormatError, match="XYZ"):
        load_manifest(_manifest(tmp_path, "r1,a.bin,1,m,XYZ\n"))


def test_malformed_row_reports_row_number(tmp_path):
    with pytest.raises(FormatError, match="row 4"):
        load_manifest(_manifest(tmp_path, "r1,a.bin,1,m,SR\nr2,b.bin,1,m\n"))


def test_bad_age_is_format_error(tmp_path):
    with pytest.raises(FormatError):
        load_manifest(_manifest(tmp_path, "r1,a.bin,old,m,SR\n"))


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "nope.csv")


def test_missing_schema(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(HEADER + "r1,a.bin,1,m,SR\n")
    with pytest.raises(FormatError):
        load_manifest(p)


def test_bad_header(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("# schema=chapman\nid,file,age,sex,labels\n")
    with pytest.raises(FormatError):
        load_manifest(p)


# -- signal files -------------------------------------------------------------

def _desc(path, labels=0):
    return data.RecordDescriptor("r", path, data.Demographics(), labels)


def test_signal_round_trip_is_bit_identical(tmp_path, rng):
    leads = rng.normal(size=(3, 5000)).astype(np.float32).astype(np.float64)
    write_signal(tmp_path / "s.bin", leads)
    back, fs, done = read_signal(tmp_path / "s.bin")
    assert fs == 500 and not done
    np.testing.assert_array_equal(back, leads)


def test_preprocessed_flag_round_trip(tmp_path, rng):
    write_signal(tmp_path / "s.bin", rng.normal(size=(3, 5000)), preprocessed=True)
    assert read_signal(tmp_path / "s.bin")[2] is True


def test_truncated_file(tmp_path, rng):
    p = tmp_path / "s.bin"
    write_signal(p, rng.normal(size=(3, 100)))
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(FormatError):
        read_signal(p)


def test_bad_magic(tmp_path):
    p = tmp_path / "s.bin"
    p.write_bytes(b"XXXX" + bytes(30))
    with pytest.raises(FormatError):
        read_signal(p)


def test_twelve_lead_6000_samples_loads_as_3x5000(tmp_path, rng):
    write_signal(tmp_path / "s.bin", rng.normal(size=(12, 6000)) * 300)
    rec = data.load_recording(_desc(tmp_path / "s.bin"), n_gt=0)
    assert rec.leads.shape == (3, 5000)
    assert not np.isnan(rec.leads).any()


def test_twelve_lead_selection_order(tmp_path, rng):
    leads = rng.normal(size=(12, 6000))
    write_signal(tmp_path / "s.bin", leads)
    rec = data.load_recording(_desc(tmp_path / "s.bin"), preprocess=False)
    np.testing.assert_array_equal(rec.leads, leads[[0, 1, 6], :5000].astype(np.float32))


def test_short_file_is_zero_padded_before_filtering(tmp_path, rng):
    leads = rng.normal(size=(3, 3000))
    write_signal(tmp_path / "s.bin", leads)
    raw = data.load_recording(_desc(tmp_path / "s.bin"), preprocess=False)
    assert raw.leads.shape == (3, 5000) and np.all(raw.leads[:, 3000:] == 0)
    rec = data.load_recording(_desc(tmp_path / "s.bin"), n_gt=0)
    assert rec.leads.shape == (3, 5000)
    want = dsp.preprocess_leads(leads.astype(np.float32).astype(np.float64)).astype(np.float32)
    np.testing.assert_array_equal(rec.leads, want)


def test_unsupported_rate(tmp_path, rng):
    write_signal(tmp_path / "s.bin", rng.normal(size=(3, 2500)), fs=250)
    with pytest.raises(UnsupportedRateError):
        data.load_recording(_desc(tmp_path / "s.bin"))


def test_wrong_lead_count(rng):
    with pytest.raises(FormatError):
        data.preprocess_raw(rng.normal(size=(5, 5000)), 500)


def test_preprocessed_file_is_not_filtered_again(tmp_path, rng):
    once = data.preprocess_raw(rng.normal(size=(3, 5000)) * 100, 500)
    write_signal(tmp_path / "s.bin", once, preprocessed=True)
    rec = data.load_recording(_desc(tmp_path / "s.bin"), n_gt=3)
    np.testing.assert_array_equal(rec.leads, once)
    assert rec.n_gt == 3


def test_preprocessed_file_must_be_full_size(tmp_path, rng):
    write_signal(tmp_path / "s.bin", rng.normal(size=(3, 4000)), preprocessed=True)
    with pytest.raises(FormatError):
        data.load_recording(_desc(tmp_path / "s.bin"))


def test_standardize_rerun_on_preprocessed_is_near_idempotent(rng):
    once = data.preprocess_raw(rng.normal(size=(3, 5000)), 500)
    again = dsp.standardize(dsp.fix_length(once, 5000))
    assert np.max(np.abs(again - once)) < 1e-6  # float32 storage bounds the residual


# -- dataset / sidecar ----------------------------------------------------------

def test_load_dataset_writes_and_reuses_sidecar(tmp_path):
    manifest = data.synth_corpus(tmp_path / "c", n_classes=2, per_class=3, seed=4)
    data.ngt_path(manifest).unlink(missing_ok=True)
    _, ds = data.load_dataset(manifest)
    cached = data.read_ngt(manifest)
    assert cached == {i: int(n) for i, n in zip(ds.ids, ds.n_gt)}
    data.write_ngt(manifest, {i: 99 for i in ds.ids})
    _, again = data.load_dataset(manifest)
    assert np.all(again.n_gt == 99)


def test_synth_counts_track_truth(synth_manifest):
    import csv
    _, ds = data.load_dataset(synth_manifest)
    with open(synth_manifest.parent / "truth.csv") as f:
        truth = {r["id"]: int(r["beats_10s"]) for r in csv.DictReader(f)}
    err = np.abs(ds.n_gt - np.array([truth[i] for i in ds.ids]))
    assert err.mean() <= 0.5


def test_dataset_subset_and_select(synth_manifest):
    _, ds = data.load_dataset(synth_manifest)
    sub = ds.select_ids([ds.ids[3], ds.ids[0]])
    assert sub.ids == [ds.ids[3], ds.ids[0]]
    np.testing.assert_array_equal(sub.x[0], ds.x[3])
    assert ds.x.shape == (64, 3, 5000) and ds.demog.shape == (64, 11)


# -- folds ----------------------------------------------------------------------

def test_hundred_records_four_classes():
    ids = [f"r{i}" for i in range(100)]
    labels = np.repeat(np.arange(4), 25)
    plan = make_folds(ids, labels, "multi-class", seed=0)
    for f in range(10):
        members = plan.ids_in(f)
        assert len(members) == 10
        per_class = np.bincount([labels[int(i[1:])] for i in members], minlength=4)
        assert set(per_class.tolist()) <= {2, 3}


def test_same_seed_same_plan():
    ids = [f"r{i}" for i in range(40)]
    labels = np.arange(40) % 3
    assert make_folds(ids, labels, "multi-class", seed=7).fold_of == make_folds(ids, labels, "multi-class", seed=7).fold_of


def test_multilabel_rare_label_spread():
    labels = np.zeros((20, 2))
    labels[:, 0] = 1
    labels[:4, 1] = 1
    plan = make_folds([f"r{i}" for i in range(20)], labels, "multi-label", seed=0)
    rare = np.zeros(10, dtype=int)
    for i in range(4):
        rare[plan.fold_of[f"r{i}"]] += 1
    assert set(rare.tolist()) <= {0, 1}
    assert (rare == 1).sum() == 4


def test_rotation_formula():
    plan = FoldPlan({f"r{i}": i for i in range(10)})
    for r in range(10):
        roles = plan.rounds[r]
        assert roles["val"] == (r + 8) % 10 and roles["test"] == (r + 9) % 10
        assert len(roles["train"]) == 8
    assert plan.split(0) == ([f"r{i}" for i in range(8)], ["r8"], ["r9"])


def test_too_few_records():
    with pytest.raises(ParameterError):
        make_folds(["a", "b"], [0, 1], "multi-class")


def test_empty_label_column():
    labels = np.zeros((12, 3))
    labels[:, 0] = 1
    with pytest.raises(ParameterError):
        make_folds([str(i) for i in range(12)], labels, "multi-label")


def _check_plan(plan, ids):
    assert set(plan.fold_of) == set(ids)
    assert all(0 <= f < 10 for f in plan.fold_of.values())
    tested = []
    for r in range(10):
        train, val, test = plan.split(r)
        assert not (set(train) & set(val)) and not (set(train) & set(test)) and not (set(val) & set(test))
        assert sorted(train + val + test) == sorted(ids)
        tested += test
    assert sorted(tested) == sorted(ids)


@settings(max_examples=100)
@given(st.integers(10, 120), st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_multiclass_partition_and_coverage(n, c, seed):
    r = np.random.default_rng(seed)
    labels = r.integers(0, c, n)
    ids = [f"id{i}" for i in range(n)]
    plan = make_folds(ids, labels, "multi-class", seed=seed)
    _check_plan(plan, ids)
    for cls in np.unique(labels):
        counts = np.bincount([plan.fold_of[ids[i]] for i in np.flatnonzero(labels == cls)], minlength=10)
        assert np.max(np.abs(counts - (labels == cls).sum() / 10)) <= 1
    sizes = np.bincount(list(plan.fold_of.values()), minlength=10)
    assert sizes.max() - sizes.min() <= 1


@settings(max_examples=100)
@given(st.integers(10, 80), st.integers(2, 5), st.integers(0, 2**31 - 1))
def test_multilabel_partition_and_coverage(n, c, seed):
    r = np.random.default_rng(seed)
    labels = (r.random((n, c)) < 0.3).astype(float)
    labels[r.integers(0, n, c), np.arange(c)] = 1.0  # every column populated
    ids = [f"id{i}" for i in range(n)]
    _check_plan(make_folds(ids, labels, "multi-label", seed=seed), ids)


# -- synthetic corpus -------------------------------------------------------------

def test_synth_recording_is_deterministic():
    a, da, na = data.synth_recording("SB", 3)
    b, db, nb = data.synth_recording("SB", 3)
    np.testing.assert_array_equal(a, b)
    assert da == db and na == nb


def test_synth_beat_ranges():
    # bounds cover the 8 s recordings, whose padded tail holds no beats
    for name, (lo, hi) in {"SB": (4, 11), "GSVT": (19, 33)}.items():
        for s in range(5):
            _, _, n = data.synth_recording(name, s)
            assert lo <= n <= hi


def test_synth_corpus_layout(synth_manifest):
    schema, descs = load_manifest(synth_manifest)
    assert schema is CHAPMAN and len(descs) == 64
    assert np.bincount([d.labels for d in descs]).tolist() == [16] * 4
    assert all(d.path.is_file() for d in descs)
