"""Convert WFDB-style 12-lead recordings (e.g. Chapman / CPSC-2018 exports) to the manifest format.

Reads ``<record>.hea`` / ``<record>.mat``-style pairs via the optional ``wfdb``
package and a label CSV ``record,age,gender,labels`` you prepare from the
dataset's metadata (labels ``|``-separated, using the schema's class names).

    pip install wfdb
    python3 scripts/convert_wfdb.py --records DIR --labels labels.csv --schema chapman --out corpus/
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from x3ecg import data


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--records", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--schema", choices=sorted(data.SCHEMAS), required=True)
    p.add_argument("--out", required=True)
    args = p.parse_args()

    import wfdb  # optional dependency, only needed for conversion

    out = Path(args.out)
    (out / "sig").mkdir(parents=True, exist_ok=True)
    rows = []
    with open(args.labels, newline="") as f:
        for rec in csv.DictReader(f):
            sig = wfdb.rdrecord(str(Path(args.records) / rec["record"]))
            leads = np.asarray(sig.p_signal, dtype=np.float64).T
            names = [n.upper() for n in sig.sig_name]
            order = [names.index(n.upper()) for n in ("I", "II", "III", "aVR", "aVL", "aVF",
                                                        "V1", "V2", "V3", "V4", "V5", "V6")]
            rel = f"sig/{rec['record']}.bin"
            data.write_signal(out / rel, np.nan_to_num(leads[order]), int(sig.fs))
            rows.append([rec["record"], rel, rec["age"], rec["gender"], rec["labels"]])
    data.write_manifest(out / "manifest.csv", data.SCHEMAS[args.schema], rows)
    print(f"wrote {len(rows)} recordings to {out / 'manifest.csv'}")


if __name__ == "__main__":
    main()
