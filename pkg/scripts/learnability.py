"""Overfit the desk model on the 64-recording synthetic corpus and report count-head accuracy.

    python3 scripts/learnability.py --epochs 200 --batch-size 4
"""
import argparse
import tempfile
import time

import numpy as np

from x3ecg import data, train
from x3ecg.model import X3Config, X3ECG


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--lam", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corpus", help="existing manifest; default: synthesize one")
    args = p.parse_args()

    t0 = time.time()
    manifest = args.corpus or data.synth_corpus(tempfile.mkdtemp(prefix="x3ecg-"), 4, 16, seed=args.seed)
    schema, ds = data.load_dataset(manifest)
    tr_ids, va_ids, _ = data.make_folds(ds.ids, ds.y, schema.task, seed=args.seed).split(0)
    tr, va = ds.select_ids(tr_ids), ds.select_ids(va_ids)
    model = X3ECG(X3Config(), seed=args.seed)
    cfg = train.TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lam=args.lam, seed=args.seed)

    def log(row, _):
        if row["epoch"] % 10 == 0 or row["epoch"] == args.epochs - 1:
            print(f"epoch {row['epoch']:3d} lr {row['lr']:.2e} train_cls {row['train_cls']:.4f} "
                  f"val_hc {row['val_hc']:.3f} val_f1 {row['val_macro_f1']:.3f}  [{time.time() - t0:.0f}s]",
                  flush=True)

    res = train.fit(model, tr, va, cfg, [log])
    probs, _, counts = train.predict(model, tr.x, tr.demog)
    print(f"best epoch {res.best_epoch}: train acc {np.mean(probs.argmax(1) == tr.y):.3f}, "
          f"train count MAE {np.mean(np.abs(counts - tr.n_gt)):.2f}, "
          f"val count MAE {res.history[res.best_epoch]['val_hc']:.2f}, {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
