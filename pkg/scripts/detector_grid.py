"""Sensitivity / PPV / count error of the R-peak detector over a bpm x SNR grid.

    python3 scripts/detector_grid.py --seeds 20
"""
import argparse

import numpy as np

from x3ecg import rpeak


def match(detected, truth, tol):
    """Greedy one-to-one matching within ``tol`` samples -> (tp, fp, fn)."""
    used = np.zeros(len(truth), dtype=bool)
    tp = 0
    for d in detected:
        dist = np.where(used, np.inf, np.abs(truth - d))
        j = int(np.argmin(dist)) if len(truth) else -1
        if j >= 0 and dist[j] <= tol:
            used[j] = True
            tp += 1
    return tp, len(detected) - tp, len(truth) - tp


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tol-ms", type=float, default=50.0)
    args = p.parse_args()
    tol = int(round(args.tol_ms * 500 / 1000))
    print("bpm,snr_db,sensitivity,ppv,count_mae")
    for bpm in (40, 60, 100, 140, 180):
        for snr in (10, 20, None):
            tp = fp = fn = 0
            errs = []
            for s in range(args.seeds):
                x, truth = rpeak.synthesize_ecg(rpeak.SynthSpec(bpm=bpm, noise_snr_db=snr, seed=1000 * bpm + s))
                res = rpeak.detect_rpeaks(x, 500)
                a, b, c = match(res.peak_indices, truth, tol)
                tp, fp, fn = tp + a, fp + b, fn + c
                errs.append(abs(res.count - len(truth)))
            print(f"{bpm},{'inf' if snr is None else snr},{tp / (tp + fn):.4f},{tp / (tp + fp):.4f},"
                  f"{np.mean(errs):.3f}")


if __name__ == "__main__":
    main()
