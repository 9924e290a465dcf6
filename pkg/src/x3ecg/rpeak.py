"""R-peak detection (Pan-Tompkins style) and a synthetic ECG generator.

The detector provides the heartbeat-count targets for the auxiliary
regression head. The generator places Gaussian P/QRS/T waves at known
positions, so it doubles as the detector's test oracle and as the desk-scale
training corpus.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.signal import find_peaks

from . import dsp
from .errors import LengthError, ParameterError

REFRACTORY_S = 0.200
MWI_WINDOW_S = 0.150
REFINE_S = 0.050
LEARNING_S = 2.0
T_WAVE_WINDOW_S = 0.360


@dataclass(frozen=True)
class SynthSpec:
    fs: int = 500
    duration_s: float = 10.0
    bpm: float = 60.0
    jitter: float = 0.0
    p_amp: float = 0.15
    p_width: float = 0.025
    qrs_amp: float = 1.0
    qrs_width: float = 0.010
    t_amp: float = 0.30
    t_width: float = 0.040
    noise_snr_db: Optional[float] = None
    seed: int = 0
    # None draws the first R peak uniformly within the first RR interval
    first_peak_s: Optional[float] = None

    def __post_init__(self):
        if not 20 <= self.bpm <= 300:
            raise ParameterError(f"bpm must lie in [20, 300], got {self.bpm}")
        if self.duration_s <= 0:
            raise ParameterError(f"duration_s must be positive, got {self.duration_s}")
        if min(self.p_width, self.qrs_width, self.t_width) <= 0:
            raise ParameterError("wave widths must be positive")
        if not 0 <= self.jitter < 1:
            raise ParameterError(f"jitter must lie in [0, 1), got {self.jitter}")


@dataclass(frozen=True)
class RPeakResult:
    peak_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def count(self) -> int:
        return int(len(self.peak_indices))


def _gauss(t: np.ndarray, center: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((t - center) / width) ** 2)


def synthesize_ecg(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(signal, true_peak_indices)`` for ``spec``."""
    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.duration_s * spec.fs))
    t = np.arange(n) / spec.fs
    rr = 60.0 / spec.bpm

    first = rng.uniform(0.0, rr) if spec.first_peak_s is None else spec.first_peak_s
    peaks = []
    pos = first
    while pos < spec.duration_s:
        idx = int(round(pos * spec.fs))
        if idx < n:
            peaks.append(idx)
        step = rr * (1.0 + spec.jitter * rng.uniform(-1.0, 1.0)) if spec.jitter else rr
        pos += step
    peaks = np.array(sorted(set(peaks)), dtype=np.int64)

    p_off = -min(0.16, 0.30 * rr)
    t_off = min(0.30, 0.40 * rr)
    sig = np.zeros(n)
    for idx in peaks:
        c = idx / spec.fs
        sig += spec.qrs_amp * _gauss(t, c, spec.qrs_width)
        if spec.p_amp:
            sig += spec.p_amp * _gauss(t, c + p_off, spec.p_width)
        if spec.t_amp:
            sig += spec.t_amp * _gauss(t, c + t_off, spec.t_width)

    if spec.noise_snr_db is not None:
        power = np.mean(sig**2)
        sigma = np.sqrt(power / 10.0 ** (spec.noise_snr_db / 10.0))
        sig = sig + rng.normal(0.0, sigma, size=n)
    return sig, peaks


@lru_cache(maxsize=16)
def _qrs_band(fs: float) -> dsp.BiquadCascade:
    return dsp.design_butterworth_bandpass(2, 5.0, 15.0, fs)


def _five_point_derivative(x: np.ndarray) -> np.ndarray:
    xp = np.pad(x, 2, mode="edge")
    return (2.0 * xp[3:-1] + xp[4:] - xp[:-4] - 2.0 * xp[1:-3]) / 8.0


def detect_rpeaks(x, fs: float = 500) -> RPeakResult:
    """Detect R peaks in a single lead.

    Bandpass 5-15 Hz, 5-point derivative, squaring and 150 ms moving-window
    integration feed an adaptive dual-threshold picker (200 ms refractory,
    search-back at half threshold, T-wave slope test). Each detection is
    moved to the absolute-amplitude maximum of ``x`` within +-50 ms.
    """
    x = np.asarray(x, dtype=np.float64)
    if fs < 100:
        raise ParameterError(f"fs must be at least 100 Hz, got {fs}")
    if x.ndim != 1:
        raise ParameterError(f"expected a single lead, got shape {x.shape}")
    if len(x) < LEARNING_S * fs:
        raise LengthError(f"signal of {len(x)} samples is shorter than {LEARNING_S} s at {fs} Hz")
    if not np.any(x):
        return RPeakResult()

    refractory = int(round(REFRACTORY_S * fs))
    # Extend by 1 s of baseline on both sides: mirror padding inside filtfilt
    # would fold a beat sitting on the boundary onto itself and hide it.
    guard = int(fs)
    xp = np.pad(x, guard, mode="constant", constant_values=np.median(x))
    filtered = dsp.filtfilt(_qrs_band(fs), xp)
    deriv = _five_point_derivative(filtered)
    win = max(1, int(round(MWI_WINDOW_S * fs)))
    mwi = np.convolve(deriv**2, np.ones(win) / win, mode="same")[guard:-guard]
    deriv = deriv[guard:-guard]
    if not np.any(mwi > 0):
        return RPeakResult()

    cand, _ = find_peaks(np.pad(mwi, 1), distance=refractory)
    cand = cand - 1
    learn = mwi[: int(LEARNING_S * fs)]
    spki = 0.25 * learn.max()
    npki = 0.5 * learn.mean()
    thr1 = npki + 0.25 * (spki - npki)

    slope_half = int(round(0.075 * fs))

    def max_slope(i):
        lo, hi = max(0, i - slope_half), min(len(deriv), i + slope_half + 1)
        return np.abs(deriv[lo:hi]).max()

    qrs: list[int] = []
    qrs_slope: list[float] = []
    used = np.zeros(len(cand), dtype=bool)

    def rr_limit():
        if len(qrs) < 2:
            return None
        rr = np.diff(qrs[-9:])
        return 1.66 * rr.mean()

    def search_back(stop):
        nonlocal spki, thr1
        lim = rr_limit()
        if lim is None or stop - qrs[-1] <= lim:
            return
        lo = qrs[-1] + refractory
        hi = stop - refractory
        sel = [j for j in range(len(cand)) if not used[j] and lo <= cand[j] <= hi and mwi[cand[j]] > 0.5 * thr1]
        if not sel:
            return
        j = max(sel, key=lambda k: mwi[cand[k]])
        used[j] = True
        qrs.append(int(cand[j]))
        qrs_slope.append(max_slope(cand[j]))
        spki = 0.25 * mwi[cand[j]] + 0.75 * spki
        thr1 = npki + 0.25 * (spki - npki)

    for j, i in enumerate(cand):
        peak = mwi[i]
        is_qrs = peak > thr1
        if is_qrs and qrs:
            if i - qrs[-1] < refractory:
                is_qrs = False
            elif i - qrs[-1] < T_WAVE_WINDOW_S * fs and max_slope(i) < 0.5 * qrs_slope[-1]:
                is_qrs = False
        if is_qrs:
            if qrs:
                search_back(i)
            used[j] = True
            qrs.append(int(i))
            qrs_slope.append(max_slope(i))
            spki = 0.125 * peak + 0.875 * spki
        else:
            npki = 0.125 * peak + 0.875 * npki
        thr1 = npki + 0.25 * (spki - npki)
    if qrs:
        search_back(len(x))

    return RPeakResult(_refine(x, sorted(qrs), fs, refractory))


def _refine(x: np.ndarray, peaks: list[int], fs: float, refractory: int) -> np.ndarray:
    half = int(round(REFINE_S * fs))
    ax = np.abs(x)
    refined: list[int] = []
    for p in peaks:
        lo, hi = max(0, p - half), min(len(x), p + half + 1)
        r = lo + int(np.argmax(ax[lo:hi]))
        if refined and r - refined[-1] < refractory:
            if ax[r] > ax[refined[-1]]:
                refined[-1] = r
            continue
        refined.append(r)
    return np.array(refined, dtype=np.int64)


def count_heartbeats(recording) -> int:
    """Beat count of lead I (row 0) of a preprocessed recording."""
    return detect_rpeaks(np.asarray(recording.leads)[0], recording.fs).count
