"""Signal preprocessing: Butterworth bandpass design, zero-phase filtering,
length fixing, lead selection and per-lead standardization.

All routines work in float64 and act on the last axis, so a single lead
(shape ``(L,)``) and a lead matrix (shape ``(n_leads, L)``) are both accepted.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import LeadNameError, LengthError, ParameterError

LEAD_NAMES = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")
LEAD_INDEX = {name: i for i, name in enumerate(LEAD_NAMES)}
MODEL_LEADS = ("I", "II", "V1")


@dataclass(frozen=True)
class BiquadCascade:
    """Cascade of second-order sections.

    ``sections`` has shape ``(n_sections, 5)`` holding ``b0, b1, b2, a1, a2``
    per row (``a0`` is implicitly 1). ``gain`` is applied once at the input.
    """

    sections: np.ndarray
    gain: float

    def __post_init__(self):
        sections = np.array(self.sections, dtype=np.float64).reshape(-1, 5)
        sections.setflags(write=False)
        object.__setattr__(self, "sections", sections)
        object.__setattr__(self, "gain", float(self.gain))

    @property
    def n_sections(self) -> int:
        return self.sections.shape[0]

    def is_stable(self) -> bool:
        a1, a2 = self.sections[:, 3], self.sections[:, 4]
        return bool(np.all(np.abs(a2) < 1.0) and np.all(np.abs(a1) < 1.0 + a2))

    def response(self, freqs_hz, fs: float) -> np.ndarray:
        """Complex single-pass frequency response at ``freqs_hz``."""
        z = np.exp(1j * 2.0 * np.pi * np.asarray(freqs_hz, dtype=np.float64) / fs)
        zi = 1.0 / z
        h = np.full(z.shape, self.gain, dtype=np.complex128)
        for b0, b1, b2, a1, a2 in self.sections:
            h *= (b0 + b1 * zi + b2 * zi**2) / (1.0 + a1 * zi + a2 * zi**2)
        return h


def _pair_conjugates(poles: np.ndarray) -> list[tuple[complex, complex]]:
    # Complex poles pair with their conjugates; real poles pair with each other.
    upper = sorted((p for p in poles if p.imag > 1e-12), key=lambda p: abs(p))
    real = sorted((p.real for p in poles if abs(p.imag) <= 1e-12))
    pairs = [(p, np.conj(p)) for p in upper]
    if len(real) % 2:
        raise ParameterError("odd number of real poles; cannot form biquads")
    pairs += [(complex(real[i]), complex(real[i + 1])) for i in range(0, len(real), 2)]
    return pairs


def design_butterworth_bandpass(order: int, low_hz: float, high_hz: float, fs: float) -> BiquadCascade:
    """Digital Butterworth bandpass via the prewarped bilinear transform.

    A lowpass prototype of ``order`` poles becomes a bandpass with
    ``2 * order`` poles, realized as ``order`` biquads each holding a zero at
    z = 1 and a zero at z = -1.
    """
    if not isinstance(order, (int, np.integer)) or not 1 <= order <= 8:
        raise ParameterError(f"order must be an integer in [1, 8], got {order!r}")
    if not fs > 0:
        raise ParameterError(f"fs must be positive, got {fs!r}")
    if not 0 < low_hz < high_hz < fs / 2:
        raise ParameterError(
            f"band edges must satisfy 0 < low_hz < high_hz < fs/2 = {fs / 2}, got ({low_hz}, {high_hz})"
        )

    fs2 = 2.0 * fs
    w_lo = fs2 * np.tan(np.pi * low_hz / fs)
    w_hi = fs2 * np.tan(np.pi * high_hz / fs)
    bw = w_hi - w_lo
    w0_sq = w_lo * w_hi

    k = np.arange(1, order + 1)
    proto = np.exp(1j * np.pi * (2 * k + order - 1) / (2 * order))

    # s^2 - p*bw*s + w0^2 = 0 for every prototype pole p
    disc = np.sqrt((proto * bw) ** 2 - 4.0 * w0_sq + 0j)
    analog_poles = np.concatenate([(proto * bw + disc) / 2.0, (proto * bw - disc) / 2.0])

    digital_poles = (fs2 + analog_poles) / (fs2 - analog_poles)
    # analog gain bw^order; each of the order zeros at s=0 contributes fs2
    gain = (bw**order) * (fs2**order) / np.prod(fs2 - analog_poles)
    gain = float(np.real(gain))

    sections = []
    for p1, p2 in _pair_conjugates(digital_poles):
        a1 = float(np.real(-(p1 + p2)))
        a2 = float(np.real(p1 * p2))
        sections.append((1.0, 0.0, -1.0, a1, a2))
    return BiquadCascade(np.array(sections), gain)


def _steady_state_zi(cascade: BiquadCascade) -> np.ndarray:
    """Per-section transposed direct-form-II states for a unit step at the input."""
    zi = np.zeros((cascade.n_sections, 2))
    u = cascade.gain
    for i, (b0, b1, b2, a1, a2) in enumerate(cascade.sections):
        dc = (b0 + b1 + b2) / (1.0 + a1 + a2)
        y = dc * u
        z2 = b2 * u - a2 * y
        z1 = b1 * u - a1 * y + z2
        zi[i] = (z1, z2)
        u = y
    return zi


def _cascade_pass(cascade: BiquadCascade, x: np.ndarray, zi_unit: np.ndarray) -> np.ndarray:
    x0 = x[..., :1]
    y = x * cascade.gain
    for (b0, b1, b2, a1, a2), zi in zip(cascade.sections, zi_unit):
        y, _ = lfilter([b0, b1, b2], [1.0, a1, a2], y, axis=-1, zi=zi * x0)
    return y


def pad_length(cascade: BiquadCascade) -> int:
    return 6 * cascade.n_sections


def _forward_backward(cascade: BiquadCascade, x: np.ndarray, pad: int, zi: np.ndarray) -> np.ndarray:
    left = x[..., pad:0:-1]
    right = x[..., -2 : -pad - 2 : -1]
    xp = np.concatenate([left, x, right], axis=-1)
    y = _cascade_pass(cascade, xp, zi)
    y = _cascade_pass(cascade, y[..., ::-1], zi)[..., ::-1]
    return y[..., pad:-pad]


def filtfilt(cascade: BiquadCascade, x) -> np.ndarray:
    """Zero-phase filtering along the last axis.

    The input is mirror-padded by ``pad_length(cascade)`` samples per side and
    each pass starts from the steady-state filter state scaled by its first
    sample. The forward-backward result is averaged with the backward-forward
    result so the operator commutes with time reversal exactly.

    Mirror (even) padding is used instead of odd reflection: odd reflection
    about a non-zero endpoint injects a DC step into the pad that the 1 Hz
    highpass turns into a slow transient reaching deep into the signal.
    """
    x = np.asarray(x, dtype=np.float64)
    pad = pad_length(cascade)
    if x.shape[-1] <= 3 * pad:
        raise LengthError(f"signal of length {x.shape[-1]} is too short; need more than {3 * pad} samples")
    zi = _steady_state_zi(cascade)
    fb = _forward_backward(cascade, x, pad, zi)
    bf = _forward_backward(cascade, x[..., ::-1], pad, zi)[..., ::-1]
    return 0.5 * (fb + bf)


def fix_length(x, target_len: int) -> np.ndarray:
    """Truncate to the first ``target_len`` samples or zero-pad the tail."""
    if target_len <= 0:
        raise ParameterError(f"target_len must be positive, got {target_len}")
    x = np.asarray(x)
    n = x.shape[-1]
    if n >= target_len:
        return x[..., :target_len].copy()
    out = np.zeros(x.shape[:-1] + (target_len,), dtype=x.dtype)
    out[..., :n] = x
    return out


def select_leads(all_leads, names: Sequence[str] = MODEL_LEADS) -> np.ndarray:
    """Pick rows of a standard-order 12-lead matrix by lead name."""
    all_leads = np.asarray(all_leads)
    idx = []
    for name in names:
        if name not in LEAD_INDEX:
            raise LeadNameError(f"unknown lead {name!r}; valid names: {', '.join(LEAD_NAMES)}")
        idx.append(LEAD_INDEX[name])
    return all_leads[idx]


def standardize(x, min_std: float = 1e-8) -> np.ndarray:
    """Per-lead z-score; leads with std below ``min_std`` become zeros."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    std = x.std(axis=-1, keepdims=True)
    flat = std < min_std
    out = (x - mean) / np.where(flat, 1.0, std)
    return np.where(flat, 0.0, out)


def preprocess_leads(leads, fs: float = 500.0, target_len: int = 5000, band=(1.0, 47.0), order: int = 3,
                     standardize_leads: bool = True) -> np.ndarray:
    """fix_length -> zero-phase bandpass -> (optional) standardize."""
    cascade = design_butterworth_bandpass(order, band[0], band[1], fs)
    y = filtfilt(cascade, fix_length(np.asarray(leads, dtype=np.float64), target_len))
    return standardize(y) if standardize_leads else y
