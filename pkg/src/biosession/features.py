"""Physiological feature extraction.

HR and BF get descriptive statistics; RR additionally gets time-domain HRV
indices and Welch band powers; BF additionally gets respiration-peak
features from a Savitzky-Golay smoothed series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import TooShort, WindowTooSmall
from .session import Session, SignalKind, SignalTrace

LF_BAND = (0.04, 0.15)
HF_BAND = (0.15, 0.4)
WELCH_SEGMENT_S = 256
WELCH_OVERLAP = 0.5
WELCH_MIN_SAMPLES = 64
SAVGOL_WINDOW_S = 30
SAVGOL_ORDER = 5
PEAK_HEIGHT_K = 2.0
PEAK_PROMINENCE_K = 0.5
PNN_THRESHOLD_MS = 50.0

_EPS = 1e-12

#: Closed registry of feature names, in export order.
FEATURE_NAMES: tuple[str, ...] = (
    "hr_mean", "hr_sd", "hr_cv", "hr_kurtosis",
    "rr_mean", "rr_sd", "rr_cv", "rr_kurtosis",
    "rr_sdnn", "rr_sdsd", "rr_rmssd", "rr_pnn50",
    "rr_tp", "rr_lf", "rr_hf", "rr_lf_hf",
    "bf_mean", "bf_sd", "bf_cv", "bf_kurtosis",
    "bf_prate", "bf_mean_prominence", "bf_mean_width",
)


@dataclass(frozen=True)
class DescriptiveStats:
    mean: float
    sd: float
    cv: float  # nan when |mean| < 1e-12
    kurtosis: float  # Fisher excess; nan for constant input

    @property
    def cv_defined(self) -> bool:
        return not math.isnan(self.cv)


@dataclass(frozen=True)
class HrvTime:
    sdnn: float
    sdsd: float
    rmssd: float
    pnn50: float


@dataclass(frozen=True)
class Spectrum:
    freqs: np.ndarray
    density: np.ndarray
    short_series: bool = False  # fewer samples than one Welch segment

    @property
    def df(self) -> float:
        return float(self.freqs[1] - self.freqs[0]) if self.freqs.size > 1 else 0.0


@dataclass(frozen=True)
class SpectralPowers:
    tp: float
    lf: float
    hf: float
    lf_hf_ratio: float  # nan when hf < 1e-12


@dataclass(frozen=True)
class RespirationPeaks:
    indices: np.ndarray
    prominences: np.ndarray
    widths_s: np.ndarray
    prate: float
    mean_prominence: float
    mean_width: float
    duration_s: float

    @property
    def count(self) -> int:
        return int(self.indices.size)


@dataclass
class FeatureVector:
    subject_id: str
    session_index: int
    segment: str
    duration_s: float
    values: dict[str, float] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        unknown = set(self.values) - set(FEATURE_NAMES)
        if unknown:
            raise KeyError(f"features outside the registry: {sorted(unknown)}")

    def get(self, name: str, default=None):
        return self.values.get(name, default)


# ---------------------------------------------------------------------------

def descriptive(series) -> DescriptiveStats:
    x = np.asarray(series, dtype=float)
    if x.size < 2:
        raise TooShort("descriptive statistics need at least 2 values")
    mean = float(np.mean(x))
    sd = float(np.std(x, ddof=1))
    cv = sd / mean if abs(mean) >= _EPS else math.nan
    dev = x - mean
    m2 = float(np.mean(dev ** 2))
    kurt = float(np.mean(dev ** 4)) / m2 ** 2 - 3.0 if m2 > 0 else math.nan
    return DescriptiveStats(mean=mean, sd=sd, cv=cv, kurtosis=kurt)


def hrv_time(rr) -> HrvTime:
    """SDNN, SDSD, RMSSD (ms) and pNN50 (%) from successive intervals in ms.

    SDNN is the sample SD (n - 1) of the intervals.  SDSD is the population
    SD of the successive differences, so that rmssd**2 == sdsd**2 + mean(d)**2
    holds exactly.
    """
    x = np.asarray(rr, dtype=float)
    if x.size < 3:
        raise TooShort("HRV indices need at least 3 intervals")
    d = np.diff(x)
    return HrvTime(
        sdnn=float(np.std(x, ddof=1)),
        sdsd=float(np.std(d)),
        rmssd=float(np.sqrt(np.mean(d * d))),
        pnn50=float(100.0 * np.count_nonzero(np.abs(d) > PNN_THRESHOLD_MS) / d.size),
    )


def welch_psd(series, fs: float = 1.0, seg_len_s: float = WELCH_SEGMENT_S,
              overlap: float = WELCH_OVERLAP) -> Spectrum:
    """One-sided Welch PSD with Hann taper and per-segment mean removal.

    Series shorter than one segment fall back to a single full-length segment
    and are flagged ``short_series``.
    """
    x = np.asarray(series, dtype=float)
    if x.size < WELCH_MIN_SAMPLES:
        raise TooShort(f"Welch PSD needs at least {WELCH_MIN_SAMPLES} samples, got {x.size}")
    nperseg = int(round(seg_len_s * fs))
    short = x.size < nperseg
    if short:
        nperseg = x.size
    freqs, dens = signal.welch(x, fs=fs, window="hann", nperseg=nperseg,
                               noverlap=int(overlap * nperseg), detrend="constant",
                               scaling="density", average="mean")
    return Spectrum(freqs=freqs, density=dens, short_series=short)


def band_power(spec: Spectrum, lo: float, hi: float) -> float:
    """Rectangle-rule power over the half-open band ``[lo, hi)``."""
    sel = (spec.freqs >= lo) & (spec.freqs < hi)
    return float(np.sum(spec.density[sel]) * spec.df)


def band_powers(spec: Spectrum) -> SpectralPowers:
    tp = float(np.sum(spec.density[spec.freqs > 0]) * spec.df)
    lf = band_power(spec, *LF_BAND)
    hf = band_power(spec, *HF_BAND)
    ratio = lf / hf if hf >= _EPS else math.nan
    return SpectralPowers(tp=tp, lf=lf, hf=hf, lf_hf_ratio=ratio)


def savgol_window(window_s: float, rate_hz: float = 1.0) -> int:
    n = int(round(window_s * rate_hz))
    return n if n % 2 else n + 1


def savgol(series, window_s: float = SAVGOL_WINDOW_S, poly_order: int = SAVGOL_ORDER,
           rate_hz: float = 1.0) -> np.ndarray:
    """Savitzky-Golay smoothing.

    Interior points use the centred window.  Within half a window of either
    end the polynomial is fitted to the truncated window that fits inside
    the series and evaluated at the point itself.
    """
    x = np.asarray(series, dtype=float)
    win = savgol_window(window_s, rate_hz)
    if win <= poly_order:
        raise WindowTooSmall(f"window of {win} samples must exceed poly order {poly_order}")
    if x.size < win:
        raise TooShort(f"series of {x.size} samples is shorter than the {win}-sample window")
    half = win // 2
    out = signal.savgol_filter(x, win, poly_order, mode="nearest")
    for i in (*range(half), *range(x.size - half, x.size)):
        lo, hi = max(0, i - half), min(x.size, i + half + 1)
        offs = (np.arange(lo, hi) - i) / half
        V = np.vander(offs, poly_order + 1, increasing=True)
        coef, *_ = np.linalg.lstsq(V, x[lo:hi], rcond=None)
        out[i] = coef[0]
    return out


def find_peaks(series, height_k: float = PEAK_HEIGHT_K,
               prominence_k: float = PEAK_PROMINENCE_K, rate_hz: float = 1.0) -> RespirationPeaks:
    """Peaks at least ``height_k`` SD above the series floor and ``prominence_k`` SD prominent.

    SD is the sample SD of ``series`` itself.  Height is measured from the
    series minimum, which makes the rule independent of any constant offset.
    Widths are taken at half prominence and reported in seconds.
    """
    x = np.asarray(series, dtype=float)
    if x.size < 10:
        raise TooShort("peak detection needs at least 10 samples")
    duration = x.size / rate_hz
    sd = float(np.std(x, ddof=1))
    empty = np.array([], dtype=float)
    if not sd > 0:
        return RespirationPeaks(np.array([], dtype=int), empty, empty, 0.0,
                                math.nan, math.nan, duration)
    idx, props = signal.find_peaks(x, height=float(x.min()) + height_k * sd,
                                   prominence=prominence_k * sd, width=(None, None),
                                   rel_height=0.5)
    prom = props["prominences"]
    widths = props["widths"] / rate_hz
    return RespirationPeaks(
        indices=idx,
        prominences=prom,
        widths_s=widths,
        prate=60.0 * idx.size / duration,
        mean_prominence=float(prom.mean()) if idx.size else math.nan,
        mean_width=float(widths.mean()) if idx.size else math.nan,
        duration_s=duration,
    )


# ---------------------------------------------------------------------------

def _put(values: dict, name: str, v: float):
    if v is not None and math.isfinite(v):
        values[name] = float(v)


def _descriptive_into(values, flags, prefix, x):
    d = descriptive(x)
    _put(values, f"{prefix}_mean", d.mean)
    _put(values, f"{prefix}_sd", d.sd)
    _put(values, f"{prefix}_cv", d.cv)
    _put(values, f"{prefix}_kurtosis", d.kurtosis)
    if not d.cv_defined:
        flags.append(f"{prefix}_cv_undefined")


def segment_features(traces: dict[SignalKind, np.ndarray], rate_hz: float = 1.0):
    """Feature values and flags for one segment given its 1 Hz samples per kind."""
    values: dict[str, float] = {}
    flags: list[str] = []
    hr = traces.get(SignalKind.HR)
    if hr is not None:
        _descriptive_into(values, flags, "hr", hr)
    rr = traces.get(SignalKind.RR)
    if rr is not None:
        _descriptive_into(values, flags, "rr", rr)
        h = hrv_time(rr)
        _put(values, "rr_sdnn", h.sdnn)
        _put(values, "rr_sdsd", h.sdsd)
        _put(values, "rr_rmssd", h.rmssd)
        _put(values, "rr_pnn50", h.pnn50)
        if rr.size >= WELCH_MIN_SAMPLES:
            spec = welch_psd(rr, fs=rate_hz)
            p = band_powers(spec)
            _put(values, "rr_tp", p.tp)
            _put(values, "rr_lf", p.lf)
            _put(values, "rr_hf", p.hf)
            _put(values, "rr_lf_hf", p.lf_hf_ratio)
            if spec.short_series:
                flags.append("welch_single_segment")
            if math.isnan(p.lf_hf_ratio):
                flags.append("rr_lf_hf_undefined")
        else:
            flags.append("rr_spectrum_too_short")
    bf = traces.get(SignalKind.BF)
    if bf is not None:
        _descriptive_into(values, flags, "bf", bf)
        if bf.size >= savgol_window(SAVGOL_WINDOW_S, rate_hz):
            pk = find_peaks(savgol(bf, rate_hz=rate_hz), rate_hz=rate_hz)
            _put(values, "bf_prate", pk.prate)
            _put(values, "bf_mean_prominence", pk.mean_prominence)
            _put(values, "bf_mean_width", pk.mean_width)
            if pk.count == 0:
                flags.append("bf_no_peaks")
        else:
            flags.append("bf_too_short_for_smoothing")
    return values, flags


def _window(trace: SignalTrace, start: float, end: float) -> np.ndarray:
    t = trace.times
    sel = (t >= start - 1e-9) & (t < end - 1e-9)
    return trace.samples[sel]


def session_segments(session: Session, per: str = "session") -> list[tuple[str, float, float]]:
    """(label, start, end) windows for ``per`` in {"session", "scenario"}.

    The session-level window spans all activity phases, from the first one's
    start to the last one's end; with no activity phases it is the whole
    recording.
    """
    per = per.lower()
    acts = session.activity_phases()
    if per == "scenario":
        return [(p.label.value, p.start_s, p.end_s) for p in acts]
    if per != "session":
        raise ValueError(f"per must be 'session' or 'scenario', got {per!r}")
    if acts:
        return [("Session", acts[0].start_s, acts[-1].end_s)]
    return [("Session", 0.0, session.duration_s)]


def session_features(session: Session, per: str = "session") -> list[FeatureVector]:
    """One :class:`FeatureVector` per requested segment of a preprocessed session."""
    out = []
    for label, start, end in session_segments(session, per):
        segs = {}
        for t in session.traces:
            if t.rate_hz != 1.0:
                raise ValueError(f"{t.kind.value} trace is at {t.rate_hz} Hz; preprocess first")
            seg = _window(t, start, end)
            if seg.size >= 3:
                segs[t.kind] = seg
        values, flags = segment_features(segs)
        out.append(FeatureVector(subject_id=session.meta.subject_id,
                                 session_index=session.session_index, segment=label,
                                 duration_s=end - start, values=values, flags=flags))
    return out
