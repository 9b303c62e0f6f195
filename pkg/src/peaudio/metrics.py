"""Objective evaluation of synthesized audio against a reference.

Covers mel-cepstral distortion and the F0-track metrics (RMSE on
co-voiced frames, voiced/unvoiced disagreement rate, Pearson
correlation), plus an autocorrelation pitch extractor so raw WAV pairs
can be compared directly. Frames are compared index-aligned, no DTW.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import LengthMismatchError, MismatchWarning, ShapeMismatchError
from .signal_io import AudioBuffer, load_wav, resample
from .spectral import StftConfig, mel_cepstrum, mel_spectrogram, stft

MCD_CONSTANT = 10.0 * math.sqrt(2.0) / math.log(10.0)

F0_MIN_HZ = 50.0
F0_MAX_HZ = 1100.0
VOICING_AUTOCORR_THRESHOLD = 0.45
VOICING_RMS_GATE = 0.01  # fraction of the utterance's peak frame RMS
F0_WINDOW_SECONDS = 0.04


@dataclass(frozen=True)
class F0Track:
    """Fundamental frequency per frame, 0 where unvoiced."""

    f0: np.ndarray
    voiced: np.ndarray
    hop_seconds: float

    def __post_init__(self):
        f0 = np.asarray(self.f0, dtype=np.float64)
        voiced = np.asarray(self.voiced, dtype=bool)
        object.__setattr__(self, "f0", f0)
        object.__setattr__(self, "voiced", voiced)
        if f0.shape != voiced.shape or f0.ndim != 1:
            raise ValueError("f0 and voiced must be matching 1-D arrays")
        if np.any((f0 > 0) != voiced):
            raise ValueError("f0 must be positive exactly on voiced frames")
        if np.any(voiced) and (
            f0[voiced].min() < F0_MIN_HZ - 1e-9 or f0[voiced].max() > F0_MAX_HZ + 1e-9
        ):
            raise ValueError(f"voiced f0 must lie in [{F0_MIN_HZ}, {F0_MAX_HZ}] Hz")

    def __len__(self) -> int:
        return self.f0.size


@dataclass(frozen=True)
class MetricReport:
    """One utterance pair's objective scores; NaN marks undefined values."""

    mcd_db: float
    f0_rmse_hz: float
    vuv_error_pct: float
    f0_corr: float
    frames_compared: int

    def to_json_dict(self) -> dict:
        def clean(value):
            return float(value) if np.isfinite(value) else None

        return {
            "mcd_db": clean(self.mcd_db),
            "f0_rmse_hz": clean(self.f0_rmse_hz),
            "vuv_error_pct": clean(self.vuv_error_pct),
            "f0_corr": clean(self.f0_corr),
            "frames_compared": self.frames_compared,
        }


def _normalized_autocorr(frame: np.ndarray) -> np.ndarray:
    """Autocorrelation of one frame, each lag normalized by the energies
    of the two overlapping segments; zero-energy overlaps give 0."""
    n = frame.size
    size = scipy.fft.next_fast_len(2 * n)
    spectrum = scipy.fft.rfft(frame, size)
    raw = scipy.fft.irfft(spectrum * np.conj(spectrum), size)[:n]
    squares = np.cumsum(frame * frame)
    total = squares[-1]
    lags = np.arange(n)
    energy_head = squares[n - 1 - lags]
    energy_tail = total - np.concatenate(([0.0], squares[:-1]))
    denom = np.sqrt(energy_head * energy_tail)
    out = np.zeros(n)
    good = denom > 0
    out[good] = raw[good] / denom[good]
    return out


def extract_f0(
    buf: AudioBuffer,
    hop_seconds: float = 0.03,
    window_seconds: float = F0_WINDOW_SECONDS,
    fmin: float = F0_MIN_HZ,
    fmax: float = F0_MAX_HZ,
    voicing_threshold: float = VOICING_AUTOCORR_THRESHOLD,
    rms_gate: float = VOICING_RMS_GATE,
) -> F0Track:
    """Autocorrelation pitch tracker.

    A frame is voiced when its best normalized autocorrelation peak in
    the candidate range reaches voicing_threshold and its RMS clears
    rms_gate times the utterance's peak frame RMS. Among lags within 2%
    of the best peak the smallest wins, which suppresses subharmonic
    (octave-down) picks when an integer multiple of the period happens
    to align better with the lag grid. The chosen lag is refined by
    parabolic interpolation before converting to Hz.
    """
    rate = buf.sample_rate
    window = max(2, round(window_seconds * rate))
    hop = max(1, round(hop_seconds * rate))
    x = buf.samples
    n_frames = 1 + (x.size - window) // hop if x.size >= window else 0
    f0 = np.zeros(max(n_frames, 0))
    voiced = np.zeros(max(n_frames, 0), dtype=bool)
    if n_frames <= 0:
        return F0Track(f0, voiced, hop_seconds)

    idx = hop * np.arange(n_frames)[:, None] + np.arange(window)[None, :]
    frames = x[idx]
    rms = np.sqrt(np.mean(frames**2, axis=1))
    peak_rms = rms.max()

    lag_min = max(1, math.ceil(rate / fmax))
    lag_max = min(window - 1, math.floor(rate / fmin))
    if lag_max <= lag_min:
        return F0Track(f0, voiced, hop_seconds)

    for t in range(n_frames):
        if peak_rms == 0 or rms[t] < rms_gate * peak_rms:
            continue
        corr = _normalized_autocorr(frames[t])
        candidates = corr[lag_min : lag_max + 1]
        best = candidates.max()
        if best < voicing_threshold:
            continue
        lag = lag_min + int(np.argmax(candidates >= 0.98 * best))
        refined = float(lag)
        if 1 <= lag < window - 1:
            left, mid, right = corr[lag - 1], corr[lag], corr[lag + 1]
            denom = left - 2.0 * mid + right
            if denom < 0:
                refined += 0.5 * (left - right) / denom
        voiced[t] = True
        f0[t] = min(max(rate / refined, fmin), fmax)

    return F0Track(f0, voiced, hop_seconds)


def mcd(ref: np.ndarray, pred: np.ndarray) -> float:
    """Mel-cepstral distortion in dB, c0 excluded.

    (10*sqrt(2)/ln 10) times the mean over frames of the Euclidean
    distance across coefficients 1..K-1. Frames are index-aligned.
    """
    ref = np.asarray(ref, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if ref.shape != pred.shape or ref.ndim != 2:
        raise ShapeMismatchError(f"cepstra shapes differ: {ref.shape} vs {pred.shape}")
    if ref.shape[1] < 2:
        raise ShapeMismatchError("need at least 2 coefficients (c0 is excluded)")
    if ref.shape[0] == 0:
        raise ShapeMismatchError("no frames to compare")
    diff = ref[:, 1:] - pred[:, 1:]
    return MCD_CONSTANT * float(np.mean(np.sqrt(np.sum(diff * diff, axis=1))))


def f0_metrics(ref: F0Track, pred: F0Track) -> tuple[float, float, float]:
    """(f0_rmse_hz, vuv_error_pct, f0_corr) for two equal-length tracks.

    RMSE and correlation use only frames voiced in both tracks; the
    correlation is NaN with fewer than 2 such frames or zero variance.
    """
    if len(ref) != len(pred):
        raise LengthMismatchError(f"track lengths differ: {len(ref)} vs {len(pred)}")
    if len(ref) == 0:
        raise LengthMismatchError("empty tracks")
    vuv_error = 100.0 * float(np.mean(ref.voiced != pred.voiced))
    both = ref.voiced & pred.voiced
    if not both.any():
        return float("nan"), vuv_error, float("nan")
    diff = ref.f0[both] - pred.f0[both]
    rmse = float(np.sqrt(np.mean(diff * diff)))
    if both.sum() < 2:
        return rmse, vuv_error, float("nan")
    a = ref.f0[both]
    b = pred.f0[both]
    sa = a.std()
    sb = b.std()
    if sa == 0 or sb == 0:
        return rmse, vuv_error, float("nan")
    corr = float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))
    return rmse, vuv_error, max(-1.0, min(1.0, corr))


def compare(
    ref_path,
    pred_path,
    cfg: StftConfig | None = None,
    n_mels: int = 80,
    n_coeffs: int = 25,
) -> MetricReport:
    """Load two WAVs and score prediction against reference.

    Both files are resampled to the config rate; features are compared
    over the shorter one's frames. A MismatchWarning is issued when the
    frame counts differ by more than 5%.
    """
    cfg = cfg or StftConfig()
    ref_buf = resample(load_wav(ref_path), cfg.sample_rate)
    pred_buf = resample(load_wav(pred_path), cfg.sample_rate)

    ref_cep = mel_cepstrum(mel_spectrogram(stft(ref_buf, cfg), n_mels), n_coeffs)
    pred_cep = mel_cepstrum(mel_spectrogram(stft(pred_buf, cfg), n_mels), n_coeffs)
    frames = min(ref_cep.shape[0], pred_cep.shape[0])
    longest = max(ref_cep.shape[0], pred_cep.shape[0])
    if longest and (longest - frames) / longest > 0.05:
        warnings.warn(
            f"frame counts differ by more than 5% ({ref_cep.shape[0]} vs {pred_cep.shape[0]})",
            MismatchWarning,
            stacklevel=2,
        )
    mcd_db = mcd(ref_cep[:frames], pred_cep[:frames])

    ref_track = extract_f0(ref_buf, hop_seconds=cfg.hop_seconds)
    pred_track = extract_f0(pred_buf, hop_seconds=cfg.hop_seconds)
    n_f0 = min(len(ref_track), len(pred_track))
    rmse, vuv, corr = f0_metrics(
        F0Track(ref_track.f0[:n_f0], ref_track.voiced[:n_f0], ref_track.hop_seconds),
        F0Track(pred_track.f0[:n_f0], pred_track.voiced[:n_f0], pred_track.hop_seconds),
    )
    return MetricReport(
        mcd_db=mcd_db,
        f0_rmse_hz=rmse,
        vuv_error_pct=vuv,
        f0_corr=corr,
        frames_compared=frames,
    )
