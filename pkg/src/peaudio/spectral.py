"""Short-time spectral analysis: STFT, mel filterbank, cepstrum, Griffin-Lim.

Conventions: one-sided spectra (fft_size/2 + 1 bins), unnormalized
forward DFT (a constant frame of ones with a rectangular window puts
fft_size into bin 0), frame t covering samples [t*hop, t*hop + fft_size)
with no centering pad.
"""

import struct
from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.signal

from .errors import BufferTooShortError, CorruptHeaderError
from .signal_io import AudioBuffer

DEFAULT_SAMPLE_RATE = 22050
DEFAULT_FFT_SIZE = 1024
DEFAULT_HOP = 661  # ~29.98 ms at 22050 Hz
DEFAULT_N_MELS = 80
LOG_FLOOR = 1e-10

SPECTROGRAM_MAGIC = b"PESP"


@dataclass(frozen=True)
class StftConfig:
    """Framing parameters for short-time analysis.

    fft_size must be a power of two and at least hop; window is any name
    scipy.signal.get_window accepts ("hann", "boxcar", "hamming", ...).
    """

    fft_size: int = DEFAULT_FFT_SIZE
    hop: int = DEFAULT_HOP
    window: str = "hann"
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if self.fft_size < 2 or (self.fft_size & (self.fft_size - 1)) != 0:
            raise ValueError(f"fft_size must be a power of two >= 2, got {self.fft_size}")
        if not 1 <= self.hop <= self.fft_size:
            raise ValueError(f"hop must satisfy 1 <= hop <= fft_size, got {self.hop}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def hop_seconds(self) -> float:
        return self.hop / self.sample_rate

    def window_samples(self) -> np.ndarray:
        return np.asarray(
            scipy.signal.get_window(self.window, self.fft_size, fftbins=True), dtype=np.float64
        )

    def bin_frequencies(self) -> np.ndarray:
        """Center frequency of each one-sided bin in Hz."""
        return np.arange(self.bins) * (self.sample_rate / self.fft_size)


@dataclass(frozen=True)
class Spectrogram:
    """Complex short-time spectrum, frames laid out as (n_frames, bins)."""

    frames: np.ndarray
    config: StftConfig

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.complex128)
        object.__setattr__(self, "frames", frames)
        if frames.ndim != 2 or frames.shape[1] != self.config.bins:
            raise ValueError(
                f"frames must be (T, {self.config.bins}) for fft_size {self.config.fft_size}, "
                f"got {frames.shape}"
            )
        if frames.size and not np.isfinite(frames).all():
            raise ValueError("spectrogram contains non-finite values")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def magnitudes(self) -> np.ndarray:
        return np.abs(self.frames)

    def power(self) -> np.ndarray:
        return self.frames.real**2 + self.frames.imag**2

    def scaled(self, gain: float) -> "Spectrogram":
        return Spectrogram(self.frames * gain, self.config)


@dataclass(frozen=True)
class MelSpectrogram:
    """Nonnegative mel-band energies, (n_frames, n_mels)."""

    frames: np.ndarray
    n_mels: int

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        object.__setattr__(self, "frames", frames)
        if frames.ndim != 2 or frames.shape[1] != self.n_mels:
            raise ValueError(f"frames must be (T, {self.n_mels}), got {frames.shape}")
        if frames.size and (not np.isfinite(frames).all() or frames.min() < 0):
            raise ValueError("mel energies must be finite and nonnegative")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def stft(buf: AudioBuffer, cfg: StftConfig) -> Spectrogram:
    """Windowed one-sided STFT without centering.

    Frame t covers samples [t*hop, t*hop + fft_size); trailing samples
    that do not fill a frame are dropped.
    """
    frames = _stft_array(buf.samples, cfg)
    return Spectrogram(frames, cfg)


def _stft_array(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size < cfg.fft_size:
        raise BufferTooShortError(
            f"need at least fft_size={cfg.fft_size} samples, got {x.size}"
        )
    n_frames = 1 + (x.size - cfg.fft_size) // cfg.hop
    window = cfg.window_samples()
    idx = cfg.hop * np.arange(n_frames)[:, None] + np.arange(cfg.fft_size)[None, :]
    return scipy.fft.rfft(x[idx] * window, axis=1)


def istft_array(frames: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Weighted overlap-add inverse of _stft_array.

    Output length is (T-1)*hop + fft_size. Samples where the summed
    squared window is ~0 (frame edges at large hops) come out as 0.
    """
    frames = np.asarray(frames, dtype=np.complex128)
    n_frames = frames.shape[0]
    window = cfg.window_samples()
    n_out = (n_frames - 1) * cfg.hop + cfg.fft_size
    y = np.zeros(n_out)
    wsum = np.zeros(n_out)
    time_frames = scipy.fft.irfft(frames, n=cfg.fft_size, axis=1)
    for t in range(n_frames):
        start = t * cfg.hop
        y[start : start + cfg.fft_size] += window * time_frames[t]
        wsum[start : start + cfg.fft_size] += window * window
    covered = wsum > 1e-12
    y[covered] /= wsum[covered]
    y[~covered] = 0.0
    return y


def hz_to_mel(freq_hz) -> np.ndarray:
    return 2595.0 * np.log10(1.0 + np.asarray(freq_hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel) -> np.ndarray:
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: StftConfig, n_mels: int) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, bins).

    Center frequencies are mel-spaced from 0 Hz to Nyquist. Filters are
    normalized to unit peak, not unit area.
    """
    if n_mels < 1:
        raise ValueError(f"n_mels must be >= 1, got {n_mels}")
    nyquist = cfg.sample_rate / 2.0
    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(nyquist), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    freqs = cfg.bin_frequencies()

    left = hz_points[:-2, None]
    center = hz_points[1:-1, None]
    right = hz_points[2:, None]
    rising = (freqs[None, :] - left) / np.maximum(center - left, 1e-30)
    falling = (right - freqs[None, :]) / np.maximum(right - center, 1e-30)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_from_power(power: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Apply a filterbank to power-spectrum rows; linear in the power."""
    return power @ weights.T


def mel_spectrogram(spec: Spectrogram, n_mels: int = DEFAULT_N_MELS) -> MelSpectrogram:
    """Mel-band energies of the power spectrum |X|^2."""
    weights = mel_filterbank(spec.config, n_mels)
    return MelSpectrogram(mel_from_power(spec.power(), weights), n_mels)


def mel_cepstrum(mel: MelSpectrogram, n_coeffs: int = 25) -> np.ndarray:
    """Orthonormal DCT-II of log(mel + 1e-10), first n_coeffs columns (c0 included)."""
    if not 1 <= n_coeffs <= mel.n_mels:
        raise ValueError(f"n_coeffs must be in [1, {mel.n_mels}], got {n_coeffs}")
    log_mel = np.log(mel.frames + LOG_FLOOR)
    return scipy.fft.dct(log_mel, type=2, norm="ortho", axis=1)[:, :n_coeffs]


def griffin_lim(mag: np.ndarray, cfg: StftConfig, iters: int = 60, seed: int = 0) -> AudioBuffer:
    """Estimate a waveform from STFT magnitudes by iterative phase refinement.

    Starts from seeded random phase; each iteration inverts, re-analyzes
    and restores the target magnitudes. iters=0 inverts the random-phase
    spectrum directly. Deterministic for a fixed seed.

    The overlap-add head and tail (fft_size - hop samples each) have
    partial window coverage, where inconsistent phases can blow up under
    the window-sum division; those regions are zeroed. The result is
    peak-normalized only if it still exceeds full scale.
    """
    mag = np.asarray(mag, dtype=np.float64)
    if iters < 0:
        raise ValueError(f"iters must be >= 0, got {iters}")
    rng = np.random.default_rng(seed)
    phase = rng.uniform(-np.pi, np.pi, mag.shape)
    spec = mag * np.exp(1j * phase)
    for _ in range(iters):
        y = istft_array(spec, cfg)
        reanalysis = _stft_array(y, cfg)
        norm = np.abs(reanalysis)
        unit_phase = np.where(norm > 0, reanalysis / np.where(norm > 0, norm, 1.0), 1.0)
        spec = mag * unit_phase
    y = istft_array(spec, cfg)
    edge = cfg.fft_size - cfg.hop
    if edge and y.size > 2 * edge:
        y[:edge] = 0.0
        y[-edge:] = 0.0
    peak = np.abs(y).max() if y.size else 0.0
    if peak > 1.0:
        y = y / peak
    return AudioBuffer(y, cfg.sample_rate)


def write_spectrogram_bin(spec: Spectrogram, path) -> None:
    """Little-endian binary dump: magic "PESP", u32 T, u32 bins, f64 re/im pairs."""
    frames = spec.frames
    interleaved = np.empty((frames.shape[0], frames.shape[1], 2))
    interleaved[:, :, 0] = frames.real
    interleaved[:, :, 1] = frames.imag
    with open(path, "wb") as fh:
        fh.write(SPECTROGRAM_MAGIC)
        fh.write(struct.pack("<II", frames.shape[0], frames.shape[1]))
        fh.write(interleaved.astype("<f8").tobytes())


def read_spectrogram_bin(path) -> np.ndarray:
    """Read frames written by write_spectrogram_bin; returns a complex (T, bins) array."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != SPECTROGRAM_MAGIC:
        raise CorruptHeaderError(f"{path}: not a PESP spectrogram file")
    n_frames, bins = struct.unpack_from("<II", data, 4)
    expected = 12 + n_frames * bins * 16
    if len(data) < expected:
        raise CorruptHeaderError(f"{path}: truncated spectrogram payload")
    flat = np.frombuffer(data, dtype="<f8", count=n_frames * bins * 2, offset=12)
    pairs = flat.reshape(n_frames, bins, 2)
    return pairs[:, :, 0] + 1j * pairs[:, :, 1]


def write_spectrogram_csv(spec: Spectrogram, path) -> None:
    """CSV dump: one frame per row as re,im pairs, full float precision."""
    with open(path, "w") as fh:
        for row in spec.frames:
            cells = []
            for value in row:
                cells.append("%.17g" % value.real)
                cells.append("%.17g" % value.imag)
            fh.write(",".join(cells) + "\n")


def read_spectrogram_csv(path) -> np.ndarray:
    """Read frames written by write_spectrogram_csv; returns a complex (T, bins) array."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            cells = np.array([float(c) for c in line.split(",")])
            if cells.size % 2:
                raise CorruptHeaderError(f"{path}: odd cell count, expected re,im pairs")
            rows.append(cells[0::2] + 1j * cells[1::2])
    if not rows:
        return np.zeros((0, 0), dtype=np.complex128)
    return np.vstack(rows)
