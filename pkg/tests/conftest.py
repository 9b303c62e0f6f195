import numpy as np
import pytest

from peaudio.signal_io import AudioBuffer, save_wav

SR = 22050


def harmonic_signal(duration=1.0, f0=220.0, n_harmonics=40, amplitude=0.9,
                    noise=1e-3, sr=SR, seed=42):
    """Voiced-like test signal: harmonic stack with a small noise floor.

    The noise keeps every bin power well above the flatness floor so the
    analysis is exactly scale-invariant, and the harmonics put energy in
    every critical band so the absolute-threshold clamp stays inactive.
    """
    t = np.arange(int(sr * duration)) / sr
    rng = np.random.default_rng(seed)
    sig = np.zeros_like(t)
    for k in range(1, n_harmonics + 1):
        f = f0 * k
        if f < sr / 2 - 200:
            sig += np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)) / k
    sig = amplitude * sig / np.abs(sig).max()
    if noise:
        sig = sig + noise * rng.standard_normal(t.size)
    return np.clip(sig, -1.0, 1.0)


def sine_signal(freq, duration=1.0, amplitude=0.95, sr=SR):
    t = np.arange(int(sr * duration)) / sr
    return amplitude * np.sin(2 * np.pi * freq * t)


@pytest.fixture(scope="session")
def voiced_buffer():
    return AudioBuffer(harmonic_signal(), SR)


@pytest.fixture(scope="session")
def voiced_wav(tmp_path_factory, voiced_buffer):
    path = tmp_path_factory.mktemp("wavs") / "voiced.wav"
    save_wav(voiced_buffer, path)
    return path


@pytest.fixture(scope="session")
def silence_wav(tmp_path_factory):
    path = tmp_path_factory.mktemp("wavs") / "silence.wav"
    save_wav(AudioBuffer(np.zeros(SR), SR), path)
    return path


@pytest.fixture
def sine_wav_factory(tmp_path):
    def make(freq, duration=1.0, amplitude=0.95, name=None):
        path = tmp_path / (name or f"sine{int(freq)}.wav")
        save_wav(AudioBuffer(sine_signal(freq, duration, amplitude), SR), path)
        return path

    return make
