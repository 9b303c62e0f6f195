"""Perceptual entropy, its loss interpolation, and exact spectrum gradients.

Per frame, each bin contributes
    log2(2*|Re|/step + 1) + log2(2*|Im|/step + 1)
bits, where step = sqrt(6*threshold/k) is the quantizer step its band's
masking threshold allows. The loss 1/(1 + mean PE) rewards spectra that
carry more perceptible information; gradients are hand-derived
reverse-mode and flow through the whole masking pipeline (spreading,
flatness, offsets, renormalization) unless stopped at the threshold.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateThresholdError, DivergenceError, ShapeMismatchError
from .psychoacoustic import (
    SFM_DB_MAX,
    SFM_POWER_FLOOR,
    BarkAnalysis,
    BarkBandLayout,
    absolute_threshold,
    analyze,
    bark_layout,
    spreading_gain,
    spreading_kernel,
)
from .signal_io import AudioBuffer
from .spectral import MelSpectrogram, Spectrogram, StftConfig, mel_filterbank, stft

_LN2 = float(np.log(2.0))
_LN10 = float(np.log(10.0))


@dataclass(frozen=True)
class PEResult:
    """Perceptual entropy per frame (bits), its mean, and the derived loss."""

    per_frame: np.ndarray
    mean_pe: float
    loss_pe: float

    def to_json_dict(self) -> dict:
        return {
            "per_frame_pe": [float(v) for v in self.per_frame],
            "mean_pe": self.mean_pe,
            "loss_pe": self.loss_pe,
        }


@dataclass(frozen=True)
class LossConfig:
    """Weights for the interpolated objective.

    lam scales the perceptual-entropy loss; the two flags choose which
    L1 terms enter the synthesis loss in toy_fit.
    """

    lam: float = 0.01
    include_mel_l1: bool = True
    include_linear_l1: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")


@dataclass
class GradientReport:
    """Loss partials w.r.t. the spectrum, packed re+1j*im per bin.

    max_rel_err_vs_fd stays NaN until a finite-difference check fills it.
    """

    grad: np.ndarray
    max_rel_err_vs_fd: float = float("nan")

    def to_json_dict(self) -> dict:
        finite = np.isfinite(self.max_rel_err_vs_fd)
        return {
            "max_rel_err_vs_fd": float(self.max_rel_err_vs_fd) if finite else None,
            "grad_shape": list(self.grad.shape),
            "grad_max_abs": float(np.abs(self.grad).max()) if self.grad.size else 0.0,
        }


def quantizer_steps(analysis: BarkAnalysis) -> np.ndarray:
    """Per-band quantizer step sqrt(6*threshold/k), shape (T, n)."""
    return np.sqrt(6.0 * analysis.masking_threshold / analysis.layout.k)


def pe_loss(mean_pe: float) -> float:
    """1/(1 + mean PE); 1 for silence, approaching 0 as PE grows."""
    return 1.0 / (1.0 + mean_pe)


def perceptual_entropy(spec: Spectrogram, analysis: BarkAnalysis) -> PEResult:
    """Bits of perceptible information per frame under the masking thresholds."""
    if analysis.layout.n_bins != spec.config.bins:
        raise ValueError("analysis layout does not match the spectrogram bins")
    if analysis.n_frames != spec.n_frames:
        raise ValueError("analysis frame count does not match the spectrogram")
    if np.any(analysis.masking_threshold <= 0):
        raise DegenerateThresholdError("masking threshold must be strictly positive")

    steps = quantizer_steps(analysis)[:, analysis.layout.band_of_bin()]
    bits = np.log2(2.0 * np.abs(spec.frames.real) / steps + 1.0)
    bits += np.log2(2.0 * np.abs(spec.frames.imag) / steps + 1.0)
    per_frame = bits.sum(axis=1)
    mean_pe = float(per_frame.mean()) if per_frame.size else 0.0
    return PEResult(per_frame=per_frame, mean_pe=mean_pe, loss_pe=pe_loss(mean_pe))


def _as_frames(x) -> np.ndarray:
    if isinstance(x, MelSpectrogram):
        return x.frames
    if isinstance(x, Spectrogram):
        return x.frames
    return np.asarray(x)


def sing_loss(pred_linear, ref_linear, pred_mel, ref_mel) -> float:
    """Mean absolute error of the linear pair plus that of the mel pair."""
    pl, rl = _as_frames(pred_linear), _as_frames(ref_linear)
    pm, rm = _as_frames(pred_mel), _as_frames(ref_mel)
    if pl.shape != rl.shape:
        raise ShapeMismatchError(f"linear shapes differ: {pl.shape} vs {rl.shape}")
    if pm.shape != rm.shape:
        raise ShapeMismatchError(f"mel shapes differ: {pm.shape} vs {rm.shape}")
    return float(np.mean(np.abs(pl - rl)) + np.mean(np.abs(pm - rm)))


def total_loss(l_sing: float, pe_result: PEResult, cfg: LossConfig) -> float:
    """Synthesis loss plus lam times the PE loss."""
    return l_sing + cfg.lam * pe_result.loss_pe


def _reconstruct(spec: Spectrogram, phase_source: Spectrogram | None) -> Spectrogram:
    if phase_source is None:
        return spec
    if phase_source.frames.shape != spec.frames.shape:
        raise ShapeMismatchError("phase source shape does not match the spectrum")
    phase = np.angle(phase_source.frames)
    return Spectrogram(np.abs(spec.frames) * np.exp(1j * phase), spec.config)


def loss_pe_of(spec: Spectrogram, layout: BarkBandLayout) -> float:
    """Forward pass only: the PE loss of a complex spectrogram."""
    return perceptual_entropy(spec, analyze(spec, layout)).loss_pe


def pe_gradient(
    spec: Spectrogram,
    layout: BarkBandLayout,
    phase_source: Spectrogram | None = None,
    through_thresholds: bool = True,
) -> GradientReport:
    """Exact partials of the PE loss w.r.t. every Re and Im of the spectrum.

    When phase_source is given, spec is treated as magnitude-only and the
    complex spectrum is rebuilt as |spec| * exp(i*phase) first; partials
    are w.r.t. the rebuilt components. With through_thresholds=False the
    masking thresholds are treated as constants (ablation switch).

    Subgradient conventions at the kinks: d|x|/dx = 0 at x = 0, the
    tonality min(u, 1) keeps the u-branch derivative at u = 1, and the
    max() clamps (threshold floor, flatness power floor) follow whichever
    branch is active, ties going to the variable branch.
    """
    spec = _reconstruct(spec, phase_source)
    analysis = analyze(spec, layout)
    if np.any(analysis.masking_threshold <= 0):
        raise DegenerateThresholdError("masking threshold must be strictly positive")

    re = spec.frames.real
    im = spec.frames.imag
    abs_re = np.abs(re)
    abs_im = np.abs(im)
    n_frames = spec.n_frames
    k = layout.k
    bin_band = layout.band_of_bin()

    steps = quantizer_steps(analysis)  # (T, n)
    steps_bin = steps[:, bin_band]  # (T, bins)
    u_re = 2.0 * abs_re / steps_bin + 1.0
    u_im = 2.0 * abs_im / steps_bin + 1.0
    per_frame = (np.log2(u_re) + np.log2(u_im)).sum(axis=1)
    mean_pe = float(per_frame.mean()) if per_frame.size else 0.0

    # d loss / d PE(t): the mean couples every frame through 1/(1+mean).
    dl_dpe = -1.0 / ((1.0 + mean_pe) ** 2 * max(n_frames, 1))

    # Quantizer terms, thresholds held fixed.
    dpe_dre = (2.0 / _LN2) * np.sign(re) / (steps_bin * u_re)
    dpe_dim = (2.0 / _LN2) * np.sign(im) / (steps_bin * u_im)

    if through_thresholds:
        # d PE(t) / d step, summed over the band's bins.
        dpe_dstep_bin = -(2.0 / _LN2) / steps_bin**2 * (abs_re / u_re + abs_im / u_im)
        dpe_dstep = np.add.reduceat(dpe_dstep_bin, layout.lower_bins, axis=1)
        # step = sqrt(6 T'/k)  =>  d step/d T' = 3/(k*step)
        dpe_dthresh = dpe_dstep * 3.0 / (k * steps)

        gain = spreading_gain(layout)
        quiet = absolute_threshold(layout, spec.config)
        clamp_inactive = (analysis.spread_threshold / gain) >= quiet
        dpe_draw = np.where(clamp_inactive, dpe_dthresh / gain, 0.0)

        attenuation = 10.0 ** (-analysis.offset_db / 10.0)
        dpe_dspread = dpe_draw * attenuation
        dpe_doffset = dpe_draw * (-(_LN10 / 10.0) * analysis.spread_threshold)

        # offset = 5.5 + alpha*(9 + i), i 1-based. Flatness is pinned both
        # at the fully-tonal bound (min with 1) and at the flat-band clamp
        # (sfm exactly 0); neither branch passes gradient.
        dpe_dalpha = dpe_doffset * (9.0 + np.arange(1, layout.n + 1))
        unpinned = (analysis.sfm_db >= SFM_DB_MAX) & (analysis.sfm_db < 0.0)
        dpe_dflatness = np.where(unpinned, dpe_dalpha * (1.0 / SFM_DB_MAX), 0.0)

        # flatness = (10/ln10)*(mean(log q) - log(mean q)), q floored powers.
        power = re**2 + im**2
        floored = np.maximum(power, SFM_POWER_FLOOR)
        arith = np.add.reduceat(floored, layout.lower_bins, axis=1) / k
        coeff = dpe_dflatness * (10.0 / _LN10) / k  # (T, n)
        dpe_dfloored = coeff[:, bin_band] * (1.0 / floored - 1.0 / arith[:, bin_band])
        dpe_dpower = np.where(power >= SFM_POWER_FLOOR, dpe_dfloored, 0.0)

        # Band powers feed the spreading convolution: C = K @ B per frame.
        dpe_dband = dpe_dspread @ spreading_kernel(layout)
        dpe_dpower += dpe_dband[:, bin_band]

        dpe_dre += dpe_dpower * 2.0 * re
        dpe_dim += dpe_dpower * 2.0 * im

    grad = dl_dpe * (dpe_dre + 1j * dpe_dim)
    return GradientReport(grad=grad)


@dataclass
class GradientCheckResult:
    """Outcome of comparing the analytic gradient to central differences."""

    report: GradientReport
    n_checked: int
    all_kink: bool
    worst: dict | None = None

    @property
    def max_rel_err(self) -> float:
        return self.report.max_rel_err_vs_fd

    def passed(self, tolerance: float = 1e-4) -> bool:
        if self.all_kink:
            return True
        return bool(self.max_rel_err < tolerance)

    def to_json_dict(self) -> dict:
        return {
            "max_rel_err_vs_fd": None if self.all_kink else float(self.max_rel_err),
            "n_coords": self.n_checked,
            "all_kink": self.all_kink,
            "worst_coordinate": self.worst,
        }


def check_gradient(
    spec: Spectrogram,
    layout: BarkBandLayout,
    n_coords: int = 100,
    seed: int = 42,
    rel_step: float = 1e-5,
    phase_source: Spectrogram | None = None,
    through_thresholds: bool = True,
) -> GradientCheckResult:
    """Compare pe_gradient to central finite differences of the full pipeline.

    Coordinates are sampled among components whose magnitude clears a
    kink guard (well away from the |x| = 0 and power-floor corners) and
    whose analytic partial is large enough for a double-precision
    central difference to resolve at the given relative step; where the
    quantizer and threshold paths nearly cancel, the difference quotient
    is pure truncation/roundoff noise. On an all-silent spectrum there
    is nothing to sample and the check passes vacuously.
    """
    spec = _reconstruct(spec, phase_source)
    report = pe_gradient(spec, layout, through_thresholds=through_thresholds)

    components = np.stack([spec.frames.real, spec.frames.imag], axis=-1)  # (T, bins, 2)
    magnitudes = np.abs(components).ravel()
    # 1e-2 of full scale keeps the relative step large enough that the
    # central difference is not dominated by float roundoff.
    guard = max(1e-8, 1e-2 * magnitudes.max()) if magnitudes.size else 1e-8
    off_kink = magnitudes > guard
    partials = np.abs(
        np.stack([report.grad.real, report.grad.imag], axis=-1).ravel()
    )
    if np.any(off_kink):
        rms_partial = float(np.sqrt(np.mean(partials[off_kink] ** 2)))
        resolvable = partials > 1e-2 * rms_partial
    else:
        resolvable = np.zeros_like(off_kink)
    eligible = np.flatnonzero(off_kink & resolvable)
    if eligible.size == 0:
        report.max_rel_err_vs_fd = 0.0
        return GradientCheckResult(report=report, n_checked=0, all_kink=True)

    rng = np.random.default_rng(seed)
    chosen = rng.choice(eligible, size=min(n_coords, eligible.size), replace=False)
    frozen_analysis = analyze(spec, layout)

    def loss_at(flat_components: np.ndarray) -> float:
        frames = flat_components.reshape(components.shape)
        rebuilt = Spectrogram(frames[..., 0] + 1j * frames[..., 1], spec.config)
        if not through_thresholds:
            # Frozen-threshold variant reuses the unperturbed analysis.
            return perceptual_entropy(rebuilt, frozen_analysis).loss_pe
        return loss_pe_of(rebuilt, layout)

    flat = components.ravel().copy()
    worst = None
    max_rel = 0.0
    for index in chosen:
        value = flat[index]
        h = rel_step * abs(value)
        flat[index] = value + h
        loss_plus = loss_at(flat)
        flat[index] = value - h
        loss_minus = loss_at(flat)
        flat[index] = value

        fd = (loss_plus - loss_minus) / (2.0 * h)
        t, bin_idx, part = np.unravel_index(index, components.shape)
        analytic = report.grad[t, bin_idx].real if part == 0 else report.grad[t, bin_idx].imag
        rel = abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-30)
        if rel > max_rel:
            max_rel = rel
            worst = {
                "frame": int(t),
                "bin": int(bin_idx),
                "part": "re" if part == 0 else "im",
                "analytic": float(analytic),
                "finite_difference": float(fd),
                "rel_err": float(rel),
            }

    report.max_rel_err_vs_fd = max_rel
    return GradientCheckResult(
        report=report, n_checked=int(chosen.size), all_kink=False, worst=worst
    )


@dataclass
class FitRecord:
    """Gradient-descent trace of the toy spectrum fitter.

    Curves hold one entry per evaluated iterate (steps + 1 including the
    final model), so curve[0] is the fresh initialization.
    """

    lam: float
    steps: int
    learning_rate: float
    seed: int
    l_sing_curve: list[float] = field(default_factory=list)
    loss_pe_curve: list[float] = field(default_factory=list)
    mean_pe_curve: list[float] = field(default_factory=list)

    @property
    def final_l_sing(self) -> float:
        return self.l_sing_curve[-1]

    @property
    def final_loss_pe(self) -> float:
        return self.loss_pe_curve[-1]

    @property
    def final_mean_pe(self) -> float:
        return self.mean_pe_curve[-1]

    def to_json_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "steps": self.steps,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "curve": {
                "l_sing": self.l_sing_curve,
                "loss_pe": self.loss_pe_curve,
                "mean_pe": self.mean_pe_curve,
            },
            "l_sing": self.final_l_sing,
            "loss_pe": self.final_loss_pe,
            "mean_pe": self.final_mean_pe,
        }


def toy_fit(
    target: AudioBuffer,
    cfg: LossConfig,
    steps: int,
    learning_rate: float,
    seed: int = 42,
    stft_cfg: StftConfig | None = None,
    n_mels: int = 80,
) -> FitRecord:
    """Fit a free magnitude spectrogram to a target by plain gradient descent.

    The variable starts as seeded small positive noise and descends the
    interpolated objective (L1 on linear magnitudes and mel energies,
    plus lam times the PE loss) against the target's features, using the
    target's phases to rebuild complex spectra for the PE term. The PE
    curve is recorded even when lam is 0, where it never moves the
    optimizer. Deterministic for a fixed seed.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    stft_cfg = stft_cfg or StftConfig()
    ref_spec = stft(target, stft_cfg)
    ref_mag = np.abs(ref_spec.frames)
    phase = np.exp(1j * np.angle(ref_spec.frames))
    cos_phi = phase.real
    sin_phi = phase.imag
    weights = mel_filterbank(stft_cfg, n_mels)
    ref_mel = (ref_mag**2) @ weights.T
    layout = bark_layout(stft_cfg)

    rng = np.random.default_rng(seed)
    mag = rng.uniform(1e-4, 1e-2, ref_mag.shape)
    n_linear = mag.size
    n_mel = ref_mel.size

    record = FitRecord(lam=cfg.lam, steps=steps, learning_rate=learning_rate, seed=seed)

    def evaluate(current: np.ndarray):
        linear_err = current - ref_mag
        l_sing_value = 0.0
        if cfg.include_linear_l1:
            l_sing_value += float(np.mean(np.abs(linear_err)))
        mel_err = (current**2) @ weights.T - ref_mel
        if cfg.include_mel_l1:
            l_sing_value += float(np.mean(np.abs(mel_err)))
        pred = Spectrogram(current * cos_phi + 1j * (current * sin_phi), stft_cfg)
        pe_result = perceptual_entropy(pred, analyze(pred, layout))
        return linear_err, mel_err, pred, pe_result, l_sing_value

    for step in range(steps):
        linear_err, mel_err, pred, pe_result, l_sing_value = evaluate(mag)
        record.l_sing_curve.append(l_sing_value)
        record.loss_pe_curve.append(pe_result.loss_pe)
        record.mean_pe_curve.append(pe_result.mean_pe)
        total = l_sing_value + cfg.lam * pe_result.loss_pe
        if not np.isfinite(total):
            raise DivergenceError(step)

        grad = np.zeros_like(mag)
        if cfg.include_linear_l1:
            grad += np.sign(linear_err) / n_linear
        if cfg.include_mel_l1:
            grad += ((np.sign(mel_err) / n_mel) @ weights) * (2.0 * mag)
        if cfg.lam > 0:
            pe_grad = pe_gradient(pred, layout).grad
            grad += cfg.lam * (pe_grad.real * cos_phi + pe_grad.imag * sin_phi)
        mag = mag - learning_rate * grad

    _, _, _, pe_result, l_sing_value = evaluate(mag)
    record.l_sing_curve.append(l_sing_value)
    record.loss_pe_curve.append(pe_result.loss_pe)
    record.mean_pe_curve.append(pe_result.mean_pe)
    if not np.isfinite(l_sing_value + cfg.lam * pe_result.loss_pe):
        raise DivergenceError(steps)
    return record
