"""Pluggable image denoisers with spectral validation.

The contract: a good denoiser crushes high-frequency power (noise) while
leaving the low-frequency band (pattern morphology) essentially untouched.
`spectral_report` quantifies both and renders a pass/fail verdict;
`edge_spike_metric` counts per-row line-edge outliers as a roughness analog.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, gaussian_filter1d, median_filter

from .errors import ValidationError
from .image import SemImage
from .synthgen import PatternSpec

N_BINS = 64
NYQUIST = 0.5  # cycles/pixel
HIGH_BAND_CUTOFF = 0.25

# Shipped methods and their default parameters (CLI/service use this table).
DENOISE_METHODS: dict[str, dict[str, float]] = {
    "median": {"size": 3},
    "gaussian": {"sigma": 1.0},
    "fourier_lowpass": {"cutoff": 0.15},
}


@dataclass(frozen=True, eq=False)
class PsdProfile:
    """Radially averaged 2-D power spectrum.

    `power[i]` is the mean power of the frequency samples falling in bin i
    (the DC sample is excluded); `counts[i]` is how many samples that was, so
    `power @ counts` recovers the total non-DC power, which equals the image
    variance (Parseval).
    """

    freqs: np.ndarray
    power: np.ndarray
    counts: np.ndarray
    total_power: float

    def __post_init__(self) -> None:
        if self.freqs.shape != (N_BINS,) or self.power.shape != (N_BINS,):
            raise ValidationError("profile must have exactly 64 bins")
        if (self.power < 0).any():
            raise ValidationError("power must be non-negative")
        if (np.diff(self.freqs) <= 0).any():
            raise ValidationError("frequency bins must be strictly increasing")


def denoise(
    image: SemImage,
    method: str,
    *,
    size: int = 3,
    sigma: float = 1.0,
    cutoff: float = 0.15,
) -> SemImage:
    """Apply one of the shipped denoisers; output is clamped to [0,1]."""
    if method == "median":
        if size < 1 or size % 2 == 0:
            raise ValidationError(f"median window must be a positive odd int, got {size}")
        out = median_filter(image.pixels, size=size, mode="reflect")
    elif method == "gaussian":
        if sigma <= 0:
            raise ValidationError(f"gaussian sigma must be > 0, got {sigma}")
        out = gaussian_filter(image.pixels, sigma, mode="reflect")
    elif method == "fourier_lowpass":
        if not 0 < cutoff <= NYQUIST:
            raise ValidationError(f"cutoff must be in (0, {NYQUIST}], got {cutoff}")
        spectrum = np.fft.fft2(image.pixels)
        fy = np.fft.fftfreq(image.height)[:, None]
        fx = np.fft.fftfreq(image.width)[None, :]
        spectrum[np.hypot(fy, fx) > cutoff] = 0.0
        out = np.fft.ifft2(spectrum).real
    else:
        raise ValidationError(f"unknown denoise method {method!r}")
    return image.with_pixels(np.clip(out, 0.0, 1.0))


def _next_pow2(n: int) -> int:
    return 1 << (n - 1).bit_length()


def _power_spectrum(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalized 2-D power and the radial frequency of every sample.

    Non-square or non-power-of-two images are padded (bottom/right) with
    their mean intensity before the transform. Normalization is chosen so
    the total power equals the mean squared intensity of the padded image.
    """
    h, w = pixels.shape
    side = _next_pow2(max(h, w, 2))
    if (h, w) != (side, side):
        padded = np.full((side, side), pixels.mean())
        padded[:h, :w] = pixels
        pixels = padded
    spectrum = np.fft.fft2(pixels)
    power = (spectrum.real**2 + spectrum.imag**2) / float(side) ** 4
    fy = np.fft.fftfreq(side)[:, None]
    fx = np.fft.fftfreq(side)[None, :]
    return power, np.hypot(fy, fx)


def psd_profile(image: SemImage) -> PsdProfile:
    """Radially average the 2-D power spectrum into 64 equal-width bins.

    Bin index = floor(64·f/f_nyquist); corner samples beyond f_nyquist pool
    into the top bin so no power is dropped.
    """
    power, freq = _power_spectrum(image.pixels)
    bins = np.minimum((N_BINS * freq / NYQUIST).astype(int), N_BINS - 1)
    sums = np.bincount(bins.ravel(), weights=power.ravel(), minlength=N_BINS)
    counts = np.bincount(bins.ravel(), minlength=N_BINS).astype(np.float64)
    sums[0] -= power[0, 0]  # drop the DC sample from band statistics
    counts[0] -= 1
    mean = np.divide(sums, counts, out=np.zeros(N_BINS), where=counts > 0)
    centres = (np.arange(N_BINS) + 0.5) * (NYQUIST / N_BINS)
    return PsdProfile(centres, mean, counts, float(sums.sum()))


def _band_powers(pixels: np.ndarray, low_cutoff: float, high_cutoff: float) -> tuple[float, float]:
    power, freq = _power_spectrum(pixels)
    low = float(power[(freq > 0) & (freq < low_cutoff)].sum())
    high = float(power[freq > high_cutoff].sum())
    return low, high


def spectral_report(
    noisy: SemImage,
    denoised: SemImage,
    *,
    pitch_px: float = 40.0,
    low_cutoff: float | None = None,
    high_cutoff: float = HIGH_BAND_CUTOFF,
    low_tolerance: float = 0.05,
    high_reduction: float = 0.5,
) -> dict:
    """Relative band-power change of denoised vs noisy, with verdict.

    Low band: 0 < f < half the pattern fundamental (1/(2·pitch) by default).
    High band: f > high_cutoff. Pass iff the high band dropped by at least
    `high_reduction` while the low band moved by at most `low_tolerance`.
    """
    if (noisy.width, noisy.height) != (denoised.width, denoised.height):
        raise ValidationError("noisy and denoised images must share dimensions")
    if low_cutoff is None:
        low_cutoff = 1.0 / (2.0 * pitch_px)
    low_before, high_before = _band_powers(noisy.pixels, low_cutoff, high_cutoff)
    low_after, high_after = _band_powers(denoised.pixels, low_cutoff, high_cutoff)
    if low_before == 0 or high_before == 0:
        raise ValidationError("noisy band power is zero; band change undefined")
    low_change = (low_after - low_before) / low_before
    high_change = (high_after - high_before) / high_before
    return {
        "low_band_change": low_change,
        "high_band_change": high_change,
        "low_band_before": low_before,
        "low_band_after": low_after,
        "high_band_before": high_before,
        "high_band_after": high_after,
        "low_cutoff": low_cutoff,
        "high_cutoff": high_cutoff,
        "pass": bool(high_change <= -high_reduction and abs(low_change) <= low_tolerance),
    }


def edge_spike_metric(image: SemImage, pattern: PatternSpec, *, smooth_sigma: float = 1.0) -> float:
    """Spikes per line edge: rows where an edge jumps > 3x its own MAD.

    Each row profile is smoothed, then every nominal edge is located by the
    half-maximum crossing nearest the expected position (searching within a
    quarter pitch). Rows with no crossing count as spikes. MAD = median
    absolute deviation of the located positions of that edge.
    """
    if image.width != pattern.image_size or image.height != pattern.image_size:
        raise ValidationError("image dimensions must match the pattern spec")
    smoothed = gaussian_filter1d(image.pixels, smooth_sigma, axis=1, mode="nearest")
    threshold = 0.5 * (pattern.line_intensity + pattern.space_intensity)
    radius = pattern.pitch_px / 4.0
    h = image.height

    edges: list[tuple[float, bool]] = []
    for left, right in pattern.nominal_edges():
        edges.append((left, True))  # rising
        edges.append((right, False))  # falling

    total_spikes = 0
    any_edge_found = False
    for nominal, rising in edges:
        lo = max(0, int(np.floor(nominal - radius)))
        hi = min(image.width - 1, int(np.ceil(nominal + radius)))
        if hi - lo < 1:
            total_spikes += h
            continue
        window = smoothed[:, lo : hi + 1]
        a, b = window[:, :-1], window[:, 1:]
        if rising:
            crossing = (a < threshold) & (b >= threshold)
        else:
            crossing = (a >= threshold) & (b < threshold)
        positions = np.full(h, np.nan)
        for row in range(h):
            idx = np.nonzero(crossing[row])[0]
            if idx.size == 0:
                continue
            frac = (threshold - a[row, idx]) / (b[row, idx] - a[row, idx])
            xs = lo + idx + 0.5 + frac
            positions[row] = xs[np.argmin(np.abs(xs - nominal))]
        valid = np.isfinite(positions)
        if not valid.any():
            total_spikes += h
            continue
        any_edge_found = True
        med = float(np.median(positions[valid]))
        mad = float(np.median(np.abs(positions[valid] - med)))
        deviant = np.abs(positions[valid] - med) > 3.0 * mad
        total_spikes += int(deviant.sum()) + int((~valid).sum())

    if not any_edge_found:
        raise ValidationError("no detectable line edges in image")
    return total_spikes / len(edges)


def psd_to_csv(profile: PsdProfile) -> str:
    """Render a profile as `bin_freq,power` CSV text."""
    lines = ["bin_freq,power"]
    for f, p in zip(profile.freqs, profile.power):
        lines.append(f"{f:.6g},{p:.6g}")
    return "\n".join(lines) + "\n"
