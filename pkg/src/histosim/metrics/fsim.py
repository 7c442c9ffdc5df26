"""Feature similarity index (FSIM/FSIMc, Zhang et al. 2011).

Phase congruency follows Kovesi's monogenic log-Gabor construction with the
constants used by the reference FSIM release: a 4-scale x 4-orientation
bank (min wavelength 6, scale multiplier 2, sigma_onf 0.55), raised-noise
thresholding, and a Butterworth low-pass prefilter. The gradient feature is
the Scharr magnitude. Inputs are [0,1] patches; computation happens on a
0-255 rescaled copy, which T2/T3/T4 assume.
"""

import numpy as np
from scipy.ndimage import correlate

from ..errors import MetricInputError
from ..patch import Patch

T1_PC = 0.85
T2_GRAD = 160.0
T3_CHROMA = 200.0
T4_CHROMA = 200.0
CHROMA_LAMBDA = 0.03

_SCHARR_X = np.array([[3.0, 0.0, -3.0], [10.0, 0.0, -10.0], [3.0, 0.0, -3.0]]) / 16.0
_SCHARR_Y = _SCHARR_X.T

# RGB -> YIQ (NTSC) on whatever scale the input uses
_YIQ = np.array(
    [
        [0.299, 0.587, 0.114],
        [0.596, -0.274, -0.322],
        [0.211, -0.523, 0.312],
    ]
)


def _freq_grids(rows: int, cols: int):
    if cols % 2:
        xr = (np.arange(cols) - (cols - 1) / 2.0) / (cols - 1)
    else:
        xr = (np.arange(cols) - cols / 2.0) / cols
    if rows % 2:
        yr = (np.arange(rows) - (rows - 1) / 2.0) / (rows - 1)
    else:
        yr = (np.arange(rows) - rows / 2.0) / rows
    x, y = np.meshgrid(xr, yr)
    radius = np.fft.ifftshift(np.sqrt(x**2 + y**2))
    theta = np.fft.ifftshift(np.arctan2(-y, x))
    lowpass = 1.0 / (1.0 + (radius / 0.45) ** 30)  # cutoff .45, order 15
    radius[0, 0] = 1.0  # avoid log(0) at DC; the DC gain is zeroed anyway
    return radius, theta, lowpass


def phase_congruency(
    img: np.ndarray,
    nscale: int = 4,
    norient: int = 4,
    min_wavelength: float = 6.0,
    mult: float = 2.0,
    sigma_onf: float = 0.55,
    d_theta_on_sigma: float = 1.2,
    noise_k: float = 2.0,
    eps: float = 1e-4,
) -> np.ndarray:
    """Orientation-pooled phase congruency map in [0, 1]."""
    rows, cols = img.shape
    radius, theta, lowpass = _freq_grids(rows, cols)
    sintheta, costheta = np.sin(theta), np.cos(theta)
    theta_sigma = np.pi / norient / d_theta_on_sigma

    log_gabor = []
    for s in range(nscale):
        fo = 1.0 / (min_wavelength * mult**s)
        lg = np.exp(-(np.log(radius / fo) ** 2) / (2.0 * np.log(sigma_onf) ** 2))
        lg *= lowpass
        lg[0, 0] = 0.0
        log_gabor.append(lg)

    imfft = np.fft.fft2(img)
    energy_all = np.zeros((rows, cols))
    an_all = np.zeros((rows, cols))

    for o in range(norient):
        angl = o * np.pi / norient
        ds = sintheta * np.cos(angl) - costheta * np.sin(angl)
        dc = costheta * np.cos(angl) + sintheta * np.sin(angl)
        dtheta = np.abs(np.arctan2(ds, dc))
        spread = np.exp(-(dtheta**2) / (2.0 * theta_sigma**2))

        responses = []
        sum_an = np.zeros((rows, cols))
        sum_e = np.zeros((rows, cols))
        sum_o = np.zeros((rows, cols))
        tau = 0.0
        for s in range(nscale):
            response = np.fft.ifft2(imfft * (log_gabor[s] * spread))
            an = np.abs(response)
            responses.append(response)
            sum_an += an
            sum_e += response.real
            sum_o += response.imag
            if s == 0:
                # Rayleigh noise scale estimated from the smallest-scale response
                tau = float(np.median(an)) / np.sqrt(np.log(4.0))

        x_energy = np.sqrt(sum_e**2 + sum_o**2) + eps
        mean_e = sum_e / x_energy
        mean_o = sum_o / x_energy
        energy = np.zeros((rows, cols))
        for response in responses:
            e, od = response.real, response.imag
            energy += e * mean_e + od * mean_o - np.abs(e * mean_o - od * mean_e)

        total_tau = tau * (1.0 - (1.0 / mult) ** nscale) / (1.0 - 1.0 / mult)
        noise_mean = total_tau * np.sqrt(np.pi / 2.0)
        noise_sigma = total_tau * np.sqrt((4.0 - np.pi) / 2.0)
        threshold = (noise_mean + noise_k * noise_sigma) / 1.7
        energy_all += np.maximum(energy - threshold, 0.0)
        an_all += sum_an

    return energy_all / (an_all + eps)


def scharr_magnitude(img: np.ndarray) -> np.ndarray:
    """Gradient magnitude from 3x3 Scharr kernels, reflective borders."""
    gx = correlate(img, _SCHARR_X, mode="reflect")
    gy = correlate(img, _SCHARR_Y, mode="reflect")
    return np.sqrt(gx**2 + gy**2)


def _maybe_downsample(img: np.ndarray) -> np.ndarray:
    f = max(1, int(round(min(img.shape) / 256.0)))
    if f == 1:
        return img
    h, w = (img.shape[0] // f) * f, (img.shape[1] // f) * f
    img = img[:h, :w]
    return img.reshape(h // f, f, w // f, f).mean(axis=(1, 3))


def _similarity(u: np.ndarray, v: np.ndarray, t: float) -> np.ndarray:
    return (2.0 * u * v + t) / (u**2 + v**2 + t)


def _fsim_from_luma(
    y1: np.ndarray, y2: np.ndarray, chroma: np.ndarray | None
) -> float:
    pc1 = phase_congruency(y1)
    pc2 = phase_congruency(y2)
    g1 = scharr_magnitude(y1)
    g2 = scharr_magnitude(y2)
    sim = _similarity(pc1, pc2, T1_PC) * _similarity(g1, g2, T2_GRAD)
    if chroma is not None:
        sim = sim * chroma
    pcm = np.maximum(pc1, pc2)
    denom = float(pcm.sum())
    if denom == 0.0:
        # featureless pair (e.g. two constant images): nothing to penalize
        return 1.0
    return float(np.sum(sim * pcm) / denom)


def fsim(a: Patch, b: Patch) -> float:
    """Single-channel feature similarity in [0, 1]."""
    if a.data.shape != b.data.shape:
        raise MetricInputError(f"patch shape mismatch: {a.data.shape} vs {b.data.shape}")
    if a.channels != 1:
        raise MetricInputError("fsim expects single-channel patches (use fsimc for RGB)")
    y1 = _maybe_downsample(a.data[:, :, 0] * 255.0)
    y2 = _maybe_downsample(b.data[:, :, 0] * 255.0)
    return _fsim_from_luma(y1, y2, None)


def fsimc(a: Patch, b: Patch) -> float:
    """Chrominance-aware feature similarity for RGB patches."""
    if a.data.shape != b.data.shape:
        raise MetricInputError(f"patch shape mismatch: {a.data.shape} vs {b.data.shape}")
    if a.channels != 3:
        raise MetricInputError("fsimc expects RGB patches")
    yiq1 = (a.data * 255.0) @ _YIQ.T
    yiq2 = (b.data * 255.0) @ _YIQ.T
    y1 = _maybe_downsample(yiq1[:, :, 0])
    y2 = _maybe_downsample(yiq2[:, :, 0])
    i_sim = _similarity(
        _maybe_downsample(yiq1[:, :, 1]), _maybe_downsample(yiq2[:, :, 1]), T3_CHROMA
    )
    q_sim = _similarity(
        _maybe_downsample(yiq1[:, :, 2]), _maybe_downsample(yiq2[:, :, 2]), T4_CHROMA
    )
    # fractional power of a possibly-negative product, real part as in the
    # reference implementation
    chroma = np.real((i_sim * q_sim).astype(complex) ** CHROMA_LAMBDA)
    return _fsim_from_luma(y1, y2, chroma)
