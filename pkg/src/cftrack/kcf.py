"""Kernelized correlation filter: Fourier-domain ridge regression over all
circular shifts of a feature patch.

Conventions baked in here:

* Features are (C,H,W) float32 and arrive already tapered (callers apply the
  cosine window; the model stores the grid's canonical window in `hann`).
* Labels peak at the grid center cell, so a detection peak displaced from the
  center reads directly as target displacement in cells.
* The only feature normalization is the H*W*C divisor inside the kernel, which
  keeps kernel_sigma comparable across layers of different depth.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .runtime import fft2, ifft2


@dataclass
class KcfParams:
    kernel_type: str = "gaussian"
    kernel_sigma: float = 0.5
    lambda_value: float = 1e-4
    eta: float = 0.01
    output_sigma_factor: float = 0.1
    window_scale: float = 2.5  # KCF window side / target side

    def __post_init__(self):
        if self.kernel_type not in ("gaussian", "linear"):
            raise ConfigError(f"unknown kernel type {self.kernel_type!r}")
        if self.lambda_value <= 0:
            raise ConfigError("lambda must be > 0")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError("eta must lie in [0, 1]")
        if self.window_scale <= 1.0:
            raise ConfigError("window_scale must be > 1")


@dataclass
class KcfModel:
    grid_h: int
    grid_w: int
    channels: int
    x: np.ndarray        # spatial template, model-averaged, (C,H,W) float32
    xf: np.ndarray       # template spectrum, (C,H,W) complex
    alphaf: np.ndarray   # dual coefficients, (H,W) complex
    yf: np.ndarray       # label spectrum, fixed, (H,W) complex
    hann: np.ndarray     # cosine window for this grid, fixed, (H,W) float32
    params: KcfParams
    x_energy: float      # sum of squares of the spatial template


def gaussian_labels(h, w, sigma):
    """Circularly symmetric Gaussian peaked (value 1) at the center cell."""
    if h < 3 or w < 3:
        raise ConfigError("label grid must be at least 3x3")
    if sigma <= 0:
        raise ConfigError("label sigma must be > 0")
    ry = np.abs(np.arange(h) - h // 2)
    rx = np.abs(np.arange(w) - w // 2)
    dy = np.minimum(ry, h - ry)
    dx = np.minimum(rx, w - rx)
    d2 = dy[:, None] ** 2 + dx[None, :] ** 2
    return np.exp(-d2 / (2.0 * sigma * sigma)).astype(np.float32)


def hann_window(h, w):
    """Outer product of 1-D Hann windows 0.5*(1 - cos(2*pi*n/(N-1)))."""
    if h < 2 or w < 2:
        raise ConfigError("window must be at least 2x2")
    wy = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(h) / (h - 1)))
    wx = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(w) / (w - 1)))
    return np.outer(wy, wx).astype(np.float32)


def _energy(x):
    # float64 accumulation; float32 sums drift on deep feature stacks
    return float(np.sum(np.square(x, dtype=np.float64)))


def _cross_corr(af, bf):
    """corr(tau) = sum_n a(n + tau) * b(n), summed over channels."""
    return ifft2((af * np.conj(bf)).sum(axis=0))


def _kernel_from_corr(corr, a_energy, b_energy, n, params):
    if params.kernel_type == "linear":
        return (corr / n).astype(np.float32)
    d = a_energy + b_energy - 2.0 * corr
    np.maximum(d, 0.0, out=d)
    return np.exp(-d / (params.kernel_sigma ** 2 * n)).astype(np.float32)


def kernel_correlation(x, z, params):
    """Kernel map k(tau) between two equally shaped, pre-windowed patches.

    gaussian: exp(-max(0, ||x||^2 + ||z||^2 - 2*corr(tau)) / (sigma^2*H*W*C))
    linear:   corr(tau) / (H*W*C)
    with corr(tau) the channel-summed circular cross-correlation.
    """
    if x.shape != z.shape:
        raise ConfigError(f"kernel_correlation shape mismatch: {x.shape} vs {z.shape}")
    corr = _cross_corr(fft2(x), fft2(z))
    return _kernel_from_corr(corr, _energy(x), _energy(z), x.size, params)


def _solve(features, params, yf):
    """Ridge solution for one patch: template spectrum + dual coefficients."""
    xf = fft2(features)
    energy = _energy(features)
    corr = _cross_corr(xf, xf)
    k = _kernel_from_corr(corr, energy, energy, features.size, params)
    alphaf = yf / (fft2(k) + params.lambda_value)
    return xf, alphaf, energy


def train_model(features, params):
    """Train a fresh model on one (pre-windowed) feature patch.

    The label width scales with the target footprint on the grid: the grid
    spans window_scale target sides, so sigma = osf * sqrt(H*W) / window_scale.
    Grid-relative labels (no window_scale divisor) proved too broad -- the
    static background then drags the peak toward zero displacement.
    """
    if features.ndim != 3:
        raise ConfigError(f"expected (C,H,W) features, got shape {features.shape}")
    c, h, w = features.shape
    sigma = params.output_sigma_factor * np.sqrt(h * w) / params.window_scale
    labels = gaussian_labels(h, w, sigma)
    yf = fft2(labels)
    xf, alphaf, energy = _solve(features, params, yf)
    return KcfModel(grid_h=h, grid_w=w, channels=c,
                    x=np.array(features, dtype=np.float32), xf=xf, alphaf=alphaf,
                    yf=yf, hann=hann_window(h, w), params=params, x_energy=energy)


def detect(model, features):
    """Response map for a new (pre-windowed) patch on the model grid.

    The peak's displacement from the center cell estimates the target
    displacement in grid cells.
    """
    if features.shape != (model.channels, model.grid_h, model.grid_w):
        raise ConfigError(
            f"features {features.shape} do not match model grid "
            f"({model.channels},{model.grid_h},{model.grid_w})")
    corr = _cross_corr(fft2(features), model.xf)
    k = _kernel_from_corr(corr, _energy(features), model.x_energy,
                          features.size, model.params)
    return ifft2(fft2(k) * model.alphaf).astype(np.float32)


def update_model(model, new_features, eta):
    """Interpolate template and dual spectra toward a freshly solved model.

    eta=0 leaves the model untouched, eta=1 replaces it outright; yf and the
    window never change.
    """
    if new_features.shape != (model.channels, model.grid_h, model.grid_w):
        raise ConfigError("update features do not match the model grid")
    if not 0.0 <= eta <= 1.0:
        raise ConfigError("eta must lie in [0, 1]")
    xf_new, alphaf_new, _ = _solve(new_features, model.params, model.yf)
    model.x = (1.0 - eta) * model.x + eta * new_features
    model.xf = (1.0 - eta) * model.xf + eta * xf_new
    model.alphaf = (1.0 - eta) * model.alphaf + eta * alphaf_new
    model.x_energy = _energy(model.x)
    return model
