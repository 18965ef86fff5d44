"""Multi-channel linear correlation filters solved per frequency.

For features x (H x W x C) and a target response y, the ridge regression over
all cyclic shifts of x has the closed form

    filter_hat[c] = conj(x_hat[c]) * y_hat / (sum_c |x_hat[c]|^2 + lambda)

and the response to new features z is ``real(ifft2(sum_c filter_hat[c] * z_hat[c]))``,
whose value at index k scores z shifted by k against the trained appearance.
Numerator and denominator are kept separately so that running-average updates
are exact. Features are real, so only the non-negative half of the frequency
plane along the last spatial axis is stored (``rfft2`` layout).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .features import FeatureMap, ScoreMap


def gaussian_label(h: int, w: int, sigma: float) -> np.ndarray:
    """Periodic Gaussian with its peak (value 1) at index (0, 0)."""
    if h < 1 or w < 1:
        raise ValueError("label dimensions must be positive")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    dy = np.minimum(np.arange(h), h - np.arange(h)).astype(np.float64)
    dx = np.minimum(np.arange(w), w - np.arange(w)).astype(np.float64)
    return np.exp(-(dy[:, None] ** 2 + dx[None, :] ** 2) / (2 * sigma ** 2))


def cosine_window(h: int, w: int) -> np.ndarray:
    return np.outer(np.hanning(h), np.hanning(w))


@dataclass(frozen=True)
class DcfModel:
    num: np.ndarray          # H x (W//2+1) x C complex: conj(x_hat) * y_hat
    den: np.ndarray          # H x (W//2+1) real: sum_c |x_hat|^2
    lam: float
    label_hat: np.ndarray
    window: np.ndarray
    update_rate: float = 0.02
    filter_hat: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "filter_hat", self.num / (self.den + self.lam)[:, :, None])

    @property
    def size(self):
        """Spatial size (H, W) of the features the model expects."""
        return self.window.shape


def _spectrum(features, window):
    x = features.data if isinstance(features, FeatureMap) else np.asarray(features, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if window is not None:
        if window.shape != x.shape[:2]:
            raise ValueError(f"window {window.shape} does not match features {x.shape[:2]}")
        x = x * window[:, :, None]
    return np.fft.rfft2(x, axes=(0, 1))


def _statistics(x_hat, label_hat):
    num = np.conj(x_hat) * label_hat[:, :, None]
    den = (x_hat.real ** 2 + x_hat.imag ** 2).sum(axis=2)
    return num, den


def train(features: FeatureMap, label, lam: float = 1e-2, window=None, update_rate: float = 0.02) -> DcfModel:
    """Closed-form filter for one training sample.

    ``window`` defaults to the raised-cosine taper of the feature size; pass an
    all-ones array to disable tapering.
    """
    x = features.data if isinstance(features, FeatureMap) else np.asarray(features, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    label = np.asarray(label, dtype=np.float64)
    if label.shape != x.shape[:2]:
        raise ValueError(f"label {label.shape} does not match feature size {x.shape[:2]}")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if window is None:
        window = cosine_window(*x.shape[:2])
    window = np.asarray(window, dtype=np.float64)
    label_hat = np.fft.rfft2(label)
    num, den = _statistics(_spectrum(x, window), label_hat)
    if lam == 0 and np.any(den == 0):
        raise ZeroDivisionError("zero-energy frequency with lambda = 0: filter is singular")
    return DcfModel(num=num, den=den, lam=float(lam), label_hat=label_hat, window=window, update_rate=update_rate)


def respond(model: DcfModel, features: FeatureMap) -> ScoreMap:
    """Response over all cyclic shifts, re-centred so zero shift sits at (H//2, W//2)."""
    stride = features.stride if isinstance(features, FeatureMap) else 1
    resp = respond_raw(model, features)
    h, w = resp.shape
    return ScoreMap(np.fft.fftshift(resp), stride=float(stride), center=(h // 2, w // 2))


def respond_raw(model: DcfModel, features) -> np.ndarray:
    """Un-shifted response; entry k scores a shift of k."""
    z_hat = _spectrum(features, model.window)
    if z_hat.shape != model.num.shape:
        raise ValueError(f"features {z_hat.shape} do not match model {model.num.shape}")
    return np.fft.irfft2((model.filter_hat * z_hat).sum(axis=2), s=model.size)


def update(model: DcfModel, new_features: FeatureMap, rate: float | None = None) -> DcfModel:
    """Blend fresh statistics into the model: new = (1 - rate) * old + rate * fresh."""
    if rate is None:
        rate = model.update_rate
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"update rate must lie in [0, 1], got {rate}")
    x_hat = _spectrum(new_features, model.window)
    if x_hat.shape != model.num.shape:
        raise ValueError(f"features {x_hat.shape} do not match model {model.num.shape}")
    num, den = _statistics(x_hat, model.label_hat)
    return replace(
        model,
        num=(1 - rate) * model.num + rate * num,
        den=(1 - rate) * model.den + rate * den,
    )
