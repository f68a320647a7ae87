"""LPC analysis and IAIF glottal flow estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter


class LpcError(Exception):
    pass


class DegenerateLpcError(LpcError):
    """Autocorrelation is not positive definite enough for the recursion."""


class IaifError(Exception):
    def __init__(self, msg, frame_index=None):
        super().__init__(msg if frame_index is None
                         else f"frame {frame_index}: {msg}")
        self.frame_index = frame_index


@dataclass(frozen=True)
class LpcModel:
    """All-pole model in prediction form: x̂[n] = sum_k a[k-1] * x[n-k]."""

    order: int
    coefficients: np.ndarray
    gain: float

    def __post_init__(self):
        if len(self.coefficients) != self.order:
            raise ValueError("coefficient count must equal order")
        if self.gain < 0:
            raise ValueError("gain must be nonnegative")


@dataclass(frozen=True)
class GlottalFlowEstimate:
    """Per-frame glottal flow waveform with its provenance."""

    samples: np.ndarray
    provenance: str  # "filter" | "model"
    frame_index: int = 0
    flagged: bool = False

    def __post_init__(self):
        if self.provenance not in ("filter", "model"):
            raise ValueError(f"bad provenance {self.provenance!r}")


@dataclass(frozen=True)
class IaifConfig:
    tract_order: int = 0  # 0 = auto: round(fs/1000) + 2
    glottal_order: int = 4
    leak: float = 0.99

    def resolve_tract_order(self, sample_rate: int) -> int:
        return self.tract_order if self.tract_order > 0 else int(round(sample_rate / 1000)) + 2


def autocorrelate(frame: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased autocorrelation r_k = sum_n x[n] x[n+k] for k = 0..max_lag."""
    x = np.asarray(frame, dtype=np.float64)
    if max_lag >= len(x):
        raise ValueError("max_lag must be < frame length")
    full = np.correlate(x, x, mode="full")
    return full[len(x) - 1:len(x) + max_lag]


def levinson_durbin(autocorr: np.ndarray, order: int) -> LpcModel:
    """Solve the LPC normal equations by Levinson-Durbin recursion."""
    r = np.asarray(autocorr, dtype=np.float64)
    if len(r) < order + 1:
        raise ValueError("need at least order+1 autocorrelation values")
    if r[0] <= 0:
        raise DegenerateLpcError("zero-energy frame (r_0 <= 0)")

    a = np.zeros(order)
    err = r[0]
    for i in range(1, order + 1):
        acc = r[i] - np.dot(a[:i - 1], r[i - 1:0:-1])
        k = acc / err
        prev = a[:i - 1]
        a_new = a.copy()
        a_new[i - 1] = k
        a_new[:i - 1] = prev - k * prev[::-1]
        a = a_new
        err *= (1.0 - k * k)
        if err <= 0:
            raise DegenerateLpcError(f"singular recursion at order {i}")
    return LpcModel(order=order, coefficients=a, gain=float(np.sqrt(err)))


def inverse_filter(frame: np.ndarray, lpc: LpcModel) -> np.ndarray:
    """Prediction residual y[n] = x[n] - sum_k a_k x[n-k] (zero history)."""
    x = np.asarray(frame, dtype=np.float64)
    b = np.concatenate(([1.0], -lpc.coefficients))
    return lfilter(b, [1.0], x)


def allpole_filter(excitation: np.ndarray, lpc: LpcModel, gain: float | None = None) -> np.ndarray:
    """Synthesis counterpart of inverse_filter."""
    a = np.concatenate(([1.0], -lpc.coefficients))
    g = lpc.gain if gain is None else gain
    return lfilter([g], a, np.asarray(excitation, dtype=np.float64))


def _lpc_of(x: np.ndarray, order: int, window: np.ndarray) -> LpcModel:
    r = autocorrelate(x * window, order)
    return levinson_durbin(r, order)


def _integrate(x: np.ndarray, leak: float) -> np.ndarray:
    return lfilter([1.0], [1.0, -leak], x)


def iaif(frame: np.ndarray, sample_rate: int,
         config: IaifConfig = IaifConfig(), frame_index: int = 0) -> GlottalFlowEstimate:
    """Iterative adaptive inverse filtering of one analysis frame.

    Pipeline: order-1 glottal pre-emphasis estimate, tract LPC on the
    pre-emphasized signal, inverse filter + integrate to a first flow
    estimate, refine the glottal model (order 4), re-estimate the tract and
    inverse filter once more, then leaky-integrate to the final flow.
    LPC fits use a Hann window; filtering runs on the unwindowed frame.
    """
    x = np.asarray(frame, dtype=np.float64)
    p = config.resolve_tract_order(sample_rate)
    if len(x) < 2 * (p + 1):
        raise IaifError(f"frame too short for tract order {p}", frame_index)
    if not np.any(x):
        return GlottalFlowEstimate(np.zeros_like(x), "filter", frame_index, flagged=True)

    win = np.hanning(len(x))
    try:
        g1 = _lpc_of(x, 1, win)
        y1 = inverse_filter(x, g1)
        vt1 = _lpc_of(y1, p, win)
        u1 = _integrate(inverse_filter(x, vt1), config.leak)
        g2 = _lpc_of(u1, config.glottal_order, win)
        y2 = _integrate(inverse_filter(x, g2), config.leak)
        vt2 = _lpc_of(y2, p, win)
        flow = _integrate(inverse_filter(x, vt2), config.leak)
    except DegenerateLpcError as exc:
        raise IaifError(str(exc), frame_index) from exc

    flow = flow - flow.mean()
    peak = np.max(np.abs(flow))
    if peak > 0:
        flow = flow / peak
    return GlottalFlowEstimate(flow, "filter", frame_index)
