"""Asymmetric one-mass vocal-fold oscillator and its glottal flow map.

State layout everywhere: (x_r, v_r, x_l, v_l). The folds are two coupled
nonlinear oscillators sharing an aerodynamic coupling alpha, with the
left/right stiffness split by the asymmetry coefficient delta:

    a_r = alpha (v_r + v_l) - beta (1 + x_r^2) v_r - (1 - delta/2) x_r
    a_l = alpha (v_r + v_l) - beta (1 + x_l^2) v_l - (1 + delta/2) x_l
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

BLOWUP_LIMIT = 1e6


class BlowUpError(Exception):
    def __init__(self, step: int):
        super().__init__(f"trajectory blew up (|x| > {BLOWUP_LIMIT:g}) at step {step}")
        self.step = step


@dataclass(frozen=True)
class VocalFoldParams:
    alpha: float
    beta: float
    delta: float

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if abs(self.delta) >= 2:
            raise ValueError("|delta| must be < 2")

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.delta])


@dataclass(frozen=True)
class GlottalGeometry:
    x0: float = 0.1          # half rest glottal width
    d: float = 1.0           # fold depth factor
    c_tilde: float = 1.0     # flow proportionality constant
    area_at_glottis: float = 1.0
    air_density: float = 1.0
    sound_speed: float = 1.0

    def __post_init__(self):
        for name in ("x0", "d", "c_tilde", "area_at_glottis", "air_density", "sound_speed"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class FoldTrajectory:
    dt: float
    x_r: np.ndarray
    v_r: np.ndarray
    x_l: np.ndarray
    v_l: np.ndarray
    init: tuple

    def __len__(self):
        return len(self.x_r)

    @property
    def states(self) -> np.ndarray:
        return np.column_stack([self.x_r, self.v_r, self.x_l, self.v_l])


def derivatives(state, params: VocalFoldParams):
    """Time derivative of (x_r, v_r, x_l, v_l)."""
    state = np.asarray(state, dtype=np.float64)
    if not np.all(np.isfinite(state)):
        raise ValueError("non-finite state")
    x_r, v_r, x_l, v_l = state
    a, b, d = params.alpha, params.beta, params.delta
    couple = a * (v_r + v_l)
    a_r = couple - b * (1 + x_r * x_r) * v_r - (1 - d / 2) * x_r
    a_l = couple - b * (1 + x_l * x_l) * v_l - (1 + d / 2) * x_l
    return np.array([v_r, a_r, v_l, a_l])


@njit(cache=True)
def _deriv(a, b, d, y, out):
    couple = a * (y[1] + y[3])
    out[0] = y[1]
    out[1] = couple - b * (1 + y[0] * y[0]) * y[1] - (1 - d / 2) * y[0]
    out[2] = y[3]
    out[3] = couple - b * (1 + y[2] * y[2]) * y[3] - (1 + d / 2) * y[2]


@njit(cache=True)
def _rk4_core(a, b, d, y0, dt, steps):
    traj = np.empty((steps + 1, 4))
    traj[0] = y0
    y = y0.copy()
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    k4 = np.empty(4)
    tmp = np.empty(4)
    for n in range(steps):
        _deriv(a, b, d, y, k1)
        for i in range(4):
            tmp[i] = y[i] + 0.5 * dt * k1[i]
        _deriv(a, b, d, tmp, k2)
        for i in range(4):
            tmp[i] = y[i] + 0.5 * dt * k2[i]
        _deriv(a, b, d, tmp, k3)
        for i in range(4):
            tmp[i] = y[i] + dt * k3[i]
        _deriv(a, b, d, tmp, k4)
        for i in range(4):
            y[i] = y[i] + dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
        traj[n + 1] = y
        if abs(y[0]) > BLOWUP_LIMIT or abs(y[2]) > BLOWUP_LIMIT:
            return traj, n + 1
    return traj, -1


def integrate_rk4(params: VocalFoldParams, init=(0.1, 0.1, 0.0, 0.0),
                  dt: float = 1e-3, steps: int = 1000) -> FoldTrajectory:
    """Classic RK4 integration; init = (C_r, C_l, v_r0, v_l0)."""
    if dt <= 0 or steps <= 0:
        raise ValueError("dt and steps must be positive")
    c_r, c_l, v_r0, v_l0 = (tuple(init) + (0.0, 0.0))[:4]
    y0 = np.array([c_r, v_r0, c_l, v_l0], dtype=np.float64)
    traj, blowup = _rk4_core(params.alpha, params.beta, params.delta, y0, dt, steps)
    if blowup >= 0:
        raise BlowUpError(blowup)
    return FoldTrajectory(dt=dt, x_r=traj[:, 0], v_r=traj[:, 1],
                          x_l=traj[:, 2], v_l=traj[:, 3], init=(c_r, c_l))


def raw_glottal_flow(traj: FoldTrajectory, geom: GlottalGeometry = GlottalGeometry(),
                     rectify: bool = True) -> np.ndarray:
    """Unnormalized flow c~ * d * (2 x0 + x_l + x_r), clamped at closure."""
    area = 2.0 * geom.x0 + traj.x_l + traj.x_r
    if rectify:
        area = np.maximum(area, 0.0)
    return geom.c_tilde * geom.d * area


def glottal_flow_from_traj(traj: FoldTrajectory, geom: GlottalGeometry = GlottalGeometry(),
                           n_out: int | None = None, rectify: bool = True,
                           frame_index: int = 0):
    """Model glottal flow estimate: resampled, mean-removed, peak-normalized."""
    from .inverse_filtering import GlottalFlowEstimate

    if len(traj) == 0:
        raise ValueError("empty trajectory")
    u = raw_glottal_flow(traj, geom, rectify)
    if n_out is not None and n_out != len(u):
        t_src = np.linspace(0.0, 1.0, len(u))
        t_dst = np.linspace(0.0, 1.0, n_out)
        u = np.interp(t_dst, t_src, u)
    u = u - u.mean()
    peak = np.max(np.abs(u))
    if peak > 0:
        u = u / peak
    return GlottalFlowEstimate(u, "model", frame_index)
