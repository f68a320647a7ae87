"""Per-frame fitting of (alpha, beta, delta) by adjoint least squares.

The objective is the mean squared residual between the inverse-filtered
flow and the (mean-removed, scale-aligned) model flow. Gradients come from
reverse accumulation through the RK4 scheme itself, so they match the
discrete objective to machine precision and are checkable against central
finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .inverse_filtering import GlottalFlowEstimate
from .phonation_model import (VocalFoldParams, _rk4_core, BlowUpError,
                              FoldTrajectory, GlottalGeometry,
                              glottal_flow_from_traj)

PARAM_BOX_EPS = 1e-6
DELTA_MAX = 2.0 - 1e-6


@dataclass(frozen=True)
class FitOptions:
    dt: float = 1e-2
    init: tuple = (0.1, 0.1)
    x0: float = 0.1
    max_iters: int = 500
    grad_tol: float = 1e-6
    loss_tol: float = 1e-8
    armijo: float = 1e-4
    shrink: float = 0.5
    step0: float = 0.1
    rectify_output: bool = True
    # The objective is even in delta when C_r = C_l, so delta = 0 is a
    # stationary trap; extra descents restarted at these delta values escape
    # it deterministically (skipped once the first fit is already tight).
    delta_probes: tuple = (0.5, -0.5)
    probe_loss_threshold: float = 1e-6
    # Slide the comparison window over the burn-in tail to phase-align the
    # model flow with the target; needed for real frames whose phase is
    # arbitrary relative to the fixed simulation start. The chosen window
    # start is held fixed in the gradient. Requires burn_steps > 0.
    lag_align: bool = False
    # Optional upper clamps on alpha/beta to keep pipeline fits in the
    # physical regime; the spec box (alpha >= 0, beta > 0, |delta| < 2)
    # always applies.
    alpha_max: float = np.inf
    beta_max: float = np.inf
    # Extra leading simulation samples discarded from the objective so the
    # comparison window sits on the limit cycle instead of the transient
    # from the fixed initial condition (q = 0 over the burn-in).
    burn_steps: int = 0
    # Ridge penalty delta_ridge * delta^2 added to the objective: real-frame
    # targets carry inverse-filtering distortion that an unpenalized delta
    # happily absorbs, so delta should leave 0 only when the data demand it.
    delta_ridge: float = 0.0


@dataclass
class FitResult:
    params: VocalFoldParams
    loss_trace: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    final_flow: GlottalFlowEstimate | None = None

    @property
    def loss(self) -> float:
        return self.loss_trace[-1] if self.loss_trace else np.inf


def _as_samples(u) -> np.ndarray:
    if isinstance(u, GlottalFlowEstimate):
        return np.asarray(u.samples, dtype=np.float64)
    return np.asarray(u, dtype=np.float64)


def scale_align(u_filter, u_model) -> float:
    """Least-squares amplitude s* = <u_f, u_m> / <u_m, u_m>."""
    uf, um = _as_samples(u_filter), _as_samples(u_model)
    energy = float(np.dot(um, um))
    if energy == 0.0:
        raise ValueError("cannot scale-align against a zero-energy model flow")
    return float(np.dot(uf, um)) / energy


def residual_objective(u_filter, u_model, align: bool = True) -> float:
    """Mean squared flow residual, optionally after scale alignment."""
    uf, um = _as_samples(u_filter), _as_samples(u_model)
    if len(uf) != len(um):
        raise ValueError("length mismatch")
    s = scale_align(uf, um) if align else 1.0
    r = uf - s * um
    return float(np.dot(r, r)) / len(uf)


def _simulate(params: VocalFoldParams, init, dt, steps):
    y0 = np.array([init[0], 0.0, init[1], 0.0])
    traj, blowup = _rk4_core(params.alpha, params.beta, params.delta, y0, dt, steps)
    if blowup >= 0:
        raise BlowUpError(blowup)
    return traj


def model_flow(params: VocalFoldParams, init=(0.1, 0.1), dt: float = 1e-2,
               steps: int = 499, x0: float = 0.1,
               rectify: bool = True) -> np.ndarray:
    """Mean-removed flow max(0, 2*x0 + x_l + x_r) over steps+1 samples.

    This is the flow the fit objective and its adjoint differentiate
    (rectification matches the flow equation; pass rectify=False for the
    smooth unclamped variant). The normalized estimate for downstream
    pairing is produced separately by glottal_flow_from_traj.
    """
    traj = _simulate(params, init, dt, steps)
    flow = 2.0 * x0 + traj[:, 0] + traj[:, 2]
    if rectify:
        flow = np.maximum(flow, 0.0)
    return flow - flow.mean()


class DegenerateFlowError(ValueError):
    """Model flow has no energy in the comparison window (decayed to rest)."""


def _best_window_start(u: np.ndarray, flow: np.ndarray, burn: int) -> int:
    """Start index in [0, burn] of the length-len(u) window of `flow` that
    minimizes the scale-aligned residual against zero-mean `u`.

    J(k) = (||u||^2 - <u, m_k>^2 / ||m_k||^2) / n with m_k the mean-removed
    window, so the best k maximizes <u, m_k>^2 / ||m_k||^2.
    """
    n = len(u)
    c = np.correlate(flow[:burn + n], u, mode="valid")  # <u, window_k>
    csum = np.concatenate([[0.0], np.cumsum(flow)])
    csum2 = np.concatenate([[0.0], np.cumsum(flow * flow)])
    win_sum = csum[n:burn + n + 1] - csum[:burn + 1]
    win_en = csum2[n:burn + n + 1] - csum2[:burn + 1]
    var = win_en - win_sum * win_sum / n  # ||m_k||^2 after mean removal
    score = np.where(var > 1e-12 * var.max() if var.max() > 0 else var > 0,
                     c * c / np.maximum(var, 1e-300), -np.inf)
    return int(np.argmax(score))


def _objective_from_traj(u_filter: np.ndarray, traj: np.ndarray, x0: float,
                         lag_align: bool = False, rectify: bool = True,
                         burn: int = 0):
    raw_full = 2.0 * x0 + traj[:, 0] + traj[:, 2]
    flow_full = np.maximum(raw_full, 0.0) if rectify else raw_full
    n = len(u_filter)
    # With lag alignment the comparison window slides over [k, k+n) for
    # k in [0, burn]; the phase of a real frame is arbitrary relative to the
    # fixed simulation start, so the best-fitting window is chosen and then
    # held fixed in the gradient.
    k = _best_window_start(u_filter, flow_full, burn) if (lag_align and burn) else burn
    raw = raw_full[k:k + n]
    flow = flow_full[k:k + n]
    m = flow - flow.mean()
    energy = float(np.dot(m, m))
    if energy == 0.0:
        raise DegenerateFlowError("zero-energy model flow")
    s = float(np.dot(u_filter, m)) / energy
    r = u_filter - s * m
    loss = float(np.dot(r, r)) / n
    # dJ/dm: the s*-dependence drops out because <r, m> = 0 at the aligned
    # optimum; mean removal then projects out the constant component. The
    # window start is held fixed; rectification contributes a clamp mask
    # (subgradient 0 where the flow is closed).
    dm = (-2.0 * s / n) * r
    q_win = dm - dm.mean()
    if rectify:
        q_win = q_win * (raw > 0.0)
    q = np.zeros(len(traj))
    q[k:k + n] = q_win
    return loss, q


@njit(cache=True)
def _f_vjp(a, b, d, y, w, gy):
    """gy += w^T df/dy; returns (g_alpha, g_beta, g_delta) contribution."""
    xr, vr, xl, vl = y[0], y[1], y[2], y[3]
    gy[0] += w[1] * (-2.0 * b * xr * vr - (1.0 - d / 2.0))
    gy[1] += w[0] + w[1] * (a - b * (1.0 + xr * xr)) + w[3] * a
    gy[2] += w[3] * (-2.0 * b * xl * vl - (1.0 + d / 2.0))
    gy[3] += w[2] + w[3] * (a - b * (1.0 + xl * xl)) + w[1] * a
    ga = (w[1] + w[3]) * (vr + vl)
    gb = -w[1] * (1.0 + xr * xr) * vr - w[3] * (1.0 + xl * xl) * vl
    gd = 0.5 * (w[1] * xr - w[3] * xl)
    return ga, gb, gd


@njit(cache=True)
def _adjoint_core(a, b, d, traj, dt, q):
    n_pts = traj.shape[0]
    ga = 0.0
    gb = 0.0
    gd = 0.0
    lam = np.zeros(4)
    lam[0] = q[n_pts - 1]
    lam[2] = q[n_pts - 1]
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    y2 = np.empty(4)
    y3 = np.empty(4)
    y4 = np.empty(4)
    k1b = np.empty(4)
    k2b = np.empty(4)
    k3b = np.empty(4)
    k4b = np.empty(4)
    ybar = np.empty(4)
    gtmp = np.zeros(4)
    for n in range(n_pts - 2, -1, -1):
        y = traj[n]
        # recompute RK4 stage states
        _deriv_local(a, b, d, y, k1)
        for i in range(4):
            y2[i] = y[i] + 0.5 * dt * k1[i]
        _deriv_local(a, b, d, y2, k2)
        for i in range(4):
            y3[i] = y[i] + 0.5 * dt * k2[i]
        _deriv_local(a, b, d, y3, k3)
        for i in range(4):
            y4[i] = y[i] + dt * k3[i]
        # reverse through y_{n+1} = y + dt/6 (k1 + 2 k2 + 2 k3 + k4)
        for i in range(4):
            ybar[i] = lam[i]
            k1b[i] = dt / 6.0 * lam[i]
            k2b[i] = dt / 3.0 * lam[i]
            k3b[i] = dt / 3.0 * lam[i]
            k4b[i] = dt / 6.0 * lam[i]
        # stage 4: k4 = f(y4), y4 = y + dt k3
        for i in range(4):
            gtmp[i] = 0.0
        da, db, dd = _f_vjp(a, b, d, y4, k4b, gtmp)
        ga += da
        gb += db
        gd += dd
        for i in range(4):
            ybar[i] += gtmp[i]
            k3b[i] += dt * gtmp[i]
        # stage 3: k3 = f(y3), y3 = y + dt/2 k2
        for i in range(4):
            gtmp[i] = 0.0
        da, db, dd = _f_vjp(a, b, d, y3, k3b, gtmp)
        ga += da
        gb += db
        gd += dd
        for i in range(4):
            ybar[i] += gtmp[i]
            k2b[i] += 0.5 * dt * gtmp[i]
        # stage 2: k2 = f(y2), y2 = y + dt/2 k1
        for i in range(4):
            gtmp[i] = 0.0
        da, db, dd = _f_vjp(a, b, d, y2, k2b, gtmp)
        ga += da
        gb += db
        gd += dd
        for i in range(4):
            ybar[i] += gtmp[i]
            k1b[i] += 0.5 * dt * gtmp[i]
        # stage 1: k1 = f(y)
        for i in range(4):
            gtmp[i] = 0.0
        da, db, dd = _f_vjp(a, b, d, y, k1b, gtmp)
        ga += da
        gb += db
        gd += dd
        for i in range(4):
            lam[i] = ybar[i] + gtmp[i]
        lam[0] += q[n]
        lam[2] += q[n]
    return ga, gb, gd


@njit(cache=True)
def _deriv_local(a, b, d, y, out):
    couple = a * (y[1] + y[3])
    out[0] = y[1]
    out[1] = couple - b * (1.0 + y[0] * y[0]) * y[1] - (1.0 - d / 2.0) * y[0]
    out[2] = y[3]
    out[3] = couple - b * (1.0 + y[2] * y[2]) * y[3] - (1.0 + d / 2.0) * y[2]


def objective(params: VocalFoldParams, u_filter, init=(0.1, 0.1),
              dt: float = 1e-2, steps: int | None = None, x0: float = 0.1,
              lag_align: bool = False, rectify: bool = True,
              burn: int = 0, delta_ridge: float = 0.0) -> float:
    """The discrete fit objective J(params) for a given target flow."""
    uf = _as_samples(u_filter)
    if steps is None:
        steps = len(uf) - 1
    traj = _simulate(params, init, dt, steps + burn)
    loss, _ = _objective_from_traj(uf, traj, x0, lag_align, rectify, burn)
    return loss + delta_ridge * params.delta ** 2


def adjoint_gradient(params: VocalFoldParams, u_filter, init=(0.1, 0.1),
                     dt: float = 1e-2, steps: int | None = None,
                     x0: float = 0.1, lag_align: bool = False,
                     rectify: bool = True, burn: int = 0,
                     delta_ridge: float = 0.0) -> np.ndarray:
    """(dJ/dalpha, dJ/dbeta, dJ/ddelta) by reverse sweep over the RK4 steps."""
    uf = _as_samples(u_filter)
    if steps is None:
        steps = len(uf) - 1
    if steps + 1 != len(uf):
        raise ValueError("steps+1 must equal the target flow length")
    traj = _simulate(params, init, dt, steps + burn)
    _, q = _objective_from_traj(uf, traj, x0, lag_align, rectify, burn)
    ga, gb, gd = _adjoint_core(params.alpha, params.beta, params.delta, traj, dt, q)
    gd += 2.0 * delta_ridge * params.delta
    return np.array([ga, gb, gd])


def finite_diff_gradient(params: VocalFoldParams, u_filter=None, init=(0.1, 0.1),
                         dt: float = 1e-2, steps: int | None = None,
                         x0: float = 0.1, h: float = 1e-5,
                         objective_fn=None) -> np.ndarray:
    """Central-difference gradient of the same objective (test oracle).

    objective_fn(alpha, beta, delta) may be injected to differentiate an
    arbitrary scalar function instead of the fit objective.
    """
    if objective_fn is None:
        uf = _as_samples(u_filter)
        def objective_fn(a, b, d):
            return objective(VocalFoldParams(a, b, d), uf, init, dt, steps, x0)
    p = np.array([params.alpha, params.beta, params.delta])
    grad = np.empty(3)
    for i in range(3):
        hi = np.zeros(3)
        hi[i] = h
        grad[i] = (objective_fn(*(p + hi)) - objective_fn(*(p - hi))) / (2 * h)
    return grad


def _project(p: np.ndarray, alpha_max: float = np.inf,
             beta_max: float = np.inf) -> np.ndarray:
    return np.array([min(max(p[0], 0.0), alpha_max),
                     min(max(p[1], PARAM_BOX_EPS), beta_max),
                     min(max(p[2], -DELTA_MAX), DELTA_MAX)])


def fit_frame(u_filter, init_params: VocalFoldParams,
              opts: FitOptions = FitOptions()) -> FitResult:
    """Projected gradient descent with backtracking line search.

    Deterministic given (u_filter, init_params, opts): the descent runs from
    init_params, then from the configured delta probes if the loss is still
    above opts.probe_loss_threshold, and the lowest-loss result wins.
    """
    uf = _as_samples(u_filter)
    if not np.any(uf):
        raise ValueError("u_filter must be nonzero")
    steps = len(uf) - 1

    starts = [init_params.as_array()]
    for d0 in opts.delta_probes:
        if abs(d0 - init_params.delta) > 1e-12:
            starts.append(np.array([init_params.alpha, init_params.beta, d0]))

    best = None
    for start in starts:
        res = _descend(uf, start, steps, opts)
        if best is None or res[1] < best[1]:
            best = res
        if best[1] <= opts.probe_loss_threshold:
            break
    p, loss, trace, converged, iters = best

    params = VocalFoldParams(*p)
    traj_arr = _simulate(params, opts.init, opts.dt, steps + opts.burn_steps)
    traj_arr = traj_arr[opts.burn_steps:]
    traj = FoldTrajectory(dt=opts.dt, x_r=traj_arr[:, 0], v_r=traj_arr[:, 1],
                          x_l=traj_arr[:, 2], v_l=traj_arr[:, 3],
                          init=(traj_arr[0, 0], traj_arr[0, 2]))
    geom = GlottalGeometry(x0=opts.x0)
    frame_index = u_filter.frame_index if isinstance(u_filter, GlottalFlowEstimate) else 0
    final_flow = glottal_flow_from_traj(traj, geom, n_out=len(uf),
                                        rectify=opts.rectify_output,
                                        frame_index=frame_index)
    return FitResult(params=params, loss_trace=trace, converged=converged,
                     iterations=iters, final_flow=final_flow)


def _descend(uf: np.ndarray, start: np.ndarray, steps: int, opts: FitOptions):
    def loss_at(p):
        return objective(VocalFoldParams(*p), uf, opts.init, opts.dt, steps,
                         opts.x0, opts.lag_align, burn=opts.burn_steps,
                         delta_ridge=opts.delta_ridge)

    p = _project(start, opts.alpha_max, opts.beta_max)
    loss = loss_at(p)
    trace = [loss]
    converged = False
    iters = 0
    prev_p = None
    prev_g = None
    for iters in range(1, opts.max_iters + 1):
        g = adjoint_gradient(VocalFoldParams(*p), uf, opts.init, opts.dt,
                             steps, opts.x0, opts.lag_align,
                             burn=opts.burn_steps,
                             delta_ridge=opts.delta_ridge)
        if np.linalg.norm(g) < opts.grad_tol:
            converged = True
            break
        # Barzilai-Borwein trial step (falls back to step0 on the first
        # iteration); backtracking below keeps every accepted step monotone.
        t = opts.step0
        if prev_g is not None:
            s_vec = p - prev_p
            y_vec = g - prev_g
            sy = float(np.dot(s_vec, y_vec))
            if sy > 0:
                t = float(np.dot(s_vec, s_vec)) / sy
        prev_p, prev_g = p.copy(), g.copy()
        accepted = False
        while t > 1e-14:
            cand = _project(p - t * g, opts.alpha_max, opts.beta_max)
            step_vec = p - cand
            try:
                cand_loss = loss_at(cand)
            except (BlowUpError, DegenerateFlowError):
                t *= opts.shrink
                continue
            if cand_loss <= loss - opts.armijo * float(np.dot(g, step_vec)):
                accepted = True
                break
            t *= opts.shrink
        if not accepted:
            break
        rel_change = abs(loss - cand_loss) / max(loss, 1e-30)
        p, loss = cand, cand_loss
        trace.append(loss)
        if rel_change < opts.loss_tol:
            converged = True
            break

    return p, loss, trace, converged, iters
