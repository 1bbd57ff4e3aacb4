"""Hard-constrained recurrent cell: known physics plus a learned residual.

The cell advances (x, v) by integrating

    dx/dt = v                                  (hard constraint, exact)
    dv/dt = known_vdot(x, v) + R(x/scale, v/scale)

so the branch can only ever model the missing v-dot term.  Teacher-forcing
and BPTT losses come with exact reverse-mode gradients threaded through the
integrator stages; for BPTT the adjoint also flows through the state path
via the branch input jacobian.

Everything here is batched over a leading sample axis; the scalar State API
wraps batch size 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import Dataset, DivergenceError, OscillatorSpec, State, Trajectory

RK4 = "rk4"
EULER = "euler"

# A state is divergent once any component is non-finite or exceeds this.
DIVERGE_BOUND = 1.0e6


class OracleResidual:
    """Analytical residual wearing the branch interface (zero parameters).

    Substituting it for a trained branch closes the loop exactly: the hybrid
    cell then integrates the true dynamics, which pins down every loss and
    metric in this package against a known answer.
    """

    def __init__(self, spec: OscillatorSpec, scale: float):
        self.spec = spec
        self.scale = float(scale)
        self.params = np.zeros(0)

    @property
    def n_params(self) -> int:
        return 0

    def eval_batch(self, xn, vn):
        x = np.asarray(xn, dtype=float) * self.scale
        v = np.asarray(vn, dtype=float) * self.scale
        return self.spec.true_residual(x, v), (x, v)

    def param_vjp(self, cache, upstream):
        return np.zeros(0)

    def input_vjp(self, cache, upstream):
        x, v = cache
        px, pv = self.spec.true_residual_partials(x, v)
        return upstream * px * self.scale, upstream * pv * self.scale

    def combined_vjp(self, cache, upstream):
        return np.zeros(0), self.input_vjp(cache, upstream)

    def l1_value(self) -> float:
        return 0.0

    def l1_grad_into(self, grads) -> None:
        pass


class ZeroResidual:
    """Identically-zero residual with the branch interface; the hybrid cell
    then integrates the known part alone."""

    params = np.zeros(0)
    n_params = 0

    def eval_batch(self, xn, vn):
        return np.zeros(np.broadcast(np.asarray(xn), np.asarray(vn)).shape), None

    def param_vjp(self, cache, upstream):
        return np.zeros(0)

    def input_vjp(self, cache, upstream):
        z = np.zeros_like(np.asarray(upstream, dtype=float))
        return z, z.copy()

    def combined_vjp(self, cache, upstream):
        return np.zeros(0), self.input_vjp(cache, upstream)

    def l1_value(self) -> float:
        return 0.0

    def l1_grad_into(self, grads) -> None:
        pass


@dataclass(frozen=True)
class HybridSystem:
    spec: OscillatorSpec
    branch: object
    dt: float
    integrator: str = RK4
    scale: float = 2.5

    def __post_init__(self):
        if self.integrator not in (RK4, EULER):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.scale <= 0:
            raise ValueError("scale must be positive")


def oracle_system(spec: OscillatorSpec, dt: float, integrator: str = RK4,
                  scale: float = 2.5) -> HybridSystem:
    return HybridSystem(spec, OracleResidual(spec, scale), dt, integrator, scale)


@dataclass(frozen=True)
class RolloutWindow:
    """A free-rollout supervision unit: start state plus K target states."""

    start: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float))
        object.__setattr__(self, "targets", np.asarray(self.targets, dtype=float))
        if self.start.shape != (2,):
            raise ValueError("window start must be a single (x, v) state")
        if self.targets.ndim != 2 or self.targets.shape[0] < 1 or self.targets.shape[1] != 2:
            raise ValueError("window targets must be (K >= 1, 2)")

    @property
    def horizon(self) -> int:
        return self.targets.shape[0]


def _vdot_batch(h: HybridSystem, X, V):
    """Known v-dot plus residual, with the branch cache for the backward pass."""
    vals, cache = h.branch.eval_batch(X / h.scale, V / h.scale)
    return h.spec.known_vdot(X, V) + vals, cache


def _check_finite(X, V, step: int) -> None:
    ok = np.isfinite(X) & np.isfinite(V)
    ok &= (np.abs(np.where(ok, X, 0.0)) <= DIVERGE_BOUND)
    ok &= (np.abs(np.where(ok, V, 0.0)) <= DIVERGE_BOUND)
    if not ok.all():
        raise DivergenceError(f"state diverged at step {step}", step=step)


def step_batch(h: HybridSystem, X, V, step: int = 0):
    """One integrator step over a batch; returns (X', V', cache).

    The cache records each stage's input states and branch cache, which is
    exactly what ``step_vjp`` consumes.
    """
    dt = h.dt
    if h.integrator == EULER:
        F, bc = _vdot_batch(h, X, V)
        XP = X + dt * V
        VP = V + dt * F
        cache = [(X, V, bc)]
    else:
        F1, bc1 = _vdot_batch(h, X, V)
        X2, V2 = X + 0.5 * dt * V, V + 0.5 * dt * F1
        F2, bc2 = _vdot_batch(h, X2, V2)
        X3, V3 = X + 0.5 * dt * V2, V + 0.5 * dt * F2
        F3, bc3 = _vdot_batch(h, X3, V3)
        X4, V4 = X + dt * V3, V + dt * F3
        F4, bc4 = _vdot_batch(h, X4, V4)
        XP = X + (dt / 6.0) * (V + 2.0 * V2 + 2.0 * V3 + V4)
        VP = V + (dt / 6.0) * (F1 + 2.0 * F2 + 2.0 * F3 + F4)
        cache = [(X, V, bc1), (X2, V2, bc2), (X3, V3, bc3), (X4, V4, bc4)]
    _check_finite(XP, VP, step)
    return XP, VP, cache


def step_vjp(h: HybridSystem, cache, lx, lv, grads: np.ndarray):
    """Reverse one step: given adjoints on (X', V'), accumulate branch
    parameter gradients into ``grads`` and return adjoints on (X, V)."""
    dt = h.dt

    def stage_adjoint(stage, wx, wv):
        # Adjoint of F = known_vdot + R through one stage: wv hits F, wx hits
        # the kinematic slope (which is just the stage V).
        X, V, bc = stage
        g, (dxn, dvn) = h.branch.combined_vjp(bc, wv)
        if g.size:
            grads[...] += g
        kx, kv = h.spec.known_vdot_partials(X, V)
        lX = wv * kx + dxn / h.scale
        lV = wx + wv * kv + dvn / h.scale
        return lX, lV

    if h.integrator == EULER:
        sX, sV = stage_adjoint(cache[0], lx * dt, lv * dt)
        return lx + sX, lv + sV

    w6, w3 = dt / 6.0, dt / 3.0
    ax, av = lx.copy(), lv.copy()
    # stage 4 (weight dt/6), feeding back into stage 3 through X4, V4
    l4x, l4v = stage_adjoint(cache[3], lx * w6, lv * w6)
    ax += l4x
    av += l4v
    # stage 3 (weight dt/3 plus the cascade from stage 4 scaled by dt)
    l3x, l3v = stage_adjoint(cache[2], lx * w3 + dt * l4x, lv * w3 + dt * l4v)
    ax += l3x
    av += l3v
    # stage 2
    l2x, l2v = stage_adjoint(cache[1], lx * w3 + 0.5 * dt * l3x, lv * w3 + 0.5 * dt * l3v)
    ax += l2x
    av += l2v
    # stage 1
    l1x, l1v = stage_adjoint(cache[0], lx * w6 + 0.5 * dt * l2x, lv * w6 + 0.5 * dt * l2v)
    return ax + l1x, av + l1v


def hybrid_step(h: HybridSystem, s: State) -> State:
    XP, VP, _ = step_batch(h, np.array([s.x]), np.array([s.v]))
    return State(float(XP[0]), float(VP[0]))


def rollout(h: HybridSystem, s0: State, n: int) -> Trajectory:
    if n < 1:
        raise ValueError("rollout needs n >= 1 steps")
    states = np.empty((n + 1, 2))
    states[0] = (s0.x, s0.v)
    X, V = np.array([s0.x]), np.array([s0.v])
    for step in range(1, n + 1):
        X, V, _ = step_batch(h, X, V, step=step)
        states[step] = (X[0], V[0])
    return Trajectory(h.dt, states)


def transitions_of(trajectories) -> tuple[np.ndarray, np.ndarray]:
    """All consecutive state pairs, concatenated: (S0, S1) each (N, 2)."""
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("no trajectories")
    s0 = np.concatenate([t.states[:-1] for t in trajectories], axis=0)
    s1 = np.concatenate([t.states[1:] for t in trajectories], axis=0)
    return s0, s1


def tf_loss_value(h: HybridSystem, s0: np.ndarray, s1: np.ndarray) -> float:
    XP, VP, _ = step_batch(h, s0[:, 0], s0[:, 1])
    sq = (XP - s1[:, 0]) ** 2 + (VP - s1[:, 1]) ** 2
    return float(sq.mean()) + h.branch.l1_value()


def tf_loss_grads(h: HybridSystem, s0: np.ndarray, s1: np.ndarray):
    """Teacher-forcing loss and its gradient on a transition batch."""
    n = s0.shape[0]
    XP, VP, cache = step_batch(h, s0[:, 0], s0[:, 1])
    dx, dv = XP - s1[:, 0], VP - s1[:, 1]
    loss = float((dx ** 2 + dv ** 2).mean()) + h.branch.l1_value()
    grads = np.zeros_like(h.branch.params)
    step_vjp(h, cache, (2.0 / n) * dx, (2.0 / n) * dv, grads)
    h.branch.l1_grad_into(grads)
    return loss, grads


def teacher_forcing_loss(h: HybridSystem, trajectories):
    """Mean one-step squared error over every transition, plus L1."""
    s0, s1 = transitions_of(trajectories)
    return tf_loss_grads(h, s0, s1)


def make_windows(trajectories, horizon: int) -> list[RolloutWindow]:
    """Chop each trajectory into non-overlapping K-step windows."""
    if horizon < 1:
        raise ValueError("window horizon must be >= 1")
    windows = []
    for traj in trajectories:
        n_steps = traj.states.shape[0] - 1
        for j in range(n_steps // horizon):
            lo = j * horizon
            windows.append(
                RolloutWindow(traj.states[lo], traj.states[lo + 1 : lo + 1 + horizon])
            )
    return windows


def _window_arrays(windows):
    windows = list(windows)
    if not windows:
        raise ValueError("no rollout windows")
    horizon = windows[0].horizon
    if any(w.horizon != horizon for w in windows):
        raise ValueError("all windows in one batch must share the horizon")
    starts = np.stack([w.start for w in windows])
    targets = np.stack([w.targets for w in windows])
    return starts, targets, horizon


def bptt_loss_value(h: HybridSystem, windows) -> float:
    starts, targets, _ = _window_arrays(windows)
    return bptt_value_arrays(h, starts, targets)


def bptt_value_arrays(h: HybridSystem, starts: np.ndarray, targets: np.ndarray) -> float:
    horizon = targets.shape[1]
    X, V = starts[:, 0], starts[:, 1]
    total = 0.0
    for t in range(horizon):
        X, V, _ = step_batch(h, X, V, step=t + 1)
        total += float(((X - targets[:, t, 0]) ** 2 + (V - targets[:, t, 1]) ** 2).sum())
    return total / (starts.shape[0] * horizon) + h.branch.l1_value()


def bptt_loss(h: HybridSystem, windows, state_path: bool = True):
    """K-step free-rollout loss with the full adjoint sweep.

    ``state_path=False`` drops the adjoint propagation between steps (each
    step then contributes only its local parameter gradient); it exists to
    measure how much the through-state path matters, never for training.
    """
    starts, targets, _ = _window_arrays(windows)
    return bptt_grads_arrays(h, starts, targets, state_path=state_path)


def bptt_grads_arrays(h: HybridSystem, starts: np.ndarray, targets: np.ndarray,
                      state_path: bool = True):
    n, horizon = targets.shape[0], targets.shape[1]
    X, V = starts[:, 0], starts[:, 1]
    caches, diffs = [], []
    total = 0.0
    for t in range(horizon):
        X, V, cache = step_batch(h, X, V, step=t + 1)
        dx, dv = X - targets[:, t, 0], V - targets[:, t, 1]
        total += float((dx ** 2 + dv ** 2).sum())
        caches.append(cache)
        diffs.append((dx, dv))
    norm = n * horizon
    loss = total / norm + h.branch.l1_value()

    grads = np.zeros_like(h.branch.params)
    lx = np.zeros(n)
    lv = np.zeros(n)
    for t in range(horizon - 1, -1, -1):
        dx, dv = diffs[t]
        lx = lx + (2.0 / norm) * dx
        lv = lv + (2.0 / norm) * dv
        lx, lv = step_vjp(h, caches[t], lx, lv, grads)
        if not state_path:
            lx = np.zeros(n)
            lv = np.zeros(n)
    h.branch.l1_grad_into(grads)
    return loss, grads
