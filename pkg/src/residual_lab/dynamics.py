"""Benchmark oscillators and reference data generation.

Two second-order systems, each split into a declared known part and a
ground-truth residual acting only on the acceleration:

* Duffing:     x' = v,  v' = -x - 0.3 x^3      (known -x, residual -0.3 x^3)
* Van der Pol: x' = v,  v' = -x + (1 - x^2) v  (known -x, residual (1 - x^2) v)

Reference trajectories come from classical fixed-step RK4 on the full
right-hand side.  Datasets bundle train/test trajectories with the
normalization constant used by residual branches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import stream

DUFFING = "duffing"
VANDERPOL = "vanderpol"
OSCILLATOR_KINDS = (DUFFING, VANDERPOL)

# Normalization divisor applied to states before they enter a residual branch;
# matches the evaluation window so normalized inputs land in roughly [-1, 1].
DEFAULT_SCALE = 2.5
# Initial conditions are drawn uniformly from [-IC_BOX, IC_BOX]^2.
IC_BOX = 2.0
# Any trajectory leaving |x|,|v| <= SANITY_BOUND has its IC redrawn.
SANITY_BOUND = 10.0
RESAMPLE_CAP = 100

_FLOAT_FMT = "%.17g"  # round-trip exact for IEEE doubles


class DivergenceError(RuntimeError):
    """Integration produced a non-finite or runaway state."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class State:
    """Phase-space point (position, velocity); both components finite."""

    x: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.v)):
            raise ValueError(f"non-finite state ({self.x}, {self.v})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.v])


@dataclass(frozen=True)
class OscillatorSpec:
    """One benchmark system: known physics plus ground-truth residual.

    The known part is the undamped, unforced linear oscillator v' = -x for
    both systems; the residual is everything the learned branch is supposed
    to recover.  All maps accept scalars or numpy arrays.
    """

    kind: str

    def __post_init__(self):
        if self.kind not in OSCILLATOR_KINDS:
            raise ValueError(f"unknown oscillator kind {self.kind!r}")

    def known_vdot(self, x, v):
        return -x

    def known_vdot_partials(self, x, v):
        """(d/dx, d/dv) of the known acceleration."""
        x = np.asarray(x, dtype=float)
        return -np.ones_like(x), np.zeros_like(x)

    def known_rhs(self, s: State) -> State:
        return State(s.v, float(self.known_vdot(s.x, s.v)))

    def true_residual(self, x, v):
        if self.kind == DUFFING:
            return -0.3 * x**3
        return (1.0 - x * x) * v

    def true_residual_partials(self, x, v):
        """(d/dx, d/dv) of the ground-truth residual."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.kind == DUFFING:
            return -0.9 * x * x, np.zeros_like(v)
        return -2.0 * x * v, 1.0 - x * x


def duffing() -> OscillatorSpec:
    return OscillatorSpec(DUFFING)


def vanderpol() -> OscillatorSpec:
    return OscillatorSpec(VANDERPOL)


def oscillator(kind: str) -> OscillatorSpec:
    return OscillatorSpec(kind)


def full_rhs(spec: OscillatorSpec, s: State) -> State:
    """Complete dynamics: (x', v') = (v, known_vdot + residual)."""
    vdot = spec.known_vdot(s.x, s.v) + spec.true_residual(s.x, s.v)
    return State(s.v, float(vdot))


def rk4_step(rhs, s: State, dt: float) -> State:
    """One classical fourth-order Runge-Kutta step of the map rhs: State -> State."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")

    def f(y):
        if not np.all(np.isfinite(y)):
            raise DivergenceError("non-finite intermediate state in rk4_step")
        d = rhs(State(y[0], y[1]))
        return np.array([d.x, d.v])

    y = s.as_array()
    k1 = f(y)
    k2 = f(y + dt / 2 * k1)
    k3 = f(y + dt / 2 * k2)
    k4 = f(y + dt * k3)
    out = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("rk4_step produced a non-finite state")
    return State(out[0], out[1])


def _full_rhs_arrays(spec: OscillatorSpec, X, V):
    return V, spec.known_vdot(X, V) + spec.true_residual(X, V)


def integrate_batch(spec: OscillatorSpec, ics: np.ndarray, dt: float, n_steps: int) -> np.ndarray:
    """RK4-integrate a (n, 2) block of initial conditions; returns (n, n_steps+1, 2)."""
    n = ics.shape[0]
    out = np.empty((n, n_steps + 1, 2))
    out[:, 0] = ics
    X, V = ics[:, 0].copy(), ics[:, 1].copy()
    for t in range(n_steps):
        k1x, k1v = _full_rhs_arrays(spec, X, V)
        k2x, k2v = _full_rhs_arrays(spec, X + dt / 2 * k1x, V + dt / 2 * k1v)
        k3x, k3v = _full_rhs_arrays(spec, X + dt / 2 * k2x, V + dt / 2 * k2v)
        k4x, k4v = _full_rhs_arrays(spec, X + dt * k3x, V + dt * k3v)
        X = X + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        V = V + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(V))):
            raise DivergenceError("batch integration diverged", step=t)
        out[:, t + 1, 0] = X
        out[:, t + 1, 1] = V
    return out


@dataclass
class Trajectory:
    """Fixed-step trajectory; ``states`` is an (n, 2) array of [x, v] rows."""

    dt: float
    states: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.states.ndim != 2 or self.states.shape[1] != 2 or len(self.states) < 2:
            raise ValueError(f"states must be (n>=2, 2), got {self.states.shape}")

    def __len__(self) -> int:
        return len(self.states)

    def state(self, i: int) -> State:
        return State(self.states[i, 0], self.states[i, 1])

    def times(self) -> np.ndarray:
        return np.arange(len(self.states)) * self.dt


@dataclass
class Dataset:
    """Train/test trajectory collections plus the branch-input normalization."""

    oscillator: str
    train: list[Trajectory]
    test: list[Trajectory]
    scale: float = DEFAULT_SCALE

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        dts = {t.dt for t in self.train} | {t.dt for t in self.test}
        if len(dts) > 1:
            raise ValueError(f"trajectories disagree on dt: {sorted(dts)}")

    @property
    def dt(self) -> float:
        return (self.train or self.test)[0].dt


def _sample_trajectories(spec, n, dt, n_steps, rng, sanity_bound) -> tuple[np.ndarray, np.ndarray]:
    """Draw n ICs from the IC box, integrating and redrawing any that escape
    the sanity box.  Returns (ics, trajectories (n, n_steps+1, 2))."""
    ics = rng.uniform(-IC_BOX, IC_BOX, size=(n, 2))
    trajs = integrate_batch(spec, ics, dt, n_steps)
    for _ in range(RESAMPLE_CAP):
        bad = np.flatnonzero(np.abs(trajs).max(axis=(1, 2)) > sanity_bound)
        if bad.size == 0:
            return ics, trajs
        ics[bad] = rng.uniform(-IC_BOX, IC_BOX, size=(bad.size, 2))
        trajs[bad] = integrate_batch(spec, ics[bad], dt, n_steps)
    raise RuntimeError(
        f"IC resampling exceeded {RESAMPLE_CAP} attempts (sanity bound {sanity_bound})"
    )


def generate_dataset(
    spec: OscillatorSpec,
    n_train_ics: int,
    n_test_ics: int,
    dt: float,
    n_steps: int,
    seed: int,
    noise_std: float = 0.0,
    sanity_bound: float = SANITY_BOUND,
    scale: float = DEFAULT_SCALE,
) -> Dataset:
    """Integrate seeded random ICs into a train/test dataset.

    Train ICs are drawn before test ICs from the same stream, so the two
    splits are disjoint with probability one.  ``noise_std`` adds optional
    i.i.d. Gaussian observation noise to the stored states (never fed back
    into the integration); it defaults to none.
    """
    if n_steps < 2:
        raise ValueError("n_steps must be at least 2")
    if dt <= 0:
        raise ValueError("dt must be positive")
    rng = stream(seed, "dataset")
    train_ics, train_arr = _sample_trajectories(spec, n_train_ics, dt, n_steps, rng, sanity_bound)
    test_ics, test_arr = _sample_trajectories(spec, n_test_ics, dt, n_steps, rng, sanity_bound)
    if noise_std > 0:
        train_arr = train_arr + rng.normal(0.0, noise_std, size=train_arr.shape)
        test_arr = test_arr + rng.normal(0.0, noise_std, size=test_arr.shape)
    return Dataset(
        oscillator=spec.kind,
        train=[Trajectory(dt, train_arr[i]) for i in range(n_train_ics)],
        test=[Trajectory(dt, test_arr[i]) for i in range(n_test_ics)],
        scale=scale,
    )


def save_dataset(ds: Dataset, path) -> None:
    """Write the line-oriented dataset format.

    First line: ``oscillator,dt,scale,n_train,n_test`` values in that order.
    Then, per trajectory, a ``#traj <split> <index>`` line followed by
    ``t,x,v`` rows printed with 17 significant digits (round-trip exact).
    """
    lines = [
        "%s,%s,%s,%d,%d"
        % (ds.oscillator, _FLOAT_FMT % ds.dt, _FLOAT_FMT % ds.scale, len(ds.train), len(ds.test))
    ]
    for split, trajs in (("train", ds.train), ("test", ds.test)):
        for i, traj in enumerate(trajs):
            lines.append(f"#traj {split} {i}")
            for t, (x, v) in zip(traj.times(), traj.states):
                lines.append(f"{_FLOAT_FMT % t},{_FLOAT_FMT % x},{_FLOAT_FMT % v}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"empty dataset file {path}")
    osc, dt_s, scale_s, n_train_s, n_test_s = lines[0].split(",")
    dt, scale = float(dt_s), float(scale_s)
    n_train, n_test = int(n_train_s), int(n_test_s)
    splits: dict[str, list[Trajectory]] = {"train": [], "test": []}
    current: list[list[float]] = []
    current_split = None

    def flush():
        if current_split is not None:
            splits[current_split].append(Trajectory(dt, np.array(current)))
        current.clear()

    for line in lines[1:]:
        if line.startswith("#traj"):
            flush()
            current_split = line.split()[1]
        elif line:
            _, x, v = line.split(",")
            current.append([float(x), float(v)])
    flush()
    if len(splits["train"]) != n_train or len(splits["test"]) != n_test:
        raise ValueError(f"dataset file {path} is inconsistent with its header")
    return Dataset(oscillator=osc, train=splits["train"], test=splits["test"], scale=scale)
