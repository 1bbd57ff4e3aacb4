"""Residual branch families over the normalized state (xn, vn) -> scalar.

Two families share one flat-parameter interface:

* ``KanArch`` — every edge (input i -> unit j) of every layer carries a
  learnable univariate function: ``base_scale * silu(u) + spline_scale *
  sum_c coef_c * basis_c(clamp(u))``.  Units sum their incoming edges; there
  are no node biases.  Inputs are clamped to the spline domain for the basis
  but passed unclamped to the silu base term, which keeps the forward total
  and gradients alive during early-training excursions.
* ``MlpArch`` — standard affine layers, ReLU on hidden units, identity output.

Flat parameter layout, in layer order:

* KAN layer (n_in -> n_out, M = grid_size + order basis functions):
  spline coefficients (n_in, n_out, M) C-order, then base scales (n_in,
  n_out), then spline scales (n_in, n_out).
* MLP layer: weights (n_in, n_out) C-order, then biases (n_out,).

All gradients are exact reverse-mode; finite-difference tests pin them down.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from .rng import stream
from .splines import SplineSpec, basis_and_derivative, fit_coefficients

KAN = "kan"
MLP = "mlp"

_FLOAT_FMT = "%.17g"


def _check_widths(widths):
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2:
        raise ValueError("widths needs at least input and output entries")
    if widths[0] != 2 or widths[-1] != 1:
        raise ValueError(f"residual branches map (xn, vn) -> scalar; got widths {widths}")
    if any(w < 1 for w in widths):
        raise ValueError(f"layer widths must be positive: {widths}")
    return widths


@dataclass(frozen=True)
class KanArch:
    widths: tuple[int, ...]
    spline: SplineSpec = SplineSpec()
    base_blend: bool = True
    l1_weight: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "widths", _check_widths(self.widths))
        if self.l1_weight < 0:
            raise ValueError("l1_weight must be nonnegative")


@dataclass(frozen=True)
class MlpArch:
    widths: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "widths", _check_widths(self.widths))


Arch = Union[KanArch, MlpArch]


def param_count(arch: Arch) -> int:
    pairs = zip(arch.widths[:-1], arch.widths[1:])
    if isinstance(arch, KanArch):
        per_edge = arch.spline.n_basis + 2
        return sum(n_in * n_out * per_edge for n_in, n_out in pairs)
    return sum((n_in + 1) * n_out for n_in, n_out in pairs)


def _kan_layers(arch: KanArch, params: np.ndarray):
    """Per-layer views (coef, base_scale, spline_scale) into the flat vector."""
    M = arch.spline.n_basis
    out, off = [], 0
    for n_in, n_out in zip(arch.widths[:-1], arch.widths[1:]):
        e = n_in * n_out
        coef = params[off : off + e * M].reshape(n_in, n_out, M)
        base = params[off + e * M : off + e * M + e].reshape(n_in, n_out)
        scale = params[off + e * (M + 1) : off + e * (M + 2)].reshape(n_in, n_out)
        out.append((coef, base, scale))
        off += e * (M + 2)
    return out


def _mlp_layers(arch: MlpArch, params: np.ndarray):
    out, off = [], 0
    for n_in, n_out in zip(arch.widths[:-1], arch.widths[1:]):
        W = params[off : off + n_in * n_out].reshape(n_in, n_out)
        b = params[off + n_in * n_out : off + (n_in + 1) * n_out]
        out.append((W, b))
        off += (n_in + 1) * n_out
    return out


@dataclass
class ResidualBranch:
    """A branch family plus its flat parameter vector."""

    arch: Arch
    params: np.ndarray

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float)
        if self.params.shape != (param_count(self.arch),):
            raise ValueError(
                f"params length {self.params.shape} != param_count {param_count(self.arch)}"
            )

    @property
    def kind(self) -> str:
        return KAN if isinstance(self.arch, KanArch) else MLP

    @property
    def n_params(self) -> int:
        return self.params.size

    # Duck-typed residual interface used by the hybrid cell (the analytical
    # oracle in hybridcell implements the same four methods).
    def eval_batch(self, xn, vn):
        return forward_batch(self, xn, vn)

    def param_vjp(self, cache, upstream):
        g, _ = backward_batch(self, cache, upstream, want_inputs=False)
        return g

    def input_vjp(self, cache, upstream):
        _, d = backward_batch(self, cache, upstream, want_params=False)
        return d

    def combined_vjp(self, cache, upstream):
        return backward_batch(self, cache, upstream)

    def l1_value(self) -> float:
        return l1_penalty(self)

    def l1_grad_into(self, grads: np.ndarray) -> None:
        add_l1_gradient(self, grads)


def init_params(arch: Arch, seed: int) -> np.ndarray:
    """Seed-deterministic initialization.

    MLP weights use He fan-in scaling with zero biases.  KAN spline
    coefficients are small (std 0.1 / n_basis) so the hybrid integrator
    starts near the known physics; base and spline scales start at 1, except
    that ``base_blend=False`` pins base scales at 0.
    """
    rng = stream(seed, "init")
    params = np.zeros(param_count(arch))
    if isinstance(arch, KanArch):
        M = arch.spline.n_basis
        for coef, base, scale in _kan_layers(arch, params):
            coef[:] = rng.normal(0.0, 0.1 / M, size=coef.shape)
            base[:] = 1.0 if arch.base_blend else 0.0
            scale[:] = 1.0
    else:
        for W, b in _mlp_layers(arch, params):
            W[:] = rng.normal(0.0, np.sqrt(2.0 / W.shape[0]), size=W.shape)
            b[:] = 0.0
    return params


def new_branch(arch: Arch, seed: int) -> ResidualBranch:
    return ResidualBranch(arch, init_params(arch, seed))


def trainable_mask(arch: Arch) -> np.ndarray:
    """Boolean mask over the flat vector; False entries are frozen."""
    mask = np.ones(param_count(arch), dtype=bool)
    if isinstance(arch, KanArch) and not arch.base_blend:
        flat = np.zeros(param_count(arch))
        for _, base, _ in _kan_layers(arch, flat):
            base[:] = 1.0
        mask[flat == 1.0] = False
    return mask


def _silu(u):
    with np.errstate(over="ignore"):
        sig = 1.0 / (1.0 + np.exp(-u))
    return sig, u * sig


def forward_batch(branch: ResidualBranch, xn, vn):
    """Evaluate the branch on arrays of normalized coordinates.

    Returns (values (N,), cache); the cache holds everything
    ``backward_batch`` needs, so gradients never re-evaluate the network.
    """
    xn = np.atleast_1d(np.asarray(xn, dtype=float))
    vn = np.atleast_1d(np.asarray(vn, dtype=float))
    U = np.stack([xn, vn], axis=1)
    layers = []
    if isinstance(branch.arch, KanArch):
        lo, hi = branch.arch.spline.domain
        for coef, base, scale in _kan_layers(branch.arch, branch.params):
            Uc = np.clip(U, lo, hi)
            B, dB = basis_and_derivative(branch.arch.spline, Uc)
            sig, silu = _silu(U)
            spl = np.einsum("nim,iom->nio", B, coef)
            Y = silu @ base + np.einsum("nio,io->no", spl, scale)
            layers.append(
                {"U": U, "sig": sig, "silu": silu, "B": B, "dB": dB, "spl": spl,
                 "mask": (U >= lo) & (U <= hi)}
            )
            U = Y
    else:
        mlp = _mlp_layers(branch.arch, branch.params)
        for li, (W, b) in enumerate(mlp):
            Z = U @ W + b
            layers.append({"U": U, "Z": Z})
            U = np.maximum(Z, 0.0) if li < len(mlp) - 1 else Z
    return U[:, 0], layers


def backward_batch(branch, cache, upstream, want_params=True, want_inputs=True):
    """Reverse sweep for d(sum_n upstream_n * R(x_n, v_n)) / d(params, inputs).

    Returns (flat param gradient or None, (d/dxn, d/dvn) arrays or None).
    """
    upstream = np.asarray(upstream, dtype=float)
    Wy = upstream[:, None]
    grads = np.zeros_like(branch.params) if want_params else None
    if isinstance(branch.arch, KanArch):
        views = _kan_layers(branch.arch, branch.params)
        gviews = _kan_layers(branch.arch, grads) if want_params else None
        for li in range(len(views) - 1, -1, -1):
            coef, base, scale = views[li]
            c = cache[li]
            if want_params:
                gcoef, gbase, gscale = gviews[li]
                gbase += c["silu"].T @ Wy
                gscale += np.einsum("nio,no->io", c["spl"], Wy)
                gcoef += scale[:, :, None] * np.einsum("no,nim->iom", Wy, c["B"])
            last = li == 0 and not want_inputs
            if not last:
                dsilu = c["sig"] * (1.0 + c["U"] * (1.0 - c["sig"]))
                dspl = np.einsum("nim,iom->nio", c["dB"], coef)
                Wy = dsilu * (Wy @ base.T) + c["mask"] * np.einsum(
                    "no,io,nio->ni", Wy, scale, dspl
                )
    else:
        views = _mlp_layers(branch.arch, branch.params)
        gviews = _mlp_layers(branch.arch, grads) if want_params else None
        for li in range(len(views) - 1, -1, -1):
            W, _ = views[li]
            c = cache[li]
            Wz = Wy if li == len(views) - 1 else Wy * (c["Z"] > 0)
            if want_params:
                gW, gb = gviews[li]
                gW += c["U"].T @ Wz
                gb += Wz.sum(axis=0)
            Wy = Wz @ W.T
    din = (Wy[:, 0].copy(), Wy[:, 1].copy()) if want_inputs else None
    return grads, din


def branch_forward(branch: ResidualBranch, xn: float, vn: float):
    """Scalar forward pass; returns (value, cache)."""
    vals, cache = forward_batch(branch, [xn], [vn])
    return float(vals[0]), cache


def branch_gradients(branch: ResidualBranch, batch) -> np.ndarray:
    """Gradient of sum(upstream * R(xn, vn)) over a batch of triples."""
    triples = list(batch)
    if not triples:
        raise ValueError("branch_gradients needs a nonempty batch")
    xs, vs, ws = (np.array(col, dtype=float) for col in zip(*triples))
    if not np.all(np.isfinite(ws)):
        raise ValueError("non-finite upstream weight in batch")
    _, cache = forward_batch(branch, xs, vs)
    grads, _ = backward_batch(branch, cache, ws, want_inputs=False)
    return grads


def branch_input_jacobian(branch: ResidualBranch, xn: float, vn: float):
    """Exact (dR/dxn, dR/dvn) at one point."""
    _, cache = forward_batch(branch, [xn], [vn])
    _, (dx, dv) = backward_batch(branch, cache, np.ones(1), want_params=False)
    return float(dx[0]), float(dv[0])


def l1_penalty(branch: ResidualBranch) -> float:
    """Sparsity penalty: l1_weight * sum |spline coefficients| (0 for MLPs)."""
    if not isinstance(branch.arch, KanArch) or branch.arch.l1_weight == 0:
        return 0.0
    total = sum(np.abs(coef).sum() for coef, _, _ in _kan_layers(branch.arch, branch.params))
    return branch.arch.l1_weight * total


def add_l1_gradient(branch: ResidualBranch, grads: np.ndarray) -> None:
    """Accumulate the l1 subgradient (sign convention: 0 at 0) into grads."""
    if not isinstance(branch.arch, KanArch) or branch.arch.l1_weight == 0:
        return
    lam = branch.arch.l1_weight
    for (coef, _, _), (gcoef, _, _) in zip(
        _kan_layers(branch.arch, branch.params), _kan_layers(branch.arch, grads)
    ):
        gcoef += lam * np.sign(coef)


def product_construction(spec: SplineSpec) -> ResidualBranch:
    """Hand-set two-layer KAN computing xn * vn exactly on [-1, 1]^2.

    Uses the polarization identity xy = ((x+y)^2 - (x-y)^2) / 4: the first
    layer forms (xn + vn, xn - vn) from linear edge splines, the second
    squares and differences them.  Both layers share the domain [-2, 2] so
    the intermediate sums stay inside it; requires order >= 2 for exact
    quadratics.
    """
    if spec.order < 2:
        raise ValueError("product construction needs spline order >= 2")
    pspec = SplineSpec(spec.grid_size, spec.order, (-2.0, 2.0))
    arch = KanArch((2, 2, 1), pspec, base_blend=False, l1_weight=0.0)
    params = np.zeros(param_count(arch))
    (c0, b0, s0), (c1, b1, s1) = _kan_layers(arch, params)
    ident = fit_coefficients(pspec, lambda u: u)
    c0[0, 0] = ident
    c0[1, 0] = ident
    c0[0, 1] = ident
    c0[1, 1] = -ident
    s0[:] = 1.0
    c1[0, 0] = fit_coefficients(pspec, lambda u: 0.25 * u * u)
    c1[1, 0] = -c1[0, 0]
    s1[:] = 1.0
    return ResidualBranch(arch, params)


def save_branch(branch: ResidualBranch, path, seed: int = 0) -> None:
    """Checkpoint format: header ``kind,widths,G,k,lambda,seed`` then one
    parameter per line at 17 significant digits."""
    widths = "x".join(str(w) for w in branch.arch.widths)
    if isinstance(branch.arch, KanArch):
        sp = branch.arch.spline
        if sp.domain != (-1.0, 1.0):
            raise ValueError("checkpoint header carries no domain; only (-1, 1) branches serialize")
        header = f"kan,{widths},{sp.grid_size},{sp.order},{_FLOAT_FMT % branch.arch.l1_weight},{seed}"
    else:
        header = f"mlp,{widths},0,0,0,{seed}"
    lines = [header] + [_FLOAT_FMT % p for p in branch.params]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_branch(path) -> tuple[ResidualBranch, int]:
    """Inverse of save_branch; returns (branch, seed)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    kind, widths_s, g_s, k_s, lam_s, seed_s = lines[0].split(",")
    widths = tuple(int(w) for w in widths_s.split("x"))
    if kind == KAN:
        arch: Arch = KanArch(widths, SplineSpec(int(g_s), int(k_s)), l1_weight=float(lam_s))
    elif kind == MLP:
        arch = MlpArch(widths)
    else:
        raise ValueError(f"unknown branch kind {kind!r} in {path}")
    params = np.array([float(x) for x in lines[1:] if x])
    return ResidualBranch(arch, params), int(seed_s)


def with_params(branch: ResidualBranch, params: np.ndarray) -> ResidualBranch:
    return replace(branch, params=np.asarray(params, dtype=float).copy())
