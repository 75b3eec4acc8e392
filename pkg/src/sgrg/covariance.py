"""Finite-range decomposition of the 2D logarithmic potential.

The reference kernel is u = g*g for a smooth bump g supported in |x| <= 1/2,
normalised so that u(0) = 1/(2 pi).  The single-scale covariance

    C(r) = int_1^L u(r/l) dl/l

vanishes for r >= L, and the multiscale sums v_n(x) = sum_{k<n} C(L^-k x)
approximate -(1/2 pi) log|x| up to a constant for 1 <= |x| << L^n.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline
from scipy.signal import fftconvolve

log = logging.getLogger(__name__)

U0 = 1.0 / (2.0 * math.pi)
TABLE_NODES = 4096
FORMAT_VERSION = 1


class KernelError(ValueError):
    """Kernel tabulation failed the positive-definiteness proxy."""


class ResolutionError(ValueError):
    """A tabulation or grid is too coarse for the requested operation."""


def bump_profile(r):
    """C-infinity bump exp(-1/(1-(2r)^2)) on r < 1/2, zero outside."""
    r = np.asarray(r, dtype=float)
    s = 1.0 - (2.0 * r) ** 2
    out = np.zeros_like(r)
    inside = s > 0
    out[inside] = np.exp(-1.0 / s[inside])
    return out


@dataclass(frozen=True, eq=False)
class RadialKernel:
    """Tabulated radial kernel u on [0, support_radius]."""

    grid_spacing: float
    radii: np.ndarray
    values: np.ndarray
    u0: float
    support_radius: float = 1.0
    kernel_id: str = "bump"
    fourier_min_ratio: float = 0.0
    _spline: CubicSpline = field(repr=False, default=None)

    def __post_init__(self):
        if self._spline is None:
            # mirror so the spline is even and u'(0) = 0
            rr = np.concatenate([-self.radii[:0:-1], self.radii])
            vv = np.concatenate([self.values[:0:-1], self.values])
            object.__setattr__(self, "_spline", CubicSpline(rr, vv))

    def __call__(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        out = np.where(r < self.support_radius, self._spline(np.minimum(r, self.support_radius)), 0.0)
        return out if out.ndim else float(out)

    def derivative(self, r, nu: int = 1):
        r = np.abs(np.asarray(r, dtype=float))
        d = self._spline.derivative(nu)
        out = np.where(r < self.support_radius, d(np.minimum(r, self.support_radius)), 0.0)
        return out if out.ndim else float(out)


def _pd_ratio(grid_u: np.ndarray) -> float:
    """min/max of the real DFT of a centred odd-sized 2D kernel grid."""
    n = grid_u.shape[0]
    size = 1 << int(math.ceil(math.log2(2 * n)))
    padded = np.zeros((size, size))
    padded[:n, :n] = grid_u
    c = n // 2
    padded = np.roll(padded, (-c, -c), axis=(0, 1))
    spec = np.fft.fft2(padded).real
    return float(spec.min() / spec.max())


def make_kernel(
    g_profile: Callable = bump_profile,
    grid_spacing: float = 1.0 / 256,
    pd_tol: float = 1e-8,
    kernel_id: str = "bump",
) -> RadialKernel:
    """Build u = g*g on a 2D grid, radially average, normalise u(0) = 1/(2 pi)."""
    n = int(round(1.0 / grid_spacing))
    if n < 8 or abs(n * grid_spacing - 1.0) > 1e-12:
        raise ResolutionError("grid_spacing must be 1/n with n >= 8")
    h = 1.0 / n
    x = np.arange(-n, n + 1) * h
    X, Y = np.meshgrid(x, x, indexing="ij")
    R = np.hypot(X, Y)
    g = np.asarray(g_profile(R), dtype=float)
    if np.any(g < 0):
        raise KernelError("g must be non-negative")
    if np.any(g[R >= 0.5] != 0):
        raise KernelError("g must vanish for r >= 1/2")
    u2d = fftconvolve(g, g, mode="same") * h * h
    ratio = _pd_ratio(u2d)
    if ratio < -pd_tol:
        raise KernelError(f"kernel DFT min/max = {ratio:.3e} below -{pd_tol:g}")
    c = n
    # radial average over the lattice points lying exactly at radius i*h
    axis = np.stack([u2d[c, c:], u2d[c, c::-1], u2d[c:, c], u2d[c::-1, c]])
    prof = axis.mean(axis=0)
    prof = prof * (U0 / prof[0])
    prof[-1] = 0.0
    radii = np.arange(n + 1) * h
    return RadialKernel(
        grid_spacing=h,
        radii=radii,
        values=prof,
        u0=float(prof[0]),
        kernel_id=kernel_id,
        fourier_min_ratio=ratio,
    )


@lru_cache(maxsize=4)
def reference_kernel(grid_spacing: float = 1.0 / 256) -> RadialKernel:
    return make_kernel(bump_profile, grid_spacing)


def eval_C(kernel: RadialKernel, L: float, r: float, tol: float = 1e-8) -> float:
    """Adaptive quadrature of int_1^L u(r/l) dl/l."""
    if L < 2:
        raise ValueError("L must be >= 2")
    r = abs(float(r))
    if r >= L:
        return 0.0
    lo = max(1.0, r)
    # l = lo * e^t, so dl/l = dt and the integrand is smooth on [0, log(L/lo)]
    val, _ = integrate.quad(
        lambda t: kernel(r * math.exp(-t) / lo), 0.0, math.log(L / lo),
        epsabs=tol, epsrel=1e-13, limit=200,
    )
    return float(val)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(256)


def _C_gauss(kernel: RadialKernel, L: float, r: np.ndarray) -> np.ndarray:
    """Vectorised fixed-order Gauss-Legendre version of eval_C."""
    r = np.abs(np.asarray(r, dtype=float))
    out = np.zeros_like(r)
    zero = r == 0
    out[zero] = kernel.u0 * math.log(L)
    live = (~zero) & (r < L)
    if np.any(live):
        rl = r[live]
        lo = np.maximum(1.0, rl)
        T = np.log(L / lo)
        t = 0.5 * T[:, None] * (_GL_NODES[None, :] + 1.0)
        vals = kernel(rl[:, None] * np.exp(-t) / lo[:, None])
        out[live] = 0.5 * T * (vals @ _GL_WEIGHTS)
    return out


@dataclass(frozen=True, eq=False)
class FiniteRangeCovariance:
    """C tabulated on TABLE_NODES radii over [0, L]; linear interpolation."""

    kernel: RadialKernel
    L: int
    radii: np.ndarray
    values: np.ndarray

    def __call__(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        out = np.interp(r, self.radii, self.values, right=0.0)
        # C is even and smooth, so quadratic in r on the first cell; linear
        # interpolation there would make sums over many scales converge like L^-n
        h = self.radii[1]
        out = np.where(r < h, self.values[0] + (self.values[1] - self.values[0]) * (r / h) ** 2, out)
        out = np.where(r >= self.L, 0.0, out)
        return out if out.ndim else float(out)

    def exact(self, r, tol: float = 1e-12):
        r = np.asarray(r, dtype=float)
        flat = [eval_C(self.kernel, self.L, x, tol) for x in r.ravel()]
        out = np.asarray(flat).reshape(r.shape)
        return out if out.ndim else float(out)

    @property
    def C0(self) -> float:
        return float(self.values[0])

    @property
    def spacing(self) -> float:
        return float(self.radii[1] - self.radii[0])


def make_covariance(kernel: RadialKernel, L: int, n_nodes: int = TABLE_NODES) -> FiniteRangeCovariance:
    if int(L) != L or L < 2:
        raise ValueError("L must be an integer >= 2")
    radii = np.linspace(0.0, float(L), n_nodes)
    values = _C_gauss(kernel, L, radii)
    values[-1] = 0.0
    return FiniteRangeCovariance(kernel=kernel, L=int(L), radii=radii, values=values)


@lru_cache(maxsize=16)
def reference_covariance(L: int) -> FiniteRangeCovariance:
    return make_covariance(reference_kernel(), L)


def min_image(x, torus_side: float | None):
    """Minimal-image displacement on a square torus (no-op if side is None)."""
    x = np.asarray(x, dtype=float)
    if torus_side is None:
        return x
    return x - torus_side * np.round(x / torus_side)


@dataclass(frozen=True, eq=False)
class ScaleDecomposition:
    """v_n(x) = sum_{k<n} C(L^-k x); `exact` switches C to adaptive quadrature."""

    cov: FiniteRangeCovariance
    n_scales: int
    torus_side: float | None = None
    exact: bool = False

    def __post_init__(self):
        if self.n_scales < 1:
            raise ValueError("n_scales must be >= 1")

    @property
    def L(self) -> int:
        return self.cov.L

    def C(self, r):
        return self.cov.exact(r) if self.exact else self.cov(r)

    def v_radial(self, r, n: int | None = None):
        n = self.n_scales if n is None else n
        r = np.abs(np.asarray(r, dtype=float))
        total = np.zeros_like(r)
        for k in range(n):
            total = total + self.C(r / float(self.L) ** k)
        return total if total.ndim else float(total)

    def with_scales(self, n: int) -> "ScaleDecomposition":
        return ScaleDecomposition(self.cov, n, self.torus_side, self.exact)


def eval_v(sd: ScaleDecomposition, x):
    """v_n at a displacement: a radius (scalar/array) or vectors of shape (..., 2)."""
    x = np.asarray(x, dtype=float)
    if x.ndim >= 1 and x.shape[-1] == 2:
        r = np.hypot(*np.moveaxis(min_image(x, sd.torus_side), -1, 0))
    else:
        r = np.abs(x)
    return sd.v_radial(r)


def log_constant(kernel: RadialKernel) -> float:
    """Coefficient of log r in v(r) - v(1): equals -u(0) = -1/(2 pi)."""
    return -kernel.u0


def log_consistency(sd: ScaleDecomposition, r: float) -> float:
    """|(v(r) - v(1)) - const*log r| for 1 <= r <= L^(n-2)."""
    if r < 1:
        raise ValueError("r < 1 lies in the short-distance region; use short_distance_remainder")
    if r > float(sd.L) ** (sd.n_scales - 2) + 1e-12:
        raise ValueError("r beyond L^(n_scales-2) is too close to the truncation scale")
    exact = ScaleDecomposition(sd.cov, sd.n_scales, None, exact=True)
    const = log_constant(sd.cov.kernel)
    diff = exact.v_radial(r) - exact.v_radial(1.0)
    return abs(diff - const * math.log(r))


def short_distance_remainder(sd: ScaleDecomposition, r: float) -> float:
    """Signed w(r) = (v(r)-v(1)) - const*log r; compactly supported as n grows."""
    exact = ScaleDecomposition(sd.cov, sd.n_scales, None, exact=True)
    const = log_constant(sd.cov.kernel)
    return float(exact.v_radial(r) - exact.v_radial(1.0) - const * math.log(r)) if r > 0 else math.nan


@dataclass(frozen=True, eq=False)
class ChargeConfig:
    """Point charges e_i at positions x_i."""

    positions: np.ndarray
    charges: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.size == 0:
            pos = pos.reshape(0, 2)
        q = np.atleast_1d(np.asarray(self.charges, dtype=float))
        if pos.shape != (q.size, 2):
            raise ValueError("positions must have shape (m, 2) matching charges")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "charges", q)

    @property
    def total_charge(self) -> float:
        return float(self.charges.sum())

    @property
    def is_neutral(self) -> bool:
        return abs(self.total_charge) < 1e-12

    def __len__(self):
        return self.charges.size


def pair_energy(sd: ScaleDecomposition, rho: ChargeConfig) -> float:
    """(rho, v_n rho) including the self-energy terms e_i^2 v_n(0)."""
    if len(rho) == 0:
        return 0.0
    d = rho.positions[:, None, :] - rho.positions[None, :, :]
    V = eval_v(sd, d)
    return float(rho.charges @ V @ rho.charges)


def analyticity_loss_NC(
    cov: FiniteRangeCovariance,
    small_sets: Iterable[Sequence[tuple[int, int]]],
    r_derivatives: int = 2,
    points_per_block: int = 8,
    x_points_per_block: int = 4,
    fd_step: float = 1.0 / 16,
    C_override: Callable | None = None,
) -> float:
    """sup over small X of inf over x in X of ||C(. - x) - C(0)||_{C^r(X)}.

    The C^r norm is the sup over y in X of the max over |alpha| <= r of the
    alpha-th central difference of y -> C(y - x) - C(0).
    """
    if r_derivatives < 0 or r_derivatives > 2:
        raise ValueError("r_derivatives must be 0, 1 or 2")
    if r_derivatives > 0 and cov.spacing > fd_step / 4:
        raise ResolutionError(
            f"table spacing {cov.spacing:.3g} too coarse for finite-difference step {fd_step:g}"
        )
    Cf = C_override if C_override is not None else cov
    C0 = float(Cf(0.0))
    h = fd_step
    py = (np.arange(points_per_block) + 0.5) / points_per_block
    px = (np.arange(x_points_per_block) + 0.5) / x_points_per_block
    worst = 0.0
    for X in small_sets:
        blocks = np.asarray(sorted(X), dtype=float)
        ys = (blocks[:, None, None, :] + np.stack(np.meshgrid(py, py, indexing="ij"), -1)[None]).reshape(-1, 2)
        xs = (blocks[:, None, None, :] + np.stack(np.meshgrid(px, px, indexing="ij"), -1)[None]).reshape(-1, 2)

        def f(shift):
            d = ys[None, :, :] + np.asarray(shift)[None, None, :] - xs[:, None, :]
            return Cf(np.hypot(d[..., 0], d[..., 1])) - C0

        f0 = f((0.0, 0.0))
        norms = np.abs(f0)
        if r_derivatives >= 1:
            fxp, fxm = f((h, 0.0)), f((-h, 0.0))
            fyp, fym = f((0.0, h)), f((0.0, -h))
            norms = np.maximum(norms, np.abs(fxp - fxm) / (2 * h))
            norms = np.maximum(norms, np.abs(fyp - fym) / (2 * h))
        if r_derivatives >= 2:
            norms = np.maximum(norms, np.abs(fxp - 2 * f0 + fxm) / h**2)
            norms = np.maximum(norms, np.abs(fyp - 2 * f0 + fym) / h**2)
            fpp, fpm = f((h, h)), f((h, -h))
            fmp, fmm = f((-h, h)), f((-h, -h))
            norms = np.maximum(norms, np.abs(fpp - fpm - fmp + fmm) / (4 * h * h))
        per_x = norms.max(axis=1)
        worst = max(worst, float(per_x.min()))
    return worst


def write_table(path, radii, values, *, kernel_id: str, L: float | None, grid_spacing: float,
                normalization: float, extra: dict | None = None) -> None:
    """CSV interchange format: '#'-prefixed header lines then r,value rows."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# format_version={FORMAT_VERSION}\n")
        fh.write(f"# kernel_id={kernel_id}\n")
        fh.write(f"# L={'' if L is None else L}\n")
        fh.write(f"# grid_spacing={grid_spacing!r}\n")
        fh.write(f"# normalization={normalization!r}\n")
        for k, v in (extra or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh)
        w.writerow(["r", "value"])
        for r, v in zip(radii, values):
            w.writerow([repr(float(r)), repr(float(v))])


def read_table(path):
    header: dict[str, str] = {}
    rows = []
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                header[k.strip()] = v.strip()
            elif line.strip() and not line.startswith("r,"):
                a, b = line.strip().split(",")
                rows.append((float(a), float(b)))
    arr = np.asarray(rows).reshape(-1, 2)
    return header, arr[:, 0], arr[:, 1]


def write_covariance(path, cov: FiniteRangeCovariance, extra: dict | None = None) -> None:
    write_table(path, cov.radii, cov.values, kernel_id=cov.kernel.kernel_id, L=cov.L,
                grid_spacing=cov.kernel.grid_spacing, normalization=cov.kernel.u0, extra=extra)


def write_kernel(path, kernel: RadialKernel, extra: dict | None = None) -> None:
    write_table(path, kernel.radii, kernel.values, kernel_id=kernel.kernel_id, L=None,
                grid_spacing=kernel.grid_spacing, normalization=kernel.u0, extra=extra)
