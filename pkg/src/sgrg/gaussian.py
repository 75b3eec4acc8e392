"""Gaussian fields on a discretized torus.

Translation-invariant covariances on a periodic grid are circulant, so a single
covariance row determines the spectrum and FFT sampling is exact.  Also here:
closed-form Gaussian moments used as oracles, the charge-series side of the
sine-Gordon identity, and the large-field regulator inequality check.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy import linalg

from .covariance import ChargeConfig, FiniteRangeCovariance, ScaleDecomposition, pair_energy

log = logging.getLogger(__name__)

CLIP_TOL = 1e-6
CHUNK = 256


class NotPositiveDefiniteError(ValueError):
    pass


class DivergentIntegralError(ValueError):
    pass


class ResolutionError(ValueError):
    pass


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class TorusGrid:
    points_per_side: int
    physical_side: float

    def __post_init__(self):
        n = self.points_per_side
        if n < 8 or n & (n - 1):
            raise ValueError("points_per_side must be a power of two >= 8")
        if self.physical_side <= 0:
            raise ValueError("physical_side must be positive")

    @property
    def spacing(self) -> float:
        return self.physical_side / self.points_per_side

    @property
    def n_points(self) -> int:
        return self.points_per_side**2

    @property
    def volume(self) -> float:
        return self.physical_side**2

    def displacements(self) -> np.ndarray:
        """Minimal-image displacement of every node from the origin, shape (n, n, 2)."""
        n, h = self.points_per_side, self.spacing
        idx = np.arange(n)
        idx = np.where(idx > n // 2, idx - n, idx) * h
        return np.stack(np.meshgrid(idx, idx, indexing="ij"), axis=-1)


def covariance_row(grid: TorusGrid, radial: Callable, support: float) -> np.ndarray:
    """Row C(0, x) of the torus covariance for a radial function of finite support.

    When the support exceeds half the side the row is periodized (sum over images)
    rather than min-imaged, which keeps it a genuine torus covariance.
    """
    d = grid.displacements()
    side = grid.physical_side
    if support <= side / 2:
        return np.asarray(radial(np.hypot(d[..., 0], d[..., 1])), dtype=float)
    m = int(math.ceil(support / side)) + 1
    row = np.zeros(d.shape[:2])
    for i in range(-m, m + 1):
        for j in range(-m, m + 1):
            r = np.hypot(d[..., 0] + i * side, d[..., 1] + j * side)
            mask = r < support
            if mask.any():
                row[mask] += radial(r[mask])
    return row


@dataclass(frozen=True, eq=False)
class SpectralSampler:
    grid: TorusGrid
    eigenvalues: np.ndarray
    clip_log: tuple = ()

    @property
    def sqrt_half(self) -> np.ndarray:
        n = self.grid.points_per_side
        return np.sqrt(self.eigenvalues[:, : n // 2 + 1])

    def draw(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """count samples as an array (count, n, n)."""
        n = self.grid.points_per_side
        w = rng.standard_normal((count, n, n))
        return np.fft.irfft2(np.fft.rfft2(w) * self.sqrt_half, s=(n, n))

    def row(self) -> np.ndarray:
        return np.fft.ifft2(self.eigenvalues).real


def build_sampler(grid: TorusGrid, row: np.ndarray, clip_tol: float = CLIP_TOL) -> SpectralSampler:
    row = np.asarray(row, dtype=float)
    n = grid.points_per_side
    if row.shape != (n, n):
        raise ValueError("row shape must match the grid")
    reflected = np.roll(row[::-1, ::-1], 1, axis=(0, 1))
    if not np.allclose(reflected, row, rtol=0, atol=1e-12 * max(1.0, np.abs(row).max())):
        raise NotPositiveDefiniteError("covariance row is not reflection symmetric")
    lam = np.fft.fft2(row).real
    top = lam.max()
    if top <= 0:
        raise NotPositiveDefiniteError("covariance row has no positive mode")
    neg = lam < 0
    clipped = ()
    if neg.any():
        worst = -lam.min()
        if worst > clip_tol * top:
            raise NotPositiveDefiniteError(f"eigenvalue {-worst:.3e} below -{clip_tol:g} * max")
        clipped = (int(neg.sum()), float(-lam[neg].sum()))
        log.info("clipped %d negative modes, mass %.3e", *clipped)
        lam = np.where(neg, 0.0, lam)
    return SpectralSampler(grid, lam, clipped)


@dataclass(frozen=True, eq=False)
class FieldSample:
    grid: TorusGrid
    values: np.ndarray
    seed: object
    scale_tag: str = ""


def sample_field(s: SpectralSampler, seed, count: int, scale_tag: str = "") -> Iterator[FieldSample]:
    rng = make_rng(seed)
    done = 0
    while done < count:
        m = min(CHUNK, count - done)
        for v in s.draw(rng, m):
            yield FieldSample(s.grid, v, seed, scale_tag)
        done += m


@dataclass(frozen=True, eq=False)
class MultiscaleSampler:
    """One spectral sampler per scale; the field is the sum of independent draws."""

    grid: TorusGrid
    scales: tuple
    beta: float

    def draw(self, rng: np.random.Generator, count: int) -> np.ndarray:
        total = np.zeros((count, self.grid.points_per_side, self.grid.points_per_side))
        for s in self.scales:
            total += s.draw(rng, count)
        return total

    def combined(self) -> SpectralSampler:
        """Single sampler with the summed spectrum; same law, one FFT per draw."""
        lam = sum(s.eigenvalues for s in self.scales)
        return SpectralSampler(self.grid, lam, tuple(s.clip_log for s in self.scales if s.clip_log))

    def row(self) -> np.ndarray:
        return sum(s.row() for s in self.scales)


def multiscale_sampler(sd: ScaleDecomposition, beta: float, grid: TorusGrid) -> MultiscaleSampler:
    if grid.spacing > 0.25 + 1e-12:
        raise ResolutionError(f"grid spacing {grid.spacing:g} does not resolve the unit scale (need <= 1/4)")
    L = sd.L
    out = []
    for k in range(sd.n_scales):
        scale = float(L) ** k
        row = covariance_row(grid, lambda r, s=scale: beta * sd.cov(r / s), L * scale)
        out.append(build_sampler(grid, row))
    return MultiscaleSampler(grid, tuple(out), beta)


def sample_multiscale(sd: ScaleDecomposition, beta: float, seed, grid: TorusGrid,
                      count: int = 1) -> list[FieldSample]:
    ms = multiscale_sampler(sd, beta, grid)
    vals = ms.draw(make_rng(seed), count)
    tag = f"scales0..{sd.n_scales - 1}"
    return [FieldSample(grid, v, seed, tag) for v in vals]


def charge_moment(rho: ChargeConfig, sd: ScaleDecomposition, beta: float,
                  grid_row: np.ndarray | None = None, grid: TorusGrid | None = None) -> float:
    """E prod exp(i e_k phi(x_k)) under the measure of covariance beta*v_n.

    With `grid_row` (a torus covariance row already including beta) the energy is
    read from the grid covariance instead of the continuum v_n; charges must then
    sit on grid nodes.
    """
    if grid_row is None:
        return math.exp(-0.5 * beta * pair_energy(sd, rho))
    if len(rho) == 0:
        return 1.0
    n = grid.points_per_side
    idx = np.rint(rho.positions / grid.spacing).astype(int)
    d = (idx[:, None, :] - idx[None, :, :]) % n
    G = np.asarray(grid_row)[d[..., 0], d[..., 1]]
    return math.exp(-0.5 * float(rho.charges @ G @ rho.charges))


@dataclass
class SineGordonResult:
    lhs: float
    lhs_stderr: float
    rhs: float
    gap: float
    truncation_bound: float
    terms: list = field(default_factory=list)
    inconclusive: bool = False

    @property
    def consistent(self) -> bool:
        return self.gap <= self.truncation_bound + 3 * self.lhs_stderr


def charge_series_terms(row: np.ndarray, grid: TorusGrid, z: float, n_max: int,
                        neutral_only: bool = False) -> list[float]:
    """Order-n terms z^n/n! sum_{x,e} (h^2/2)^n exp(-1/2 sum_ij e_i e_j G(x_i-x_j)).

    `row` is the full grid covariance row G (including beta).  The first position
    is pinned at the origin by translation invariance, which contributes a factor N.
    """
    n_side = grid.points_per_side
    N = grid.n_points
    w = grid.spacing**2 / 2.0
    G = np.asarray(row).ravel()
    ix = np.arange(N) // n_side
    iy = np.arange(N) % n_side
    terms = [1.0]
    for n in range(1, n_max + 1):
        if n == 1:
            pos = np.zeros((1, 1), dtype=int)
        else:
            rest = np.indices((N,) * (n - 1)).reshape(n - 1, -1).T
            pos = np.concatenate([np.zeros((rest.shape[0], 1), dtype=int), rest], axis=1)
        # pair covariance lookups G(x_i - x_j) on the torus
        pair = {}
        for i in range(n):
            for j in range(i + 1, n):
                dx = (ix[pos[:, i]] - ix[pos[:, j]]) % n_side
                dy = (iy[pos[:, i]] - iy[pos[:, j]]) % n_side
                pair[i, j] = G[dx * n_side + dy]
        total = 0.0
        for e in itertools.product((1, -1), repeat=n):
            if neutral_only and sum(e) != 0:
                continue
            expo = np.full(pos.shape[0], -0.5 * n * G[0])
            for (i, j), g in pair.items():
                expo -= e[i] * e[j] * g
            total += np.exp(expo).sum()
        terms.append(z**n / math.factorial(n) * w**n * N * total)
    return terms


def sine_gordon_check(z: float, beta: float, sd: ScaleDecomposition, n_max: int, grid: TorusGrid,
                      n_samples: int = 200_000, seed=0, tol: float | None = None,
                      neutral_only: bool = False) -> SineGordonResult:
    """Compare E exp(z h^2 sum cos phi) (MC, free field) with the truncated charge series."""
    if grid.points_per_side > 16:
        raise ValueError("sine_gordon_check is meant for grids of at most 16x16")
    if n_max > 4:
        raise ValueError("n_max <= 4")
    ms = multiscale_sampler(sd, beta, grid)
    row = ms.row()
    bound = abs(z) ** (n_max + 1) * grid.volume ** (n_max + 1) / math.factorial(n_max + 1)
    terms = charge_series_terms(row, grid, z, n_max, neutral_only)
    rhs = float(sum(terms))
    if z == 0:
        return SineGordonResult(1.0, 0.0, rhs, abs(1.0 - rhs), bound, terms)
    rng = make_rng(seed)
    sampler = ms.combined()
    h2 = grid.spacing**2
    vals = []
    done = 0
    while done < n_samples:
        m = min(4096, n_samples - done)
        phi = sampler.draw(rng, m)
        vals.append(np.exp(z * h2 * np.cos(phi).sum(axis=(1, 2))))
        done += m
    v = np.concatenate(vals)
    lhs = float(v.mean())
    err = float(v.std(ddof=1) / math.sqrt(v.size))
    inconclusive = tol is not None and bound > tol
    return SineGordonResult(lhs, err, rhs, abs(lhs - rhs), bound, terms, inconclusive)


def _sqrt_factor(Cmat: np.ndarray) -> np.ndarray:
    lam, Q = linalg.eigh(Cmat)
    if lam.min() < -1e-10 * max(lam.max(), 1e-300):
        raise NotPositiveDefiniteError("covariance matrix is not positive semidefinite")
    keep = lam > 1e-14 * lam.max()
    return Q[:, keep] * np.sqrt(lam[keep])


def log_gauss_quadratic_moment(A, b, Cmat, *, factor: np.ndarray | None = None) -> float:
    """log of the integral of exp(z^T A z / 2 + b^T z) against N(0, Cmat)."""
    Cmat = np.asarray(Cmat, dtype=float)
    n = Cmat.shape[0]
    A = np.zeros((n, n)) if A is None else np.asarray(A, dtype=float)
    b = np.zeros(n) if b is None else np.asarray(b, dtype=float)
    R = _sqrt_factor(Cmat) if factor is None else factor
    M = np.eye(R.shape[1]) - R.T @ A @ R
    M = 0.5 * (M + M.T)
    try:
        chol = linalg.cho_factor(M, lower=True)
    except linalg.LinAlgError as exc:
        raise DivergentIntegralError("I - C A is not positive definite") from exc
    c = R.T @ b
    logdet = 2.0 * np.log(np.diag(chol[0])).sum()
    return float(-0.5 * logdet + 0.5 * c @ linalg.cho_solve(chol, c))


def gauss_quadratic_moment(A, b, Cmat) -> float:
    return math.exp(log_gauss_quadratic_moment(A, b, Cmat))


# ---------------------------------------------------------------- regulator


@dataclass(frozen=True, eq=False)
class PolymerGrid:
    """Nodes at spacing h covering a polymer's blocks plus a padding ring."""

    blocks: tuple
    h: float
    coords: np.ndarray          # (N, 2) physical node positions
    shape: tuple
    inside: np.ndarray          # bool mask over nodes in the union of blocks
    boundary: np.ndarray        # inside nodes with a 4-neighbour outside

    @property
    def size(self) -> int:
        return len(self.blocks)


def polymer_grid(blocks: Sequence[tuple[int, int]], h: float = 0.25, pad: int = 2) -> PolymerGrid:
    blocks = tuple(sorted(set(map(tuple, blocks))))
    b = np.asarray(blocks)
    lo, hi = b.min(axis=0), b.max(axis=0) + 1
    per = int(round(1 / h))
    nx, ny = (hi - lo) * per + 2 * pad
    xs = lo[0] + (np.arange(nx) - pad + 0.5) * h
    ys = lo[1] + (np.arange(ny) - pad + 0.5) * h
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    bx, by = np.floor(X).astype(int), np.floor(Y).astype(int)
    bset = set(blocks)
    inside = np.array([(i, j) in bset for i, j in zip(bx.ravel(), by.ravel())]).reshape(nx, ny)
    padded = np.pad(inside, 1)
    nb_out = ~(padded[2:, 1:-1] & padded[:-2, 1:-1] & padded[1:-1, 2:] & padded[1:-1, :-2])
    boundary = inside & nb_out
    return PolymerGrid(blocks, h, np.stack([X.ravel(), Y.ravel()], 1), (nx, ny), inside.ravel(), boundary.ravel())


def _diff_ops(shape, h):
    """Central-difference matrices for d1, d2, d11, d12, d22 (zero rows at the edge)."""
    nx, ny = shape
    N = nx * ny
    idx = np.arange(N).reshape(nx, ny)

    def op(stencil):
        D = np.zeros((N, N))
        # only interior rows, where every stencil point exists
        rows = idx[1:-1, 1:-1].ravel()
        for (di, dj), w in stencil.items():
            D[rows, (idx[1 + di: nx - 1 + di, 1 + dj: ny - 1 + dj]).ravel()] += w
        return D

    return {
        (1, 0): op({(1, 0): 0.5 / h, (-1, 0): -0.5 / h}),
        (0, 1): op({(0, 1): 0.5 / h, (0, -1): -0.5 / h}),
        (2, 0): op({(1, 0): 1 / h**2, (0, 0): -2 / h**2, (-1, 0): 1 / h**2}),
        (1, 1): op({(1, 1): 0.25 / h**2, (1, -1): -0.25 / h**2, (-1, 1): -0.25 / h**2, (-1, -1): 0.25 / h**2}),
        (0, 2): op({(0, 1): 1 / h**2, (0, 0): -2 / h**2, (0, -1): 1 / h**2}),
    }


def regulator_form(pg: PolymerGrid, kappa: float, c: float, L: float | None = None, s: int = 2) -> np.ndarray:
    """Matrix M with log G(kappa, X, phi) = phi^T M phi; L given -> the G_L weights."""
    if s not in (1, 2):
        raise ValueError("s must be 1 or 2")
    ops = _diff_ops(pg.shape, pg.h)
    wi = pg.inside * pg.h**2
    wb = pg.boundary * pg.h
    M = np.zeros((pg.coords.shape[0],) * 2)
    for alpha, D in ops.items():
        order = sum(alpha)
        if order > s:
            continue
        scale = 1.0 if L is None else float(L) ** (2 * order - 2)
        M += kappa * scale * (D.T * wi) @ D
        if order == 1:
            M += kappa * c * (1.0 if L is None else float(L)) * (D.T * wb) @ D
    return 0.5 * (M + M.T)


def smallness(kappa: float, c: float, L: float, s: int = 2) -> float:
    return kappa / c * float(L) ** (2 * s - 2)


@dataclass
class RegulatorReport:
    passed: bool
    smallness: float
    log_lhs: list
    log_rhs: list
    reason: str = ""

    @property
    def worst_margin(self) -> float:
        """max over trials of log LHS - log RHS (<= 0 means pass)."""
        if not self.log_lhs:
            return math.inf
        return max(a - b for a, b in zip(self.log_lhs, self.log_rhs))


def regulator_inequality_check(blocks, kappa: float, c: float, cov: FiniteRangeCovariance,
                               phis: Sequence[np.ndarray] | None = None, trials: int = 5,
                               seed=0, h: float = 0.25, s: int = 2,
                               amplitude: float = 1.0) -> RegulatorReport:
    """Test int G(phi + zeta) dmu_C <= 2^|X| G_L(phi) with the exact Gaussian oracle.

    Trial fields are random smooth functions (a few low Fourier modes) unless given.
    """
    pg = polymer_grid(blocks, h)
    L = cov.L
    small = smallness(kappa, c, L, s)
    d = pg.coords[:, None, :] - pg.coords[None, :, :]
    Cmat = cov(np.hypot(d[..., 0], d[..., 1]))
    R = _sqrt_factor(Cmat)
    M = regulator_form(pg, kappa, c, None, s)
    ML = regulator_form(pg, kappa, c, L, s)
    if phis is None:
        rng = make_rng(seed)
        phis = []
        ext = pg.coords.max(axis=0) - pg.coords.min(axis=0) + 1
        for _ in range(trials):
            f = np.zeros(pg.coords.shape[0])
            for _ in range(4):
                k = rng.normal(size=2) * 2 * math.pi / ext * 2
                f += amplitude * rng.normal() * np.cos(pg.coords @ k + rng.uniform(0, 2 * math.pi))
            f += amplitude * pg.coords @ rng.normal(size=2)
            phis.append(f)
    log_lhs, log_rhs = [], []
    for phi in phis:
        phi = np.asarray(phi, dtype=float)
        try:
            m = log_gauss_quadratic_moment(2 * M, 2 * M @ phi, Cmat, factor=R)
        except DivergentIntegralError:
            return RegulatorReport(False, small, log_lhs, log_rhs,
                                   f"fluctuation integral diverges: kappa/c*L^{2 * s - 2} = {small:g} too large")
        log_lhs.append(float(phi @ M @ phi + m))
        log_rhs.append(float(pg.size * math.log(2) + phi @ ML @ phi))
    passed = all(a <= b for a, b in zip(log_lhs, log_rhs))
    reason = "" if passed else f"inequality violated at kappa/c*L^{2 * s - 2} = {small:g}"
    return RegulatorReport(passed, small, log_lhs, log_rhs, reason)


# ---------------------------------------------------------------- I/O


def write_field(path, sample: FieldSample, extra: dict | None = None) -> None:
    header = dict(extra or {})
    header.update({
        "side": sample.grid.physical_side,
        "points_per_side": sample.grid.points_per_side,
        "spacing": sample.grid.spacing,
        "seed": str(sample.seed),
        "scale_tag": sample.scale_tag,
        "dtype": "<f8",
    })
    with Path(path).open("wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(np.ascontiguousarray(sample.values, dtype="<f8").tobytes())


def read_field(path) -> FieldSample:
    with Path(path).open("rb") as fh:
        header = json.loads(fh.readline())
        data = np.frombuffer(fh.read(), dtype=header["dtype"])
    n = header["points_per_side"]
    grid = TorusGrid(n, header["side"])
    return FieldSample(grid, data.reshape(n, n).copy(), header["seed"], header["scale_tag"])
