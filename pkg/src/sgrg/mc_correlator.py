"""Monte Carlo correlators under the sine-Gordon measure.

Free-field samples from the exact spectral sampler are reweighted by
w = exp(z W), W = h^2 sum_x cos(phi(x)).  Derivatives are fourth-order central
differences; all correlators are averaged over translations of the torus.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .covariance import ScaleDecomposition, reference_covariance
from .gaussian import CHUNK, SpectralSampler, TorusGrid, build_sampler, covariance_row, make_rng

log = logging.getLogger(__name__)

# fourth-order central difference, offsets -2..2
STENCIL = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
OFFSETS = np.arange(-2, 3)
N_BLOCKS = 100


class ReweightingError(RuntimeError):
    pass


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class EstimatorResult:
    name: str
    value: float
    stderr: float
    n_samples: int
    seed: object = None
    digest: str = ""
    ess: float = float("nan")


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    exponent_stderr: float
    amplitude: float
    residual_rms: float
    fit_range: tuple
    used: tuple = ()
    excluded: tuple = ()


def correlator_sampler(sd: ScaleDecomposition, beta: float, grid: TorusGrid) -> SpectralSampler:
    """Combined spectral sampler for beta * v_n on the grid (periodized rows).

    Unlike `multiscale_sampler` this accepts spacings up to 1/2: the smallest
    scale varies over [0, L], and a lattice sampling of a positive definite
    radial function stays positive definite.
    """
    if grid.spacing > 0.5 + 1e-12:
        raise ValueError("grid spacing must be <= 1/2")
    row = np.zeros((grid.points_per_side,) * 2)
    for k in range(sd.n_scales):
        s = float(sd.L) ** k
        row += covariance_row(grid, lambda r, s=s: beta * sd.cov(r / s), sd.L * s)
    return build_sampler(grid, row)


def derivative(phi: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Fourth-order central difference along a grid axis (last two axes are space)."""
    ax = phi.ndim - 2 + axis
    out = np.zeros_like(phi)
    for c, o in zip(STENCIL, OFFSETS):
        if c:
            out += c * np.roll(phi, -o, axis=ax)
    return out / h


def cross_correlation(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """mean_x X(x) Y(x + r) for every r, batched over the leading axis (reference path)."""
    n = X.shape[-1]
    fx = np.fft.rfft2(X)
    fy = np.fft.rfft2(Y)
    return np.fft.irfft2(np.conj(fx) * fy, s=(n, n)) / (n * n)


def oracle_corr(row: np.ndarray, grid: TorusGrid, shift, n1: int, n2: int) -> float:
    """E[D_n1 phi(0) D_n2 phi(r)] from the covariance row, exactly (Wick)."""
    n, h = grid.points_per_side, grid.spacing
    total = 0.0
    for ci, oi in zip(STENCIL, OFFSETS):
        for cj, oj in zip(STENCIL, OFFSETS):
            if ci == 0 or cj == 0:
                continue
            d = np.array(shift, dtype=int).copy()
            d[n2] += oj
            d[n1] -= oi
            total += ci * cj * row[d[0] % n, d[1] % n]
    return total / h**2


def continuum_oracle(sd: ScaleDecomposition, beta: float, r: np.ndarray, n1: int, n2: int, eps: float = 0.05) -> float:
    """-beta d_n1 d_n2 v_n(r) by central differences of the tabulated covariance (no periodization).

    eps must stay well above the table spacing, which is piecewise linear.
    """
    from .covariance import eval_v

    r = np.asarray(r, dtype=float)
    e1 = np.eye(2)[n1] * eps
    e2 = np.eye(2)[n2] * eps
    f = lambda x: float(eval_v(sd, x))
    dd = (f(r + e1 + e2) - f(r + e1 - e2) - f(r - e1 + e2) + f(r - e1 - e2)) / (4 * eps * eps)
    return -beta * dd


def stencil_symbol(n: int, h: float, axis: int) -> np.ndarray:
    """Fourier multiplier of `derivative` on the rfft2 half-spectrum."""
    k = 2 * np.pi * np.fft.fftfreq(n)
    kr = 2 * np.pi * np.fft.rfftfreq(n)
    kk = k if axis == 0 else kr
    sym = 1j * (8 * np.sin(kk) - np.sin(2 * kk)) / (6 * h)
    return sym[:, None] * np.ones(len(kr))[None, :] if axis == 0 else np.ones(n)[:, None] * sym[None, :]


def shift_kernel(sampler: SpectralSampler, shifts, n1: int, n2: int) -> np.ndarray:
    """K with mean_x X(x) Y(x + r) = |f|^2 @ K[:, r] for f = rfft2 of the white noise.

    X, Y are the n1, n2 differences of the field; the half-spectrum columns other
    than 0 and n/2 stand for a conjugate pair and are counted twice.
    """
    grid = sampler.grid
    n, h = grid.points_per_side, grid.spacing
    lam = sampler.eigenvalues[:, : n // 2 + 1]
    pair = lam * np.conj(stencil_symbol(n, h, n1)) * stencil_symbol(n, h, n2)
    k0 = 2 * np.pi * np.fft.fftfreq(n, d=1.0 / n) / n
    k1 = 2 * np.pi * np.arange(n // 2 + 1) / n
    mult = np.full(n // 2 + 1, 2.0)
    mult[0] = 1.0
    mult[-1] = 1.0
    cols = []
    for dx, dy in shifts:
        ph = np.exp(1j * (k0[:, None] * dx + k1[None, :] * dy))
        cols.append(((pair * ph).real * mult[None, :]).ravel() / float(n) ** 4)
    return np.stack(cols, axis=1)


@dataclass
class SampleStats:
    """Per-block sums for the reweighted correlator.

    Block b holds sums over its samples of w, w^2 and w A(r), with
    A(r) = mean_x X(x) Y(x + r).  The disconnected part needs no estimate: a
    difference of a periodic field has spatial mean zero, so the translation
    averaged <X w><Y w> vanishes identically.
    """

    z: float
    shifts: tuple
    w: np.ndarray
    wA: np.ndarray
    w2: np.ndarray
    n_samples: int = 0
    log_scale: float = -np.inf   # every stored weight carries a factor exp(-log_scale)

    def rescale(self, log_scale: float) -> None:
        if log_scale <= self.log_scale:
            return
        if np.isfinite(self.log_scale):
            f = math.exp(self.log_scale - log_scale)
            self.w *= f
            self.wA *= f
            self.w2 *= f * f
        self.log_scale = log_scale

    def ess(self) -> float:
        s2 = self.w2.sum()
        return float(self.w.sum() ** 2 / s2) if s2 > 0 else 0.0


def _jackknife(blocks: Sequence[np.ndarray], estimator) -> tuple[np.ndarray, np.ndarray]:
    tot = [b.sum(axis=0) for b in blocks]
    full = estimator(*tot)
    nb = blocks[0].shape[0]
    reps = np.array([estimator(*[t - b[i] for t, b in zip(tot, blocks)]) for i in range(nb)])
    err = np.sqrt((nb - 1) / nb * ((reps - reps.mean(axis=0)) ** 2).sum(axis=0))
    return full, err


def _ratio(w, wA):
    return wA / w


def accumulate(sampler: SpectralSampler, zs: Sequence[float], n_samples: int, seed, shifts,
               n1: int = 0, n2: int = 1, n_blocks: int = N_BLOCKS, chunk: int = CHUNK) -> dict:
    """Draw n_samples fields once and accumulate block statistics for every z in zs.

    The fields are exactly those of sampler.draw on the same generator.
    """
    n_blocks = max(2, min(n_blocks, n_samples // 2))
    shifts = tuple((int(a), int(b)) for a, b in shifts)
    grid = sampler.grid
    n, h = grid.points_per_side, grid.spacing
    rng = make_rng(seed)
    edges = np.linspace(0, n_samples, n_blocks + 1).astype(int)
    root = sampler.sqrt_half
    K = shift_kernel(sampler, shifts, n1, n2)
    acc = {z: SampleStats(z, shifts, np.zeros(n_blocks), np.zeros((n_blocks, len(shifts))),
                          np.zeros(n_blocks), n_samples) for z in zs}
    done = 0
    b = 0
    while done < n_samples:
        m = min(chunk, n_samples - done, edges[b + 1] - done)
        f = np.fft.rfft2(rng.standard_normal((m, n, n)))
        phi = np.fft.irfft2(f * root, s=(n, n))
        A = (f.real**2 + f.imag**2).reshape(m, -1) @ K
        W = h * h * np.cos(phi).sum(axis=(1, 2))
        for z in zs:
            # weights are stored relative to the largest exponent seen so far;
            # every estimator is a ratio, so the common factor drops out
            x = z * W - abs(z) * grid.volume
            st = acc[z]
            st.rescale(float(x.max()))
            w = np.exp(x - st.log_scale)
            st.w[b] += w.sum()
            st.w2[b] += w @ w
            st.wA[b] += w @ A
        done += m
        if done >= edges[b + 1]:
            b += 1
    return acc


def estimate(st: SampleStats, shift, name: str = "", seed=None, digest: str = "",
             ess_floor: float = 0.01) -> EstimatorResult:
    ess = st.ess()
    if ess < ess_floor * st.n_samples:
        raise ReweightingError(f"effective sample size {ess:.1f} < {ess_floor:g} * {st.n_samples}")
    i = st.shifts.index((int(shift[0]), int(shift[1])))
    val, err = _jackknife([st.w, st.wA[:, i]], _ratio)
    return EstimatorResult(name, float(val), float(err), st.n_samples, seed, digest, ess)


def truncated_corr(a, b, n1: int, n2: int, z: float, beta: float, sd: ScaleDecomposition, grid: TorusGrid,
                   n_samples: int, seed, digest: str = "") -> EstimatorResult:
    """Reweighted connected correlator of D_n1 phi(a) and D_n2 phi(b), a, b grid index pairs.

    Translation averaging uses only b - a; the pair is put in a canonical order
    first, so swapping (a, n1) with (b, n2) gives the same number on the same stream.
    """
    d = (int(b[0]) - int(a[0]), int(b[1]) - int(a[1]))
    if (n2, -d[0], -d[1]) < (n1, d[0], d[1]):
        n1, n2, d = n2, n1, (-d[0], -d[1])
    sampler = correlator_sampler(sd, beta, grid)
    st = accumulate(sampler, [z], n_samples, seed, [d], n1, n2)[z]
    return estimate(st, d, f"corr_d{n1}d{n2}", seed, digest)


def fit_power_law(r: Sequence[float], y: Sequence[float], yerr: Sequence[float] | None = None) -> PowerLawFit:
    """Least-squares fit of log|y| against log r."""
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(r) < 2 or np.ptp(np.log(r)) == 0:
        raise FitError("degenerate separations")
    x = np.log(r)
    ly = np.log(np.abs(y))
    if yerr is None:
        wts = np.ones_like(x)
    else:
        wts = (np.abs(y) / np.maximum(np.asarray(yerr, dtype=float), 1e-300)) ** 2
    M = np.stack([np.ones_like(x), x], axis=1)
    Wm = M * wts[:, None]
    cov = np.linalg.inv(M.T @ Wm)
    coef = cov @ (Wm.T @ ly)
    res = ly - M @ coef
    rms = float(np.sqrt(np.mean(res**2)))
    if yerr is None:
        dof = max(len(x) - 2, 1)
        se = math.sqrt(cov[1, 1] * (res @ res) / dof)
    else:
        se = math.sqrt(cov[1, 1])
    return PowerLawFit(float(coef[1]), se, float(math.exp(coef[0])), rms, (float(r.min()), float(r.max())),
                       tuple(r.tolist()))


DEFAULT_SEPARATIONS = (4, 6, 8, 11, 16)


@dataclass
class DecayScan:
    z: float
    separations: tuple
    results: list
    fit: PowerLawFit
    oracle: list = field(default_factory=list)


def decay_scan(separations: Sequence[int], zs: Sequence[float], beta: float, sd: ScaleDecomposition,
               grid: TorusGrid, n_samples: int, seed, digest: str = "") -> dict:
    """Diagonal separations (d, d) in grid units; D_1 at a, D_2 at b.

    Every z shares one sample stream.  Points consistent with zero at 2 sigma are
    dropped from the fit and logged.
    """
    seps = tuple(int(s) for s in separations)
    if len(set(seps)) < 2:
        raise FitError("separations all equal")
    sampler = correlator_sampler(sd, beta, grid)
    row = sampler.row()
    acc = accumulate(sampler, zs, n_samples, seed, [(d, d) for d in seps], 0, 1)
    out = {}
    for z in zs:
        res, keep_r, keep_y, keep_e, excluded = [], [], [], [], []
        for d in seps:
            e = estimate(acc[z], (d, d), f"corr_diag{d}", seed, digest)
            res.append(e)
            if abs(e.value) <= 2 * e.stderr:
                log.warning("separation %d consistent with zero at z=%g; excluded", d, z)
                excluded.append(d)
                continue
            keep_r.append(d * math.sqrt(2) * grid.spacing)
            keep_y.append(e.value)
            keep_e.append(e.stderr)
        if len(keep_r) < 2:
            raise FitError("fewer than two usable separations")
        fit = fit_power_law(keep_r, keep_y, keep_e)
        fit = PowerLawFit(fit.exponent, fit.exponent_stderr, fit.amplitude, fit.residual_rms, fit.fit_range,
                          fit.used, tuple(excluded))
        oracle = [oracle_corr(row, grid, (d, d), 0, 1) for d in seps]
        out[z] = DecayScan(z, seps, res, fit, oracle)
    return out


def oracle_fit(separations: Sequence[int], beta: float, sd: ScaleDecomposition, grid: TorusGrid) -> PowerLawFit:
    row = correlator_sampler(sd, beta, grid).row()
    r = [d * math.sqrt(2) * grid.spacing for d in separations]
    return fit_power_law(r, [oracle_corr(row, grid, (d, d), 0, 1) for d in separations])


def charge_suppression_scan(beta: float, n_scales_list: Sequence[int], z: float, grid: TorusGrid,
                            n_samples: int = 0, seed=0, L: int = 4) -> list[EstimatorResult]:
    """<exp(i phi(x))> against the number of scales.

    z = 0 uses the exact moment exp(-v_n(0) beta/2) on the grid; otherwise the
    translation-averaged cos(phi) is reweighted by exp(zW).  For z != 0 the
    external charge can pair with a gas charge, which adds an O(z) part that
    does not decay with the number of scales; the geometric rate is visible only
    while that part is small against exp(-n beta C(0) / 2).
    """
    out = []
    base = ScaleDecomposition(reference_covariance(L), 1)
    rng = make_rng(seed)
    for n in n_scales_list:
        sd = base.with_scales(n)
        if float(L) ** n > grid.physical_side / 2:
            log.warning("range L^%d exceeds half the torus; images change the rate", n)
        sampler = correlator_sampler(sd, beta, grid)
        var = float(sampler.row()[0, 0])
        if z == 0:
            out.append(EstimatorResult(f"charge_n{n}", math.exp(-var / 2), 0.0, 0, seed))
            continue
        blocks = max(2, min(N_BLOCKS, n_samples // 2))
        edges = np.linspace(0, n_samples, blocks + 1).astype(int)
        st = SampleStats(z, ((0, 0),), np.zeros(blocks), np.zeros((blocks, 1)), np.zeros(blocks), n_samples)
        h = grid.spacing
        for b in range(blocks):
            left = edges[b + 1] - edges[b]
            while left > 0:
                m = min(CHUNK, left)
                phi = sampler.draw(rng, m)
                c = np.cos(phi)
                x = z * h * h * c.sum(axis=(-2, -1))
                st.rescale(float(x.max()))
                w = np.exp(x - st.log_scale)
                st.w[b] += w.sum()
                st.w2[b] += w @ w
                st.wA[b, 0] += w @ c.mean(axis=(-2, -1))
                left -= m
        ess = st.ess()
        if ess < 0.01 * n_samples:
            raise ReweightingError(f"effective sample size {ess:.1f} too small")
        val, err = _jackknife([st.w, st.wA[:, 0]], _ratio)
        out.append(EstimatorResult(f"charge_n{n}", float(val), float(err), n_samples, seed, "", float(ess)))
    return out


def write_results_csv(path, rows: Sequence[dict]) -> None:
    cols = ["observable", "separation", "z", "beta", "L", "n_scales", "value", "stderr", "n_samples", "seed"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def gnuplot_script(data_csv: str, fit: PowerLawFit) -> str:
    return "\n".join([
        "set logscale xy",
        "set datafile separator ','",
        "set xlabel '|a-b|'",
        "set ylabel '|corr|'",
        f"f(x) = {fit.amplitude!r} * x**({fit.exponent!r})",
        f"plot '{data_csv}' using 2:(abs($7)):8 skip 1 with yerrorbars title 'MC', f(x) title 'fit'",
        "",
    ])
