"""Polymer activities evaluated on smooth test fields.

Fields are callables on the plane with derivatives (exact for the built-in
monomials and plane waves).  Integrals over a unit block use the midpoint rule
on an m x m sub-grid.  Functional derivatives use symmetric finite differences
in the field amplitude, Taylor coefficients use a complex contour.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

from .polymers import BlockTorus, Polymer, SetRegulator, small_sets

FD_STEP = 1e-3
LAMBDA0 = 1e-2
QUAD_POINTS = 8
BOUNDARY_C = 1.0       # c in the boundary part of the large-field regulator


class ResolutionError(ValueError):
    pass


class NonPeriodicError(ValueError):
    pass


class NonNeutralError(ValueError):
    pass


# ------------------------------------------------------------------ fields


class Field:
    """Smooth scalar field; subclasses give values and partial derivatives."""

    def __call__(self, x):
        return self.deriv((0, 0), x)

    def deriv(self, alpha, x):
        raise NotImplementedError

    def grad(self, x):
        return np.stack([self.deriv((1, 0), x), self.deriv((0, 1), x)], axis=-1)

    def __add__(self, other):
        if other == 0:
            return self
        return SumField((self, other))

    __radd__ = __add__

    def __mul__(self, a):
        return ScaledField(self, a)

    __rmul__ = __mul__

    def __neg__(self):
        return ScaledField(self, -1.0)

    def __sub__(self, other):
        return SumField((self, ScaledField(other, -1.0)))


@dataclass(frozen=True, eq=False)
class SumField(Field):
    parts: tuple

    def deriv(self, alpha, x):
        return sum(p.deriv(alpha, x) for p in self.parts)


@dataclass(frozen=True, eq=False)
class ScaledField(Field):
    base: Field
    a: complex

    def deriv(self, alpha, x):
        return self.a * self.base.deriv(alpha, x)


@dataclass(frozen=True, eq=False)
class ConstantField(Field):
    c: float = 0.0

    def deriv(self, alpha, x):
        x = np.asarray(x, dtype=float)
        val = self.c if alpha == (0, 0) else 0.0
        return np.full(x.shape[:-1], val)

    def __eq__(self, other):
        return isinstance(other, ConstantField) and other.c == self.c

    __hash__ = object.__hash__


ZERO = ConstantField(0.0)


@dataclass(frozen=True, eq=False)
class Monomial(Field):
    """coef * (x - c)^p with c a centre and p = (p1, p2)."""

    powers: tuple
    center: tuple = (0.0, 0.0)
    coef: float = 1.0

    def deriv(self, alpha, x):
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape[:-1], float(self.coef))
        for axis in (0, 1):
            p, a = self.powers[axis], alpha[axis]
            if a > p:
                return np.zeros(x.shape[:-1])
            out = out * (math.factorial(p) // math.factorial(p - a)) * (x[..., axis] - self.center[axis]) ** (p - a)
        return out

    @property
    def degree(self) -> int:
        return sum(self.powers)


@dataclass(frozen=True, eq=False)
class PlaneWave(Field):
    """amp * cos(k . x + phase)."""

    k: tuple
    amp: float = 1.0
    phase: float = 0.0

    def deriv(self, alpha, x):
        x = np.asarray(x, dtype=float)
        arg = self.k[0] * x[..., 0] + self.k[1] * x[..., 1] + self.phase
        n = alpha[0] + alpha[1]
        fac = self.amp * self.k[0] ** alpha[0] * self.k[1] ** alpha[1]
        # d^n/ds^n cos(s) = cos(s + n pi/2)
        return fac * np.cos(arg + n * math.pi / 2)


@dataclass(frozen=True, eq=False)
class CallableField(Field):
    """Arbitrary callable; derivatives by nested central differences."""

    f: Callable
    step: float = 1e-3

    def deriv(self, alpha, x):
        x = np.asarray(x, dtype=float)
        if alpha == (0, 0):
            return self.f(x)
        axis = 0 if alpha[0] else 1
        rest = (alpha[0] - 1, alpha[1]) if axis == 0 else (alpha[0], alpha[1] - 1)
        e = np.zeros(2)
        e[axis] = self.step
        return (self.deriv(rest, x + e) - self.deriv(rest, x - e)) / (2 * self.step)


# ------------------------------------------------------------------ geometry


def as_blocks(X) -> tuple:
    """Planar block tuple for a Polymer (canonical lift) or an iterable of blocks."""
    if isinstance(X, Polymer):
        return tuple(X.canonical())
    return tuple(sorted(set(map(tuple, X))))


@lru_cache(maxsize=4096)
def block_points(block, m: int = QUAD_POINTS) -> np.ndarray:
    s = (np.arange(m) + 0.5) / m
    gx, gy = np.meshgrid(block[0] + s, block[1] + s, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    pts.flags.writeable = False
    return pts


def barycenter(X) -> tuple:
    b = np.asarray(as_blocks(X), dtype=float)
    c = b.mean(axis=0) + 0.5
    return (float(c[0]), float(c[1]))


def contains(block, point) -> bool:
    return math.floor(point[0]) == block[0] and math.floor(point[1]) == block[1]


def boundary_points(X, m: int = QUAD_POINTS) -> tuple[np.ndarray, float]:
    """Midpoints on the boundary edges of the union of blocks, and their weight."""
    blocks = set(as_blocks(X))
    s = (np.arange(m) + 0.5) / m
    pts = []
    for i, j in blocks:
        if (i - 1, j) not in blocks:
            pts += [(i, j + t) for t in s]
        if (i + 1, j) not in blocks:
            pts += [(i + 1, j + t) for t in s]
        if (i, j - 1) not in blocks:
            pts += [(i + t, j) for t in s]
        if (i, j + 1) not in blocks:
            pts += [(i + t, j + 1) for t in s]
    return np.asarray(pts), 1.0 / m


# ------------------------------------------------------------------ local functionals


def eval_W(block, phi: Field, m: int = QUAD_POINTS):
    """Midpoint rule for the integral of cos(phi) over a unit block."""
    return np.cos(phi(block_points(block, m))).mean()


def eval_V(block, phi: Field, sigma: float = 1.0, m: int = QUAD_POINTS):
    """sigma times the integral of (d phi).(d phi) over a unit block (no conjugation, so analytic)."""
    g = phi.grad(block_points(block, m))
    return sigma * (g[:, 0] ** 2 + g[:, 1] ** 2).mean()


def vacuum_factor(block, phi: Field, z: float, sigma: float, m: int = QUAD_POINTS):
    return np.expm1(z * eval_W(block, phi, m)) * np.exp(-eval_V(block, phi, sigma, m))


def K0_vacuum(X, phi: Field, z: float, sigma: float, m: int = QUAD_POINTS):
    """prod over blocks of (e^{zW} - 1) e^{-sigma V}."""
    out = 1.0
    for b in as_blocks(X):
        out = out * vacuum_factor(b, phi, z, sigma, m)
    return out


@dataclass(frozen=True)
class Dipoles:
    """Derivative-type charges lam_i * n_i . grad at points a and b."""

    a: tuple
    b: tuple
    n1: tuple = (1.0, 0.0)
    n2: tuple = (1.0, 0.0)
    lam1: float = LAMBDA0
    lam2: float = LAMBDA0
    step: float = FD_STEP

    def __post_init__(self):
        if tuple(self.a) == tuple(self.b):
            raise ValueError("dipole sites a and b must be distinct")

    def phase(self, block, phi: Field):
        """(d phi, rho_block): central differences of phi at the sites inside the block."""
        out = 0.0
        for site, n, lam in ((self.a, self.n1, self.lam1), (self.b, self.n2, self.lam2)):
            if lam != 0 and contains(block, site):
                p = np.asarray(site, dtype=float)
                e = np.asarray(n, dtype=float) * self.step
                out = out + lam * (phi(p + e) - phi(p - e)) / (2 * self.step)
        return out

    def touches(self, X) -> bool:
        return any(contains(b, self.a) or contains(b, self.b) for b in as_blocks(X))


def K0_pinned(X, phi: Field, rho: Dipoles | None, z: float, sigma: float, m: int = QUAD_POINTS):
    """Product over blocks; the dipole phase enters only blocks holding a or b."""
    out = 1.0 + 0j
    for b in as_blocks(X):
        if rho is None or not (contains(b, rho.a) or contains(b, rho.b)):
            out = out * vacuum_factor(b, phi, z, sigma, m)
        else:
            out = out * np.expm1(1j * rho.phase(b, phi) + z * eval_W(b, phi, m)) * np.exp(-eval_V(b, phi, sigma, m))
    return out


@dataclass(frozen=True)
class ActivityEvaluator:
    """K(X, phi) with metadata; `rule` receives (blocks, phi).

    `shift_rule(blocks, phi, Phis)`, when given, returns K(X, phi + Phi) for an
    array of constant shifts in one call.
    """

    rule: Callable
    periodic: bool = True
    pinning_sites: tuple | None = None
    name: str = "K"
    shift_rule: Callable | None = None

    def __call__(self, X, phi: Field):
        return self.rule(as_blocks(X), phi)

    def shifted(self, X, phi: Field, Phis: np.ndarray) -> np.ndarray:
        X = as_blocks(X)
        if self.shift_rule is not None:
            return np.asarray(self.shift_rule(X, phi, Phis))
        return np.array([self.rule(X, phi + ConstantField(float(P))) for P in Phis])


def _K0_shifted(X, phi: Field, Phis, z, sigma, m, rho: Dipoles | None = None):
    """K0(X, phi + Phi) for every Phi; the dipole phase and V do not see constant shifts."""
    Phis = np.asarray(Phis, dtype=float)
    out = np.ones(Phis.shape, dtype=complex if rho is not None else float)
    for b in X:
        vals = phi(block_points(b, m))
        # cos(phi + Phi) = cos phi cos Phi - sin phi sin Phi
        W = np.cos(vals).mean() * np.cos(Phis) - np.sin(vals).mean() * np.sin(Phis)
        eV = np.exp(-eval_V(b, phi, sigma, m))
        if rho is not None and (contains(b, rho.a) or contains(b, rho.b)):
            out = out * np.expm1(1j * rho.phase(b, phi) + z * W) * eV
        else:
            out = out * np.expm1(z * W) * eV
    return out


def vacuum_activity(z: float, sigma: float, m: int = QUAD_POINTS) -> ActivityEvaluator:
    return ActivityEvaluator(lambda X, phi: K0_vacuum(X, phi, z, sigma, m), True, None, f"K0(z={z:g},sigma={sigma:g})",
                             lambda X, phi, P: _K0_shifted(X, phi, P, z, sigma, m))


def pinned_activity(rho: Dipoles, z: float, sigma: float, m: int = QUAD_POINTS) -> ActivityEvaluator:
    return ActivityEvaluator(lambda X, phi: K0_pinned(X, phi, rho, z, sigma, m), True, (rho.a, rho.b), "K0_pinned",
                             lambda X, phi, P: _K0_shifted(X, phi, P, z, sigma, m, rho))


def gradient_square_activity(mu: int = 0, nu: int = 0, m: int = QUAD_POINTS) -> ActivityEvaluator:
    """K(X, phi) = integral over X of d_mu phi d_nu phi (shift invariant, hence neutral)."""
    a = [(1, 0), (0, 1)]

    def rule(X, phi):
        return sum((phi.deriv(a[mu], block_points(b, m)) * phi.deriv(a[nu], block_points(b, m))).mean() for b in X)

    return ActivityEvaluator(rule, True, None, f"grad{mu}{nu}")


# ------------------------------------------------------------------ charge sectors


@dataclass
class ChargeDecomposition:
    q_max: int
    qs: np.ndarray
    coefficients: np.ndarray
    value: complex            # K(X, phi) itself, for the reconstruction check

    def k(self, q: int) -> complex:
        return complex(self.coefficients[q + self.q_max])

    @property
    def reconstruction_error(self) -> float:
        return float(abs(self.coefficients.sum() - self.value))

    @property
    def neutral(self) -> complex:
        return self.k(0)


def zero_mode_samples(K: ActivityEvaluator, X, phi: Field, n_points: int) -> np.ndarray:
    Phi = 2 * math.pi * np.arange(n_points) / n_points
    return np.asarray(K.shifted(X, phi, Phi), dtype=complex)


def check_periodic(K: ActivityEvaluator, X, phi: Field, tol: float = 1e-12) -> None:
    for P in (0.0, 0.7, 2.1):
        v0 = K(X, phi + ConstantField(P))
        v1 = K(X, phi + ConstantField(P + 2 * math.pi))
        if abs(v1 - v0) > tol * max(1.0, abs(v0)):
            raise NonPeriodicError(f"activity {K.name} is not 2 pi periodic in the zero mode")


def fourier_modes(K: ActivityEvaluator, X, phi: Field = ZERO, q_max: int = 8, n_points: int = 64,
                  check: bool = True) -> ChargeDecomposition:
    """k_q = (1/2pi) int e^{-iq Phi} K(X, Phi + phi) dPhi on an n_points Phi grid."""
    if n_points < 4 * q_max:
        raise ValueError("n_points must be at least 4 * q_max")
    if check:
        if not K.periodic:
            raise NonPeriodicError(f"activity {K.name} is flagged non-periodic")
        check_periodic(K, X, phi)
    vals = zero_mode_samples(K, X, phi, n_points)
    coef = np.fft.fft(vals) / n_points
    qs = np.arange(-q_max, q_max + 1)
    return ChargeDecomposition(q_max, qs, coef[qs % n_points], complex(vals[0]))


def neutral_part(K: ActivityEvaluator, n_points: int = 64) -> ActivityEvaluator:
    """K-bar(X, phi) = (1/2pi) int K(X, Phi + phi) dPhi (trapezoid on the Phi grid)."""

    def rule(X, phi):
        return zero_mode_samples(K, X, phi, n_points).mean()

    return ActivityEvaluator(rule, True, K.pinning_sites, f"bar({K.name})")


# ------------------------------------------------------------------ functional derivatives


def second_derivative(K: Callable, X, f: Field, g: Field, phi: Field = ZERO, step: float = FD_STEP):
    """d^2/ds dt K(X, phi + s f + t g) at 0 by the 4-point symmetric stencil."""
    pp = K(X, phi + step * f + step * g)
    pm = K(X, phi + step * f - step * g)
    mp = K(X, phi - step * f + step * g)
    mm = K(X, phi - step * f - step * g)
    return (pp - pm - mp + mm) / (4 * step * step)


def first_derivative(K: Callable, X, f: Field, phi: Field = ZERO, step: float = FD_STEP):
    return (K(X, phi + step * f) - K(X, phi - step * f)) / (2 * step)


def richardson_second_derivative(K, X, f, g, phi=ZERO, step=FD_STEP):
    return (4 * second_derivative(K, X, f, g, phi, step / 2) - second_derivative(K, X, f, g, phi, step)) / 3


def checked_second_derivative(K, X, f, g, phi=ZERO, step=FD_STEP, rtol=1e-5, atol=1e-12, scale=0.0):
    """Second derivative with a step-halving agreement check.

    Disagreement below the rounding floor (100 eps S / step^2) is not counted, with
    S = max(|K|, scale); pass the size of the summands when K is itself a
    cancelling sum, as the neutral projection is.
    """
    d1 = second_derivative(K, X, f, g, phi, step)
    d2 = second_derivative(K, X, f, g, phi, step / 2)
    floor = 100 * np.finfo(float).eps * max(abs(K(X, phi)), scale) / (step / 2) ** 2
    if abs(d1 - d2) > atol + floor + rtol * max(abs(d1), abs(d2)):
        raise ResolutionError(f"finite-difference step {step:g} too large: {d1!r} vs {d2!r}")
    # Richardson combination cancels the step^2 term
    return (4 * d2 - d1) / 3


# ------------------------------------------------------------------ extraction


AXES = ((1, 0), (0, 1))


def linear_monomial(X, mu: int) -> Monomial:
    return Monomial(AXES[mu], barycenter(X))


def quadratic_monomial(X, nu: int, rho: int) -> Monomial:
    p = [0, 0]
    p[nu] += 1
    p[rho] += 1
    return Monomial(tuple(p), barycenter(X))


@dataclass
class ExtractionCoefficients:
    polymers: list
    alpha0: np.ndarray          # (n,)
    alpha2: np.ndarray          # (n, 2, 2)
    alpha3: np.ndarray          # (n, 2, 2, 2): [X, mu, nu, rho]

    def index(self, X) -> int:
        return self.polymers.index(as_blocks(X))


def extraction_coeffs(K: ActivityEvaluator, sets: Iterable, step: float = FD_STEP,
                      n_points: int = 64, neutral: bool = True) -> ExtractionCoefficients:
    """alpha0 = Kbar_0/|X|, alpha2_{mu nu} = Kbar_2(x_mu, x_nu)/(2|X|),
    alpha2_{mu,nu rho} = Kbar_2(x_mu, x_nu x_rho)/(2|X|), monomials centred on the barycentre."""
    Kbar = neutral_part(K, n_points) if neutral else K
    pols = [as_blocks(X) for X in sets]
    n = len(pols)
    a0 = np.zeros(n)
    a2 = np.zeros((n, 2, 2))
    a3 = np.zeros((n, 2, 2, 2))
    for i, X in enumerate(pols):
        size = len(X)
        a0[i] = np.real(Kbar(X, ZERO)) / size
        scale = float(abs(K(X, ZERO)))
        lin = [linear_monomial(X, mu) for mu in range(2)]
        for mu in range(2):
            for nu in range(mu, 2):
                v = np.real(checked_second_derivative(Kbar, X, lin[mu], lin[nu], step=step, scale=scale)) / (2 * size)
                a2[i, mu, nu] = a2[i, nu, mu] = v
            for nu in range(2):
                for rho in range(nu, 2):
                    quad = quadratic_monomial(X, nu, rho)
                    v = np.real(checked_second_derivative(Kbar, X, lin[mu], quad, step=step, scale=scale)) / (2 * size)
                    a3[i, mu, nu, rho] = a3[i, mu, rho, nu] = v
    return ExtractionCoefficients(pols, a0, a2, a3)


def extracted_F(coeffs: ExtractionCoefficients, m: int = QUAD_POINTS) -> ActivityEvaluator:
    """F(X, phi) = sum over blocks of alpha0 + alpha2_{mu nu} int d_mu phi d_nu phi
    + alpha2_{mu, nu rho} int d_mu phi d2_{nu rho} phi (for the tabulated X)."""

    def rule(X, phi):
        i = coeffs.index(X)
        total = len(X) * coeffs.alpha0[i]
        for b in X:
            pts = block_points(b, m)
            d = [phi.deriv(a, pts) for a in AXES]
            for mu in range(2):
                for nu in range(2):
                    total = total + coeffs.alpha2[i, mu, nu] * (d[mu] * d[nu]).mean()
                    for rho in range(2):
                        alpha = (int(nu == 0) + int(rho == 0), int(nu == 1) + int(rho == 1))
                        total = total + coeffs.alpha3[i, mu, nu, rho] * (d[mu] * phi.deriv(alpha, pts)).mean()
        return total

    return ActivityEvaluator(rule, True, None, "F")


@dataclass
class KillReport:
    residual0: float
    residual2: float
    residual3: float
    per_set: list

    @property
    def worst(self) -> float:
        return max(self.residual0, self.residual2, self.residual3)


def kill_conditions(K: ActivityEvaluator, coeffs: ExtractionCoefficients, step: float = FD_STEP,
                    n_points: int = 64) -> KillReport:
    """(Kbar - F)_0(X, 0), (Kbar - F)_2(X, 0; x_mu, x_nu), (Kbar - F)_2(X, 0; x_mu, x_nu x_rho).

    F is evaluated as a functional of the field and differentiated numerically, the
    same way as Kbar, so the check is independent of the closed-form coefficients.
    """
    Kbar = neutral_part(K, n_points)
    F = extracted_F(coeffs)

    def diff(X, phi):
        return np.real(Kbar(X, phi)) - F(X, phi)

    r0 = r2 = r3 = 0.0
    per = []
    for X in coeffs.polymers:
        e0 = abs(diff(X, ZERO))
        lin = [linear_monomial(X, mu) for mu in range(2)]
        e2 = max(abs(richardson_second_derivative(diff, X, lin[mu], lin[nu], step=step))
                 for mu in range(2) for nu in range(2))
        e3 = max(abs(richardson_second_derivative(diff, X, lin[mu], quadratic_monomial(X, nu, rho), step=step))
                 for mu in range(2) for nu in range(2) for rho in range(2))
        per.append((X, e0, e2, e3))
        r0, r2, r3 = max(r0, e0), max(r2, e2), max(r3, e3)
    return KillReport(r0, r2, r3, per)


@dataclass
class ExtractionAggregates:
    pinned_blocks: list
    dE: np.ndarray
    dsigma: np.ndarray
    offdiag: np.ndarray
    anisotropy: np.ndarray
    alpha3_sum: np.ndarray

    @property
    def spread(self) -> float:
        return float(max(np.ptp(self.dE), np.ptp(self.dsigma)))


def lift_near(X: Polymer, D) -> tuple:
    """Planar coordinates of a torus polymer, each block taken as the image closest to D."""
    t = X.torus

    def near(x, d, n):
        return d + ((x - d + n // 2) % n) - n // 2

    return tuple(sorted((near(x, D[0], t.nx), near(y, D[1], t.ny)) for x, y in X.blocks))


def extraction_aggregates(K: ActivityEvaluator, torus: BlockTorus, beta: float,
                          pinned_blocks: Sequence = ((0, 0),), step: float = FD_STEP,
                          n_points: int = 64) -> tuple[ExtractionAggregates, list]:
    """dE = sum_{X contains D} alpha0 and dsigma = -2 beta sum alpha2_{11}, for several D.

    Coefficients are recomputed at the actual position of every polymer, so the
    spread across D measures translation invariance of the whole construction.
    """
    dE, ds, off, aniso, a3 = [], [], [], [], []
    all_coeffs = []
    for D in pinned_blocks:
        sets = [lift_near(X, D) for X in small_sets(torus, D)]
        coeffs = extraction_coeffs(K, sets, step, n_points)
        all_coeffs.append(coeffs)
        s2 = coeffs.alpha2.sum(axis=0)
        dE.append(coeffs.alpha0.sum())
        ds.append(-2 * beta * s2[0, 0])
        off.append(s2[0, 1])
        aniso.append(s2[0, 0] - s2[1, 1])
        a3.append(np.abs(coeffs.alpha3.sum(axis=0)).max())
    return ExtractionAggregates(list(pinned_blocks), np.array(dE), np.array(ds), np.array(off),
                                np.array(aniso), np.array(a3)), all_coeffs


# ------------------------------------------------------------------ dimension


def monomials_up_to(X, max_degree: int) -> list[Monomial]:
    c = barycenter(X)
    return [Monomial((i, d - i), c) for d in range(max_degree + 1) for i in range(d + 1)]


def dim_check(K: ActivityEvaluator, X, max_degree: int = 3, step: float = FD_STEP,
              rtol: float = 1e-6, atol: float = 1e-12, neutral_tol: float = 1e-10) -> dict:
    """r_n for n = 0, 1, 2: the smallest total monomial degree at which K_n(X, 0; p...) is non-zero.

    None means K_n vanished on every tuple up to max_degree.
    """
    dec = fourier_modes(K, X, ZERO, q_max=4, n_points=32)
    charged = max(abs(dec.k(q)) for q in dec.qs if q != 0)
    if charged > neutral_tol * max(1.0, abs(dec.neutral)):
        raise NonNeutralError(f"activity {K.name} has charged components (max |k_q| = {charged:.3e})")
    mons = monomials_up_to(X, max_degree)
    v0 = K(X, ZERO)
    vals1 = [(p.degree, first_derivative(K, X, p, step=step)) for p in mons]
    vals2 = [(p.degree + q.degree, second_derivative(K, X, p, q, step=step))
             for p, q in itertools.combinations_with_replacement(mons, 2)]
    scale = max([abs(v0)] + [abs(v) for _, v in vals1 + vals2] + [0.0])
    thr = atol + rtol * scale

    def first_nonzero(vals):
        nz = [d for d, v in vals if abs(v) > thr]
        return min(nz) if nz else None

    return {0: 0 if abs(v0) > thr else None, 1: first_nonzero(vals1), 2: first_nonzero(vals2)}


# ------------------------------------------------------------------ norm proxy


def taylor_coefficients(K: Callable, X, phi: Field, f: Field, n_max: int, radius: float = 1.0,
                        n_contour: int = 32) -> np.ndarray:
    """a_n with K(phi + t f) = sum a_n t^n, from a circle of the given radius in complex t."""
    theta = 2 * math.pi * np.arange(n_contour) / n_contour
    t = radius * np.exp(1j * theta)
    vals = np.array([K(X, phi + complex(tk) * f) for tk in t], dtype=complex)
    a = np.fft.fft(vals) / n_contour
    return a[: n_max + 1] / radius ** np.arange(n_max + 1)


def cr_norm(f: Field, X, r: int = 2, m: int = QUAD_POINTS) -> float:
    pts = np.concatenate([block_points(b, m) for b in as_blocks(X)])
    alphas = [(i, d - i) for d in range(r + 1) for i in range(d + 1)]
    return float(max(np.abs(f.deriv(a, pts)).max() for a in alphas))


def random_directions(X, count: int, seed=0, r: int = 2) -> list[Field]:
    """Random smooth directions normalised to unit C^r norm on X."""
    rng = np.random.default_rng(seed)
    out = []
    c = barycenter(X)
    for _ in range(count):
        parts = [PlaneWave(tuple(rng.normal(size=2)), 1.0, float(rng.uniform(0, 2 * math.pi))) for _ in range(2)]
        parts.append(Monomial((1, 0), c, float(rng.normal())))
        parts.append(Monomial((0, 1), c, float(rng.normal())))
        f = SumField(tuple(parts))
        out.append(ScaledField(f, 1.0 / cr_norm(f, X, r)))
    return out


def log_large_field_regulator(X, phi: Field, kappa: float, c: float = BOUNDARY_C, s: int = 2,
                              m: int = QUAD_POINTS) -> float:
    blocks = as_blocks(X)
    pts = np.concatenate([block_points(b, m) for b in blocks])
    w = 1.0 / (m * m)
    alphas = [(i, d - i) for d in range(1, s + 1) for i in range(d + 1)]
    bulk = sum((np.abs(phi.deriv(a, pts)) ** 2).sum() * w for a in alphas)
    bp, bw = boundary_points(blocks, m)
    edge = sum((np.abs(phi.deriv(a, bp)) ** 2).sum() * bw for a in AXES)
    return float(kappa * bulk + kappa * c * edge)


def norm_proxy(K: ActivityEvaluator, Delta=(0, 0), h: float = 1.0, n_max: int = 3, n_directions: int = 4,
               fields: Sequence[Field] | None = None, kappa: float = 1.0, regulator: SetRegulator | None = None,
               max_size: int = 2, torus: BlockTorus | None = None, seed=0, directions=None) -> float:
    """Lower-bound proxy of the activity norm.

    sum over connected X containing Delta (|X| <= max_size) of Gamma(X) times
    sup over sampled fields of G^{-1} sum_n h^n |a_n| with a_n the Taylor
    coefficients along sampled unit directions (maximised over directions).
    """
    if n_max > 3:
        raise ValueError("n_max <= 3")
    torus = torus or BlockTorus(2 * max_size + 3)
    regulator = regulator or SetRegulator(1.0, 0)
    fields = list(fields) if fields is not None else [ZERO]
    from .polymers import enumerate_connected
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sets = enumerate_connected(torus, Delta, max_size)
    total = 0.0
    for Xp in sets:
        X = as_blocks(Xp)
        dirs = directions(X) if callable(directions) else random_directions(X, n_directions, seed)
        best = 0.0
        for phi in fields:
            inner = 0.0
            for f in dirs:
                a = np.abs(taylor_coefficients(K, X, phi, f, n_max))
                inner = max(inner, float((h ** np.arange(n_max + 1) * a).sum()))
            best = max(best, inner * math.exp(-log_large_field_regulator(X, phi, kappa)))
        total += regulator(len(X)) * best
    return total


# ------------------------------------------------------------------ output


def write_extraction_csv(path, coeffs: ExtractionCoefficients) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["polymer", "alpha0", "alpha2_11", "alpha2_12", "alpha2_22",
                    "alpha2_1_11", "alpha2_1_12", "alpha2_1_22", "alpha2_2_11", "alpha2_2_12", "alpha2_2_22"])
        for i, X in enumerate(coeffs.polymers):
            a3 = coeffs.alpha3[i]
            w.writerow([";".join(f"{x}:{y}" for x, y in X), repr(coeffs.alpha0[i]),
                        repr(coeffs.alpha2[i, 0, 0]), repr(coeffs.alpha2[i, 0, 1]), repr(coeffs.alpha2[i, 1, 1]),
                        repr(a3[0, 0, 0]), repr(a3[0, 0, 1]), repr(a3[0, 1, 1]),
                        repr(a3[1, 0, 0]), repr(a3[1, 0, 1]), repr(a3[1, 1, 1])])
