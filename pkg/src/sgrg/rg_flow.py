"""Bound-level RG dynamics.

The flow tracks (sigma_j, k_j, E_j), where k_j stands in for the activity norm.
The maps are declared surrogates that keep the structure of the rigorous bounds:
one expanding direction (sigma, relative to the shrinking ball), a contracting
activity with rate delta, and a quadratic remainder.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .polymers import BlockTorus, small_sets


class BracketError(ValueError):
    pass


class DivergenceError(ValueError):
    pass


def parse_beta(text) -> float:
    """'16pi', '16*pi', '10 pi' or a plain number."""
    if isinstance(text, (int, float)):
        return float(text)
    s = str(text).strip().lower().replace(" ", "").replace("*", "")
    if s.endswith("pi"):
        head = s[:-2]
        return (float(head) if head else 1.0) * math.pi
    return float(s)


@dataclass(frozen=True)
class Contraction:
    value: float
    contracting: bool


def contraction_delta(L: int, beta: float) -> Contraction:
    """max(L^-2, L^(2 - beta/4pi)); flagged non-contracting when >= 1."""
    if L < 2:
        raise ValueError("L must be >= 2")
    d = max(float(L) ** -2, float(L) ** (2 - beta / (4 * math.pi)))
    return Contraction(d, d < 1)


def C0(L: int) -> float:
    return math.log(L) / (2 * math.pi)


def charged_sector_sum(L: int, beta: float, N_C: float = 0.0, convention: str = "betaC") -> float:
    """sum_{q != 0} exp(-|q|(beta C(0) - 2N) + beta C(0)/2) in closed form.

    convention 'betaC' takes N = beta * N_C (loss measured at covariance beta C),
    'C' takes N = N_C.
    """
    if convention not in ("betaC", "C"):
        raise ValueError("convention must be 'betaC' or 'C'")
    N = beta * N_C if convention == "betaC" else N_C
    bc = beta * C0(L)
    x = bc - 2 * N
    if x <= 0:
        raise DivergenceError(f"beta C(0) = {bc:.4g} <= 2N = {2 * N:.4g}: charged series diverges")
    if math.isinf(beta):
        return 0.0
    return 2.0 * math.exp(bc / 2 - x) / (-math.expm1(-x))


@dataclass(frozen=True)
class FlowParams:
    L: int = 16
    beta: float = 16 * math.pi
    kappa0: float = 1.0
    eps: float = 1e-2
    eps0: float = 0.1
    A: float = 128.0
    c_alpha: float = 0.5
    c_g: float = 1e-4
    c_E: float = 1.0
    c_charged: float = 2.0
    c_pin: float = 1.0
    c_x: float = 0.1
    c_T: float = 1.0
    lambda0: float = 1e-2
    z: float = 1e-4
    delta_C0: float = 1.0   # the O(1) Delta C(0) in the sigma-flow correction

    def __post_init__(self):
        if self.L < 2:
            raise ValueError("L must be >= 2")
        if not 0 < self.eps0 < 1:
            raise ValueError("eps0 must lie in (0, 1)")

    @property
    def h_inf(self) -> float:
        return self.kappa0 ** -0.5

    @property
    def delta(self) -> float:
        return contraction_delta(self.L, self.beta).value

    @property
    def dipole_phase(self) -> bool:
        return self.beta > 8 * math.pi

    def eps_prime(self, h: float | None = None) -> float:
        """max(eps, C_lambda) with C_lambda = lambda0 exp(h + |z| e^{2h} / lambda0)."""
        h = self.h_inf if h is None else h
        c_lam = self.lambda0 * math.exp(h + abs(self.z) / self.lambda0 * math.exp(2 * h))
        return max(self.eps, c_lam)

    def admissible_eps(self) -> float:
        """Largest eps for which one step from the ball corner stays inside delta * eps."""
        return self.delta / (16 * self.c_g * self.L**2 * (1 + 2 * self.c_alpha / self.kappa0) ** 2)


def schedules(params: FlowParams, j: int) -> tuple[float, float, float]:
    """(kappa_j, h_j, delta kappa_j)."""
    if j < 0:
        raise ValueError("j >= 0")
    k0 = params.kappa0
    return k0 * (2 - 2.0**-j), params.h_inf * (1 + 2.0**-j), 2.0 ** (-j - 1) * k0


@dataclass(frozen=True)
class FlowState:
    j: int = 0
    sigma: float = 0.0
    k: float = 0.0
    E: float = 0.0
    diverged: bool = False

    def in_ball(self, eps: float) -> bool:
        r = 2.0**-self.j * eps
        return abs(self.sigma) <= r and self.k <= r


def flow_step(s: FlowState, params: FlowParams) -> FlowState:
    _, _, dk = schedules(params, s.j)
    L2 = params.L**2
    sigma = s.sigma + params.c_alpha * s.k
    k = params.delta * s.k + params.c_g * L2 * (s.k + abs(s.sigma) / dk) ** 2
    E = s.E + params.c_E * L2 * (s.k + abs(s.sigma))
    nxt = FlowState(s.j + 1, sigma, k, E, s.diverged)
    if not nxt.in_ball(params.eps):
        nxt = replace(nxt, diverged=True)
    return nxt


def trajectory(sigma0: float, k0: float, params: FlowParams, j_max: int = 40,
               stop_on_exit: bool = True) -> list[FlowState]:
    s = FlowState(0, sigma0, k0, 0.0, False)
    s = replace(s, diverged=not s.in_ball(params.eps))
    out = [s]
    for _ in range(j_max):
        if stop_on_exit and s.diverged:
            break
        s = flow_step(s, params)
        out.append(s)
    return out


def escape_sign(step: Callable, x0: float, y0: float, j_max: int, radius: Callable[[int], float]) -> int:
    """Sign of x when the orbit first leaves |x| <= radius(j) (0 if it never does)."""
    x, y = x0, y0
    for j in range(j_max + 1):
        if abs(x) > radius(j):
            return 1 if x > 0 else -1
        x, y = step(j, x, y)
    return 0


@dataclass
class TuneReport:
    sigma0: float
    bracket: tuple
    history: list = field(default_factory=list)
    iterations: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def shoot(step: Callable, y0: float, j_max: int, radius: Callable[[int], float], bracket=(-1.0, 1.0),
          widen: float = 2.0, max_widen: int = 60, max_iter: int = 200) -> TuneReport:
    """Bisection on x0 with the escape-sign objective; the bracket grows until signs differ."""
    lo, hi = bracket
    history = []
    for _ in range(max_widen):
        s_lo = escape_sign(step, lo, y0, j_max, radius)
        s_hi = escape_sign(step, hi, y0, j_max, radius)
        history.append({"lo": lo, "hi": hi, "sign_lo": s_lo, "sign_hi": s_hi})
        if s_lo < 0 < s_hi:
            break
        lo, hi = lo * widen, hi * widen
    else:
        raise BracketError(f"no sign change of the escape objective in [{lo:g}, {hi:g}]")
    it = 0
    while it < max_iter:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        s = escape_sign(step, mid, y0, j_max, radius)
        if s == 0:
            lo = hi = mid
            break
        if s < 0:
            lo = mid
        else:
            hi = mid
        it += 1
    return TuneReport(0.5 * (lo + hi), (lo, hi), history, it)


def linear_model_step(b: float, c: float):
    def step(j, x, y):
        return 2 * x + b * y, c * y
    return step


def tune_sigma0(k0: float, params: FlowParams, j_max: int = 40, bracket=None, mu: float | None = None) -> TuneReport:
    """Shooting for sigma0 in the rescaled variables sigma~ = 2^j sigma, k~ = 2^j k.

    The orbit counts as escaped once |sigma_j| > mu^j eps (mu = delta by default).
    Exiting through this weighted ball, rather than the 2^-j eps ball, keeps the
    objective monotone: far out, the quadratic term feeds k from |sigma| and k
    pushes sigma back up, so the sign at exit from the large ball is unreliable.
    """
    if k0 > params.eps:
        raise ValueError("k0 must not exceed eps")
    if k0 == 0:
        return TuneReport(0.0, (0.0, 0.0), [], 0)
    mu = params.delta if mu is None else mu

    def step(j, st, kt):
        s = FlowState(j, st * 2.0**-j, kt * 2.0**-j)
        n = flow_step(s, params)
        return n.sigma * 2.0 ** (j + 1), n.k * 2.0 ** (j + 1)

    def radius(j):
        return params.eps * (2 * mu) ** j

    bracket = bracket or (-params.eps, params.eps)
    return shoot(step, k0, j_max, radius, bracket)


def stable_orbit(k0: float, params: FlowParams, j_max: int = 40, iters: int = 200,
                 tail: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """The orbit on the stable manifold, without forward cancellation.

    Fixed point of sigma_j = -c_alpha sum_{i >= j} k_i with k propagated forward
    from k0 through the quadratic map (the tail beyond j_max is summed to j_max + tail;
    a long tail overflows when 4 delta > 1, where the quadratic term outgrows delta^j).
    """
    n = j_max + tail + 1
    sigma = np.zeros(n)
    k = np.zeros(n)
    with np.errstate(over="ignore"):
        for _ in range(iters):
            k[0] = k0
            for j in range(n - 1):
                _, _, dk = schedules(params, j)
                k[j + 1] = params.delta * k[j] + params.c_g * params.L**2 * (k[j] + abs(sigma[j]) / dk) ** 2
            if not np.isfinite(k).all():
                raise DivergenceError("no delta^j-decaying orbit: the quadratic term outgrows the contraction")
            new = -params.c_alpha * np.cumsum(k[::-1])[::-1]
            if np.array_equal(new, sigma):
                break
            sigma = new
    return sigma[: j_max + 1], k[: j_max + 1]


def deltaK_flow(dk0: float, params: FlowParams, pinned: bool = True, j_max: int = 40) -> np.ndarray:
    """dk_{j+1} = (c_pin + c_x delta^j eps) L^-2 dk_j; the L^-2 is replaced by 1 when unpinned."""
    dk = np.zeros(j_max + 1)
    dk[0] = dk0
    for j in range(j_max):
        lin = (params.c_pin + params.c_x * params.delta**j * params.eps) * params.L**-2
        if not pinned:
            lin *= params.L**2
        dk[j + 1] = lin * dk[j]
    return dk


def deltaK_bound(params: FlowParams, j_max: int = 40) -> np.ndarray:
    j = np.arange(j_max + 1)
    return float(params.L) ** (-2 * (1 - params.eps0) * j) * params.eps_prime()


def scale_index(sep: int, L: int) -> int:
    """I with L^I <= sep < L^(I+1), by integer arithmetic."""
    if sep < 1:
        raise ValueError("separation must be >= 1")
    I, p = 0, L
    while p <= sep:
        I += 1
        p *= L
    return I


_REACH: set | None = None


def small_set_reach() -> set:
    """Block offsets (dx, dy) such that some small set contains both (0,0) and (dx, dy)."""
    global _REACH
    if _REACH is None:
        t = BlockTorus(11)
        reach = set()
        for X in small_sets(t, (0, 0)):
            for x, y in X.blocks:
                dx = (x + 5) % 11 - 5
                dy = (y + 5) % 11 - 5
                reach.add((dx, dy))
        _REACH = reach
    return _REACH


@dataclass
class CorrelationLedger:
    a: tuple
    b: tuple
    I: int
    T: list
    total: float
    shared: list

    def rows(self):
        return [(j, t, s) for j, (t, s) in enumerate(zip(self.T, self.shared))]


def correlation_bound(sep: int, params: FlowParams, dk: Sequence[float],
                      a=(0.5, 0.5)) -> tuple[CorrelationLedger, float]:
    """Ledger of T_j along an axis-aligned separation and total / (eps' sep^{-2(1-eps0)})."""
    L = params.L
    I = scale_index(sep, L)
    b = (a[0] + sep, a[1])
    reach = small_set_reach()
    T, shared = [], []
    for j, d in enumerate(dk):
        s = float(L) ** j
        ba = (math.floor(a[0] / s), math.floor(a[1] / s))
        bb = (math.floor(b[0] / s), math.floor(b[1] / s))
        together = (bb[0] - ba[0], bb[1] - ba[1]) in reach
        shared.append(together)
        T.append(params.c_T * params.lambda0**-2 * d if together else 0.0)
    total = float(sum(T))
    ratio = total / (params.eps_prime() * float(sep) ** (-2 * (1 - params.eps0)))
    return CorrelationLedger(a, b, I, T, total, shared), ratio


def ratio_ceiling(params: FlowParams) -> float:
    """c_T lambda0^-2 L^{2(1-eps0)} / (1 - L^{-2(1-eps0)}): the bound_ratio limit implied by the pinned bound."""
    g = float(params.L) ** (-2 * (1 - params.eps0))
    return params.c_T * params.lambda0**-2 / g / (1 - g)


# ------------------------------------------------------------------ output


def write_trajectory_csv(path, states: Sequence[FlowState], dk=None, T=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "sigma", "k", "E", "dk", "T_j", "diverged"])
        for i, s in enumerate(states):
            w.writerow([s.j, repr(s.sigma), repr(s.k), repr(s.E),
                        repr(float(dk[i])) if dk is not None and i < len(dk) else "",
                        repr(float(T[i])) if T is not None and i < len(T) else "", int(s.diverged)])
