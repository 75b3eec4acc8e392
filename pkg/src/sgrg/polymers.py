"""Polymers on a block torus: enumeration, L-closure, set regulators and the
exact circle-product / reblocking identities on tiny tori.

Blocks are integer pairs (i, j) taken mod the torus shape.  Two blocks touch
when their closed unit squares intersect, so diagonal neighbours count.
"""

from __future__ import annotations

import csv
import json
import math
import random
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

Block = tuple[int, int]
SMALL_MAX = 4
NEIGHBOURS = tuple((dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if (dx, dy) != (0, 0))


class ConfigurationError(ValueError):
    """No regulator parameters in the search range satisfy the large-set bound."""

    def __init__(self, msg, witness=None):
        super().__init__(msg)
        self.witness = witness


@dataclass(frozen=True)
class BlockTorus:
    nx: int
    ny: int | None = None

    def __post_init__(self):
        if self.ny is None:
            object.__setattr__(self, "ny", self.nx)
        if self.nx < 2 or self.ny < 2:
            raise ValueError("blocks_per_side must be >= 2")

    @property
    def blocks_per_side(self) -> int:
        return self.nx

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def n_blocks(self) -> int:
        return self.nx * self.ny

    def wrap(self, b) -> Block:
        return (b[0] % self.nx, b[1] % self.ny)

    def neighbours(self, b) -> set[Block]:
        return {self.wrap((b[0] + dx, b[1] + dy)) for dx, dy in NEIGHBOURS} - {self.wrap(b)}

    def blocks(self) -> list[Block]:
        return [(i, j) for i in range(self.nx) for j in range(self.ny)]

    def index(self, b) -> int:
        b = self.wrap(b)
        return b[0] * self.ny + b[1]


def _components(blocks: Iterable[Block], torus: BlockTorus) -> list[frozenset]:
    left = set(map(torus.wrap, blocks))
    comps = []
    while left:
        seed = left.pop()
        comp, stack = {seed}, [seed]
        while stack:
            for nb in torus.neighbours(stack.pop()):
                if nb in left:
                    left.discard(nb)
                    comp.add(nb)
                    stack.append(nb)
        comps.append(frozenset(comp))
    return comps


def _circular_extent(coords: Iterable[int], n: int) -> int:
    occ = sorted(set(c % n for c in coords))
    if len(occ) == n:
        return n
    gaps = [(occ[(k + 1) % len(occ)] - occ[k] - 1) % n for k in range(len(occ))]
    return n - max(gaps)


def _arc_starts(coords, n: int) -> list[int]:
    occ = sorted(set(c % n for c in coords))
    if len(occ) == n:
        return list(range(n))
    gaps = [((occ[(k + 1) % len(occ)] - occ[k] - 1) % n, occ[(k + 1) % len(occ)]) for k in range(len(occ))]
    g = max(gp for gp, _ in gaps)
    return [st for gp, st in gaps if gp == g]


@dataclass(frozen=True)
class Polymer:
    blocks: frozenset
    torus: BlockTorus

    @classmethod
    def of(cls, blocks, torus: BlockTorus) -> "Polymer":
        return cls(frozenset(map(torus.wrap, blocks)), torus)

    @property
    def size(self) -> int:
        return len(self.blocks)

    @property
    def connected(self) -> bool:
        return self.size > 0 and len(_components(self.blocks, self.torus)) == 1

    @property
    def small(self) -> bool:
        return self.connected and self.size <= SMALL_MAX

    @property
    def wraps(self) -> bool:
        """True when the set may touch itself around the torus."""
        ex = _circular_extent((b[0] for b in self.blocks), self.torus.nx)
        ey = _circular_extent((b[1] for b in self.blocks), self.torus.ny)
        return ex >= self.torus.nx - 1 or ey >= self.torus.ny - 1

    def extent(self) -> int:
        ex = _circular_extent((b[0] for b in self.blocks), self.torus.nx)
        ey = _circular_extent((b[1] for b in self.blocks), self.torus.ny)
        return max(ex, ey)

    def canonical(self) -> tuple:
        """Lexicographically smallest translate with non-negative coordinates.

        Candidate origins are the starts of the occupied arcs after the largest
        empty gap on each axis, so non-wrapping polymers come out with min
        coordinates 0.
        """
        best = None
        for ax in _arc_starts([b[0] for b in self.blocks], self.torus.nx):
            for ay in _arc_starts([b[1] for b in self.blocks], self.torus.ny):
                shifted = tuple(sorted(((x - ax) % self.torus.nx, (y - ay) % self.torus.ny)
                                       for x, y in self.blocks))
                if best is None or shifted < best:
                    best = shifted
        return best

    def __len__(self):
        return self.size


def enumerate_connected(t: BlockTorus, pinned: Block = (0, 0), max_size: int = 4) -> list[Polymer]:
    """All connected polymers containing `pinned` with at most max_size blocks.

    Redelmeier-style growth on the torus adjacency graph, rooted at the pinned
    block, so each set appears exactly once.
    """
    if max_size < 1:
        return []
    if max_size > 8:
        raise ValueError("max_size <= 8 at desk scale")
    root = t.wrap(pinned)
    out: list[Polymer] = []
    current: list[Block] = []

    def grow(untried: list, seen: set):
        untried = list(untried)
        while untried:
            u = untried.pop()
            current.append(u)
            p = Polymer(frozenset(current), t)
            out.append(p)
            if len(current) < max_size:
                fresh = [nb for nb in sorted(t.neighbours(u)) if nb not in seen]
                grow(untried + fresh, seen | set(fresh))
            current.pop()

    grow([root], {root})
    if any(p.wraps for p in out):
        warnings.warn("some enumerated polymers wrap around the torus", RuntimeWarning, stacklevel=2)
    return out


@lru_cache(maxsize=None)
def connected_counts(max_size: int) -> tuple[int, ...]:
    """Number of connected sets of each size 1..max_size containing a fixed block (no wrapping)."""
    t = BlockTorus(2 * max_size + 2)
    counts = [0] * (max_size + 1)
    for p in enumerate_connected(t, (0, 0), max_size):
        counts[p.size] += 1
    return tuple(counts[1:])


def small_sets(t: BlockTorus, pinned: Block = (0, 0)) -> list[Polymer]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return enumerate_connected(t, pinned, SMALL_MAX)


def l_closure(X: Polymer, L: int) -> Polymer:
    """Union of the L-blocks meeting X, in rescaled (one L-block = one block) coordinates."""
    t = X.torus
    if t.nx % L or t.ny % L:
        raise ValueError("torus side must be divisible by L")
    coarse = BlockTorus(t.nx // L, t.ny // L) if min(t.nx, t.ny) // L >= 2 else _TinyTorus(t.nx // L, t.ny // L)
    return Polymer(frozenset((i // L, j // L) for i, j in X.blocks), coarse)


@dataclass(frozen=True)
class _TinyTorus(BlockTorus):
    """Coarse torus allowed to have a side of 1 (closure of a small fine torus)."""

    def __post_init__(self):
        if self.ny is None:
            object.__setattr__(self, "ny", self.nx)


@dataclass(frozen=True)
class SetRegulator:
    A: float = 1.0
    p: int = 0

    def __post_init__(self):
        if self.A < 1:
            raise ValueError("A must be >= 1")

    def log_gamma(self, size: int, p: int | None = None) -> float:
        p = self.p if p is None else p
        return size * (p * math.log(2) + math.log(self.A))

    def __call__(self, X, p: int | None = None) -> float:
        size = X if isinstance(X, int) else len(X)
        return math.exp(self.log_gamma(size, p))


@dataclass
class ReblockReport:
    c_star: float
    large_max: float
    c_star_witness: tuple
    large_witness: tuple
    n_checked: int
    n_large: int

    @property
    def accepted(self) -> bool:
        return self.large_max <= 1.0


def random_polymer(t: BlockTorus, size: int, rng: random.Random) -> Polymer:
    """Connected polymer grown by random accretion from the origin (planar, no wrapping)."""
    cells = {(0, 0)}
    frontier = [(0, 0)]
    while len(cells) < size:
        b = rng.choice(frontier)
        dx, dy = rng.choice(NEIGHBOURS)
        nb = (b[0] + dx, b[1] + dy)
        if nb not in cells:
            cells.add(nb)
            frontier.append(nb)
    return Polymer.of(cells, t)


def max_closure_size(X: Polymer, L: int) -> int:
    """Largest |closure| over the L^2 placements of X relative to the L-grid."""
    b = np.array(sorted(X.blocks))
    best = 0
    for sx in range(L):
        for sy in range(L):
            cx = ((b[:, 0] + sx) % X.torus.nx) // L
            cy = ((b[:, 1] + sy) % X.torus.ny) // L
            best = max(best, len(set(zip(cx.tolist(), cy.tolist()))))
    return best


@dataclass
class ClosureProfile:
    """(|X|, worst-case |closure|, connected) per polymer; all a regulator test needs."""

    L: int
    sizes: np.ndarray
    closures: np.ndarray
    connected: np.ndarray
    polymers: list


def closure_profile(polymers: Sequence[Polymer], L: int) -> ClosureProfile:
    sizes, closures, conn = [], [], []
    for X in polymers:
        sizes.append(X.size)
        closures.append(max_closure_size(X, L))
        conn.append(X.connected)
    return ClosureProfile(L, np.array(sizes), np.array(closures), np.array(conn, dtype=bool), list(polymers))


def regulator_reblock_check(reg: SetRegulator, L: int, q: int, polymers) -> ReblockReport:
    """c* = max Gamma_p(closure)/Gamma_{p-q}(X); large sets: max Gamma_p(closure)/(L^-4 Gamma_p(X)).

    Each polymer is tried at every offset against the L-grid.  `polymers` may be
    a precomputed ClosureProfile.
    """
    prof = polymers if isinstance(polymers, ClosureProfile) else closure_profile(list(polymers), L)
    if prof.L != L:
        raise ValueError("closure profile was computed for a different L")
    lg = math.log(2) * reg.p + math.log(reg.A)
    lg_q = math.log(2) * (reg.p - q) + math.log(reg.A)
    r = prof.closures * lg - prof.sizes * lg_q
    i = int(np.argmax(r))
    large = prof.connected & (prof.sizes > SMALL_MAX)
    if large.any():
        rl = np.where(large, (prof.closures - prof.sizes) * lg + 4 * math.log(L), -np.inf)
        k = int(np.argmax(rl))
        large_max, l_w = math.exp(rl[k]), prof.polymers[k].canonical()
    else:
        large_max, l_w = 0.0, ()
    return ReblockReport(math.exp(r[i]), large_max, prof.polymers[i].canonical(), l_w,
                         len(prof.sizes), int(large.sum()))


def regulator_test_set(L: int, max_enum: int = 7, n_random: int = 100, max_random: int = 40,
                       seed: int = 0) -> list[Polymer]:
    """Enumerated polymers up to max_enum blocks plus random larger ones, on a torus large enough not to wrap."""
    side = L * math.ceil((2 * max(max_enum, max_random) + 2) / L)
    t = BlockTorus(side)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pols = enumerate_connected(t, (0, 0), max_enum)
    rng = random.Random(seed)
    for _ in range(n_random):
        pols.append(random_polymer(t, rng.randint(max_enum + 1, max_random), rng))
    return pols


def search_regulator(L: int, p: int, q: int, polymers: Sequence[Polymer],
                     A_grid: Sequence[float] | None = None) -> tuple[SetRegulator, ReblockReport]:
    """Smallest A on the grid for which the large-set bound holds on all polymers."""
    if A_grid is None:
        A_grid = [2.0**k for k in range(0, 31)]
    if not isinstance(polymers, ClosureProfile):
        polymers = closure_profile(list(polymers), L)
    report = None
    for A in A_grid:
        reg = SetRegulator(A, p)
        report = regulator_reblock_check(reg, L, q, polymers)
        if report.accepted:
            return reg, report
    raise ConfigurationError(
        f"no A <= {max(A_grid):g} satisfies the large-set bound at L={L}, p={p}; "
        f"witness polymer {report.large_witness}",
        witness=report.large_witness,
    )


def filled_rectangle(L: int, width_L: int = 5) -> Polymer:
    """Block-filled L x (width_L * L) rectangle aligned with the L-grid (|X| = width_L * L^2)."""
    t = BlockTorus(L * (width_L + 2))
    return Polymer.of(((i, j) for i in range(width_L * L) for j in range(L)), t)


@dataclass
class PinSum:
    total: float
    shells: list
    ratios: list
    divergent: bool


def pin_sum(reg: SetRegulator, theta: float, max_size: int) -> PinSum:
    """sum over connected X containing a block, |X| <= max_size, of Gamma_p(X) theta^|X|."""
    counts = connected_counts(max_size)
    x = reg(1) * theta
    shells = [c * x**n for n, c in enumerate(counts, start=1)]
    ratios = [b / a if a else 0.0 for a, b in zip(shells, shells[1:])]
    divergent = any(r >= 1 for r in ratios)
    if divergent:
        warnings.warn("pin_sum shells do not decay", RuntimeWarning, stacklevel=2)
    return PinSum(float(sum(shells)), shells, ratios, divergent)


# ------------------------------------------------------------------ identities


def circle_product(V: Sequence[float], K: Callable[[frozenset], complex], torus: BlockTorus) -> complex:
    """Exp(box e^-V + K)(Lambda) by enumeration.

    Sum over subsets S of the torus of e^{-V(Lambda \\ S)} times the product of K
    over the connected components of S.  Equivalently, collections of connected
    polymers that are pairwise non-touching.
    """
    blocks = torus.blocks()
    n = len(blocks)
    if n > 16:
        raise ValueError("circle_product enumerates subsets; use at most 16 blocks")
    eV = np.exp(-np.asarray(V, dtype=float).ravel())
    if eV.size != n:
        raise ValueError("V must give one value per block")
    comps_cache: dict[frozenset, complex] = {}
    total = 0.0
    for mask in range(1 << n):
        chosen = [blocks[i] for i in range(n) if mask >> i & 1]
        w = np.prod([eV[i] for i in range(n) if not mask >> i & 1]) if mask != (1 << n) - 1 else 1.0
        prod = 1.0
        for comp in _components(chosen, torus):
            if comp not in comps_cache:
                comps_cache[comp] = K(comp)
            prod = prod * comps_cache[comp]
            if prod == 0:
                break
        total = total + w * prod
    return total


class _MaskTables:
    """Connectivity and closure tables over all subsets of a small torus."""

    def __init__(self, torus: BlockTorus, L: int):
        self.torus = torus
        self.blocks = torus.blocks()
        n = self.n = len(self.blocks)
        nb = np.zeros(n, dtype=np.int64)
        for i, b in enumerate(self.blocks):
            for c in torus.neighbours(b):
                nb[i] |= 1 << torus.index(c)
        self.nb = nb
        self.coarse = BlockTorus(torus.nx // L, torus.ny // L) if min(torus.nx, torus.ny) >= 2 * L else \
            _TinyTorus(torus.nx // L, torus.ny // L)
        cb = self.coarse.blocks()
        cidx = {b: k for k, b in enumerate(cb)}
        owner = np.array([cidx[(i // L, j // L)] for i, j in self.blocks])
        self.owner = owner
        masks = np.arange(1 << n, dtype=np.int64)
        closure = np.zeros(1 << n, dtype=np.int64)
        for i in range(n):
            closure |= ((masks >> i) & 1) << owner[i]
        self.closure = closure
        self.U = np.zeros(1 << len(cb), dtype=np.int64)
        for y in range(1 << len(cb)):
            m = 0
            for i in range(n):
                if y >> owner[i] & 1:
                    m |= 1 << i
            self.U[y] = m

    def components(self, mask: int) -> list[int]:
        comps = []
        while mask:
            low = mask & -mask
            comp, frontier = low, low
            while frontier:
                i = frontier.bit_length() - 1
                frontier &= ~(1 << i)
                new = int(self.nb[i]) & mask & ~comp
                comp |= new
                frontier |= new
            comps.append(comp)
            mask &= ~comp
        return comps

    def mask_to_blocks(self, mask: int) -> frozenset:
        return frozenset(self.blocks[i] for i in range(self.n) if mask >> i & 1)


def _subset_products(values: np.ndarray) -> np.ndarray:
    """prod_{i in mask} values[i] for every mask."""
    out = np.ones(1, dtype=values.dtype)
    for v in values:
        out = np.concatenate([out, out * v])
    return out


def _submasks(c: int, n: int) -> np.ndarray:
    bits = [i for i in range(n) if c >> i & 1]
    idx = np.arange(1 << len(bits), dtype=np.int64)
    out = np.zeros_like(idx)
    for k, b in enumerate(bits):
        out |= ((idx >> k) & 1) << b
    return out


@dataclass
class ReblockResult:
    lhs: complex
    rhs: complex
    BK: dict          # connected coarse polymer (frozenset of L-blocks) -> value
    coarse: BlockTorus

    @property
    def relative_gap(self) -> float:
        return abs(self.lhs - self.rhs) / max(abs(self.lhs), 1e-300)


def _grouped_sum(keys: np.ndarray, w: np.ndarray, size: int) -> np.ndarray:
    """Per-key sums of w, each group summed pairwise (np.sum) rather than sequentially."""
    order = np.argsort(keys, kind="stable")
    k, v = keys[order], np.asarray(w)[order]
    starts = np.flatnonzero(np.r_[True, k[1:] != k[:-1]])
    out = np.zeros(size, dtype=complex)
    for a, b in zip(starts, np.r_[starts[1:], k.size]):
        out[k[a]] = v[a:b].sum()
    return out


def reblock_map(K: Callable[[frozenset, np.ndarray], complex], V: Callable[[int, np.ndarray], float],
                L: int, torus: BlockTorus, phi: np.ndarray, zeta: np.ndarray) -> ReblockResult:
    """Exact BK on every connected L-polymer, and both sides of the reblocking identity.

    K(X, psi) is an activity of the fine-block field psi (one value per block, or
    any per-block array); V(i, psi) the potential of block i.  With
    P(i) = e^{-V(i, phi+zeta)} - e^{-V(i, phi)},

        BK(Y) = sum_{(S, D): closure(S u D) = Y} K(S, phi+zeta) prod_D P e^{-V(U(Y) \\ (S u D), phi)}

    where K(S) is the product over connected components of S.
    """
    if torus.n_blocks > 16:
        raise ValueError("reblock_map enumerates 3^|Lambda| terms; use at most 16 blocks")
    tab = _MaskTables(torus, L)
    n = tab.n
    psi = phi + zeta
    e_phi = np.array([math.exp(-V(i, phi)) for i in range(n)])
    e_psi = np.array([math.exp(-V(i, psi)) for i in range(n)])
    prodE = _subset_products(e_phi)
    prodP = _subset_products(e_psi - e_phi)
    full = (1 << n) - 1

    comp_val: dict[int, complex] = {}

    def Kmask(mask: int) -> complex:
        val = 1.0
        for c in tab.components(mask):
            if c not in comp_val:
                comp_val[c] = K(tab.mask_to_blocks(c), psi)
            val = val * comp_val[c]
        return val

    n_coarse = tab.coarse.n_blocks
    # millions of terms with cancellations: compensated (Kahan) sums throughout
    total = np.zeros(1 << n_coarse, dtype=complex)
    carry = np.zeros_like(total)
    lhs_terms = []
    prodE_psi = _subset_products(e_psi)
    for S in range(1 << n):
        kS = Kmask(S) if S else 1.0
        lhs_terms.append(kS * prodE_psi[full & ~S])
        if kS == 0:
            continue
        D = _submasks(full & ~S, n)
        SD = S | D
        Y = tab.closure[SD]
        w = kS * prodP[D] * prodE[tab.U[Y] & ~SD]
        part = _grouped_sum(Y, w, total.size)
        y = part - carry
        t = total + y
        carry = (t - total) - y
        total = t
    lhs = complex(math.fsum(np.real(lhs_terms)), math.fsum(np.imag(lhs_terms)))

    coarse_blocks = tab.coarse.blocks()

    def ymask_blocks(y):
        return frozenset(coarse_blocks[k] for k in range(n_coarse) if y >> k & 1)

    BK = {}
    for y in range(1, 1 << n_coarse):
        comps = _components(ymask_blocks(y), tab.coarse)
        if len(comps) == 1:
            BK[ymask_blocks(y)] = complex(total[y])
    # right side: coarse circle product with background e^{-V(U(Y'), phi)} per L-block
    coarse_eV = []
    for k in range(n_coarse):
        coarse_eV.append(prodE[tab.U[1 << k]])
    rhs = 0.0
    for y in range(1 << n_coarse):
        prod = 1.0
        for comp in _components(ymask_blocks(y), tab.coarse):
            prod = prod * BK[comp]
        bg = np.prod([coarse_eV[k] for k in range(n_coarse) if not y >> k & 1]) if y != (1 << n_coarse) - 1 else 1.0
        rhs += bg * prod
    return ReblockResult(complex(lhs), complex(rhs), BK, tab.coarse)


# ------------------------------------------------------------------ I/O


def write_polymers_jsonl(path, polymers: Iterable[Polymer]) -> None:
    with open(path, "w") as fh:
        for p in polymers:
            fh.write(json.dumps({"size": p.size, "blocks": [list(b) for b in p.canonical()]}) + "\n")


def write_counts_csv(path, counts: Sequence[int]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["size", "count"])
        for s, c in enumerate(counts, start=1):
            w.writerow([s, c])
