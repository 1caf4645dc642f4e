"""Negative cyclic chains of matrix-field algebras.

Chains are finite sums of homogeneous terms u^n (x) (a_0 (x) ... (x) a_k)
with entries m x m matrix fields over a base grid (possibly a point) and
entries in slots >= 1 normalized modulo scalars.  The boundary is b + uB
with the Z2-graded signs when entry parities are declared.

Chain vanishing is certified against a battery of random multilinear
functionals: a residual below tolerance on every functional is the
numerical statement that the chain is zero.
"""

from __future__ import annotations

from math import factorial

import numpy as np


class MatrixFieldAlgebra:
    """m x m matrix fields over a base grid; base_shape = () is a point."""

    def __init__(self, size: int, base_shape=(), grading=None):
        self.size = size
        self.base_shape = tuple(base_shape)
        self.grading = tuple(grading) if grading else None

    @property
    def shape(self):
        return self.base_shape + (self.size, self.size)

    def identity(self) -> np.ndarray:
        arr = np.zeros(self.shape, dtype=complex)
        arr[...] = np.eye(self.size)
        return arr

    def zero(self) -> np.ndarray:
        return np.zeros(self.shape, dtype=complex)

    def random(self, rng, parity=None) -> np.ndarray:
        arr = rng.standard_normal(self.shape) + 1j * rng.standard_normal(self.shape)
        if parity is not None and self.grading:
            g0 = self.grading[0]
            if parity == 0:
                arr[..., :g0, g0:] = 0.0
                arr[..., g0:, :g0] = 0.0
            else:
                arr[..., :g0, :g0] = 0.0
                arr[..., g0:, g0:] = 0.0
        return arr

    def mul(self, a, b) -> np.ndarray:
        return np.einsum('...ij,...jk->...ik', a, b)

    def tr(self, a) -> np.ndarray:
        return np.einsum('...ii->...', a)

    def project_scalar(self, a) -> np.ndarray:
        """Representative of a mod C1.

        C1 means constant multiples of the unit (not pointwise scalar
        fields), so the projection commutes with base derivatives.
        """
        scal = complex(np.mean(self.tr(a))) / self.size
        return a - scal * np.eye(self.size)

    def norm(self, a) -> float:
        """Sup over the base of the operator norm."""
        flat = a.reshape(-1, self.size, self.size)
        return float(np.max(np.linalg.norm(flat, ord=2, axis=(1, 2))))

    def parity_of(self, a, tol=1e-12):
        if not self.grading:
            return 0
        g0 = self.grading[0]
        even = max(np.max(np.abs(a[..., :g0, :g0])),
                   np.max(np.abs(a[..., g0:, g0:])))
        odd = max(np.max(np.abs(a[..., :g0, g0:])),
                  np.max(np.abs(a[..., g0:, :g0])))
        scale = max(even, odd, 1e-30)
        if odd <= tol * scale:
            return 0
        if even <= tol * scale:
            return 1
        return None


class UChain:
    """List of homogeneous terms (u_power n, coeff, entries, parities)."""

    def __init__(self, alg: MatrixFieldAlgebra, terms=None):
        self.alg = alg
        self.terms = list(terms) if terms else []

    def add_term(self, n: int, coeff: complex, entries, parities=None,
                 normalize: bool = True):
        if n < 0:
            raise ValueError("u-powers must be >= 0")
        entries = [np.asarray(e, dtype=complex) for e in entries]
        if normalize:
            entries = [entries[0]] + [self.alg.project_scalar(e)
                                      for e in entries[1:]]
        if parities is None:
            if self.alg.grading:
                parities = []
                for e in entries:
                    p = self.alg.parity_of(e)
                    if p is None:
                        raise ValueError("graded chains need homogeneous entries")
                    parities.append(p)
            else:
                parities = [0] * len(entries)
        if abs(coeff) > 0 and all(np.any(e) for e in entries):
            self.terms.append((int(n), complex(coeff), tuple(entries),
                               tuple(parities)))

    def __add__(self, other: "UChain") -> "UChain":
        out = UChain(self.alg, self.terms)
        out.terms = list(self.terms) + list(other.terms)
        return out

    def scale(self, c: complex) -> "UChain":
        out = UChain(self.alg)
        out.terms = [(n, coeff * c, e, p) for (n, coeff, e, p) in self.terms]
        return out

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def shift_u(self, delta: int) -> "UChain":
        out = UChain(self.alg)
        out.terms = [(n + delta, c, e, p) for (n, c, e, p) in self.terms]
        if any(n < 0 for (n, _, _, _) in out.terms):
            raise ValueError("negative u-power")
        return out

    def truncate_u(self, max_power: int) -> "UChain":
        out = UChain(self.alg)
        out.terms = [t for t in self.terms if t[0] <= max_power]
        return out

    def max_k(self) -> int:
        return max((len(e) - 1 for (_, _, e, _) in self.terms), default=0)

    def degree_terms(self, n: int, k: int):
        return [t for t in self.terms if t[0] == n and len(t[2]) - 1 == k]


def hochschild_b(chain: UChain) -> UChain:
    """Graded Hochschild boundary on normalized representatives."""
    alg = chain.alg
    out = UChain(alg)
    for (n, coeff, ent, par) in chain.terms:
        k = len(ent) - 1
        if k == 0:
            continue
        for i in range(k):
            merged = alg.mul(ent[i], ent[i + 1])
            new_ent = ent[:i] + (merged,) + ent[i + 2:]
            new_par = par[:i] + ((par[i] + par[i + 1]) % 2,) + par[i + 2:]
            out.add_term(n, coeff * (-1) ** i, new_ent, new_par)
        sign = (-1) ** (k + par[k] * sum(par[:k]))
        merged = alg.mul(ent[k], ent[0])
        new_ent = (merged,) + ent[1:k]
        new_par = ((par[k] + par[0]) % 2,) + par[1:k]
        out.add_term(n, coeff * sign, new_ent, new_par)
    return out


def connes_B(chain: UChain) -> UChain:
    """Graded Connes boundary (normalized complex)."""
    alg = chain.alg
    out = UChain(alg)
    one = alg.identity()
    for (n, coeff, ent, par) in chain.terms:
        k = len(ent) - 1
        for j in range(k + 1):
            # rotate a_j ... a_k a_0 ... a_{j-1} and prefix the unit
            rot_ent = ent[j:] + ent[:j]
            rot_par = par[j:] + par[:j]
            koszul = (sum(par[:j]) * sum(par[j:])) % 2
            sign = (-1) ** (k * j + koszul)
            out.add_term(n, coeff * sign, (one,) + rot_ent, (0,) + rot_par)
    return out


def boundary(chain: UChain) -> UChain:
    """b + uB."""
    return hochschild_b(chain) + connes_B(chain).shift_u(1)


def insertion_contraction(chain: UChain, x: np.ndarray) -> UChain:
    """Cartan contraction for the inner derivation [x, .] (x even).

    e_x(a_0 (x) ... (x) a_k) = sum_i (-1)^{i+1} a_0 ... a_i (x) x (x) ... a_k.
    Satisfies b e_x + e_x b = L_x; its anticommutator with B vanishes on
    normalized chains, so (b + uB) e_x + e_x (b + uB) = L_x.
    """
    alg = chain.alg
    if alg.grading and alg.parity_of(x) != 0:
        raise ValueError("the contraction needs an even element")
    out = UChain(alg)
    for (n, coeff, ent, par) in chain.terms:
        k = len(ent) - 1
        for i in range(k + 1):
            new_ent = ent[:i + 1] + (x,) + ent[i + 1:]
            new_par = par[:i + 1] + (0,) + par[i + 1:]
            out.add_term(n, coeff * (-1) ** (i + 1), new_ent, new_par)
    return out


def lie_action(chain: UChain, x: np.ndarray) -> UChain:
    """L_x: the derivation [x, .] applied across the slots."""
    alg = chain.alg
    out = UChain(alg)
    for (n, coeff, ent, par) in chain.terms:
        for i in range(len(ent)):
            comm = alg.mul(x, ent[i]) - alg.mul(ent[i], x)
            new_ent = ent[:i] + (comm,) + ent[i + 1:]
            out.add_term(n, coeff, new_ent, par)
    return out


# ---- numerical chain functionals ----------------------------------------


class ChainProbe:
    """Battery of random multilinear functionals certifying chain vanishing.

    phi(u^n a_0 ... a_k) = z^n w-weighted tr(a_0 R^(1) a_1 ... R^(k) a_k);
    matrices R and base weights are drawn once per probe.
    """

    def __init__(self, alg: MatrixFieldAlgebra, rng, n_probes: int = 6,
                 max_k: int = 12):
        self.alg = alg
        self.probes = []
        for _ in range(n_probes):
            z = complex(rng.standard_normal() + 1j * rng.standard_normal())
            z = z / abs(z)
            R = [rng.standard_normal((alg.size, alg.size))
                 + 1j * rng.standard_normal((alg.size, alg.size))
                 for _ in range(max_k + 2)]
            R = [r / np.linalg.norm(r, 2) for r in R]
            w = rng.standard_normal(alg.base_shape) if alg.base_shape else 1.0
            self.probes.append((z, R, w))

    def value(self, chain: UChain) -> list:
        out = []
        for (z, R, w) in self.probes:
            total = 0.0 + 0.0j
            for (n, coeff, ent, par) in chain.terms:
                acc = ent[0]
                for i, a in enumerate(ent[1:]):
                    acc = self.alg.mul(acc, np.broadcast_to(R[i], a.shape))
                    acc = self.alg.mul(acc, a)
                tr = self.alg.tr(acc)
                total += coeff * (z ** n) * complex(np.sum(tr * w))
            out.append(total)
        return out

    def scale_of(self, chain: UChain) -> float:
        s = 0.0
        for (n, coeff, ent, par) in chain.terms:
            s += abs(coeff) * np.prod([self.alg.norm(a) for a in ent])
        return max(s, 1e-30)

    def residual(self, chain: UChain) -> float:
        vals = self.value(chain)
        return max(abs(v) for v in vals) / self.scale_of(chain)


# ---- the Chern chain of an idempotent pair --------------------------------


def chern_chain(alg: MatrixFieldAlgebra, P, Q, u_order: int = 3,
                idem_tol: float = 1e-10) -> UChain:
    """tr(P - Q) + sum_n (-u)^n (2n)!/n! ((P - 1/2) P...P - (Q - 1/2) Q...Q).

    The chain of the K-theory class [P - Q], truncated at the configured
    u-order; entries are the idempotent fields themselves.
    """
    for (name, E) in (("P", P), ("Q", Q)):
        res = alg.norm(alg.mul(E, E) - E)
        if res > idem_tol * max(1.0, alg.norm(E) ** 2):
            raise ValueError(f"{name} is not idempotent: residual {res:.3e}")
    out = UChain(alg)
    half = 0.5 * alg.identity()
    out.add_term(0, 1.0, (P - Q,))
    for n in range(1, u_order + 1):
        coeff = (-1.0) ** n * factorial(2 * n) / factorial(n)
        out.add_term(n, coeff, (P - half,) + (P,) * (2 * n))
        out.add_term(n, -coeff, (Q - half,) + (Q,) * (2 * n))
    return out


def entire_growth_check(chain: UChain, cap: float = 20.0):
    """Smallest C with |alpha_k| <= C^k k! across the computed u-orders.

    Returns (C, V_dim, passed); fails when no C below the cap fits.  The
    span dimension V_dim is measured across all entries.
    """
    alg = chain.alg
    by_power = {}
    for (n, coeff, ent, par) in chain.terms:
        nu = abs(coeff) * np.prod([alg.norm(a) for a in ent])
        by_power[n] = by_power.get(n, 0.0) + nu
    C = 0.0
    for n, nu in by_power.items():
        if n == 0:
            continue
        C = max(C, (nu / factorial(n)) ** (1.0 / n))
    vecs = []
    for (_, _, ent, _) in chain.terms:
        for a in ent:
            vecs.append(a.ravel())
    vdim = 0
    if vecs:
        M = np.array(vecs)
        vdim = int(np.linalg.matrix_rank(M, tol=1e-10))
    return float(C), vdim, bool(C <= cap)


# ---- conjugation invariance witness ---------------------------------------


def idempotent_path_witness(alg: MatrixFieldAlgebra, P, X, u_order: int = 3,
                            panels: int = 8) -> UChain:
    """Explicit W with (b + uB) W = Ch(U P U^{-1}) - Ch(P), U = e^X.

    W = int_0^1 e_x(Ch(P_t)) dt with P_t = e^{tX} P e^{-tX}: the Cartan
    identity turns the t-derivative of the Chern cycle into a boundary.
    Composite two-point Gauss panels in t.
    """
    from scipy.linalg import expm

    def conj(t):
        if alg.base_shape:
            raise ValueError("witness implemented for constant fields")
        U = expm(t * X)
        Uinv = expm(-t * X)
        return U @ P @ Uinv

    gl_x = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    W = UChain(alg)
    for p in range(panels):
        a_, b_ = p / panels, (p + 1) / panels
        mid, half = 0.5 * (a_ + b_), 0.5 * (b_ - a_)
        for xnode in gl_x:
            t = mid + half * xnode
            Pt = conj(float(t))
            ch = chern_chain(alg, Pt, np.zeros_like(Pt), u_order)
            W = W + insertion_contraction(ch, X).scale(half)
    return W


def bounded_commutator_predicate(U, D, bound: float = 1e3) -> bool:
    """Order-zero test: the commutator [D, U] stays norm-bounded."""
    comm = D @ U - U @ D
    return float(np.linalg.norm(comm, 2)) <= bound
