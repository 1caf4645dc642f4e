"""Spectrally truncated superconnection data for lattice Dirac families.

Per base point the overlap operator is compressed to its exact kernel
plus the lowest paired levels (rank cap), embedded as smooth full-space
fields; the doubled graded algebra carries the index idempotent pair, and
the simplex-integral morphism applied to its character is compared
against the supertraced heat form of the rescaled superconnection.

The doubled supertrace counts each chirality sector of the index twice
(the two copies carry opposite gradings), so the morphism value of the
pair character equals twice the heat form; the check divides it out.
"""

from __future__ import annotations

import numpy as np

from .cyclic import MatrixFieldAlgebra, UChain, chern_chain
from .jlo import (
    ConnectionData,
    calibrate,
    phi_chain,
    str_heat_form,
    udict_add,
    udict_norm,
    udict_periods,
    udict_scale,
)
from .lattice import LatticeDiracFamily, spectral_pairing


class TruncatedFamily:
    """Smooth full-space fields of the rank-capped family over the base grid.

    Fields are built from frame-free spectral projectors, so they inherit
    the smoothness of the family even though eigenvector phases do not.
    """

    def __init__(self, fam: LatticeDiracFamily, rank_cap: int = 4,
                 d_scale: float = 0.15, level_cutoff: float = 1.9):
        self.fam = fam
        self.rank_cap = rank_cap
        self.d_scale = float(d_scale)
        nb = fam.base_grid
        N = 2 * fam.G * fam.G
        half = fam.G * fam.G
        self.dim = N
        self.base_shape = (nb, nb)
        D_field = np.zeros((nb, nb, N, N), dtype=complex)
        Pi_field = np.zeros((nb, nb, N, N), dtype=complex)
        ker_field = np.zeros((nb, nb, N, N), dtype=complex)
        kdims = set()
        min_gap = np.inf
        for key, _ in fam.base_points():
            op = fam.operator(key)
            kplus, kminus, v, chi, lam = spectral_pairing(
                op, level_cutoff=level_cutoff, max_pairs=rank_cap + 1)
            if lam.size < rank_cap + 1:
                raise ValueError("not enough paired levels below the cutoff")
            gap = float(lam[rank_cap] - lam[rank_cap - 1])
            min_gap = min(min_gap, gap)
            lam = lam[:rank_cap]
            v = v[:, :rank_cap]
            chi = chi[:, :rank_cap]
            kdims.add((kplus.shape[1], kminus.shape[1]))
            sv = self.d_scale * np.sqrt(2.0 * lam)
            i1, i2 = key
            # embed: v in the + chirality block, chi in the - block
            Vp = np.zeros((N, rank_cap), dtype=complex)
            Vm = np.zeros((N, rank_cap), dtype=complex)
            Vp[:half] = v
            Vm[half:] = chi
            D = (Vm * sv) @ Vp.conj().T
            D_field[i1, i2] = D + D.conj().T
            Kp = np.zeros((N, kplus.shape[1]), dtype=complex)
            Kp[:half] = kplus
            Km = np.zeros((N, kminus.shape[1]), dtype=complex)
            Km[half:] = kminus
            ker_field[i1, i2] = Kp @ Kp.conj().T + Km @ Km.conj().T
            Pi_field[i1, i2] = (Vp @ Vp.conj().T + Vm @ Vm.conj().T
                                + ker_field[i1, i2])
        if len(kdims) != 1:
            raise ValueError(f"kernel ranks jump over the base: {kdims}")
        self.kernel_dims = kdims.pop()
        self.cap_gap = float(min_gap)
        if self.cap_gap < 1e-8:
            raise ValueError("level crossing at the rank cap; change the cap")
        self.D = D_field          # odd self-adjoint, supported on V(b)
        self.Pi = Pi_field        # unit of the truncated algebra
        self.P_ker = ker_field

    @property
    def index(self) -> int:
        return self.kernel_dims[0] - self.kernel_dims[1]

    def chirality_signs(self) -> np.ndarray:
        half = self.dim // 2
        return np.concatenate([np.ones(half), -np.ones(half)])

    # ---- index idempotents on the truncated doubled module ----------------

    def bounded_transform(self):
        """F = D (Pi + D^2)^{-1/2} restricted to V(b), as a field."""
        nb = self.base_shape[0]
        N = self.dim
        F = np.zeros_like(self.D)
        for i1 in range(nb):
            for i2 in range(nb):
                D = self.D[i1, i2]
                Pi = self.Pi[i1, i2]
                w, vec = np.linalg.eigh(D @ D)
                inside = np.abs((vec.conj().T @ Pi @ vec).diagonal()) > 0.5
                scal = np.where(inside, 1.0 / np.sqrt(1.0 + np.abs(w)), 0.0)
                inv_half = (vec * scal) @ vec.conj().T
                F[i1, i2] = D @ inv_half
        return F

    def parametrix(self, F, neumann_terms: int = 150):
        """Neumann-series parametrix with the truncated unit."""
        nb = self.base_shape[0]
        R = np.zeros_like(F)
        for i1 in range(nb):
            for i2 in range(nb):
                f = F[i1, i2]
                Pi = self.Pi[i1, i2]
                K = Pi - f.conj().T @ f
                term = f.conj().T.copy()
                acc = np.zeros_like(f)
                for _ in range(neumann_terms):
                    acc += term
                    term = K @ term
                R[i1, i2] = acc
        return R

    def doubled_idempotents(self):
        """(P_D, Q) on the doubled module, supported on V + V."""
        F = self.bounded_transform()
        R = self.parametrix(F)
        Pi = self.Pi
        S0 = Pi - np.einsum('...ij,...jk->...ik', R, F)
        S1 = Pi - np.einsum('...ij,...jk->...ik', F, R)
        nb, N = self.base_shape[0], self.dim
        P = np.zeros((nb, nb, 2 * N, 2 * N), dtype=complex)
        Q = np.zeros_like(P)

        def mm(*mats):
            out = mats[0]
            for m_ in mats[1:]:
                out = np.einsum('...ij,...jk->...ik', out, m_)
            return out

        U = np.zeros_like(P)
        Uinv = np.zeros_like(P)
        U[..., :N, :N] = S0
        U[..., :N, N:] = -mm(Pi + S0, R)
        U[..., N:, :N] = F
        U[..., N:, N:] = S1
        Uinv[..., :N, :N] = S0
        Uinv[..., :N, N:] = mm(Pi + S0, R)
        Uinv[..., N:, :N] = -F
        Uinv[..., N:, N:] = S1
        E = np.zeros_like(P)
        E[..., :N, :N] = Pi
        P = mm(U, E, Uinv)
        Q[..., N:, N:] = Pi
        return P, Q

    def doubled_eps(self) -> np.ndarray:
        g = self.chirality_signs()
        return np.concatenate([g, -g])

    def doubled_x0(self) -> np.ndarray:
        nb, N = self.base_shape[0], self.dim
        X = np.zeros((nb, nb, 2 * N, 2 * N), dtype=complex)
        X[..., :N, :N] = self.D
        X[..., N:, N:] = self.D
        return X

    def doubled_data(self) -> ConnectionData:
        """Superconnection data for the doubled module (plain base d)."""
        return ConnectionData(self.base_shape, 2 * self.dim, {}, {},
                              eps=self.doubled_eps(), x0=self.doubled_x0())

    def single_data(self) -> ConnectionData:
        return ConnectionData(self.base_shape, self.dim, {}, {},
                              eps=self.chirality_signs(), x0=self.D)


def _doubled_block_eps(tf: TruncatedFamily):
    g = tf.chirality_signs()
    return np.concatenate([g, -g])


def superconnection_index_check(fam: LatticeDiracFamily, rank_cap: int = 4,
                                d_scale: float = 0.15, u_order: int = 3,
                                panels: int = 1, order: int = 2):
    """Both sides of the superconnection index identity at desk scale.

    Returns (lhs periods, rhs periods, diagnostics): the morphism value of
    the index-pair character on the doubled truncated module (halved for
    the doubling), against the supertraced heat form of the rescaled
    superconnection; both in the calibrated convention.
    """
    tf = TruncatedFamily(fam, rank_cap=rank_cap, d_scale=d_scale)
    P, Q = tf.doubled_idempotents()
    idem = float(np.max(np.abs(
        np.einsum('...ij,...jk->...ik', P, P) - P)))
    alg = MatrixFieldAlgebra(2 * tf.dim, base_shape=tf.base_shape,
                             grading=(tf.dim, tf.dim))
    # the doubled grading is not the block split; pass parities explicitly
    chain = _chern_chain_doubled(alg, tf, P, Q, u_order)
    data = tf.doubled_data()
    lhs_raw = phi_chain(data, chain, super_trace=True, panels=panels,
                        order=order)
    lhs = udict_periods(calibrate(udict_scale(lhs_raw, 0.5)), tf.base_shape)
    rhs_raw = str_heat_form(tf.single_data())
    rhs = udict_periods(calibrate(rhs_raw), tf.base_shape)
    diag = {"idempotent_residual": idem, "cap_gap": tf.cap_gap,
            "index": tf.index, "kernel_dims": tf.kernel_dims}
    return lhs, rhs, diag


def _chern_chain_doubled(alg, tf, P, Q, u_order):
    """Chern chain of the pair with explicit even parities."""
    from math import factorial
    out = UChain(alg)
    m = alg.size
    half_ident = 0.5 * np.eye(m)
    diff = P - Q
    out.add_term(0, 1.0, (diff,), parities=(0,), normalize=False)
    Pn = alg.project_scalar(P)
    Qn = alg.project_scalar(Q)
    for n in range(1, u_order + 1):
        coeff = (-1.0) ** n * factorial(2 * n) / factorial(n)
        out.add_term(n, coeff, (P - half_ident,) + (Pn,) * (2 * n),
                     parities=(0,) * (2 * n + 1), normalize=False)
        out.add_term(n, -coeff, (Q - half_ident,) + (Qn,) * (2 * n),
                     parities=(0,) * (2 * n + 1), normalize=False)
    return out


def compare_periods(lhs: dict, rhs: dict, keys=None):
    """Max |lhs - rhs| over the requested period keys (None = union)."""
    if keys is None:
        keys = set(lhs) | set(rhs)
    worst = 0.0
    for k in keys:
        a = lhs.get(k, 0.0)
        b = rhs.get(k, 0.0)
        worst = max(worst, abs(a - b))
    return worst
