"""Lattice Dirac families on a discretized T^2 fiber with flux and Wilson lines.

The fiber operator is a Ginsparg-Wilson (overlap) Dirac matrix built from a
nearest-neighbor Wilson kernel with U(1) link phases.  A square
chirality-odd matrix cannot carry a kernel asymmetry (its two off-diagonal
blocks share singular values), so exact anticommutation is replaced by the
exact Ginsparg-Wilson identity; the kernel of the overlap matrix is then
chirality-invariant and its asymmetry is the index, with zero modes exact
to machine precision.

Conventions frozen by the flux-one calibration (index of flux n is +n):
  * links U1 = 1 away from the x^1 wrap row, U1[G-1, k] = e^{2 pi i (n k / G - a1)},
    U2[j, k] = e^{-2 pi i n j / G^2}, with e^{-2 pi i a2} on the x^2 wrap column.
  * Wilson lines enter through the wrap links only, so the operator family
    is strictly periodic in (a1, a2) and base-grid spectral derivatives
    are legitimate.
  * matching continuum connection on the flux bundle:
    A = -2 pi i [(n x^1 + a2) dx^2 + a1 dx^1].
"""

from __future__ import annotations

import numpy as np

SIGMA1 = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA2 = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA3 = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)

# largest tolerated |1 - plaquette phase|; fields denser than this are not
# resolved well enough for a continuum index verdict
ADMISSIBLE_PLAQUETTE = 1.0 / 6.0


def flux_links(G: int, n: int, a=(0.0, 0.0)):
    """Boundary-gauge U(1) links with total flux n and Wilson lines a.

    Sites are (j, k), x = (j/G, k/G); U1[j, k] sits on the link to
    (j+1, k), U2[j, k] on the link to (j, k+1).  Every plaquette carries
    the phase e^{-2 pi i n / G^2}; Wilson lines sit on the wrap links only,
    so the family is exactly periodic in a.
    """
    if int(n) != n:
        raise ValueError("flux must be an integer")
    n = int(n)
    j = np.arange(G).reshape(G, 1)
    k = np.arange(G).reshape(1, G)
    U1 = np.ones((G, G), dtype=complex)
    U1[G - 1, :] = np.exp(2j * np.pi * (n * k[0] / G - a[0]))
    U2 = np.exp(-2j * np.pi * n * j / G ** 2) * np.ones((G, G), dtype=complex)
    U2[:, G - 1] = U2[:, G - 1] * np.exp(-2j * np.pi * a[1])
    return U1, U2


def plaquette_phases(U1, U2):
    return (U1 * np.roll(U2, -1, axis=0) * np.conj(np.roll(U1, -1, axis=1))
            * np.conj(U2))


def admissibility(G: int, n: int) -> float:
    """Max |1 - plaquette phase| of the flux background."""
    return float(abs(1.0 - np.exp(-2j * np.pi * n / G ** 2)))


def _hop_matrices(U1, U2):
    """Covariant shifts on C^{G^2}: (T psi)(x) = U(x) psi(x + mu)."""
    G = U1.shape[0]
    N = G * G
    idx = np.arange(N).reshape(G, G)
    T1 = np.zeros((N, N), dtype=complex)
    T2 = np.zeros((N, N), dtype=complex)
    T1[idx.ravel(), np.roll(idx, -1, axis=0).ravel()] = U1.ravel()
    T2[idx.ravel(), np.roll(idx, -1, axis=1).ravel()] = U2.ravel()
    return T1, T2


def wilson_kernel(G: int, n: int, a=(0.0, 0.0), m0: float = 1.0, r: float = 1.0):
    """Hermitian Wilson operator H = sigma3 (D_naive + W - m0), lattice units."""
    U1, U2 = flux_links(G, n, a)
    T1, T2 = _hop_matrices(U1, U2)
    N = G * G
    A1 = 0.5 * (T1 - T1.conj().T)
    A2 = 0.5 * (T2 - T2.conj().T)
    C = 0.5 * r * ((2.0 * np.eye(N) - T1 - T1.conj().T)
                   + (2.0 * np.eye(N) - T2 - T2.conj().T)) - m0 * np.eye(N)
    # H = sigma3 (sigma1 A1 + sigma2 A2 + C) assembled blockwise
    H = np.empty((2 * N, 2 * N), dtype=complex)
    H[:N, :N] = C
    H[:N, N:] = A1 - 1j * A2
    H[N:, :N] = -(A1 + 1j * A2)
    H[N:, N:] = -C
    return H


def overlap_from_kernel(H: np.ndarray):
    """Overlap matrix D = 1 + sigma3 sign(H); returns (D, S, min |eig H|)."""
    w, v = np.linalg.eigh(H)
    gap = float(np.min(np.abs(w)))
    S = (v * np.sign(w)) @ v.conj().T
    N = H.shape[0] // 2
    D = np.eye(2 * N, dtype=complex)
    D[:N, :] += S[:N, :]
    D[N:, :] -= S[N:, :]
    return D, S, gap


class FiberOperator:
    """Overlap Dirac matrix at one base point, with chirality bookkeeping."""

    def __init__(self, G: int, flux: int, wilson=(0.0, 0.0), m0: float = 1.0,
                 r: float = 1.0):
        self.G = G
        self.flux = int(flux)
        self.wilson = tuple(wilson)
        self.flipped = False  # adjoint view reverses the chirality roles
        H = wilson_kernel(G, flux, wilson, m0, r)
        self.D, self.S, self.kernel_gap = overlap_from_kernel(H)

    @property
    def n_sites(self) -> int:
        return self.G * self.G

    def chirality(self) -> np.ndarray:
        g5 = np.diag(np.concatenate([np.ones(self.n_sites),
                                     -np.ones(self.n_sites)])).astype(complex)
        return -g5 if self.flipped else g5

    def chirality_slice(self, sign: int):
        N = self.n_sites
        plus = slice(0, N) if not self.flipped else slice(N, 2 * N)
        return plus if sign > 0 else (slice(N, 2 * N) if not self.flipped
                                      else slice(0, N))

    def sector_singular_values(self, sign: int) -> np.ndarray:
        """Singular values of D restricted to the +/- chirality subspace."""
        return np.linalg.svd(self.D[:, self.chirality_slice(sign)],
                             compute_uv=False)

    def ginsparg_wilson_residual(self) -> float:
        """Max-norm defect of g5 D + D g5 = D g5 D."""
        N = self.n_sites
        g5D = self.D.copy()
        g5D[N:, :] *= -1.0
        Dg5 = self.D.copy()
        Dg5[:, N:] *= -1.0
        return float(np.max(np.abs(g5D + Dg5 - self.D @ g5D)))

    def adjoint(self) -> "FiberOperator":
        out = FiberOperator.__new__(FiberOperator)
        out.G = self.G
        out.flux = self.flux
        out.wilson = self.wilson
        out.flipped = not self.flipped
        out.D = self.D.conj().T
        out.S = self.S
        out.kernel_gap = self.kernel_gap
        return out


class IndexVerdict:
    def __init__(self, index, gap_ratio, reliable, reason=""):
        self.index = index
        self.gap_ratio = gap_ratio
        self.reliable = reliable
        self.reason = reason

    def __repr__(self):
        return (f"IndexVerdict(index={self.index}, gap_ratio={self.gap_ratio:.3g},"
                f" reliable={self.reliable}, reason={self.reason!r})")


def count_below(sv: np.ndarray, tau: float):
    """(count, largest discarded, smallest retained) for threshold tau."""
    sv = np.sort(sv)
    below = sv[sv < tau]
    above = sv[sv >= tau]
    largest = float(below[-1]) if below.size else 0.0
    smallest = float(above[0]) if above.size else np.inf
    return below.size, largest, smallest


def sector_index(op: FiberOperator, tau_factor: float = 1e-6,
                 guard: float = 1e3, sign_gap_min: float = 1e-8) -> IndexVerdict:
    """Index as the chirality asymmetry of near-kernel singular values.

    The verdict is refused when the retained/discarded gap ratio is below
    `guard`, when the Wilson kernel is too close to singular for a stable
    sign function, or when the flux per plaquette exceeds the
    admissibility bound (a coarse lattice cannot certify the continuum
    index even though the Ginsparg-Wilson zero modes stay exact).
    """
    norm = float(np.linalg.norm(op.D, 2))
    tau = tau_factor * max(norm, 1.0)
    svp = op.sector_singular_values(+1)
    svm = op.sector_singular_values(-1)
    np_, ld_p, sr_p = count_below(svp, tau)
    nm_, ld_m, sr_m = count_below(svm, tau)
    largest = max(ld_p, ld_m)
    smallest = min(sr_p, sr_m)
    ratio = np.inf if largest == 0.0 else smallest / largest
    verdict = IndexVerdict(int(np_ - nm_), float(ratio), True)
    if ratio <= guard:
        verdict.reliable = False
        verdict.reason = (f"gap ratio {ratio:.3g} below {guard:g}: no reliable "
                          f"index at this lattice size")
    if op.kernel_gap < sign_gap_min:
        verdict.reliable = False
        verdict.reason = (f"sign-function kernel gap {op.kernel_gap:.3g} too "
                          f"small: no reliable index at this lattice size")
    adm = admissibility(op.G, op.flux)
    if adm > ADMISSIBLE_PLAQUETTE:
        verdict.reliable = False
        verdict.reason = (f"flux per plaquette |1-P| = {adm:.3g} exceeds the "
                          f"admissibility bound {ADMISSIBLE_PLAQUETTE:.3g}: no "
                          f"reliable index at this lattice size")
    return verdict


def spectral_pairing(op: FiberOperator, level_cutoff: float = 1.0,
                     zero_tol: float = 1e-8, max_pairs=None):
    """Low-energy paired data of the overlap operator.

    Returns (kplus, kminus, v, chi, lam): orthonormal exact zero modes by
    chirality and paired nonzero modes, where v are E+ eigenvectors of the
    compressed M+ = (1 + S)|_{E+} at eigenvalues 0 < lam <= level_cutoff
    and chi are their partners in E- at the same eigenvalue.  Sector
    singular values are sqrt(2 lam); eigenvalue 2 is the ultraviolet edge.
    """
    if op.flipped:
        raise ValueError("spectral pairing expects the unflipped family")
    N = op.n_sites
    S = op.S
    wp, vp = np.linalg.eigh(np.eye(N) + S[:N, :N])
    wm, vm = np.linalg.eigh(np.eye(N) - S[N:, N:])
    kplus = vp[:, wp < zero_tol]
    kminus = vm[:, wm < zero_tol]
    sel = (wp >= zero_tol) & (wp <= level_cutoff)
    lam = wp[sel]
    order = np.argsort(lam)
    lam = lam[order]
    v = vp[:, sel][:, order]
    if max_pairs is not None:
        lam = lam[:max_pairs]
        v = v[:, :max_pairs]
    chi = S[N:, :N] @ v
    nrm = np.linalg.norm(chi, axis=0)
    if np.any(nrm < 1e-12):
        raise ValueError("pairing degenerate: raise level_cutoff margin")
    chi = chi / nrm
    return kplus, kminus, v, chi, lam


class WilsonSpec:
    """Smooth Wilson-line map a(b) on the base torus.

    a(b) = offset + winding @ b + (amp/2pi) (sin 2 pi b_2, sin 2 pi b_1);
    winding entries are integers so the boundary-gauge links are exactly
    periodic in b.
    """

    def __init__(self, offset=(0.0, 0.0), winding=((0, 0), (0, 0)), amp=0.0):
        self.offset = np.asarray(offset, dtype=float)
        self.winding = np.asarray(winding, dtype=int)
        self.amp = float(amp)

    def __call__(self, b):
        b = np.asarray(b, dtype=float)
        wig = self.amp / (2 * np.pi) * np.array(
            [np.sin(2 * np.pi * b[1]), np.sin(2 * np.pi * b[0])])
        return self.offset + self.winding @ b + wig

    def differential(self, b):
        """Jacobian da_i/db_j at b (2x2 array)."""
        b = np.asarray(b, dtype=float)
        jac = self.winding.astype(float).copy()
        jac[0, 1] += self.amp * np.cos(2 * np.pi * b[1])
        jac[1, 0] += self.amp * np.cos(2 * np.pi * b[0])
        return jac

    def to_config(self):
        return {"offset": list(self.offset), "winding": self.winding.tolist(),
                "amp": self.amp}

    @classmethod
    def from_config(cls, cfg):
        return cls(tuple(cfg.get("offset", (0.0, 0.0))),
                   tuple(map(tuple, cfg.get("winding", ((0, 0), (0, 0))))),
                   cfg.get("amp", 0.0))


class LatticeDiracFamily:
    """Family of overlap fiber operators over a base grid on T^2."""

    def __init__(self, G: int, flux: int, wilson: WilsonSpec, base_grid: int,
                 m0: float = 1.0, r: float = 1.0):
        if G < 4:
            raise ValueError("lattice size G >= 4 required")
        self.G = G
        self.flux = int(flux)
        self.wilson = wilson
        self.base_grid = int(base_grid)
        self.m0 = m0
        self.r = r
        self._ops = {}

    def base_points(self):
        nb = self.base_grid
        for i1 in range(nb):
            for i2 in range(nb):
                yield (i1, i2), np.array([i1 / nb, i2 / nb])

    def operator(self, key) -> FiberOperator:
        if key not in self._ops:
            i1, i2 = key
            b = np.array([i1 / self.base_grid, i2 / self.base_grid])
            self._ops[key] = FiberOperator(self.G, self.flux, self.wilson(b),
                                           self.m0, self.r)
        return self._ops[key]

    def index_verdicts(self, **kw):
        out = {}
        for key, _ in self.base_points():
            out[key] = sector_index(self.operator(key), **kw)
        return out

    def family_index(self, **kw) -> IndexVerdict:
        """Single verdict for the family: per-point verdicts must agree."""
        verdicts = self.index_verdicts(**kw)
        vals = sorted({v.index for v in verdicts.values()})
        ratio = min(v.gap_ratio for v in verdicts.values())
        bad = [v for v in verdicts.values() if not v.reliable]
        if bad:
            return IndexVerdict(None, ratio, False, bad[0].reason)
        if len(vals) != 1:
            return IndexVerdict(None, ratio, False,
                                f"index jumps over the base grid: {vals}")
        return IndexVerdict(vals[0], ratio, True)

    def kernel_projector_field(self, sign: int = +1, zero_tol: float = 1e-8):
        """P_ker(b) in the chosen chirality sector over the base grid.

        Raises if the kernel rank jumps over the grid.
        """
        nb = self.base_grid
        N = self.G * self.G
        field = np.zeros((nb, nb, N, N), dtype=complex)
        ranks = set()
        min_excited = np.inf
        for key, _ in self.base_points():
            op = self.operator(key)
            S = op.S
            if sign > 0:
                w, v = np.linalg.eigh(np.eye(N) + S[:N, :N])
            else:
                w, v = np.linalg.eigh(np.eye(N) - S[N:, N:])
            rank = int(np.sum(w < zero_tol))
            ranks.add(rank)
            if rank < N:
                min_excited = min(min_excited, float(w[rank]))
            vecs = v[:, :rank]
            field[key] = vecs @ vecs.conj().T
        if len(ranks) != 1:
            raise ValueError(f"kernel rank jumps over the base grid: {ranks}")
        return field, ranks.pop(), float(min_excited)


def base_spectral_derivative(field: np.ndarray, axis: int) -> np.ndarray:
    """d/db_axis of a periodic base-grid field by spectral differentiation."""
    nb = field.shape[axis]
    k = np.fft.fftfreq(nb, d=1.0 / nb)
    shape = [1] * field.ndim
    shape[axis] = nb
    fh = np.fft.fft(field, axis=axis)
    return np.fft.ifft(fh * (2j * np.pi * k.reshape(shape)), axis=axis)


def projector_chern_number(field: np.ndarray) -> complex:
    """(i / 2 pi) integral tr(P dP dP) over the base torus grid."""
    dP1 = base_spectral_derivative(field, 0)
    dP2 = base_spectral_derivative(field, 1)
    integ = (np.einsum('xyij,xyjk,xyki->xy', field, dP1, dP2)
             - np.einsum('xyij,xyjk,xyki->xy', field, dP2, dP1))
    return complex(1j / (2 * np.pi) * integ.mean())


# ---- bounded transform and index idempotents ---------------------------


class IndexArtifacts:
    """Bounded transform, parametrix and index idempotents at one base point.

    Built on the low-energy rectangular model: the positive-chirality
    space E (exact zero modes plus paired levels) and its partner E'
    (opposite-chirality kernel plus the images of the paired levels), on
    which the overlap matrix acts as a rectangular diagonal with the
    sector singular values.  tr(P_D - Q) is the index.
    """

    def __init__(self, op: FiberOperator, level_cutoff: float = 1.0,
                 neumann_terms: int = 120):
        kplus, kminus, v, chi, lam = spectral_pairing(op, level_cutoff)
        npl, nmi, m = kplus.shape[1], kminus.shape[1], lam.size
        if m == 0:
            raise ValueError("no paired levels below the cutoff; increase it")
        self.dim_e = npl + m
        self.dim_e2 = nmi + m
        sv = np.sqrt(2.0 * lam)
        D = np.zeros((self.dim_e2, self.dim_e))
        D[nmi:, npl:] = np.diag(sv)
        self.D = D
        F = D @ _inv_sqrt(np.eye(self.dim_e) + D.T @ D)
        self.F = F
        # parametrix by a truncated Neumann series: R_m = sum (1-F^T F)^j F^T
        R = np.zeros_like(F.T)
        term = F.T.copy()
        K = np.eye(self.dim_e) - F.T @ F
        for _ in range(neumann_terms):
            R = R + term
            term = K @ term
        self.R = R
        self.S0 = np.eye(self.dim_e) - R @ F
        self.S1 = np.eye(self.dim_e2) - F @ R
        self.U, self.Uinv, self.P, self.Q = assemble_idempotents(F, R)

    def inverse_residual(self) -> float:
        return float(np.max(np.abs(self.U @ self.Uinv - np.eye(self.U.shape[0]))))

    def idempotent_residual(self) -> float:
        return float(np.max(np.abs(self.P @ self.P - self.P)))

    def smoothing_ranks(self, tol: float = 1e-8):
        r0 = int(np.sum(np.linalg.svd(self.S0, compute_uv=False) > tol))
        r1 = int(np.sum(np.linalg.svd(self.S1, compute_uv=False) > tol))
        return r0, r1

    def index_trace(self) -> float:
        return float(np.real(np.trace(self.P - self.Q)))


def _inv_sqrt(M: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(M)
    return (v / np.sqrt(w)) @ v.conj().T


def assemble_idempotents(F, R):
    """U_D, U_D^{-1}, P_D, Q from a bounded transform and any parametrix."""
    n2, n = F.shape
    S0 = np.eye(n) - R @ F
    S1 = np.eye(n2) - F @ R
    U = np.zeros((n + n2, n + n2), dtype=complex)
    U[:n, :n] = S0
    U[:n, n:] = -(np.eye(n) + S0) @ R
    U[n:, :n] = F
    U[n:, n:] = S1
    Uinv = np.zeros_like(U)
    Uinv[:n, :n] = S0
    Uinv[:n, n:] = (np.eye(n) + S0) @ R
    Uinv[n:, :n] = -F
    Uinv[n:, n:] = S1
    E = np.zeros_like(U)
    E[:n, :n] = np.eye(n)
    P = U @ E @ Uinv
    Q = np.zeros_like(U)
    Q[n:, n:] = np.eye(n2)
    return U, Uinv, P, Q


def glued_parametrix(art: IndexArtifacts, rho: float, smoothing=None):
    """Two-chart partition-of-unity recombination of the parametrix.

    Chart 2 carries a different parametrix of the same transported
    operator (any two differ by a smoothing term); the recombination
    rho R + (1 - rho) R_2 is again a parametrix and the index trace is
    unchanged.  Returns (index trace, inverse residual, rank of S0).
    """
    n, n2 = art.dim_e, art.dim_e2
    if smoothing is None:
        smoothing = np.zeros_like(art.R)
    R2 = art.R + smoothing
    Rglued = rho * art.R + (1.0 - rho) * R2
    U, Uinv, P, Q = assemble_idempotents(art.F, Rglued)
    tr = float(np.real(np.trace(P - Q)))
    inv_res = float(np.max(np.abs(U @ Uinv - np.eye(n + n2))))
    s0_rank = int(np.sum(np.linalg.svd(np.eye(n) - Rglued @ art.F,
                                       compute_uv=False) > 1e-8))
    return tr, inv_res, s0_rank
