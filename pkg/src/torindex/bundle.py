"""Twisted vector bundles over gerbe descent data: cocycles, compatible
connections, the global Azumaya-valued curvature, twisted Chern forms,
transgression, and finite-dimensional superconnection Chern forms.

Matrix-valued grid forms carry u-half-powers and exact stored derivatives.
With a Z2 grading, products apply the Koszul sign for the matrix-unit
parity against the form degree, exactly as in the band-limited layer.

Direction convention: transitions satisfy g_ab g_bc = mu_abc g_ac, the
compatibility residual is g^{-1}(d + Gamma_a) g + A_ab - Gamma_b, and
theta_a + omega_a glues by conjugation; the gerbe defect carries the
matching sign (see GerbeDescent.defect_form).
"""

from __future__ import annotations

from math import factorial

import numpy as np

from .cover import Cover, DForm, Grid, ScalarField
from .forms import _merge_sign
from .gerbe import GerbeConnection, GerbeDescent, curvature_three_form

TWO_PI_I = 2.0j * np.pi


class MGForm:
    """Matrix-valued grid form with u-half-powers and stored derivatives.

    comps / dcomps map (2*u_exponent, index tuple) to arrays of shape
    (*grid, r, r); dcomps stores the components of the exterior
    derivative (one degree up, same u-power).
    """

    def __init__(self, grid: Grid, size: int, comps=None, dcomps=None,
                 mask=None, grading=None):
        self.grid = grid
        self.size = size
        self.comps = dict(comps) if comps else {}
        self.dcomps = dict(dcomps) if dcomps else {}
        self.mask = mask
        self.grading = tuple(grading) if grading else None

    # ---- helpers ---------------------------------------------------------

    def parity_vector(self):
        if not self.grading:
            return np.ones(self.size)
        return np.concatenate([np.ones(self.grading[0]),
                               -np.ones(self.grading[1])])

    @classmethod
    def zero(cls, grid, size, mask=None, grading=None):
        return cls(grid, size, mask=mask, grading=grading)

    @classmethod
    def identity(cls, grid, size, grading=None):
        arr = np.zeros(grid.shape() + (size, size), dtype=complex)
        arr[...] = np.eye(size)
        return cls(grid, size, {(0, ()): arr}, {}, None, grading)

    @classmethod
    def from_constant_matrix(cls, grid, mat, grading=None, u_power=0):
        mat = np.asarray(mat, dtype=complex)
        arr = np.zeros(grid.shape() + mat.shape, dtype=complex)
        arr[...] = mat
        return cls(grid, mat.shape[0], {(2 * u_power, ()): arr}, {},
                   None, grading)

    @classmethod
    def from_dform_entry(cls, f: DForm, size, i, j, grading=None, u_power=0):
        """Embed a scalar grid form into the (i, j) matrix slot."""
        comps = {}
        dcomps = {}
        for idx, arr in f.comps.items():
            big = np.zeros(f.grid.shape() + (size, size), dtype=complex)
            big[..., i, j] = arr
            comps[(2 * u_power, idx)] = big
        for idx, arr in f.dcomps.items():
            big = np.zeros(f.grid.shape() + (size, size), dtype=complex)
            big[..., i, j] = arr
            dcomps[(2 * u_power, idx)] = big
        return cls(f.grid, size, comps, dcomps, f.mask, grading)

    @classmethod
    def from_scalar_dform(cls, f: DForm, size, grading=None, u_power=0):
        """Scalar grid form times the identity matrix."""
        out = cls.zero(f.grid, size, f.mask, grading)
        for i in range(size):
            term = cls.from_dform_entry(f, size, i, i, grading, u_power)
            out = out + term
        out.mask = f.mask
        return out

    def copy(self):
        return MGForm(self.grid, self.size,
                      {k: v.copy() for k, v in self.comps.items()},
                      {k: v.copy() for k, v in self.dcomps.items()},
                      None if self.mask is None else self.mask.copy(),
                      self.grading)

    @staticmethod
    def _join(a, b):
        if a is None:
            return b
        if b is None:
            return a
        return a & b

    def restrict(self, mask):
        out = self.copy()
        out.mask = self._join(self.mask, mask)
        return out

    # ---- linear algebra ----------------------------------------------------

    def __add__(self, other):
        if self.grid != other.grid or self.size != other.size:
            raise ValueError("incompatible matrix grid forms")
        out = self.copy()
        out.mask = self._join(self.mask, other.mask)
        for k, v in other.comps.items():
            out.comps[k] = out.comps[k] + v if k in out.comps else v.copy()
        for k, v in other.dcomps.items():
            out.dcomps[k] = out.dcomps[k] + v if k in out.dcomps else v.copy()
        return out

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, c: complex):
        return MGForm(self.grid, self.size,
                      {k: c * v for k, v in self.comps.items()},
                      {k: c * v for k, v in self.dcomps.items()},
                      self.mask, self.grading)

    def shift_u(self, half_steps: int):
        """Multiply by u^{half_steps / 2}."""
        out = MGForm(self.grid, self.size, mask=self.mask, grading=self.grading)
        for (u2, idx), v in self.comps.items():
            if u2 + half_steps < 0:
                raise ValueError("negative u-power")
            out.comps[(u2 + half_steps, idx)] = v.copy()
        for (u2, idx), v in self.dcomps.items():
            out.dcomps[(u2 + half_steps, idx)] = v.copy()
        return out

    def d(self):
        return MGForm(self.grid, self.size,
                      {k: v.copy() for k, v in self.dcomps.items()},
                      {}, self.mask, self.grading)

    def mul(self, other: "MGForm") -> "MGForm":
        """Superalgebra product with the matrix-unit Koszul sign."""
        if self.grid != other.grid or self.size != other.size:
            raise ValueError("incompatible matrix grid forms")
        if (self.grading or other.grading) and self.grading != other.grading:
            raise ValueError("grading mismatch")
        grading = self.grading or other.grading
        eps = None
        if grading:
            eps = np.concatenate([np.ones(grading[0]), -np.ones(grading[1])])
        out = MGForm(self.grid, self.size,
                     mask=self._join(self.mask, other.mask), grading=grading)

        def acc(target, key, arr):
            if key in target:
                target[key] = target[key] + arr
            else:
                target[key] = arr

        def mm(a, b, odd_b):
            if eps is not None and odd_b:
                a = eps[:, None] * a * eps[None, :]
            return np.einsum('...ij,...jk->...ik', a, b)

        for (u1, I), a in self.comps.items():
            for (u2, J), b in other.comps.items():
                s, K = _merge_sign(I, J)
                if s is None or len(K) > self.grid.dim:
                    continue
                acc(out.comps, (u1 + u2, K), s * mm(a, b, len(J) % 2))
        # Leibniz for the stored derivative
        for (u1, I), a in self.dcomps.items():
            for (u2, J), b in other.comps.items():
                s, K = _merge_sign(I, J)
                if s is None or len(K) > self.grid.dim:
                    continue
                acc(out.dcomps, (u1 + u2, K), s * mm(a, b, len(J) % 2))
        for (u1, I), a in self.comps.items():
            sgn = (-1.0) ** len(I)
            for (u2, J), b in other.dcomps.items():
                s, K = _merge_sign(I, J)
                if s is None or len(K) > self.grid.dim:
                    continue
                acc(out.dcomps, (u1 + u2, K), sgn * s * mm(a, b, len(J) % 2))
        return out

    def conj_by(self, gvals, ginv, dg=None, dginv=None):
        """g^{-1} X g for a matrix function g (derivative-exact if dg given).

        dg / dginv are lists of per-axis derivative arrays.
        """
        out = MGForm(self.grid, self.size, mask=self.mask, grading=self.grading)
        for (u2, I), a in self.comps.items():
            out.comps[(u2, I)] = np.einsum('...ij,...jk,...kl->...il',
                                           ginv, a, gvals)
        if dg is None:
            return out
        for (u2, I), a in self.dcomps.items():
            out.dcomps[(u2, I)] = np.einsum('...ij,...jk,...kl->...il',
                                            ginv, a, gvals)
        for (u2, I), a in self.comps.items():
            for ax in range(self.grid.dim):
                if ax in I:
                    continue
                pos = sum(1 for i in I if i < ax)
                sgn = (-1.0) ** pos
                K = tuple(sorted(I + (ax,)))
                extra = np.einsum('...ij,...jk,...kl->...il', dginv[ax], a, gvals) \
                    + np.einsum('...ij,...jk,...kl->...il', ginv, a, dg[ax])
                key = (u2, K)
                cur = out.dcomps.get(key)
                out.dcomps[key] = (cur + sgn * extra) if cur is not None \
                    else sgn * extra
        return out

    def trace(self) -> dict:
        """{(u2, idx): scalar array} of the matrix trace."""
        return {k: np.einsum('...ii->...', v) for k, v in self.comps.items()}

    def supertrace(self) -> dict:
        if not self.grading:
            raise ValueError("supertrace requires a grading")
        eps = self.parity_vector()
        return {k: np.einsum('...ii,i->...', v, eps)
                for k, v in self.comps.items()}

    def trace_dform(self, u2: int, degree: int, super_: bool = False) -> DForm:
        """Scalar DForm of the (u-power, degree) trace part, derivative-exact."""
        eps = self.parity_vector() if super_ else np.ones(self.size)
        comps = {}
        dcomps = {}
        for (k2, idx), v in self.comps.items():
            if k2 == u2 and len(idx) == degree:
                comps[idx] = np.einsum('...ii,i->...', v, eps)
        for (k2, idx), v in self.dcomps.items():
            if k2 == u2 and len(idx) == degree + 1:
                dcomps[idx] = np.einsum('...ii,i->...', v, eps)
        return DForm(self.grid, degree, comps, dcomps, self.mask)

    def u_powers(self):
        return sorted({k2 for (k2, _) in self.comps})

    def min_form_degree(self, tol=1e-14):
        degs = [len(idx) for (u2, idx), v in self.comps.items()
                if np.max(np.abs(v)) > tol]
        return min(degs) if degs else None

    def norm(self) -> float:
        m = 0.0
        for arr in self.comps.values():
            a = arr if self.mask is None else arr[self.mask]
            if a.size:
                m = max(m, float(np.max(np.abs(a))))
        return m

    def exp(self) -> "MGForm":
        """Terminating exponential for positive minimal form degree."""
        if self.min_form_degree() == 0:
            raise ValueError("exponential requires form degree >= 1 entries")
        out = MGForm.identity(self.grid, self.size, self.grading)
        out.mask = self.mask
        term = MGForm.identity(self.grid, self.size, self.grading)
        for j in range(1, self.grid.dim + 1):
            term = term.mul(self).scale(1.0 / j)
            if not term.comps:
                break
            out = out + term
        return out


class Transition:
    """Trivialized transition matrix with exact per-axis derivatives."""

    def __init__(self, values, dvalues, mask):
        self.values = np.asarray(values, dtype=complex)
        self.dvalues = [np.asarray(d, dtype=complex) for d in dvalues]
        self.mask = mask

    @classmethod
    def from_phase(cls, f: ScalarField, mask):
        """rank-1 transition exp(2 pi i f)."""
        vals = np.exp(TWO_PI_I * f.values)[..., None, None]
        dvals = [(TWO_PI_I * g * np.exp(TWO_PI_I * f.values))[..., None, None]
                 for g in f.grads]
        return cls(vals, dvals, mask)

    @classmethod
    def identity(cls, grid: Grid, size, mask):
        vals = np.zeros(grid.shape() + (size, size), dtype=complex)
        vals[...] = np.eye(size)
        z = np.zeros_like(vals)
        return cls(vals, [z.copy() for _ in range(grid.dim)], mask)

    def inverse(self) -> "Transition":
        inv = np.linalg.inv(self.values)
        dinv = [-np.einsum('...ij,...jk,...kl->...il', inv, d, inv)
                for d in self.dvalues]
        return Transition(inv, dinv, self.mask)

    def matmul(self, other: "Transition") -> "Transition":
        vals = np.einsum('...ij,...jk->...ik', self.values, other.values)
        dvals = [np.einsum('...ij,...jk->...ik', d, other.values)
                 + np.einsum('...ij,...jk->...ik', self.values, od)
                 for d, od in zip(self.dvalues, other.dvalues)]
        return Transition(vals, dvals,
                          MGForm._join(self.mask, other.mask))

    def scale_values(self, scal, dscal) -> "Transition":
        """Multiply by a scalar function with known gradient."""
        vals = self.values * scal[..., None, None]
        dvals = [d * scal[..., None, None] + self.values * ds[..., None, None]
                 for d, ds in zip(self.dvalues, dscal)]
        return Transition(vals, dvals, self.mask)

    def dlog_form(self, grid: Grid, size) -> MGForm:
        """g^{-1} dg as a matrix 1-form with exact derivative."""
        inv = np.linalg.inv(self.values)
        comps = {}
        dcomps = {}
        for ax in range(grid.dim):
            comps[(0, (ax,))] = np.einsum('...ij,...jk->...ik', inv,
                                          self.dvalues[ax])
        # d(g^{-1} dg) = -(g^{-1} dg)^(2): store it so downstream d is exact
        form = MGForm(grid, size, comps, {}, self.mask)
        sq = form.mul(form)
        for key, v in sq.comps.items():
            dcomps[key] = -v
        return MGForm(grid, size, comps, dcomps, self.mask)


class TwistedBundleDescent:
    """Transitions over a gerbe descent datum: g_ab g_bc = mu_abc g_ac."""

    def __init__(self, gerbe: GerbeDescent, rank: int, transitions: dict,
                 grading=None):
        self.gerbe = gerbe
        self.cover = gerbe.cover
        self.rank = rank
        self.grading = tuple(grading) if grading else None
        self.transitions = transitions  # (a < b) -> Transition

    @classmethod
    def trivial(cls, gerbe: GerbeDescent, rank: int, grading=None):
        cover = gerbe.cover
        trans = {p: Transition.identity(cover.grid, rank,
                                        cover.overlap_mask(p))
                 for p in cover.pairs()}
        return cls(gerbe, rank, trans, grading)

    @classmethod
    def from_phases(cls, gerbe: GerbeDescent, f_seeds: dict):
        """Rank one, g_ab = exp(2 pi i f_ab) from the pair seeds."""
        cover = gerbe.cover
        trans = {}
        for p in cover.pairs():
            trans[p] = Transition.from_phase(f_seeds[p], cover.overlap_mask(p))
        return cls(gerbe, 1, trans)

    def transition(self, a, b) -> Transition:
        if a < b:
            return self.transitions[(a, b)]
        return self.transitions[(b, a)].inverse()


class TwistedCocycleReport:
    def __init__(self, residuals, tolerance):
        self.residuals = residuals
        self.tolerance = tolerance

    @property
    def max_residual(self):
        return max(self.residuals.values()) if self.residuals else 0.0

    @property
    def passed(self):
        return self.max_residual < self.tolerance

    def worst(self):
        if not self.residuals:
            return None
        return max(self.residuals, key=self.residuals.get)


def verify_twisted_cocycle(tb: TwistedBundleDescent,
                           tolerance: float = 1e-10) -> TwistedCocycleReport:
    res = {}
    for (a, b, c) in tb.cover.triples():
        mask = tb.cover.overlap_mask((a, b, c))
        if not np.any(mask):
            continue
        g_ab = tb.transition(a, b).values
        g_bc = tb.transition(b, c).values
        g_ac = tb.transition(a, c).values
        mu = tb.gerbe.mu[(a, b, c)].values
        lhs = np.einsum('...ij,...jk->...ik', g_ab, g_bc)
        rhs = mu[..., None, None] * g_ac
        res[(a, b, c)] = float(np.max(np.abs((lhs - rhs)[mask])))
    return TwistedCocycleReport(res, tolerance)


class BundleConnection:
    """Matrix connection 1-forms per chart over a gerbe connection."""

    def __init__(self, tb: TwistedBundleDescent, gerbe_conn: GerbeConnection,
                 gamma: list):
        self.tb = tb
        self.gerbe_conn = gerbe_conn
        self.gamma = gamma  # per chart MGForm, degree 1, u^0

    def shift_global(self, delta: MGForm) -> "BundleConnection":
        """Gauge freedom: add a global matrix 1-form to every chart."""
        new = [g + delta.restrict(self.tb.cover.masks[i])
               for i, g in enumerate(self.gamma)]
        return BundleConnection(self.tb, self.gerbe_conn, new)


def build_bundle_connection(tb: TwistedBundleDescent,
                            gerbe_conn: GerbeConnection) -> BundleConnection:
    """Partition-of-unity compatible connection, soft-sheaf style.

    Gamma_b = sum_c rho_c W_cb with W_cb = g_cb^{-1} d g_cb + A_cb the
    defect of the zero reference connection transported from chart c.
    """
    cover = tb.cover
    r = tb.rank
    gamma = []
    for b in range(cover.n_charts):
        acc = MGForm.zero(cover.grid, r, grading=tb.grading)
        acc.mask = None
        for c in range(cover.n_charts):
            if c == b:
                continue
            key = (min(b, c), max(b, c))
            if key not in tb.transitions:
                continue
            g_cb = tb.transition(c, b)
            W = g_cb.dlog_form(cover.grid, r)
            A_cb = gerbe_conn.a_form(c, b)
            W = W + MGForm.from_scalar_dform(A_cb, r, tb.grading)
            rho = cover.partition[c]
            support = (np.abs(rho.values) > 0) & cover.masks[b]
            if W.mask is not None and np.any(support & ~W.mask):
                raise ValueError(f"partition support leaves overlap {key}")
            term = _mg_mul_scalar(W, rho)
            term = _mg_zero_outside(term, support)
            acc = acc + term
        acc.mask = cover.masks[b]
        acc.grading = tb.grading
        gamma.append(acc)
    return BundleConnection(tb, gerbe_conn, gamma)


def _mg_mul_scalar(m: MGForm, f: ScalarField) -> MGForm:
    """f * m with exact Leibniz derivative."""
    out = MGForm(m.grid, m.size, mask=m.mask, grading=m.grading)
    for key, v in m.comps.items():
        out.comps[key] = f.values[..., None, None] * v
    for key, v in m.dcomps.items():
        out.dcomps[key] = f.values[..., None, None] * v
    for (u2, I), v in m.comps.items():
        for ax in range(m.grid.dim):
            if ax in I:
                continue
            pos = sum(1 for i in I if i < ax)
            sgn = (-1.0) ** pos
            K = tuple(sorted(I + (ax,)))
            key = (u2, K)
            extra = sgn * f.grads[ax][..., None, None] * v
            cur = out.dcomps.get(key)
            out.dcomps[key] = cur + extra if cur is not None else extra
    return out


def _mg_zero_outside(m: MGForm, support) -> MGForm:
    sel = support[(...,) + (None, None)]
    out = MGForm(m.grid, m.size, mask=None, grading=m.grading)
    out.comps = {k: np.where(sel, v, 0.0) for k, v in m.comps.items()}
    out.dcomps = {k: np.where(sel, v, 0.0) for k, v in m.dcomps.items()}
    return out


def connection_compatibility_residual(bc: BundleConnection) -> float:
    """Max over pair overlaps of g^{-1}(d + Gamma_a) g + A_ab - Gamma_b."""
    tb = bc.tb
    cover = tb.cover
    worst = 0.0
    for (a, b) in cover.pairs():
        mask = cover.overlap_mask((a, b))
        g = tb.transition(a, b)
        lhs = g.dlog_form(cover.grid, tb.rank) \
            + bc.gamma[a].conj_by(g.values, np.linalg.inv(g.values)) \
            + MGForm.from_scalar_dform(bc.gerbe_conn.a_form(a, b), tb.rank,
                                       tb.grading)
        diff = lhs - bc.gamma[b]
        worst = max(worst, diff.restrict(mask).norm())
    return worst


class GlobalCurvature:
    """Global Azumaya-valued 2-form theta (with the scalar curving shift)."""

    def __init__(self, bc: BundleConnection, theta: MGForm, gluing_residual,
                 nabla_residual):
        self.bc = bc
        self.theta = theta
        self.gluing_residual = gluing_residual
        self.nabla_residual = nabla_residual


def chart_curvature(bc: BundleConnection, a: int) -> MGForm:
    """theta_a = d Gamma_a + Gamma_a ^ Gamma_a (matrix part, no curving)."""
    g = bc.gamma[a]
    return g.d() + g.mul(g)


def global_curvature(bc: BundleConnection, tolerance: float = 1e-8,
                     omega_tol: float = 1e-8) -> GlobalCurvature:
    """Assemble theta from theta_a + omega_a and verify the two identities.

    Checks the conjugation gluing of theta_a + omega_a over overlaps and
    the Bianchi-type identity nabla theta = 2 pi i Omega per chart.
    """
    tb = bc.tb
    cover = tb.cover
    r = tb.rank
    omega = bc.gerbe_conn.omega
    if omega is None:
        raise ValueError("gerbe connection has no curving")
    locals_ = []
    for a in range(cover.n_charts):
        th = chart_curvature(bc, a) \
            + MGForm.from_scalar_dform(omega[a], r, tb.grading)
        locals_.append(th.restrict(cover.masks[a]))
    worst = 0.0
    for (a, b) in cover.pairs():
        mask = cover.overlap_mask((a, b))
        g = tb.transition(a, b)
        moved = locals_[a].conj_by(g.values, np.linalg.inv(g.values))
        worst = max(worst, (moved - locals_[b]).restrict(mask).norm())
    if worst > tolerance:
        raise ValueError(f"curvature gluing fails: residual {worst:.3e}")
    # assemble
    theta = MGForm.zero(cover.grid, r, grading=tb.grading)
    for lam in range(cover.n_charts):
        rho = cover.partition[lam]
        support = np.abs(rho.values) > 0
        term = _mg_zero_outside(_mg_mul_scalar(locals_[lam], rho), support)
        theta = theta + term
    theta.grading = tb.grading
    # nabla theta = 2 pi i Omega per chart: d theta + [Gamma_a, theta]
    Omega = curvature_three_form(bc.gerbe_conn, omega_tol)
    target = MGForm.from_scalar_dform(Omega.scale(TWO_PI_I), r, tb.grading)
    nabla_worst = 0.0
    for a in range(cover.n_charts):
        comm = bc.gamma[a].mul(theta) - theta.mul(bc.gamma[a])
        resid = theta.d() + comm - target
        nabla_worst = max(nabla_worst, resid.restrict(cover.masks[a]).norm())
    return GlobalCurvature(bc, theta, worst, nabla_worst)


def chart_derivative_square_residual(gc: GlobalCurvature, rng, a: int = 0) -> float:
    """(d + [Gamma_a, .])^2 = [theta_a-part, .] on a random matrix section."""
    bc = gc.bc
    cover = bc.tb.cover
    r = bc.tb.rank
    f = ScalarField.trig(cover.grid,
                         {tuple(rng.integers(-1, 2, size=cover.grid.dim)):
                          complex(rng.standard_normal())})
    X = MGForm.zero(cover.grid, r)
    for i in range(r):
        for j in range(r):
            g2 = ScalarField.trig(cover.grid,
                                  {tuple(rng.integers(-1, 2, size=cover.grid.dim)):
                                   complex(rng.standard_normal())})
            X = X + MGForm.from_dform_entry(DForm.from_scalar(f * g2), r, i, j)

    gamma = bc.gamma[a]
    # X is a 0-form: nabla X = dX + [Gamma, X]; nabla^2 X = [theta, X]
    nX = X.d() + gamma.mul(X) - X.mul(gamma)
    # second application: X now degree 1; commutator picks the graded sign
    nnX = nX.d() + gamma.mul(nX) + nX.mul(gamma)
    theta_mat = chart_curvature(bc, a)
    target = theta_mat.mul(X) - X.mul(theta_mat)
    return (nnX - target).restrict(cover.masks[a]).norm()


# ---- twisted Chern character -------------------------------------------


def chern_character(gc: GlobalCurvature) -> dict:
    """tr exp(-u theta / 2 pi i) as {u_power: DForm of degree 2 u_power}."""
    x = gc.theta.scale(-1.0 / TWO_PI_I).shift_u(2)
    e = x.exp()
    out = {}
    for u2 in e.u_powers():
        if u2 % 2:
            raise ValueError("unexpected half-integer power in the character")
        out[u2 // 2] = e.trace_dform(u2, u2)
    return out


def d_omega_residual(ch: dict, Omega: DForm) -> float:
    """Residual of d_Omega (sum u^j ch_j) = 0, checked per u-power."""
    worst = 0.0
    powers = sorted(ch.keys())
    for m in range(max(powers) + 3):
        term = None
        if (m - 1) in ch:
            term = ch[m - 1].d()
        if (m - 2) in ch and Omega is not None:
            om_part = Omega.wedge(ch[m - 2])
            term = om_part if term is None else term + om_part
        if term is not None:
            worst = max(worst, term.norm())
    return worst


def conjugated_bundle(tb: TwistedBundleDescent, bc: BundleConnection,
                      h: Transition):
    """Global gauge transform: g -> h^{-1} g h, Gamma -> h^{-1}(d + Gamma)h."""
    hinv = h.inverse()
    new_trans = {}
    for p, g in tb.transitions.items():
        new_trans[p] = Transition(
            np.einsum('...ij,...jk,...kl->...il', hinv.values, g.values,
                      h.values),
            [np.einsum('...ij,...jk,...kl->...il', dhi, g.values, h.values)
             + np.einsum('...ij,...jk,...kl->...il', hinv.values, dg, h.values)
             + np.einsum('...ij,...jk,...kl->...il', hinv.values, g.values, dh)
             for dhi, dg, dh in zip(hinv.dvalues, g.dvalues, h.dvalues)],
            g.mask)
    tb2 = TwistedBundleDescent(tb.gerbe, tb.rank, new_trans, tb.grading)
    hlog = h.dlog_form(tb.cover.grid, tb.rank)
    gamma2 = [hlog.restrict(tb.cover.masks[a])
              + bc.gamma[a].conj_by(h.values, hinv.values, h.dvalues,
                                    hinv.dvalues)
              for a in range(tb.cover.n_charts)]
    return tb2, BundleConnection(tb2, bc.gerbe_conn, gamma2)


# ---- transgression -------------------------------------------------------


def interpolate_connection(bc: BundleConnection, bc2: BundleConnection,
                           t: float) -> BundleConnection:
    gamma = [(g.scale(1 - t) + g2.scale(t))
             for g, g2 in zip(bc.gamma, bc2.gamma)]
    A = {}
    for key in bc.gerbe_conn.A:
        A[key] = bc.gerbe_conn.A[key].scale(1 - t) \
            + bc2.gerbe_conn.A[key].scale(t)
    omega = [w.scale(1 - t) + w2.scale(t)
             for w, w2 in zip(bc.gerbe_conn.omega, bc2.gerbe_conn.omega)]
    gconn = GerbeConnection(bc.gerbe_conn.gerbe, A, omega)
    return BundleConnection(bc.tb, gconn, gamma)


def transgression(bc: BundleConnection, bc2: BundleConnection,
                  panels: int = 8, tolerance: float = 1e-6):
    """Cylinder transgression between two connections on one descent datum.

    Returns (eta, Xi, residual_fn) where Xi is {u_power: DForm} with
    tr e^{u eta} ^ e^{-u theta'/2 pi i} - tr e^{-u theta/2 pi i} = d_Omega Xi.
    Composite two-point Gauss panels in t; the residual function reports
    the identity defect for a given panel count.
    """
    from .gerbe import connection_difference_eta
    cover = bc.tb.cover
    r = bc.tb.rank
    cmp_ = connection_difference_eta(bc.gerbe_conn, bc2.gerbe_conn)
    eta = cmp_.eta
    delta = cmp_.delta

    # global interpolation-speed form nu = (Gamma' - Gamma) + delta . Id
    nu_locals = []
    for a in range(cover.n_charts):
        nu_a = bc2.gamma[a] - bc.gamma[a] \
            + MGForm.from_scalar_dform(delta[a], r, bc.tb.grading)
        nu_locals.append(nu_a.restrict(cover.masks[a]))
    nu = MGForm.zero(cover.grid, r, grading=bc.tb.grading)
    for lam in range(cover.n_charts):
        rho = cover.partition[lam]
        support = np.abs(rho.values) > 0
        nu = nu + _mg_zero_outside(_mg_mul_scalar(nu_locals[lam], rho), support)

    def theta_at(t: float) -> MGForm:
        bct = interpolate_connection(bc, bc2, t)
        gct = global_curvature(bct)
        return gct.theta

    def integrand(t: float) -> dict:
        """iota_dt of tr e^{u t eta} ^ e^{-u theta(t) / 2 pi i} as u-dict."""
        X = theta_at(t).scale(-1.0 / TWO_PI_I).shift_u(2)
        # Duhamel linear term: sum_{a,b} X^a nu X^b / (a+b+1)! times -u/2pi i
        nmax = cover.grid.dim
        powers = [MGForm.identity(cover.grid, r, bc.tb.grading)]
        for _ in range(nmax):
            powers.append(powers[-1].mul(X))
        acc = MGForm.zero(cover.grid, r, grading=bc.tb.grading)
        nu_u = nu.scale(-1.0 / TWO_PI_I).shift_u(2)
        for a_ in range(nmax + 1):
            for b_ in range(nmax + 1 - a_):
                term = powers[a_].mul(nu_u).mul(powers[b_]) \
                    .scale(1.0 / factorial(a_ + b_ + 1))
                acc = acc + term
        # wedge with the scalar e^{u t eta}
        e_eta = _scalar_u_exp(eta.scale(t), cover.grid)
        traced = {}
        for u2 in acc.u_powers():
            for deg in range(cover.grid.dim + 1):
                f = acc.trace_dform(u2, deg)
                if f.comps:
                    traced[(u2, deg)] = f
        return _udict_wedge(e_eta, traced)

    # composite 2-point Gauss-Legendre panels on [0, 1]
    nodes = []
    weights = []
    gl_x = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    for p in range(panels):
        a_, b_ = p / panels, (p + 1) / panels
        mid, half = 0.5 * (a_ + b_), 0.5 * (b_ - a_)
        for x in gl_x:
            nodes.append(mid + half * x)
            weights.append(half)
    Xi = {}
    for t, w in zip(nodes, weights):
        contrib = integrand(float(t))
        for key, f in contrib.items():
            Xi[key] = Xi[key] + f.scale(w) if key in Xi else f.scale(w)
    return eta, Xi


def _scalar_u_exp(eta: DForm, grid: Grid) -> dict:
    """{(u2, deg): DForm} for e^{u eta}, eta a scalar 2-form."""
    out = {(0, 0): DForm(grid, 0, {(): np.ones(grid.shape(), dtype=complex)},
                         {})}
    term = out[(0, 0)]
    for k in range(1, grid.dim // 2 + 1):
        term = term.wedge(eta).scale(1.0 / k)
        if term.norm() == 0.0:
            break
        out[(2 * k, 2 * k)] = term
    return out


def _udict_wedge(a: dict, b: dict) -> dict:
    out = {}
    for (u1, d1), f in a.items():
        for (u2, d2), g in b.items():
            if d1 + d2 > f.grid.dim:
                continue
            key = (u1 + u2, d1 + d2)
            t = f.wedge(g)
            out[key] = out[key] + t if key in out else t
    return out


def transgression_residual(bc, bc2, eta, Xi, Omega: DForm) -> float:
    """Defect of tr e^{u eta} e^{-u theta'/2pi i} - tr e^{-u theta/2pi i}
    = d_Omega Xi, as a max over u-powers and degrees."""
    cover = bc.tb.cover
    ch1 = chern_character(global_curvature(bc))
    ch2 = chern_character(global_curvature(bc2))
    e_eta = _scalar_u_exp(eta, cover.grid)
    ch2d = {(2 * j, f.degree): f for j, f in ch2.items()}
    lhs = _udict_wedge(e_eta, ch2d)
    for j, f in ch1.items():
        key = (2 * j, f.degree)
        lhs[key] = lhs[key] - f if key in lhs else f.scale(-1.0)
    # d_Omega Xi: u d Xi + u^2 Omega ^ Xi
    rhs = {}
    for (u2, deg), f in Xi.items():
        key = (u2 + 2, deg + 1)
        df = f.d()
        rhs[key] = rhs[key] + df if key in rhs else df
        if Omega is not None:
            key2 = (u2 + 4, deg + 3)
            of = Omega.wedge(f)
            if deg + 3 <= cover.grid.dim:
                rhs[key2] = rhs[key2] + of if key2 in rhs else of
    worst = 0.0
    for key in set(lhs) | set(rhs):
        l = lhs.get(key)
        r = rhs.get(key)
        if l is None:
            worst = max(worst, r.norm())
        elif r is None:
            worst = max(worst, l.norm())
        else:
            worst = max(worst, (l - r).norm())
    return worst


# ---- superconnections (finite-dimensional pieces) ------------------------


class TwistedSuperconnection:
    """A^{[1]} = a bundle connection plus global pieces A^{[k]}, k != 1.

    Pieces must be grading-odd for even k and grading-even for odd k;
    A^{[0]} is rejected here (the terminating exponential needs positive
    form degree; unbounded 0-form pieces belong to the Dirac machinery).
    """

    def __init__(self, bc: BundleConnection, pieces: dict):
        self.bc = bc
        if 0 in pieces:
            raise ValueError("A^[0] is handled by the Dirac family module")
        if not bc.tb.grading:
            raise ValueError("superconnections need a graded bundle")
        for k, p in pieces.items():
            if p.grading is None:
                raise ValueError("pieces must carry the bundle grading")
            _check_block_parity(p, expected_odd=(1 if k % 2 == 0 else 0))
        self.pieces = pieces

    def rescaled_curvature(self, chart: int) -> MGForm:
        """u theta^{A_{u^-1}} on one chart: u((A_a)_{u^-1}^2 + omega_a).

        Returned with the overall factor u included, so all exponents are
        nonnegative half-integers.
        """
        bc = self.bc
        cover = bc.tb.cover
        r = bc.tb.rank
        gamma = bc.gamma[chart]
        # Phi = sum_k u^{(k-1)/2} A^[k]; u Phi^2 etc. tracked via shift_u
        phi = MGForm.zero(cover.grid, r, grading=bc.tb.grading)
        for k, p in self.pieces.items():
            phi = phi + p.shift_u(k - 1)
        theta_mat = chart_curvature(bc, chart)
        omega = bc.gerbe_conn.omega[chart]
        out = theta_mat + MGForm.from_scalar_dform(omega, r, bc.tb.grading)
        out = out.shift_u(2)  # u (theta_a + omega_a)
        # u (d Phi + [Gamma, Phi]_s): all pieces are totally odd, as is the
        # connection, so the supercommutator is the anticommutator
        dphi = phi.d() + gamma.mul(phi) + phi.mul(gamma)
        out = out + dphi.shift_u(2)
        out = out + phi.mul(phi).shift_u(2)
        return out.restrict(cover.masks[chart])

    def chern_form(self) -> dict:
        """Glued str exp(-u theta^{A_{u^-1}} / 2 pi i) as {u_power: DForm}."""
        bc = self.bc
        cover = bc.tb.cover
        charts = []
        for a in range(cover.n_charts):
            x = self.rescaled_curvature(a).scale(-1.0 / TWO_PI_I)
            e = x.exp()
            charts.append(e)
        out = {}
        for lam in range(cover.n_charts):
            rho = cover.partition[lam]
            support = np.abs(rho.values) > 0
            e = charts[lam]
            for u2 in e.u_powers():
                for deg in range(cover.grid.dim + 1):
                    f = e.trace_dform(u2, deg, super_=True)
                    if not f.comps:
                        continue
                    piece = f.mul_scalar_field(rho)
                    piece = DForm(cover.grid, deg,
                                  {k: np.where(support, v, 0.0)
                                   for k, v in piece.comps.items()},
                                  {k: np.where(support, v, 0.0)
                                   for k, v in piece.dcomps.items()})
                    if u2 % 2:
                        if piece.norm() > 1e-10:
                            raise ValueError("half-integer u-power with "
                                             "nonzero supertrace")
                        continue
                    key = (u2 // 2, deg)
                    out[key] = out[key] + piece if key in out else piece
        return out


def _check_block_parity(p: MGForm, expected_odd: int):
    g0, g1 = p.grading
    for (u2, idx), arr in p.comps.items():
        if expected_odd:
            bad = max(np.max(np.abs(arr[..., :g0, :g0])),
                      np.max(np.abs(arr[..., g0:, g0:])))
        else:
            bad = max(np.max(np.abs(arr[..., :g0, g0:])),
                      np.max(np.abs(arr[..., g0:, :g0])))
        if bad > 1e-13:
            raise ValueError("superconnection piece has the wrong parity")
