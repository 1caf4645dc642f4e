"""Gerbe descent data on box covers: cocycles, connections, curvings,
the curvature 3-form, comparison forms, and the twisted-complex maps.

Line bundles over box overlaps are carried in fixed trivializations, so
the 2-cocycle is a C*-valued grid function and connections are scalar
1-forms.  The Cech index convention is alternating: data for a sorted
tuple determines all permutations by the sign of the permutation (in the
exponent).
"""

from __future__ import annotations

from math import factorial

import numpy as np

from .cover import Cover, DForm, ScalarField, weighted_chart_sum
from .forms import FourierForm, UForm, uwedge

TWO_PI_I = 2.0j * np.pi


def _perm_sign(perm) -> int:
    seen = list(perm)
    sign = 1
    for i in range(len(seen)):
        for j in range(i + 1, len(seen)):
            if seen[j] < seen[i]:
                sign = -sign
    return sign


class MuData:
    """Cocycle value on one sorted triple: values, mask, exact d(log mu)."""

    def __init__(self, values, mask, dlog: DForm):
        self.values = values
        self.mask = mask
        self.dlog = dlog


class GerbeDescent:
    """Cover with a C*-valued 2-cocycle on sorted triple overlaps."""

    def __init__(self, cover: Cover, mu: dict, unitary: bool = False):
        self.cover = cover
        self.mu = mu  # (a < b < c) -> MuData
        self.unitary = unitary

    # ---- constructors ---------------------------------------------------

    @classmethod
    def trivial(cls, cover: Cover):
        mu = {}
        one = np.ones(cover.grid.shape(), dtype=complex)
        for t in cover.triples():
            mu[t] = MuData(one, cover.overlap_mask(t),
                           DForm.zero(cover.grid, 1, cover.overlap_mask(t)))
        return cls(cover, mu, unitary=True)

    @classmethod
    def coboundary(cls, cover: Cover, f_seeds: dict, unitary: bool = True):
        """mu = exp(2 pi i (f_bc - f_ac + f_ab)) from pair seeds.

        f_seeds maps sorted pairs to ScalarField; antisymmetric extension
        f_ba = -f_ab.  Real seeds give a unitary cocycle.
        """
        mu = {}
        for (a, b, c) in cover.triples():
            f_bc = f_seeds[(b, c)]
            f_ac = f_seeds[(a, c)]
            f_ab = f_seeds[(a, b)]
            expo = f_bc - f_ac + f_ab
            vals = np.exp(TWO_PI_I * expo.values)
            mask = cover.overlap_mask((a, b, c))
            dlog = DForm.d_scalar(expo, mask).scale(TWO_PI_I)
            mu[(a, b, c)] = MuData(vals, mask, dlog)
        return cls(cover, mu, unitary=unitary)

    @classmethod
    def explicit(cls, cover: Cover, values: dict, unitary: bool = False,
                 fd_order: int = 4):
        """Cocycle from raw grid values on sorted triple overlaps.

        d(log mu) = d(mu)/mu is computed by masked finite differences, so
        residual tolerances are resolution-limited on this path.  Raises
        when mu winds around a full-torus loop inside an overlap.
        """
        mu = {}
        for t, vals in values.items():
            t = tuple(sorted(t))
            mask = cover.overlap_mask(t)
            _check_winding(vals, mask, cover.grid, name=f"overlap {t}")
            dlog = _fd_dlog(vals, mask, cover.grid, fd_order)
            mu[t] = MuData(np.asarray(vals, dtype=complex), mask, dlog)
        return cls(cover, mu, unitary=unitary)

    # ---- alternating access ---------------------------------------------

    def dlog_mu(self, a, b, c) -> DForm:
        key = tuple(sorted((a, b, c)))
        sign = _perm_sign([key.index(a), key.index(b), key.index(c)])
        base = self.mu[key].dlog
        return base if sign > 0 else base.scale(-1.0)

    def defect_form(self, a, b, c) -> DForm:
        """Connection defect X_abc on the triple overlap.

        X = -d log mu: the sign pairs the trivialized End(L ox L) = C
        identification with the twisted-cocycle direction
        g_ab g_bc = mu_abc g_ac used by twisted bundles, so that bundle
        compatibility reads g^{-1}(d + Gamma_a) g + A_ab = Gamma_b and the
        combination theta_a + omega_a glues.
        """
        return self.dlog_mu(a, b, c).scale(-1.0)

    def triple_mask(self, a, b, c):
        return self.mu[tuple(sorted((a, b, c)))].mask


def _check_winding(vals, mask, grid, name: str):
    """Reject mu with nonzero winding along a full periodic loop in mask."""
    vals = np.asarray(vals)
    for axis in range(grid.dim):
        full = np.all(mask, axis=axis)
        if not np.any(full):
            continue
        rolled = np.roll(vals, -1, axis=axis)
        ratio = rolled / vals
        winding = np.angle(ratio).sum(axis=axis) / (2 * np.pi)
        w = winding[full]
        if np.any(np.abs(np.round(w)) > 0.4):
            raise ValueError(
                f"mu winds around axis {axis} on {name}: refine the cover")


def _fd_dlog(vals, mask, grid, order: int) -> DForm:
    """d(mu)/mu by periodic central differences, masked."""
    vals = np.asarray(vals, dtype=complex)
    comps = {}
    for axis in range(grid.dim):
        h = 1.0 / grid.sizes[axis]
        if order == 4:
            der = (8 * (np.roll(vals, -1, axis) - np.roll(vals, 1, axis))
                   - (np.roll(vals, -2, axis) - np.roll(vals, 2, axis))) / (12 * h)
        else:
            der = (np.roll(vals, -1, axis) - np.roll(vals, 1, axis)) / (2 * h)
        comps[(axis,)] = der / vals
    interior = mask.copy()
    width = 2 if order == 4 else 1
    for axis in range(grid.dim):
        for s in range(1, width + 1):
            interior &= np.roll(mask, s, axis) & np.roll(mask, -s, axis)
    return DForm(grid, 1, comps, {}, interior)


class CocycleReport:
    def __init__(self, residuals: dict, tolerance: float):
        self.residuals = residuals
        self.tolerance = tolerance

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values()) if self.residuals else 0.0

    @property
    def passed(self) -> bool:
        return self.max_residual < self.tolerance

    def worst(self):
        if not self.residuals:
            return None
        return max(self.residuals, key=self.residuals.get)


def verify_cocycle(g: GerbeDescent, tolerance: float = 1e-10) -> CocycleReport:
    """Max pointwise residual of the quadruple-overlap identity."""
    res = {}
    for (a, b, c, d) in g.cover.quadruples():
        mask = g.cover.overlap_mask((a, b, c, d))
        if not np.any(mask):
            continue
        prod = (g.mu[(b, c, d)].values / g.mu[(a, c, d)].values
                * g.mu[(a, b, d)].values / g.mu[(a, b, c)].values)
        res[(a, b, c, d)] = float(np.max(np.abs(prod[mask] - 1.0)))
    return CocycleReport(res, tolerance)


class GerbeConnection:
    """Connection 1-forms A_ab on sorted pair overlaps plus curvings omega_a."""

    def __init__(self, gerbe: GerbeDescent, A: dict, omega=None):
        self.gerbe = gerbe
        self.A = A  # (a < b) -> DForm on the overlap
        self.omega = omega  # list of DForm per chart

    def a_form(self, a, b) -> DForm:
        if a == b:
            return DForm.zero(self.gerbe.cover.grid, 1,
                              self.gerbe.cover.masks[a])
        if a < b:
            return self.A[(a, b)]
        return self.A[(b, a)].scale(-1.0)

    def shift_curving(self, sigma: DForm) -> "GerbeConnection":
        """Gauge freedom: omega_a -> omega_a + sigma for a global 2-form."""
        new_omega = [w + sigma.restrict(self.gerbe.cover.masks[i])
                     for i, w in enumerate(self.omega)]
        return GerbeConnection(self.gerbe, self.A, new_omega)


def build_connection(g: GerbeDescent) -> GerbeConnection:
    """Partition-of-unity solution of the descent-defect equation.

    With trivialized reference connections the defect on a triple overlap
    is X_abc = d log mu_abc; A_ab = sum_c rho_c X_abc satisfies
    X_abc = A_bc - A_ac + A_ab exactly wherever the partition is supported.
    """
    cover = g.cover
    A = {}
    for (a, b) in cover.pairs():
        pieces = {}
        for c in range(cover.n_charts):
            if c in (a, b):
                continue
            if not cover.nonempty((min(a, c), max(a, c))) \
               or not cover.nonempty((min(b, c), max(b, c))):
                continue
            if tuple(sorted((a, b, c))) not in g.mu:
                continue
            pieces[c] = g.defect_form(a, b, c)
        # rho_a and rho_b terms multiply X_aba = X_abb = 0
        target = cover.overlap_mask((a, b))
        A[(a, b)] = weighted_chart_sum(cover, pieces, 1, target_mask=target)
    return GerbeConnection(g, A)


def connection_defect_residual(conn: GerbeConnection) -> float:
    """Max residual of X_abc = A_bc - A_ac + A_ab over triple overlaps."""
    g = conn.gerbe
    worst = 0.0
    for (a, b, c) in g.cover.triples():
        mask = g.triple_mask(a, b, c)
        lhs = g.defect_form(a, b, c)
        rhs = conn.a_form(b, c) - conn.a_form(a, c) + conn.a_form(a, b)
        worst = max(worst, (lhs - rhs).restrict(mask).norm())
    return worst


def build_curving(conn: GerbeConnection) -> GerbeConnection:
    """omega_a = sum_c rho_c dA_ac; then omega_a - omega_b = dA_ab."""
    cover = conn.gerbe.cover
    omega = []
    for a in range(cover.n_charts):
        pieces = {}
        for c in range(cover.n_charts):
            if c == a:
                continue
            key = (min(a, c), max(a, c))
            if key not in conn.A:
                continue
            pieces[c] = conn.a_form(a, c).d()
        omega.append(weighted_chart_sum(cover, pieces, 2,
                                        target_mask=cover.masks[a]))
    return GerbeConnection(conn.gerbe, conn.A, omega)


def curving_residual(conn: GerbeConnection) -> float:
    """Max residual of omega_a - omega_b = dA_ab over pair overlaps."""
    cover = conn.gerbe.cover
    worst = 0.0
    for (a, b) in cover.pairs():
        mask = cover.overlap_mask((a, b))
        lhs = conn.omega[a] - conn.omega[b]
        rhs = conn.a_form(a, b).d()
        worst = max(worst, (lhs - rhs).restrict(mask).norm())
    return worst


def exact_twist_connection(cover: Cover, eta0: DForm) -> GerbeConnection:
    """Trivial cocycle with curving omega_a = 2 pi i eta0|_a (global eta0)."""
    gerbe = GerbeDescent.trivial(cover)
    conn = build_connection(gerbe)
    omega = [eta0.scale(TWO_PI_I).restrict(cover.masks[a])
             for a in range(cover.n_charts)]
    return GerbeConnection(gerbe, conn.A, omega)


def curvature_three_form(conn: GerbeConnection, tolerance: float = 1e-8,
                         assembly_partition=None) -> DForm:
    """Global Omega with Omega|_a = d omega_a / 2 pi i.

    Checks chart agreement of d omega_a on overlaps first; the assembly
    partition only matters within that tolerance.
    """
    cover = conn.gerbe.cover
    if conn.omega is None:
        raise ValueError("build the curving first")
    d_omegas = [w.d() for w in conn.omega]
    worst = 0.0
    for (a, b) in cover.pairs():
        mask = cover.overlap_mask((a, b))
        worst = max(worst, (d_omegas[a] - d_omegas[b]).restrict(mask).norm())
    if worst > tolerance:
        raise ValueError(f"curvings disagree on overlaps: residual {worst:.3e}")
    partition = assembly_partition or conn.gerbe.cover.partition
    grid = cover.grid
    out = DForm.zero(grid, 3)
    for lam, rho in enumerate(partition):
        support = np.abs(rho.values) > 0
        piece = d_omegas[lam]
        if piece.mask is not None and np.any(support & ~piece.mask):
            raise ValueError("assembly partition leaves the chart domains")
        term = piece.mul_scalar_field(rho)
        out = out + DForm(grid, 3,
                          {k: np.where(support, v, 0.0)
                           for k, v in term.comps.items()},
                          {k: np.where(support, v, 0.0)
                           for k, v in term.dcomps.items()})
    return out.scale(1.0 / TWO_PI_I)


class TwistComparison:
    def __init__(self, eta: DForm, delta: list, residual: float):
        self.eta = eta
        self.delta = delta
        self.residual = residual


def connection_difference_eta(conn: GerbeConnection, conn2: GerbeConnection,
                              tolerance: float = 1e-8) -> TwistComparison:
    """eta with Omega' - Omega = d eta, from the chartwise difference data."""
    g = conn.gerbe
    if conn2.gerbe is not g and conn2.gerbe.cover is not g.cover:
        raise ValueError("connections must share the descent datum")
    cover = g.cover
    delta = []
    for a in range(cover.n_charts):
        pieces = {}
        for c in range(cover.n_charts):
            if c == a:
                continue
            key = (min(a, c), max(a, c))
            if key not in conn.A:
                continue
            pieces[c] = conn2.a_form(a, c) - conn.a_form(a, c)
        delta.append(weighted_chart_sum(cover, pieces, 1,
                                        target_mask=cover.masks[a]))
    etas = []
    for a in range(cover.n_charts):
        w = conn2.omega[a] - conn.omega[a] - delta[a].d()
        etas.append(w.scale(1.0 / TWO_PI_I))
    worst = 0.0
    for (a, b) in cover.pairs():
        mask = cover.overlap_mask((a, b))
        worst = max(worst, (etas[a] - etas[b]).restrict(mask).norm())
    if worst > tolerance:
        raise ValueError(f"eta charts disagree: residual {worst:.3e}")
    eta = weighted_chart_sum(cover, dict(enumerate(etas)), 2)
    om = curvature_three_form(conn, tolerance)
    om2 = curvature_three_form(conn2, tolerance)
    res = (om2 - om - eta.d()).norm()
    if res > tolerance * 10:
        raise ValueError(f"Omega' - Omega = d eta fails: residual {res:.3e}")
    return TwistComparison(eta, delta, res)


# ---- twisted-complex isomorphisms (band-limited layer) -----------------


def exp_u_two_form(eta: FourierForm, coeff: complex = 1.0) -> UForm:
    """exp(coeff * u * eta) for a 2-form eta; terminates by degree."""
    if eta.degree != 2:
        raise ValueError("expects a 2-form")
    dom = eta.domain
    out = UForm.one(dom)
    term = UForm.one(dom)
    k = 0
    while True:
        k += 1
        if 2 * k > dom.dim:
            break
        term = uwedge(term, UForm.from_form(eta.scale(coeff), 1)).scale(1.0 / k)
        if term.norm() == 0.0:
            break
        out = out + term
    return out


def i_eta(xi: UForm, eta: FourierForm) -> UForm:
    """Twisted-complex isomorphism xi -> e^{-u eta} ^ xi."""
    return uwedge(exp_u_two_form(eta, -1.0), xi)


def homotopy_h(xi: UForm, eps: FourierForm, eta: FourierForm) -> UForm:
    """Chain homotopy between I_eta and I_{eta + d eps}.

    h = -eps ^ int_0^1 e^{-u (eta + t d eps)} dt ^ xi, expanded exactly:
    the interpolation transgression, a finite sum by form degree.  Then
    I_{eta+d eps} - I_eta = h d_Omega + d_Omega' h on the nose.
    """
    if eps.degree != 1:
        raise ValueError("eps must be a 1-form")
    from .forms import exterior_d
    dom = eta.domain
    deps = exterior_d(eps)
    ueta = UForm.from_form(eta, 1)
    udeps = UForm.from_form(deps, 1)
    series = UForm.zero(dom)
    for m in range(dom.dim // 2 + 1):
        # (-1)^m / m! * sum_b C(m, b)/(b+1) eta^{m-b} (d eps)^b  (all u-weighted)
        for b in range(m + 1):
            coeff = (-1.0) ** m / factorial(m) \
                * factorial(m) / (factorial(b) * factorial(m - b)) / (b + 1)
            term = UForm.one(dom).scale(coeff)
            for _ in range(m - b):
                term = uwedge(term, ueta)
            for _ in range(b):
                term = uwedge(term, udeps)
            if term.norm() > 0:
                series = series + term
    return uwedge(UForm.from_form(eps.scale(-1.0)), uwedge(series, xi))
