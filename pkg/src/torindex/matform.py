"""Matrix-valued u-form algebra: products, traces, terminating exponentials.

Entries are UForms on a shared domain.  With a Z2 block grading present
(even block first), products carry the Koszul sign (-1)^{p(E_ik) |beta|}
for a matrix unit of parity p against a form monomial of degree |beta|,
so that the supertrace vanishes on graded commutators.
"""

from __future__ import annotations

import math

import numpy as np

from .forms import FourierForm, TorusDomain, UForm, uwedge, u_exterior_d

TWO_PI_I = 2.0j * np.pi


def _sign_weight(u: UForm, flip_odd: bool) -> UForm:
    """Multiply odd-form-degree monomials by -1 when flip_odd is set."""
    if not flip_odd:
        return u
    out = UForm(u.domain, allow_half=u.allow_half)
    for k, f in u.terms.items():
        out.terms[k] = f.scale(-1.0) if f.degree % 2 else f.copy()
    return out


class MatrixForm:
    """r x r matrix of UForms, optionally Z2-graded as r = r_plus + r_minus."""

    def __init__(self, domain: TorusDomain, size: int, grading=None,
                 allow_half: bool = False):
        self.domain = domain
        self.size = size
        self.grading = tuple(grading) if grading else None
        if self.grading and sum(self.grading) != size:
            raise ValueError("grading blocks must sum to the matrix size")
        self.allow_half = allow_half
        z = UForm.zero(domain, allow_half=allow_half)
        self.entries = [[z.copy() for _ in range(size)] for _ in range(size)]

    def parity(self, i: int) -> int:
        if not self.grading:
            return 0
        return 0 if i < self.grading[0] else 1

    # ---- construction ---------------------------------------------------

    @classmethod
    def zero(cls, domain, size, grading=None, allow_half=False):
        return cls(domain, size, grading, allow_half)

    @classmethod
    def identity(cls, domain, size, grading=None):
        m = cls(domain, size, grading)
        one = UForm.one(domain)
        for i in range(size):
            m.entries[i][i] = one.copy()
        return m

    @classmethod
    def from_scalar(cls, u: UForm, size, grading=None):
        m = cls(u.domain, size, grading, allow_half=u.allow_half)
        for i in range(size):
            m.entries[i][i] = u.copy()
        return m

    @classmethod
    def from_constant_matrix(cls, domain, mat, grading=None):
        mat = np.asarray(mat)
        m = cls(domain, mat.shape[0], grading)
        for i in range(mat.shape[0]):
            for j in range(mat.shape[1]):
                if mat[i, j] != 0:
                    m.entries[i][j] = UForm.from_form(
                        FourierForm.constant(domain, complex(mat[i, j])))
        return m

    def set_entry(self, i, j, u: UForm):
        if u.domain != self.domain:
            raise ValueError("entry domain mismatch")
        self.allow_half = self.allow_half or u.allow_half
        self.entries[i][j] = u

    def copy(self):
        m = MatrixForm(self.domain, self.size, self.grading, self.allow_half)
        for i in range(self.size):
            for j in range(self.size):
                m.entries[i][j] = self.entries[i][j].copy()
        return m

    # ---- algebra ----------------------------------------------------------

    def __add__(self, other):
        self._check(other)
        m = self.copy()
        for i in range(self.size):
            for j in range(self.size):
                m.entries[i][j] = m.entries[i][j] + other.entries[i][j]
        return m

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, c: complex):
        m = MatrixForm(self.domain, self.size, self.grading, self.allow_half)
        for i in range(self.size):
            for j in range(self.size):
                m.entries[i][j] = self.entries[i][j].scale(c)
        return m

    def scale_u(self, u: UForm):
        m = MatrixForm(self.domain, self.size, self.grading,
                       self.allow_half or u.allow_half)
        for i in range(self.size):
            for j in range(self.size):
                m.entries[i][j] = uwedge(u, self.entries[i][j])
        return m

    def _check(self, other):
        if (self.domain != other.domain or self.size != other.size
                or self.grading != other.grading):
            raise ValueError("matrix forms are not compatible")

    def matmul(self, other: "MatrixForm") -> "MatrixForm":
        self._check(other)
        out = MatrixForm(self.domain, self.size, self.grading,
                         self.allow_half or other.allow_half)
        for i in range(self.size):
            for j in range(self.size):
                acc = UForm.zero(self.domain, allow_half=out.allow_half)
                for k in range(self.size):
                    a = self.entries[i][k]
                    b = other.entries[k][j]
                    if not a.terms or not b.terms:
                        continue
                    flip = bool((self.parity(i) + self.parity(k)) % 2)
                    acc = acc + uwedge(a, _sign_weight(b, flip))
                out.entries[i][j] = acc
        return out

    def d(self) -> "MatrixForm":
        out = MatrixForm(self.domain, self.size, self.grading, self.allow_half)
        for i in range(self.size):
            for j in range(self.size):
                out.entries[i][j] = u_exterior_d(self.entries[i][j])
        return out

    def norm(self) -> float:
        return float(np.sqrt(sum(self.entries[i][j].norm() ** 2
                                 for i in range(self.size)
                                 for j in range(self.size))))

    def min_form_degree(self, tol: float = 1e-14):
        degs = []
        for row in self.entries:
            for u in row:
                for k, f in u.terms.items():
                    if f.norm() > tol:
                        degs.append(f.degree)
        return min(degs) if degs else None

    def end_parity(self, tol: float = 1e-13):
        """0 for block-diagonal, 1 for block-off-diagonal, None if mixed."""
        if not self.grading:
            return 0
        mass = [0.0, 0.0]
        for i in range(self.size):
            for j in range(self.size):
                mass[(self.parity(i) + self.parity(j)) % 2] += \
                    self.entries[i][j].norm() ** 2
        total = mass[0] + mass[1]
        if total == 0.0:
            return 0
        if mass[1] <= tol * total:
            return 0
        if mass[0] <= tol * total:
            return 1
        return None

    def form_parity(self, tol: float = 1e-13):
        """Form-degree parity if homogeneous, else None."""
        pars = set()
        for row in self.entries:
            for u in row:
                for (_, deg), f in u.terms.items():
                    if f.norm() > tol:
                        pars.add(deg % 2)
        if not pars:
            return 0
        return pars.pop() if len(pars) == 1 else None

    def graded_commutator(self, other: "MatrixForm") -> "MatrixForm":
        """[self, other] with the Koszul sign from total (form+End) parity.

        Requires both operands homogeneous in total parity.
        """
        p1, p2 = self.end_parity(), other.end_parity()
        d1, d2 = self.form_parity(), other.form_parity()
        if None in (p1, p2, d1, d2):
            raise ValueError("graded commutator requires homogeneous operands")
        sign = (-1) ** ((p1 + d1) * (p2 + d2))
        return self.matmul(other) - other.matmul(self).scale(sign)


def trace(m: MatrixForm) -> UForm:
    out = UForm.zero(m.domain, allow_half=m.allow_half)
    for i in range(m.size):
        out = out + m.entries[i][i]
    return out


def supertrace(m: MatrixForm) -> UForm:
    if not m.grading:
        raise ValueError("supertrace requires a graded matrix form")
    out = UForm.zero(m.domain, allow_half=m.allow_half)
    for i in range(m.size):
        term = m.entries[i][i]
        out = out + (term.scale(-1.0) if m.parity(i) else term)
    return out


def matrix_exp_form(m: MatrixForm, check_tol: float = 1e-12) -> MatrixForm:
    """Terminating exponential sum for matrices of positive form degree.

    Every monomial must have form degree >= 1 so the series stops at order
    dim; a nonzero 0-form part is rejected (callers split off scalar
    0-form parts and exponentiate them separately).
    """
    md = m.min_form_degree()
    if md == 0:
        raise ValueError("matrix exponential requires form degree >= 1 entries")
    out = MatrixForm.identity(m.domain, m.size, m.grading)
    term = MatrixForm.identity(m.domain, m.size, m.grading)
    for j in range(1, m.domain.dim + 1):
        term = term.matmul(m).scale(1.0 / j)
        out = out + term
        if term.norm() == 0.0:
            break
    tail = term.matmul(m)
    if tail.norm() > check_tol * max(1.0, m.norm() ** (m.domain.dim + 1)):
        raise ValueError("exponential series failed to terminate")
    return out


# coefficients of log((x/2)/sinh(x/2)) = sum c_{2j} x^{2j}
_LOG_AHAT_COEFFS = {2: -1.0 / 24.0, 4: 1.0 / 2880.0, 6: -1.0 / 181440.0}


def a_hat_series(r_form: MatrixForm, order: int = 3,
                 antisym_tol: float = 1e-10) -> UForm:
    """A-hat form of an antisymmetric matrix of 2-forms.

    Computes exp((1/2) tr log((X/2)/sinh(X/2))) for X = (u/2 pi i) R, with
    the log series truncated by the form-degree bound (exact termination).
    """
    n = r_form.size
    for i in range(n):
        for j in range(n):
            asym = r_form.entries[i][j] + r_form.entries[j][i]
            if asym.norm() > antisym_tol * max(1.0, r_form.norm()):
                raise ValueError("curvature matrix must be antisymmetric")
            for f in r_form.entries[i][j].terms.values():
                if f.degree != 2 and f.norm() > 0:
                    raise ValueError("curvature entries must be 2-forms")
    dom = r_form.domain
    x = r_form.scale_u(UForm(dom, {2: FourierForm.constant(dom, 1.0 / TWO_PI_I)}))
    # accumulate (1/2) tr sum_j c_{2j} X^{2j}; X^{2j} is a 4j-form
    log_tr = UForm.zero(dom)
    x2 = x.matmul(x)
    power = MatrixForm.identity(dom, n)
    for j in range(1, order + 1):
        if 4 * j > dom.dim:
            break
        power = power.matmul(x2)
        c = _LOG_AHAT_COEFFS.get(2 * j)
        if c is None:
            raise ValueError("a-hat series order not tabulated")
        log_tr = log_tr + trace(power).scale(c)
    log_tr = log_tr.scale(0.5)
    # exponentiate the scalar log; terminates by form degree
    out = UForm.one(dom)
    term = UForm.one(dom)
    j = 0
    while True:
        j += 1
        term = uwedge(term, log_tr).scale(1.0 / j)
        if term.norm() == 0.0 or j > dom.dim:
            break
        out = out + term
    return out
