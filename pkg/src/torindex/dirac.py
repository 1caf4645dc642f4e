"""Clifford module data and the characteristic-form side of the family
index check on flat T^2-fiber product fibrations.

The fiber Clifford convention is c(e^i) c(e^j) + c(e^j) c(e^i) = -2 d^{ij}
with c(e^1) = -i sigma_1, c(e^2) = -i sigma_2 and chirality
c(Gamma) = sigma_3.  The relative supertrace follows
str_{E/S}(A) = 2^{-k/2} str(c(Gamma) A) with str the supertrace of the
graded module, so str_{E/S} restricts to the plain trace of the twisting
factor on the Clifford commutant.

The twisting factor is the flux-n line bundle with base-dependent Wilson
lines in the gauge matched to the lattice links:
A_W = -2 pi i [(n x^1 + a_2(b)) dx^2 + a_1(b) dx^1], so the flux-one
lattice calibration (index +1) fixes every sign downstream.
"""

from __future__ import annotations

import numpy as np

from .forms import (
    FibrationSplit,
    FourierForm,
    TorusDomain,
    UForm,
    fiber_integrate,
    u_exterior_d,
    uwedge,
)
from .lattice import SIGMA1, SIGMA2, SIGMA3, WilsonSpec
from .matform import MatrixForm, a_hat_series, supertrace, trace

TWO_PI_I = 2.0j * np.pi

C1 = -1j * SIGMA1
C2 = -1j * SIGMA2
CHIRALITY = SIGMA3


class FiberGeometry:
    """Flat T^2 fiber with its rank-2 spinor module."""

    k = 2

    def __init__(self, split: FibrationSplit):
        if split.fiber_dim != 2:
            raise ValueError("fiber dimension must be 2")
        self.split = split

    @staticmethod
    def clifford(i: int) -> np.ndarray:
        return (C1, C2)[i]

    @staticmethod
    def chirality() -> np.ndarray:
        return CHIRALITY

    @classmethod
    def str_rel(cls, A: np.ndarray) -> complex:
        """Relative supertrace of a (2m x 2m) endomorphism of S ox W.

        A acts on S ox W with the S factor outermost.  Since the module
        grading is the chirality action, str(c(Gamma) A) collapses to the
        plain trace, which restricts to tr_W on the Clifford commutant.
        """
        return complex(np.trace(A)) / 2 ** (cls.k // 2)

    @staticmethod
    def c_of_so(R12: complex) -> np.ndarray:
        """so(2) -> C^2(M|B): R with R_{12} = -R_{21} = R12 maps to
        (1/4) sum R_ij c(e^i) c(e^j) = (R12 / 2) c(e^1) c(e^2)."""
        return 0.5 * R12 * (C1 @ C2)


def str_rel_matrixform(mf: MatrixForm) -> UForm:
    """Relative supertrace of a matrix form on S ox W (S outermost)."""
    m = mf.size // 2
    if mf.grading != (m, m):
        raise ValueError("expected the spinor block grading (m, m)")
    cg = np.kron(CHIRALITY, np.eye(m))
    gamma_mf = MatrixForm.from_constant_matrix(mf.domain, cg, mf.grading)
    prod = gamma_mf.matmul(mf)
    return supertrace(prod).scale(2.0 ** (-FiberGeometry.k // 2))


class CliffordModuleSpec:
    """E = S ox W on M = B x F: flux-n twisting line with Wilson lines."""

    def __init__(self, split: FibrationSplit, flux: int, wilson: WilsonSpec):
        self.geometry = FiberGeometry(split)
        self.split = split
        self.flux = int(flux)
        self.wilson = wilson

    def clifford_algebra_residual(self) -> float:
        """Max defect of the generator relations (graded *-homomorphism)."""
        worst = 0.0
        for i in range(2):
            for j in range(2):
                ci, cj = FiberGeometry.clifford(i), FiberGeometry.clifford(j)
                rel = ci @ cj + cj @ ci + 2.0 * (i == j) * np.eye(2)
                worst = max(worst, float(np.max(np.abs(rel))))
            # anti-Hermitian generators: the *-structure
            worst = max(worst, float(np.max(np.abs(
                FiberGeometry.clifford(i).conj().T
                + FiberGeometry.clifford(i)))))
        g = CHIRALITY
        worst = max(worst, float(np.max(np.abs(g @ g - np.eye(2)))))
        for i in range(2):
            ci = FiberGeometry.clifford(i)
            worst = max(worst, float(np.max(np.abs(g @ ci + ci @ g))))
        return worst

    # ---- the twisting curvature ------------------------------------------

    def wilson_differentials(self):
        """da_1, da_2 as band-limited 1-forms on the base."""
        base = self.split.base
        w = self.wilson
        out = []
        for comp in (0, 1):
            f = FourierForm.zero(base, 1)
            for bx in (0, 1):
                cst = float(w.winding[comp, bx])
                if cst != 0.0:
                    f = f + FourierForm.mode(base, (0, 0), idx=(bx,), value=cst)
            # wiggle: a_1 += amp sin(2 pi b_2)/2 pi, a_2 += amp sin(2 pi b_1)/2 pi
            src = 1 - comp
            if w.amp != 0.0:
                plus = FourierForm.mode(base, tuple(1 if ax == src else 0
                                                    for ax in (0, 1)),
                                        idx=(src,), value=0.5 * w.amp)
                minus = FourierForm.mode(base, tuple(-1 if ax == src else 0
                                                     for ax in (0, 1)),
                                         idx=(src,), value=0.5 * w.amp)
                f = f + plus + minus
            out.append(f)
        return out

    def twisting_curvature(self) -> FourierForm:
        """theta^W = -2 pi i [n dx1^dx2 + da_1^dx1 + da_2^dx2] on M."""
        split = self.split
        total = split.total
        f1, f2 = split.fiber_axes
        vol_f = FourierForm.mode(total, (0,) * total.dim, idx=(f1, f2),
                                 value=float(self.flux))
        theta = vol_f
        from .forms import pullback_to_total, wedge
        da1, da2 = self.wilson_differentials()
        dx1 = FourierForm.mode(total, (0,) * total.dim, idx=(f1,))
        dx2 = FourierForm.mode(total, (0,) * total.dim, idx=(f2,))
        theta = theta + wedge(pullback_to_total(da1, split), dx1)
        theta = theta + wedge(pullback_to_total(da2, split), dx2)
        return theta.scale(-TWO_PI_I)

    def curvature_endomorphism(self, synthetic_r=None) -> MatrixForm:
        """theta^{E/S} = theta^E - c(R^{M|B}) as a graded matrix form.

        The product fibration is flat, so c(R) = 0; a synthetic fiberwise
        curvature coefficient (a 2-form) exercises the subtraction path.
        """
        theta_w = self.twisting_curvature()
        mf = MatrixForm(self.split.total, 2, grading=(1, 1))
        u = UForm.from_form(theta_w)
        for i in range(2):
            mf.set_entry(i, i, u.copy())
        if synthetic_r is not None:
            cr = FiberGeometry.c_of_so(1.0)
            for i in range(2):
                for j in range(2):
                    if cr[i, j] != 0:
                        mf.set_entry(i, j, mf.entries[i][j]
                                     - UForm.from_form(
                                         synthetic_r.scale(cr[i, j])))
        return mf

    def clifford_commutant_residual(self, mf: MatrixForm) -> float:
        """Defect of [mf, c(e^i)] = 0 (membership in End_{C(M|B)}(E))."""
        worst = 0.0
        for i in range(2):
            c = MatrixForm.from_constant_matrix(mf.domain,
                                                FiberGeometry.clifford(i),
                                                mf.grading)
            comm = mf.matmul(c) - c.matmul(mf)
            worst = max(worst, comm.norm())
        return worst


def relative_chern(cm: CliffordModuleSpec, theta_es: MatrixForm = None,
                   commutant_tol: float = 1e-10) -> UForm:
    """Ch_L(E/S) = str_{E/S} exp(-u theta^{E/S} / 2 pi i)."""
    if theta_es is None:
        theta_es = cm.curvature_endomorphism()
    res = cm.clifford_commutant_residual(theta_es)
    if res > commutant_tol * max(1.0, theta_es.norm()):
        raise ValueError(
            f"curvature endomorphism leaves the Clifford commutant: {res:.3e}")
    from .matform import matrix_exp_form
    x = theta_es.scale_u(UForm(theta_es.domain,
                               {2: FourierForm.constant(theta_es.domain,
                                                        -1.0 / TWO_PI_I)}))
    return str_rel_matrixform(matrix_exp_form(x))


def a_hat_form(cm: CliffordModuleSpec, r_form: MatrixForm = None) -> UForm:
    """A-hat of the fiberwise curvature; identically one on flat products."""
    if r_form is None:
        return UForm.one(cm.split.total)
    return a_hat_series(r_form)


def rhs_index_form(cm: CliffordModuleSpec, theta_es: MatrixForm = None,
                   r_form: MatrixForm = None) -> UForm:
    """u^{-k/2} integral over the fiber of A-hat Ch_L(E/S), on the base."""
    ch = relative_chern(cm, theta_es)
    ah = a_hat_form(cm, r_form)
    integrand = uwedge(ah, ch)
    down = fiber_integrate(integrand, cm.split)
    return down.shift_u(-cm.geometry.k // 2)


def rhs_closedness_residual(rhs: UForm) -> float:
    """d_Omega closedness on the base (trivial twist on T^2 bases)."""
    return u_exterior_d(rhs).norm()


def rescale_base_forms(xi: UForm, s: float) -> UForm:
    """Multiply the degree-k component by s^{k/2}."""
    out = UForm(xi.domain, allow_half=xi.allow_half)
    for (u2, deg), f in xi.terms.items():
        out.terms[(u2, deg)] = f.scale(s ** (deg / 2.0))
    return out


class RescaledSymbol:
    """Formal rescaled Bismut operator t^{1/2} D + nabla - t^{-1/2} c(T)/4.

    Acts on matrix-valued u-forms over the base at the symbol level: D is
    a constant matrix, nabla = d + Gamma for a matrix 1-form, and c(T) is
    a matrix-valued 2-form (the anchor of its s-weight under the
    form-degree rescaling).  Used to witness the conjugation identity
    delta_s A_t delta_{1/s} = s^{1/2} A_{t/s}.
    """

    def __init__(self, D: np.ndarray, gamma: MatrixForm, cT2: MatrixForm,
                 t: float):
        self.D = D
        self.gamma = gamma
        self.cT2 = cT2
        self.t = t

    def apply(self, xi: MatrixForm) -> MatrixForm:
        dom = xi.domain
        dmat = MatrixForm.from_constant_matrix(dom, self.D, xi.grading)
        out = dmat.matmul(xi).scale(np.sqrt(self.t))
        out = out + xi.d() + self.gamma.matmul(xi)
        out = out - self.cT2.matmul(xi).scale(0.25 / np.sqrt(self.t))
        return out


def rescale_matrix_form(mf: MatrixForm, s: float) -> MatrixForm:
    out = mf.copy()
    for i in range(mf.size):
        for j in range(mf.size):
            out.entries[i][j] = rescale_base_forms(mf.entries[i][j], s)
    return out


def rescaling_conjugation_residual(D, gamma, cT2, t: float, s: float,
                                   xi: MatrixForm) -> float:
    """Defect of delta_s A_t delta_{1/s} = s^{1/2} A_{t/s} on a test form."""
    a_t = RescaledSymbol(D, gamma, cT2, t)
    a_ts = RescaledSymbol(D, gamma, cT2, t / s)
    lhs = rescale_matrix_form(a_t.apply(rescale_matrix_form(xi, 1.0 / s)), s)
    rhs = a_ts.apply(xi).scale(np.sqrt(s))
    return (lhs - rhs).norm()
