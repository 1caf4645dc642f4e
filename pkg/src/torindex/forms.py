"""Exterior calculus on flat tori with truncated Fourier coefficients.

Forms on T^n = R^n/Z^n are stored mode-by-mode: a p-form is a map from
strictly increasing multi-indices (i1 < ... < ip) to complex coefficient
arrays over the kept Fourier modes k in [-N, N]^n.  The exterior
derivative is exact on kept modes; wedge products combine coefficients by
convolution and discard modes outside the cutoff (the discarded fraction
is reported on request).
"""

from __future__ import annotations

import numpy as np

TWO_PI_I = 2.0j * np.pi


class TorusDomain:
    """Flat torus T^dim with Fourier modes kept per axis in [-N, N]."""

    def __init__(self, dim: int, cutoff: int):
        if dim < 1 or dim > 6:
            raise ValueError(f"torus dimension must be in 1..6, got {dim}")
        if cutoff < 0:
            raise ValueError(f"mode cutoff must be >= 0, got {cutoff}")
        self.dim = dim
        self.cutoff = cutoff

    @property
    def modes_per_axis(self) -> int:
        return 2 * self.cutoff + 1

    def mode_shape(self) -> tuple:
        return (self.modes_per_axis,) * self.dim

    def mode_values(self, axis: int) -> np.ndarray:
        """Integer mode numbers along `axis`, broadcast to mode_shape."""
        N = self.cutoff
        k = np.arange(-N, N + 1)
        shape = [1] * self.dim
        shape[axis] = self.modes_per_axis
        return k.reshape(shape)

    def __eq__(self, other):
        return (isinstance(other, TorusDomain)
                and self.dim == other.dim and self.cutoff == other.cutoff)

    def __hash__(self):
        return hash((self.dim, self.cutoff))

    def __repr__(self):
        return f"TorusDomain(dim={self.dim}, cutoff={self.cutoff})"


class FibrationSplit:
    """Coordinate split of a product torus M = B x F, fiber axes last."""

    def __init__(self, total: TorusDomain, base_dim: int):
        if not 0 < base_dim < total.dim:
            raise ValueError("base_dim must split the total domain nontrivially")
        self.total = total
        self.base_dim = base_dim
        self.fiber_dim = total.dim - base_dim
        self.base = TorusDomain(base_dim, total.cutoff)

    @property
    def base_axes(self) -> tuple:
        return tuple(range(self.base_dim))

    @property
    def fiber_axes(self) -> tuple:
        return tuple(range(self.base_dim, self.total.dim))

    def __repr__(self):
        return f"FibrationSplit(total={self.total}, base_dim={self.base_dim})"


def _merge_sign(I: tuple, J: tuple):
    """Sign of dx^I ^ dx^J -> dx^sorted(I+J); None if an index repeats."""
    if set(I) & set(J):
        return None, None
    merged = I + J
    # count inversions between the I block and the J block
    inv = sum(1 for a in I for b in J if b < a)
    return (-1) ** inv, tuple(sorted(merged))


class FourierForm:
    """Differential p-form with truncated Fourier coefficients.

    components maps a strictly increasing index tuple to an array of
    shape domain.mode_shape(); entry [i1,...,in] is the coefficient of
    e^{2 pi i k.x} dx^I with k_j = i_j - N.
    """

    def __init__(self, domain: TorusDomain, degree: int, components=None):
        if degree < 0 or degree > domain.dim:
            raise ValueError(f"degree {degree} out of range for {domain}")
        self.domain = domain
        self.degree = degree
        self.components = {}
        if components:
            for idx, arr in components.items():
                self._set(tuple(idx), np.asarray(arr, dtype=complex))

    def _set(self, idx: tuple, arr: np.ndarray):
        if len(idx) != self.degree:
            raise ValueError(f"index {idx} does not match degree {self.degree}")
        if list(idx) != sorted(set(idx)):
            raise ValueError(f"index {idx} must be strictly increasing")
        if any(i < 0 or i >= self.domain.dim for i in idx):
            raise ValueError(f"index {idx} out of range")
        if arr.shape != self.domain.mode_shape():
            raise ValueError("coefficient array has wrong shape")
        self.components[idx] = arr

    # ---- constructors -------------------------------------------------

    @classmethod
    def zero(cls, domain: TorusDomain, degree: int) -> "FourierForm":
        return cls(domain, degree)

    @classmethod
    def constant(cls, domain: TorusDomain, value: complex) -> "FourierForm":
        arr = np.zeros(domain.mode_shape(), dtype=complex)
        arr[(domain.cutoff,) * domain.dim] = value
        return cls(domain, 0, {(): arr})

    @classmethod
    def mode(cls, domain: TorusDomain, k, idx=(), value: complex = 1.0) -> "FourierForm":
        """The single-mode form value * e^{2 pi i k.x} dx^idx."""
        k = tuple(k)
        if len(k) != domain.dim:
            raise ValueError("mode vector has wrong length")
        if any(abs(kj) > domain.cutoff for kj in k):
            raise ValueError(f"mode {k} outside cutoff {domain.cutoff}")
        arr = np.zeros(domain.mode_shape(), dtype=complex)
        arr[tuple(kj + domain.cutoff for kj in k)] = value
        return cls(domain, len(idx), {tuple(idx): arr})

    @classmethod
    def random(cls, domain: TorusDomain, degree: int, rng, max_mode=None,
               real: bool = False) -> "FourierForm":
        """Random form with modes supported in [-max_mode, max_mode]."""
        from itertools import combinations
        N = domain.cutoff
        mm = N if max_mode is None else min(max_mode, N)
        comps = {}
        for idx in combinations(range(domain.dim), degree):
            arr = np.zeros(domain.mode_shape(), dtype=complex)
            sl = tuple(slice(N - mm, N + mm + 1) for _ in range(domain.dim))
            block = rng.standard_normal((2 * mm + 1,) * domain.dim) \
                + 1j * rng.standard_normal((2 * mm + 1,) * domain.dim)
            arr[sl] = block
            comps[idx] = arr
        f = cls(domain, degree, comps)
        if real:
            f = f.real_part()
        return f

    # ---- linear structure ---------------------------------------------

    def copy(self) -> "FourierForm":
        return FourierForm(self.domain, self.degree,
                           {i: a.copy() for i, a in self.components.items()})

    def __add__(self, other: "FourierForm") -> "FourierForm":
        if self.domain != other.domain or self.degree != other.degree:
            raise ValueError("can only add forms of equal domain and degree")
        out = self.copy()
        for idx, arr in other.components.items():
            if idx in out.components:
                out.components[idx] = out.components[idx] + arr
            else:
                out.components[idx] = arr.copy()
        return out

    def __sub__(self, other: "FourierForm") -> "FourierForm":
        return self + other.scale(-1.0)

    def scale(self, c: complex) -> "FourierForm":
        return FourierForm(self.domain, self.degree,
                           {i: c * a for i, a in self.components.items()})

    def __mul__(self, c: complex) -> "FourierForm":
        return self.scale(c)

    __rmul__ = __mul__

    def real_part(self) -> "FourierForm":
        """Projection onto forms with real point values: c(-k) = conj(c(k))."""
        out = {}
        for idx, arr in self.components.items():
            flipped = np.conj(arr[(slice(None, None, -1),) * self.domain.dim])
            out[idx] = 0.5 * (arr + flipped)
        return FourierForm(self.domain, self.degree, out)

    def is_real(self, tol: float = 1e-12) -> bool:
        return (self - self.real_part()).norm() <= tol * max(1.0, self.norm())

    def norm(self) -> float:
        """L^2 norm on the unit-volume torus (Parseval)."""
        return float(np.sqrt(sum(np.sum(np.abs(a) ** 2)
                                 for a in self.components.values()))) \
            if self.components else 0.0

    def zero_mode(self, idx=()) -> complex:
        arr = self.components.get(tuple(idx))
        if arr is None:
            return 0.0
        return complex(arr[(self.domain.cutoff,) * self.domain.dim])

    def evaluate(self, points: np.ndarray) -> dict:
        """Pointwise component values at points of shape (..., dim)."""
        pts = np.asarray(points, dtype=float)
        N = self.domain.cutoff
        out = {}
        for idx, arr in self.components.items():
            vals = np.zeros(pts.shape[:-1], dtype=complex)
            it = np.ndindex(arr.shape)
            for mi in it:
                c = arr[mi]
                if c == 0:
                    continue
                k = np.array(mi) - N
                vals = vals + c * np.exp(TWO_PI_I * (pts @ k))
            out[idx] = vals
        return out


# ---- operations --------------------------------------------------------

def _convolve_truncate(a: np.ndarray, b: np.ndarray, N: int):
    """Linear convolution of mode arrays, cropped back to [-N, N]^d.

    Returns (cropped, discarded_sq, total_sq) where the last two are the
    squared l2 masses outside and across the full convolution.
    """
    d = a.ndim
    L = 2 * N + 1
    M = 2 * L - 1
    axes = tuple(range(d))
    fa = np.fft.fftn(a, s=(M,) * d, axes=axes)
    fb = np.fft.fftn(b, s=(M,) * d, axes=axes)
    full = np.fft.ifftn(fa * fb)
    total_sq = float(np.sum(np.abs(full) ** 2))
    sl = (slice(N, 3 * N + 1),) * d
    crop = full[sl].copy()
    kept_sq = float(np.sum(np.abs(crop) ** 2))
    return crop, max(total_sq - kept_sq, 0.0), total_sq


def wedge(a: FourierForm, b: FourierForm, with_overflow: bool = False):
    """Exterior product; modes outside the cutoff are discarded."""
    if a.domain != b.domain:
        raise ValueError("wedge requires forms on the same domain")
    deg = a.degree + b.degree
    if deg > a.domain.dim:
        # degree exceeds dim: the product is identically zero
        z = FourierForm.zero(a.domain, a.domain.dim)
        return (z, 0.0) if with_overflow else z
    N = a.domain.cutoff
    comps = {}
    lost_sq = 0.0
    total_sq = 0.0
    for I, arrI in a.components.items():
        for J, arrJ in b.components.items():
            sign, K = _merge_sign(I, J)
            if sign is None:
                continue
            conv, lost, tot = _convolve_truncate(arrI, arrJ, N)
            lost_sq += lost
            total_sq += tot
            if K in comps:
                comps[K] = comps[K] + sign * conv
            else:
                comps[K] = sign * conv
    out = FourierForm(a.domain, deg, comps)
    if with_overflow:
        frac = np.sqrt(lost_sq / total_sq) if total_sq > 0 else 0.0
        return out, float(frac)
    return out


def exterior_d(a: FourierForm) -> FourierForm:
    """Spectral exterior derivative; exact on kept modes."""
    dom = a.domain
    if a.degree >= dom.dim:
        return FourierForm.zero(dom, dom.dim)
    comps = {}
    for I, arr in a.components.items():
        for j in range(dom.dim):
            if j in I:
                continue
            pos = sum(1 for i in I if i < j)
            sign = (-1) ** pos
            K = tuple(sorted(I + (j,)))
            term = sign * TWO_PI_I * dom.mode_values(j) * arr
            if K in comps:
                comps[K] = comps[K] + term
            else:
                comps[K] = term
    return FourierForm(dom, a.degree + 1, comps)


def integrate(a: FourierForm) -> complex:
    """Integral over the torus; defined for top-degree forms only."""
    if a.degree != a.domain.dim:
        raise ValueError(f"integrate needs degree {a.domain.dim}, got {a.degree}")
    return a.zero_mode(tuple(range(a.domain.dim)))


def periods(a: FourierForm, cycle_axes: tuple) -> complex:
    """Integral over the coordinate subtorus spanned by cycle_axes.

    The subtorus passes through the origin, so the period is the k = 0
    coefficient of the dx^{cycle_axes} component: nonzero modes along the
    cycle axes integrate to zero and the remaining axes are evaluated at 0
    where only the zero mode is kept after restriction.
    """
    idx = tuple(sorted(cycle_axes))
    if len(idx) != a.degree:
        raise ValueError("cycle dimension must equal form degree")
    arr = a.components.get(idx)
    if arr is None:
        return 0.0
    N = a.domain.cutoff
    # restriction to x_j = 0 along non-cycle axes sums modes along them
    summed = arr
    for ax in range(a.domain.dim - 1, -1, -1):
        if ax not in idx:
            summed = summed.sum(axis=ax)
    zero = tuple(N for _ in idx)
    return complex(summed[zero])


class UForm:
    """Polynomial in the degree -2 variable u with FourierForm coefficients.

    Terms are keyed by (2*m, p): doubled u-exponent and form degree, so one
    u-power may carry several form degrees.  Half-integer exponents are
    legal only when allow_half is set (rescaled-superconnection use).
    """

    def __init__(self, domain: TorusDomain, terms=None, allow_half: bool = False):
        self.domain = domain
        self.allow_half = allow_half
        self.terms = {}  # (2*m, degree) -> FourierForm
        if terms:
            for key, form in terms.items():
                if isinstance(key, tuple):
                    self._add_term(int(key[0]), form)
                else:
                    self._add_term(int(key), form)

    def _add_term(self, key2: int, form: FourierForm):
        if key2 < 0:
            raise ValueError("u-exponents must be >= 0")
        if key2 % 2 and not self.allow_half:
            raise ValueError("half-integer u-exponent outside superconnection context")
        if form.domain != self.domain:
            raise ValueError("term domain mismatch")
        key = (key2, form.degree)
        if key in self.terms:
            self.terms[key] = self.terms[key] + form
        else:
            self.terms[key] = form

    @classmethod
    def from_form(cls, form: FourierForm, u_power: int = 0, allow_half=False) -> "UForm":
        return cls(form.domain, {2 * u_power: form}, allow_half=allow_half)

    @classmethod
    def zero(cls, domain: TorusDomain, allow_half=False) -> "UForm":
        return cls(domain, allow_half=allow_half)

    @classmethod
    def one(cls, domain: TorusDomain) -> "UForm":
        return cls.from_form(FourierForm.constant(domain, 1.0))

    def copy(self) -> "UForm":
        out = UForm(self.domain, allow_half=self.allow_half)
        out.terms = {k: f.copy() for k, f in self.terms.items()}
        return out

    def __add__(self, other: "UForm") -> "UForm":
        if self.domain != other.domain:
            raise ValueError("can only add UForms on the same domain")
        out = self.copy()
        out.allow_half = self.allow_half or other.allow_half
        for (k2, deg), f in other.terms.items():
            key = (k2, deg)
            out.terms[key] = out.terms[key] + f if key in out.terms else f.copy()
        return out

    def __sub__(self, other: "UForm") -> "UForm":
        return self + other.scale(-1.0)

    def scale(self, c: complex) -> "UForm":
        out = UForm(self.domain, allow_half=self.allow_half)
        out.terms = {k: f.scale(c) for k, f in self.terms.items()}
        return out

    def __mul__(self, c: complex) -> "UForm":
        return self.scale(c)

    __rmul__ = __mul__

    def shift_u(self, power: float) -> "UForm":
        """Multiply by u^power (power may be negative if no term drops below 0)."""
        d2 = int(round(2 * power))
        out = UForm(self.domain,
                    allow_half=self.allow_half or bool(d2 % 2))
        for (k2, deg), f in self.terms.items():
            nk = k2 + d2
            if nk < 0:
                if f.norm() > 1e-13:
                    raise ValueError("u-power shift would create a negative exponent")
                continue
            out.terms[(nk, deg)] = f.copy()
        return out

    def component(self, u_power: float, degree: int) -> FourierForm:
        key = (int(round(2 * u_power)), degree)
        return self.terms.get(key, FourierForm.zero(self.domain, degree))

    def degrees(self):
        """Sorted total degrees (form degree - 2 * u exponent) present."""
        return sorted({deg - k2 for (k2, deg), f in self.terms.items()
                       if f.norm() > 0})

    def half_u_part(self) -> "UForm":
        """The terms with genuinely half-integral u-exponent."""
        out = UForm(self.domain, allow_half=True)
        out.terms = {k: f.copy() for k, f in self.terms.items() if k[0] % 2}
        return out

    def norm(self) -> float:
        return float(np.sqrt(sum(f.norm() ** 2 for f in self.terms.values())))

    def prune(self, tol: float = 0.0) -> "UForm":
        out = UForm(self.domain, allow_half=self.allow_half)
        out.terms = {k: f for k, f in self.terms.items() if f.norm() > tol}
        return out


def uwedge(a: UForm, b: UForm) -> UForm:
    """Wedge product of u-polynomials of forms; u-exponents add."""
    if a.domain != b.domain:
        raise ValueError("wedge requires UForms on the same domain")
    out = UForm(a.domain, allow_half=a.allow_half or b.allow_half)
    for (ka, dega), fa in a.terms.items():
        for (kb, degb), fb in b.terms.items():
            if dega + degb > a.domain.dim:
                continue
            prod = wedge(fa, fb)
            key2 = ka + kb
            if key2 % 2:
                out.allow_half = True
            key = (key2, prod.degree)
            out.terms[key] = out.terms[key] + prod if key in out.terms else prod
    return out


def u_exterior_d(a: UForm) -> UForm:
    out = UForm(a.domain, allow_half=a.allow_half)
    for (k2, deg), f in a.terms.items():
        if deg >= a.domain.dim:
            continue
        key = (k2, deg + 1)
        df = exterior_d(f)
        out.terms[key] = out.terms[key] + df if key in out.terms else df
    return out


def twisted_d(xi: UForm, omega3=None, tol: float = 1e-10) -> UForm:
    """Twisted differential u d + u^2 Omega ^ . for a closed 3-form Omega.

    omega3 = None means the untwisted case (useful on 2-dimensional
    domains, where no nonzero 3-form exists).
    """
    out = u_exterior_d(xi).shift_u(1)
    if omega3 is None:
        return out
    if omega3.degree != 3:
        raise ValueError("twist form must have degree 3")
    res = exterior_d(omega3).norm()
    if res > tol * max(1.0, omega3.norm()):
        raise ValueError(f"twist form is not closed: |d Omega| = {res:.3e}")
    om = UForm.from_form(omega3, 2)
    return out + uwedge(om, xi)


def fiber_integrate(a: UForm, split: FibrationSplit) -> UForm:
    """Integration over the fiber of M = B x F; fiber axes ordered last.

    Satisfies the chain identity: fiber_integrate(d_{pi^* Omega} eta)
    equals d_Omega fiber_integrate(eta) exactly on kept modes.
    """
    if a.domain != split.total:
        raise ValueError("form does not live on the split's total space")
    fa = set(split.fiber_axes)
    N = a.domain.cutoff
    out = UForm(split.base, allow_half=a.allow_half)
    for (k2, deg), form in a.terms.items():
        comps = {}
        for I, arr in form.components.items():
            if not fa.issubset(I):
                continue
            Ib = tuple(i for i in I if i not in fa)
            sel = tuple(slice(None) if ax in split.base_axes else N
                        for ax in range(a.domain.dim))
            comps_arr = arr[sel]
            if Ib in comps:
                comps[Ib] = comps[Ib] + comps_arr
            else:
                comps[Ib] = comps_arr.copy()
        if comps:
            f = FourierForm(split.base, deg - split.fiber_dim, comps)
            key = (k2, f.degree)
            out.terms[key] = out.terms[key] + f if key in out.terms else f
    return out


def pullback_to_total(b_form: FourierForm, split: FibrationSplit) -> FourierForm:
    """pi^* of a base form: same components, modes extended by zeros in fiber axes."""
    if b_form.domain != split.base:
        raise ValueError("pullback expects a form on the base")
    N = split.total.cutoff
    comps = {}
    for I, arr in b_form.components.items():
        big = np.zeros(split.total.mode_shape(), dtype=complex)
        sel = tuple(slice(None) for _ in range(split.base_dim)) \
            + (N,) * split.fiber_dim
        big[sel] = arr
        comps[I] = big
    return FourierForm(split.total, b_form.degree, comps)


def u_pullback(a: UForm, split: FibrationSplit) -> UForm:
    out = UForm(split.total, allow_half=a.allow_half)
    for key, f in a.terms.items():
        out.terms[key] = pullback_to_total(f, split)
    return out
