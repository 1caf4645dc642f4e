"""Simplex-integral morphism from cyclic chains of matrix fields to
twisted forms on the base, with its superconnection variant and the
interpolation homotopy.

Normalization: the engine exponentiates -u t theta (no 2 pi i inside),
which makes Phi intertwine b + uB with the twisted differential
d = u d + u^2 (d omega) ^ .  on the nose; the uniform substitution
u -> u / 2 pi i (`calibrate`) converts outputs to the convention whose
exponent carries theta / 2 pi i.  Verified order by order: with the
2 pi i inside the exponent the displayed boundary identity fails by a
factor 2 pi i between its b- and uB-parts.

Chain entries are 0-forms; insertions carry the connection derivation
(and u^{-1/2}-weighted supercommutators with the odd degree-0 piece in
the superconnection variant).  Every u-power of the result stays >= 0
because a u^n chain term has exactly 2n insertion slots.
"""

from __future__ import annotations

from math import factorial

import numpy as np

TWO_PI_I = 2.0j * np.pi


def band_limited_field(base_shape, m, rng, max_mode: int = 1,
                       parity=None, eps=None) -> np.ndarray:
    """Random periodic matrix field with modes in [-max_mode, max_mode]."""
    arr = np.zeros(tuple(base_shape) + (m, m), dtype=complex)
    grids = np.meshgrid(*[np.arange(n) / n for n in base_shape], indexing='ij')
    n_terms = 2 * len(base_shape)
    for _ in range(n_terms):
        k = rng.integers(-max_mode, max_mode + 1, size=len(base_shape))
        phase = sum(TWO_PI_I * kj * g for kj, g in zip(k, grids))
        coef = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
        arr += np.exp(phase)[..., None, None] * coef
    if parity is not None and eps is not None:
        g0 = int(np.sum(np.asarray(eps) > 0))
        if parity == 0:
            arr[..., :g0, g0:] = 0.0
            arr[..., g0:, :g0] = 0.0
        else:
            arr[..., :g0, :g0] = 0.0
            arr[..., g0:, g0:] = 0.0
    return arr


def spectral_d(field: np.ndarray, axis: int, base_ndim: int) -> np.ndarray:
    """d/db_axis of a periodic base-grid field (trailing matrix axes)."""
    nb = field.shape[axis]
    k = np.fft.fftfreq(nb, d=1.0 / nb)
    shape = [1] * field.ndim
    shape[axis] = nb
    fh = np.fft.fft(field, axis=axis)
    return np.fft.ifft(fh * (TWO_PI_I * k.reshape(shape)), axis=axis)


class UMat:
    """Matrix fields keyed by (2 u-power, form index tuple) over the base.

    A light superalgebra container for the integrand algebra: products
    collect form factors to the left with the Koszul sign
    (-1)^{|beta| p(A)} for the matrix-unit parity p against the form
    degree |beta|, tracked through an optional parity vector eps.
    """

    def __init__(self, base_shape, m, eps=None, comps=None):
        self.base_shape = tuple(base_shape)
        self.m = m
        self.eps = eps  # parity signs (+1/-1) or None for ungraded
        self.comps = dict(comps) if comps else {}

    def copy(self):
        return UMat(self.base_shape, self.m, self.eps,
                    {k: v.copy() for k, v in self.comps.items()})

    @classmethod
    def zero(cls, base_shape, m, eps=None):
        return cls(base_shape, m, eps)

    @classmethod
    def identity(cls, base_shape, m, eps=None):
        arr = np.zeros(tuple(base_shape) + (m, m), dtype=complex)
        arr[...] = np.eye(m)
        return cls(base_shape, m, eps, {(0, ()): arr})

    @classmethod
    def from_field(cls, arr, base_shape, eps=None, u2=0, idx=()):
        arr = np.asarray(arr, dtype=complex)
        m = arr.shape[-1]
        return cls(base_shape, m, eps, {(int(u2), tuple(idx)): arr})

    def __add__(self, other):
        out = self.copy()
        for k, v in other.comps.items():
            out.comps[k] = out.comps[k] + v if k in out.comps else v.copy()
        return out

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, c):
        return UMat(self.base_shape, self.m, self.eps,
                    {k: c * v for k, v in self.comps.items()})

    def shift_u(self, half_steps):
        out = UMat(self.base_shape, self.m, self.eps)
        for (u2, idx), v in self.comps.items():
            nk = u2 + half_steps
            if nk < 0:
                raise ValueError("negative u-power")
            out.comps[(nk, idx)] = v.copy()
        return out

    def parity_mask(self, flip: bool):
        if self.eps is None or not flip:
            return None
        return np.outer(self.eps, self.eps)

    def mul(self, other: "UMat", max_degree=None) -> "UMat":
        from .forms import _merge_sign
        eps = self.eps if self.eps is not None else other.eps
        out = UMat(self.base_shape, self.m, eps)
        cap = max_degree if max_degree is not None else len(self.base_shape)
        for (u1, I), a in self.comps.items():
            for (u2, J), b in other.comps.items():
                s, K = _merge_sign(I, J)
                if s is None or len(K) > cap:
                    continue
                left = a
                if self.eps is not None and len(J) % 2:
                    left = self.eps[:, None] * a * self.eps[None, :]
                prod = np.einsum('...ij,...jk->...ik', left, b)
                key = (u1 + u2, K)
                out.comps[key] = out.comps[key] + s * prod \
                    if key in out.comps else s * prod
        return out

    def d(self) -> "UMat":
        out = UMat(self.base_shape, self.m, self.eps)
        nb = len(self.base_shape)
        for (u2, I), a in self.comps.items():
            for ax in range(nb):
                if ax in I:
                    continue
                pos = sum(1 for i in I if i < ax)
                K = tuple(sorted(I + (ax,)))
                term = (-1.0) ** pos * spectral_d(a, ax, nb)
                key = (u2, K)
                out.comps[key] = out.comps[key] + term \
                    if key in out.comps else term
        return out

    def trace(self, super_: bool = False) -> dict:
        """{(u2, idx): scalar field} of the (super)trace."""
        out = {}
        for (u2, idx), v in self.comps.items():
            if super_:
                if self.eps is None:
                    raise ValueError("supertrace needs a grading")
                t = np.einsum('...ii,i->...', v, self.eps.astype(complex))
            else:
                t = np.einsum('...ii->...', v)
            key = (u2, idx)
            out[key] = out[key] + t if key in out else t
        return out

    def norm(self) -> float:
        return max((float(np.max(np.abs(v))) for v in self.comps.values()),
                   default=0.0)


# ---- scalar u-form dictionaries over the base -----------------------------


def udict_add(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = out[k] + v if k in out else v
    return out


def udict_scale(a: dict, c) -> dict:
    return {k: c * v for k, v in a.items()}


def udict_norm(a: dict) -> float:
    return max((float(np.max(np.abs(v))) for v in a.values()), default=0.0)


def udict_d(a: dict, base_ndim: int) -> dict:
    out = {}
    for (u2, I), v in a.items():
        for ax in range(base_ndim):
            if ax in I:
                continue
            pos = sum(1 for i in I if i < ax)
            K = tuple(sorted(I + (ax,)))
            term = (-1.0) ** pos * spectral_d(v, ax, base_ndim)
            key = (u2, K)
            out[key] = out[key] + term if key in out else term
    return out


def udict_wedge_scalar(a: dict, b: dict, base_ndim: int) -> dict:
    from .forms import _merge_sign
    out = {}
    for (u1, I), v in a.items():
        for (u2, J), w in b.items():
            s, K = _merge_sign(I, J)
            if s is None or len(K) > base_ndim:
                continue
            key = (u1 + u2, K)
            term = s * v * w
            out[key] = out[key] + term if key in out else term
    return out


def udict_twisted_d(a: dict, twist3: dict, base_ndim: int) -> dict:
    """u d + u^2 twist3 ^ .  (twist3 a scalar 3-form dict {idx: field})."""
    out = {}
    for k, v in udict_d(a, base_ndim).items():
        out[(k[0] + 2, k[1])] = v
    if twist3:
        tw = {(0, idx): arr for idx, arr in twist3.items()}
        ww = udict_wedge_scalar(tw, a, base_ndim)
        for (u2, idx), v in ww.items():
            key = (u2 + 4, idx)
            out[key] = out[key] + v if key in out else v
    return out


def calibrate(a: dict) -> dict:
    """Substitute u -> u / 2 pi i: the exponent-with-2-pi-i convention."""
    return {(u2, idx): v * (TWO_PI_I) ** (-u2 / 2.0)
            for (u2, idx), v in a.items()}


def udict_periods(a: dict, base_shape) -> dict:
    """{(u_power, idx): period over the coordinate cycle} by grid means."""
    out = {}
    nb = len(base_shape)
    for (u2, idx), v in a.items():
        axes = tuple(range(nb))
        red = v
        for ax in reversed(axes):
            if ax in idx:
                red = red.mean(axis=ax)
            else:
                red = red.take(0, axis=ax)
        out[(u2 / 2.0, idx)] = complex(red)
    return out


# ---- connection data -------------------------------------------------------


class ConnectionData:
    """Base-grid connection for the matrix-field algebra.

    gamma: {axis: field} matrix 1-form (grading-even); omega: {pair: field}
    scalar curving 2-form; the twist entering the chain-map identity is
    d omega (a scalar 3-form).  The odd degree-0 piece x0 turns the data
    into superconnection data.
    """

    def __init__(self, base_shape, m, gamma=None, omega=None, eps=None,
                 x0=None):
        self.base_shape = tuple(base_shape)
        self.m = m
        self.eps = eps
        self.gamma = {int(ax): np.asarray(v, dtype=complex)
                      for ax, v in (gamma or {}).items()}
        self.omega = {tuple(idx): np.asarray(v, dtype=complex)
                      for idx, v in (omega or {}).items()}
        self.x0 = None if x0 is None else np.asarray(x0, dtype=complex)
        if self.x0 is not None and eps is not None:
            odd = self.x0 * np.outer(eps, eps)
            if np.max(np.abs(odd + self.x0)) > 1e-10 * max(
                    1.0, float(np.max(np.abs(self.x0)))):
                raise ValueError("x0 must be odd for the grading")

    @property
    def nb(self) -> int:
        return len(self.base_shape)

    def gamma_umat(self) -> UMat:
        out = UMat(self.base_shape, self.m, self.eps)
        for ax, v in self.gamma.items():
            out.comps[(0, (ax,))] = v.copy()
        return out

    def x0_umat(self) -> UMat:
        out = UMat(self.base_shape, self.m, self.eps)
        if self.x0 is not None:
            arr = np.zeros(self.base_shape + (self.m, self.m), dtype=complex)
            arr[...] = self.x0
            out.comps[(0, ())] = arr
        return out

    def partial(self, a: UMat) -> UMat:
        """The derivation d + [Gamma, .] (graded commutator, Gamma odd)."""
        g = self.gamma_umat()
        return a.d() + g.mul(a) - self._right_gamma(a)

    def _right_gamma(self, a: UMat) -> UMat:
        """a Gamma with the sign making g.mul(a) - (.) the supercommutator."""
        g = self.gamma_umat()
        out = UMat(self.base_shape, self.m, self.eps)
        for (u2, I), v in a.comps.items():
            pa = self._field_parity(v)
            sign = (-1.0) ** ((len(I) + pa) * 1)
            term = UMat(self.base_shape, self.m, self.eps,
                        {(u2, I): v}).mul(g).scale(sign)
            out = out + term
        return out

    def _field_parity(self, v) -> int:
        if self.eps is None:
            return 0
        sign = np.outer(self.eps, self.eps)
        even = float(np.max(np.abs(np.where(sign > 0, v, 0.0))))
        odd = float(np.max(np.abs(np.where(sign < 0, v, 0.0))))
        if odd <= 1e-12 * max(even, odd, 1e-30):
            return 0
        if even <= 1e-12 * max(even, odd, 1e-30):
            return 1
        raise ValueError("field is not parity homogeneous")

    def super_commutator_x0(self, a: UMat) -> UMat:
        """[x0, a]_s for the odd piece (0-form)."""
        x = self.x0_umat()
        out = UMat(self.base_shape, self.m, self.eps)
        for (u2, I), v in a.comps.items():
            pa = self._field_parity(v)
            sign = (-1.0) ** ((len(I) + pa) * 1)
            left = x.mul(UMat(self.base_shape, self.m, self.eps, {(u2, I): v}))
            right = UMat(self.base_shape, self.m, self.eps,
                         {(u2, I): v}).mul(x).scale(sign)
            out = out + left - right
        return out

    def theta(self) -> UMat:
        """theta = d Gamma + Gamma^2 + omega . 1 (matrix 2-form, u^0)."""
        g = self.gamma_umat()
        th = g.d() + g.mul(g)
        for idx, v in self.omega.items():
            arr = v[..., None, None] * np.eye(self.m)
            key = (0, tuple(idx))
            th.comps[key] = th.comps[key] + arr if key in th.comps else arr
        return th

    def curvature_weight(self) -> UMat:
        """u Theta for the exponent: u theta plus the superconnection parts.

        u theta^{A_{u^-1}} = x0^2 + u^{1/2} partial(x0) + u (theta):
        returned with all u-powers >= 0.
        """
        w = self.theta().shift_u(2)
        if self.x0 is not None:
            x = self.x0_umat()
            w = w + x.mul(x)
            w = w + self.partial(x).shift_u(1)
        return w

    def twist3(self) -> dict:
        """d omega as a scalar 3-form {idx: field} (empty for dim < 3)."""
        out = {}
        nb = self.nb
        for idx, v in self.omega.items():
            for ax in range(nb):
                if ax in idx:
                    continue
                pos = sum(1 for i in idx if i < ax)
                K = tuple(sorted(idx + (ax,)))
                term = (-1.0) ** pos * spectral_d(v, ax, nb)
                out[K] = out[K] + term if K in out else term
        return out

    # ---- structural identities -------------------------------------------

    def derivation_square_residual(self, rng) -> float:
        a = UMat.from_field(band_limited_field(self.base_shape, self.m, rng),
                            self.base_shape, self.eps)
        if self.eps is not None:
            g0 = int(np.sum(self.eps > 0))
            arr = a.comps[(0, ())]
            arr[..., :g0, g0:] = 0.0
            arr[..., g0:, :g0] = 0.0
        dda = self.partial(self.partial(a))
        th = self.theta()
        target = th.mul(a) - a.mul(th)
        return (dda - target).norm() / max(1.0, a.norm() * th.norm())

    def bianchi_residual(self) -> float:
        """partial(theta) against the scalar 3-form d omega."""
        dth = self.partial(self.theta())
        tw = self.twist3()
        target = UMat(self.base_shape, self.m, self.eps)
        for idx, v in tw.items():
            target.comps[(0, idx)] = v[..., None, None] * np.eye(self.m)
        return (dth - target).norm() / max(1.0, self.theta().norm())


# ---- simplex quadrature -----------------------------------------------------


def _gl_nodes(panels: int, order: int = 2):
    if order == 2:
        xs = np.array([-1.0, 1.0]) / np.sqrt(3.0)
        ws = np.array([1.0, 1.0])
    else:
        xs, ws = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for p in range(panels):
        a, b = p / panels, (p + 1) / panels
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        nodes.extend(mid + half * xs)
        weights.extend(half * ws)
    return np.array(nodes), np.array(weights)


def simplex_nodes(k: int, panels: int = 2, order: int = 2):
    """Nodes/weights for the flat integral over the k-simplex.

    Recursive rescaled product rule: t_1 in [0,1], t_2 in [0, 1-t_1], ...;
    returns (list of (t_1..t_k), weights); t_0 = 1 - sum is implied.
    """
    if k == 0:
        return np.zeros((1, 0)), np.array([1.0])
    base_n, base_w = _gl_nodes(panels, order)
    pts = [[]]
    wts = [1.0]
    for _ in range(k):
        new_pts, new_wts = [], []
        for p, w in zip(pts, wts):
            rem = 1.0 - sum(p)
            for x, wx in zip(base_n, base_w):
                new_pts.append(p + [rem * x])
                new_wts.append(w * wx * rem)
        pts, wts = new_pts, new_wts
    return np.array(pts), np.array(wts)


def _sinch(z):
    small = np.abs(z) < 1e-4
    zz = np.where(small, 1.0, z)
    out = np.sinh(zz) / zz
    series = 1.0 + z * z / 6.0 + z ** 4 / 120.0
    return np.where(small, series, out)


def heat_kernel_1(x, y):
    """K1 = int_{Delta^1} e^{-t0 x - t1 y} dt = e^{-(x+y)/2} sinch((y-x)/2)."""
    return np.exp(-0.5 * (x + y)) * _sinch(0.5 * (y - x))


def heat_kernel_2(x, y, z):
    """K2 = int_{Delta^2} e^{-t0 x - t1 y - t2 z} dt (symmetric).

    Divided-difference recursion over the best-separated outer pair, with
    a confluent fallback when all three arguments nearly coincide.
    """
    x, y, z = np.broadcast_arrays(x, y, z)
    spread_xy = np.abs(x - y)
    spread_xz = np.abs(x - z)
    spread_yz = np.abs(y - z)
    tiny = 1e-6 * np.maximum(1.0, np.abs(x))
    # choose the ordering with the widest outer gap
    best_xz = (spread_xz >= spread_xy) & (spread_xz >= spread_yz)
    best_xy = (~best_xz) & (spread_xy >= spread_yz)
    a = np.where(best_xz, x, np.where(best_xy, x, y))
    b = np.where(best_xz, y, np.where(best_xy, z, x))
    c = np.where(best_xz, z, np.where(best_xy, y, z))
    den = c - a
    safe = np.where(np.abs(den) < tiny, 1.0, den)
    rec = (heat_kernel_1(a, b) - heat_kernel_1(b, c)) / safe
    mean = (x + y + z) / 3.0
    confluent = 0.5 * np.exp(-mean)
    return np.where(np.abs(den) < tiny, confluent, rec)


class HeatFactorEngine:
    """Evaluator of exp(-t W) for the u-dressed curvature weight W.

    W = Z0 + N with Z0 the (u^0, degree 0) Hermitian part and N nilpotent
    in form degree.  The nilpotent Duhamel expansion is evaluated exactly
    on the eigenbasis of Z0 through divided-difference kernels.
    """

    def __init__(self, data: ConnectionData, max_form=None):
        self.data = data
        W = data.curvature_weight()
        self.base_shape = data.base_shape
        self.m = data.m
        z_key = (0, ())
        self.Z0 = W.comps.get(z_key)
        self.N = UMat(data.base_shape, data.m, data.eps,
                      {k: v for k, v in W.comps.items() if k != z_key})
        self.max_form = len(data.base_shape) if max_form is None else max_form
        if self.Z0 is not None:
            herm = np.max(np.abs(self.Z0 - np.swapaxes(self.Z0.conj(), -1, -2)))
            if herm > 1e-9 * max(1.0, float(np.max(np.abs(self.Z0)))):
                raise ValueError("degree-0 curvature part must be Hermitian")
            if data.eps is not None:
                # the even part commutes with the grading; diagonalize the
                # parity sectors separately so the eigenbasis stays parity
                # pure even across cross-sector degeneracies
                eps = np.asarray(data.eps)
                sign = np.outer(eps, eps)
                off = float(np.max(np.abs(np.where(sign < 0, self.Z0, 0.0))))
                if off > 1e-9 * max(1.0, float(np.max(np.abs(self.Z0)))):
                    raise ValueError("degree-0 curvature part must be even")
                perm = np.argsort(-eps, kind="stable")
                inv = np.argsort(perm)
                g0 = int(np.sum(eps > 0))
                Zp = self.Z0[..., perm, :][..., :, perm]
                w1, v1 = np.linalg.eigh(Zp[..., :g0, :g0])
                w2, v2 = np.linalg.eigh(Zp[..., g0:, g0:])
                self.evals = np.concatenate([w1, w2], axis=-1)
                m = self.m
                V = np.zeros(self.base_shape + (m, m), dtype=complex)
                V[..., :g0, :g0] = v1
                V[..., g0:, g0:] = v2
                self.evecs = V[..., inv, :]
            else:
                self.evals, self.evecs = np.linalg.eigh(self.Z0)
            vc = self.evecs.conj().swapaxes(-1, -2)
            self.N_eig = {k: np.einsum('...ij,...jk,...kl->...il', vc, v,
                                       self.evecs)
                          for k, v in self.N.comps.items()}
        else:
            self.evals = None

    def heat(self, t: float) -> UMat:
        """exp(-t W) as a UMat, exact in the nilpotent direction."""
        out = UMat.from_field(self._heat0(t), self.base_shape, self.data.eps)
        if not self.N.comps:
            return out
        if self.evals is None:
            return self._heat_poly(t)
        lam = t * self.evals
        la = lam[..., :, None]
        lb = lam[..., None, :]
        from .forms import _merge_sign
        # first order: -t V [N~ * K1(la, lb)] V*
        K1 = heat_kernel_1(la, lb)
        for (u2, I), Nt in self.N_eig.items():
            term = self._back(Nt * K1)
            key = (u2, I)
            out.comps[key] = out.comps.get(key, 0.0) + (-t) * term
        # second order: t^2 V [sum_c N1~_{ac} N2~_{cb} K2] V*
        if self.max_form >= 2:
            K2 = heat_kernel_2(lam[..., :, None, None],
                               lam[..., None, :, None],
                               lam[..., None, None, :])
            for (u1, I), N1 in self.N_eig.items():
                for (u2, J), N2 in self.N_eig.items():
                    s, K = _merge_sign(I, J)
                    if s is None or len(K) > self.max_form:
                        continue
                    if self.data.eps is not None and len(J) % 2:
                        N1s = self.data.eps[:, None] * N1 * self.data.eps[None, :]
                    else:
                        N1s = N1
                    core = np.einsum('...ac,...cb,...acb->...ab', N1s, N2, K2)
                    term = self._back(core)
                    key = (u1 + u2, K)
                    out.comps[key] = out.comps.get(key, 0.0) \
                        + s * t * t * term
        if self.max_form >= 3 and len(self.N_eig) > 0:
            out = self._heat_higher(out, t, 3)
        return out

    def _back(self, core):
        return np.einsum('...ij,...jk,...lk->...il', self.evecs, core,
                         self.evecs.conj())

    def _heat_poly(self, t: float) -> UMat:
        """Z0 = 0: the exponential is the terminating nilpotent series."""
        out = UMat.identity(self.base_shape, self.m, self.data.eps)
        term = UMat.identity(self.base_shape, self.m, self.data.eps)
        for j in range(1, self.max_form + 1):
            term = term.mul(self.N, self.max_form).scale(-t / j)
            if not term.comps:
                break
            out = out + term
        return out

    def _heat_higher(self, out: UMat, t: float, order: int) -> UMat:
        """Third-order nilpotent correction by simplex quadrature (rare)."""
        pts, wts = simplex_nodes(order, panels=1, order=4)
        acc = UMat.zero(self.base_shape, self.m, self.data.eps)
        for p, w in zip(pts, wts):
            s = [1.0 - float(np.sum(p))] + [float(x) for x in p]
            term = UMat.from_field(self._heat0(t * s[0]), self.base_shape,
                                   self.data.eps)
            for i in range(order):
                term = term.mul(self.N, self.max_form)
                term = term.mul(UMat.from_field(self._heat0(t * s[i + 1]),
                                                self.base_shape,
                                                self.data.eps), self.max_form)
            acc = acc + term.scale(w)
        return out + acc.scale((-t) ** order)

    def _heat0(self, t: float) -> np.ndarray:
        if self.evals is None:
            arr = np.zeros(self.base_shape + (self.m, self.m), dtype=complex)
            arr[...] = np.eye(self.m)
            return arr
        ex = np.exp(-t * self.evals)
        return np.einsum('...ij,...j,...kj->...ik', self.evecs, ex,
                         self.evecs.conj())


def _chain_insertions(data: ConnectionData, entries, parities):
    """[A, a_i]-insertions: (UMat, extra parity) per slot >= 1.

    For superconnection data the insertion is
    u^{-1/2} [x0, a]_s + partial(a); the u^{-1/2} weight is carried by the
    caller through the chain's own u-power bookkeeping.
    """
    out = []
    for a, p in zip(entries[1:], parities[1:]):
        am = UMat.from_field(a, data.base_shape, data.eps)
        ins = data.partial(am).shift_u(1)  # u^{1/2}-weight relative to x0 part
        if data.x0 is not None:
            ins = ins + data.super_commutator_x0(am)
        out.append(ins)
    return out


def phi_chain(data: ConnectionData, chain, super_trace: bool = False,
              panels: int = 2, order: int = 2, u_max: int = None) -> dict:
    """The simplex-integral morphism applied to a UChain.

    Returns the scalar u-form dictionary {(2 u-power, idx): field} of
    Phi(chain); intertwines b + uB with u d + u^2 (d omega) ^ . exactly.
    For superconnection data the u^{-1/2}-weighted insertions combine
    with the chain's u-powers, and every output power stays >= 0.
    """
    engine = HeatFactorEngine(data)
    nb = data.nb
    out = {}
    for (n, coeff, entries, parities) in chain.terms:
        k = len(entries) - 1
        if data.x0 is None and k > nb:
            continue  # each insertion carries form degree >= 1
        insertions = _chain_insertions(data, entries, parities)
        a0 = UMat.from_field(entries[0], data.base_shape, data.eps)
        pts, wts = simplex_nodes(k, panels=panels, order=order)
        acc = {}
        for p, w in zip(pts, wts):
            t = [1.0 - float(np.sum(p))] + [float(x) for x in p]
            term = a0.mul(engine.heat(t[0]), nb)
            for i in range(k):
                term = term.mul(insertions[i], nb)
                term = term.mul(engine.heat(t[i + 1]), nb)
            tr = term.trace(super_=super_trace)
            for key, v in tr.items():
                acc[key] = acc[key] + w * v if key in acc else w * v
        # chain u-power n, minus k/2 from the u^{-1/2} insertion weights
        shift = 2 * n - k
        for (u2, idx), v in acc.items():
            nk = u2 + shift
            if nk < 0:
                if np.max(np.abs(v)) > 1e-12 * max(1.0, abs(coeff)):
                    raise ValueError("negative u-power survived")
                continue
            key = (nk, idx)
            out[key] = out[key] + coeff * v if key in out else coeff * v
        if u_max is not None:
            out = {kk: vv for kk, vv in out.items() if kk[0] <= 2 * u_max}
    return out


def str_heat_form(data: ConnectionData, u_max: int = None) -> dict:
    """Str exp(-u Theta) as a scalar u-form dictionary (engine convention).

    Calibrating with u -> u/2 pi i gives Str exp(-u theta^{A_{u^-1}}/2 pi i).
    """
    engine = HeatFactorEngine(data)
    e = engine.heat(1.0)
    tr = e.trace(super_=True)
    out = {}
    for (u2, idx), v in tr.items():
        if u2 % 2:
            if np.max(np.abs(v)) > 1e-9:
                raise ValueError("half-integer u-power with nonzero supertrace")
            continue
        if u_max is not None and u2 > 2 * u_max:
            continue
        out[(u2, idx)] = v
    return out


def chain_map_residual(data: ConnectionData, chain, super_trace=False,
                       panels=2, order=2) -> float:
    """| d_twist Phi(c) - Phi((b + uB) c) | in the engine normalization.

    Normalized by the scale of the contributions before cancellation (the
    b- and B-parts separately), so a zero left side does not mask slow
    quadrature convergence of the cancelling right side.
    """
    from .cyclic import connes_B, hochschild_b
    lhs = udict_twisted_d(phi_chain(data, chain, super_trace, panels, order),
                          data.twist3(), data.nb)
    rb = phi_chain(data, hochschild_b(chain), super_trace, panels, order)
    rB = phi_chain(data, connes_B(chain).shift_u(1), super_trace, panels,
                   order)
    diff = udict_add(lhs, udict_scale(udict_add(rb, rB), -1.0))
    scale = max(udict_norm(lhs), udict_norm(rb), udict_norm(rB), 1.0)
    return udict_norm(diff) / scale


# ---- the interpolation homotopy -------------------------------------------


def interpolated_data(data: ConnectionData, s: float) -> ConnectionData:
    """A_{u^-1}(s) = s A_{u^-1} + (1-s) nabla: scales x0 by s."""
    x0 = None if data.x0 is None else s * data.x0
    return ConnectionData(data.base_shape, data.m, data.gamma, data.omega,
                          data.eps, x0)


def homotopy_H(data: ConnectionData, chain, panels: int = 2, order: int = 2,
               s_panels: int = 4) -> dict:
    """The chain homotopy between Phi of the superconnection and of nabla.

    H_k inserts d A_{u^-1}(s)/ds = u^{-1/2} x0 at every intermediate
    position with alternating signs and integrates s over [0, 1]:
    Phi_A - Phi_nabla = d_twist H + H (b + uB).  The overall sign of the
    alternating weights is fixed by that identity (verified order by
    order), placing (-1)^{m+1} on the m-th insertion slot.
    """
    if data.x0 is None:
        return {}
    nb = data.nb
    out = {}
    s_nodes, s_wts = _gl_nodes(s_panels, order=2)
    for s, sw in zip(s_nodes, s_wts):
        data_s = interpolated_data(data, float(s))
        engine = HeatFactorEngine(data_s)
        xdot = data.x0_umat()  # d/ds of the interpolation
        for (n, coeff, entries, parities) in chain.terms:
            k = len(entries) - 1
            insertions = _chain_insertions(data_s, entries, parities)
            a0 = UMat.from_field(entries[0], data.base_shape, data.eps)
            pts, wts = simplex_nodes(k + 1, panels=panels, order=order)
            acc = {}
            for p, w in zip(pts, wts):
                t = [1.0 - float(np.sum(p))] + [float(x) for x in p]
                for mpos in range(k + 1):
                    term = a0.mul(engine.heat(t[0]), nb)
                    for i in range(mpos):
                        term = term.mul(insertions[i], nb)
                        term = term.mul(engine.heat(t[i + 1]), nb)
                    term = term.mul(xdot, nb)
                    term = term.mul(engine.heat(t[mpos + 1]), nb)
                    for i in range(mpos, k):
                        term = term.mul(insertions[i], nb)
                        term = term.mul(engine.heat(t[i + 2]), nb)
                    sign = (-1.0) ** (mpos + 1)
                    tr = term.trace(super_=True)
                    for key, v in tr.items():
                        val = sign * w * v
                        acc[key] = acc[key] + val if key in acc else val
            shift = 2 * n - k - 1  # k insertions plus the x0-slot
            for (u2, idx), v in acc.items():
                nk = u2 + shift
                if nk < 0:
                    if np.max(np.abs(v)) > 1e-10 * max(1.0, abs(coeff)):
                        raise ValueError("negative u-power survived")
                    continue
                key = (nk, idx)
                val = sw * coeff * v
                out[key] = out[key] + val if key in out else val
    return out


def homotopy_residual(data: ConnectionData, chain, panels=2, order=2,
                      s_panels=4) -> float:
    """| Phi_A - Phi_nabla - d_twist H - H (b + uB) | (engine convention)."""
    from .cyclic import boundary
    plain = ConnectionData(data.base_shape, data.m, data.gamma, data.omega,
                           data.eps, None)
    lhs = udict_add(
        phi_chain(data, chain, True, panels, order),
        udict_scale(phi_chain(plain, chain, True, panels, order), -1.0))
    H1 = udict_twisted_d(homotopy_H(data, chain, panels, order, s_panels),
                         data.twist3(), data.nb)
    H2 = homotopy_H(data, boundary(chain), panels, order, s_panels)
    rhs = udict_add(H1, H2)
    diff = udict_add(lhs, udict_scale(rhs, -1.0))
    scale = max(udict_norm(lhs), udict_norm(H1), udict_norm(H2), 1.0)
    return udict_norm(diff) / scale
