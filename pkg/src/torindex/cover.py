"""Box covers of tori and a grid calculus with exact stored differentials.

Everything the descent constructions need (bumps, trig seeds, their
products) has a closed-form exterior derivative, so grid objects carry
their derivative values along.  Residual identities then hold to floating
point, independent of grid resolution; the grid only has to witness them.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

from .forms import FourierForm, TorusDomain

TWO_PI = 2.0 * np.pi


class Grid:
    """Uniform periodic grid on T^dim with per-axis sizes."""

    def __init__(self, sizes):
        self.sizes = tuple(int(s) for s in sizes)
        self.dim = len(self.sizes)

    def axis_coords(self, axis: int) -> np.ndarray:
        n = self.sizes[axis]
        x = np.arange(n) / n
        shape = [1] * self.dim
        shape[axis] = n
        return x.reshape(shape)

    def shape(self):
        return self.sizes

    def cell_volume(self) -> float:
        return 1.0 / np.prod(self.sizes)

    def __eq__(self, other):
        return isinstance(other, Grid) and self.sizes == other.sizes

    def __hash__(self):
        return hash(self.sizes)


class ScalarField:
    """Grid scalar with exact gradient values."""

    def __init__(self, grid: Grid, values, grads):
        self.grid = grid
        self.values = np.asarray(values, dtype=complex)
        self.grads = [np.asarray(g, dtype=complex) for g in grads]

    @classmethod
    def constant(cls, grid: Grid, c: complex):
        z = np.zeros(grid.shape(), dtype=complex)
        return cls(grid, z + c, [z.copy() for _ in range(grid.dim)])

    @classmethod
    def trig(cls, grid: Grid, modes):
        """sum_k c_k e^{2 pi i k.x} from a {mode tuple: coeff} dict."""
        vals = np.zeros(grid.shape(), dtype=complex)
        grads = [np.zeros(grid.shape(), dtype=complex) for _ in range(grid.dim)]
        for k, c in modes.items():
            phase = np.zeros(grid.shape(), dtype=float)
            for ax, kj in enumerate(k):
                phase = phase + TWO_PI * kj * grid.axis_coords(ax)
            e = c * np.exp(1j * phase)
            vals = vals + e
            for ax, kj in enumerate(k):
                grads[ax] = grads[ax] + TWO_PI * 1j * kj * e
        return cls(grid, vals, grads)

    def __add__(self, other):
        return ScalarField(self.grid, self.values + other.values,
                           [a + b for a, b in zip(self.grads, other.grads)])

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - other.values,
                           [a - b for a, b in zip(self.grads, other.grads)])

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            return ScalarField(
                self.grid, self.values * other.values,
                [ga * other.values + self.values * gb
                 for ga, gb in zip(self.grads, other.grads)])
        return ScalarField(self.grid, self.values * other,
                           [g * other for g in self.grads])

    __rmul__ = __mul__

    def reciprocal(self):
        inv = 1.0 / self.values
        return ScalarField(self.grid, inv, [-g * inv * inv for g in self.grads])

    def exp(self):
        e = np.exp(self.values)
        return ScalarField(self.grid, e, [g * e for g in self.grads])


def bump_profile(grid: Grid, axis: int, start: float, length: float):
    """cos^2-shaped bump on a periodic interval: values and d/dx values."""
    x = grid.axis_coords(axis)
    xi = np.mod(x - start, 1.0) / length
    inside = (xi > 0.0) & (xi < 1.0)
    vals = np.where(inside, np.sin(np.pi * xi) ** 2, 0.0)
    dvals = np.where(inside, np.pi * np.sin(2.0 * np.pi * xi) / length, 0.0)
    return vals, dvals


class Box:
    """Axis-aligned product of periodic intervals; None means the full axis."""

    def __init__(self, intervals):
        self.intervals = []
        for iv in intervals:
            if iv is None:
                self.intervals.append(None)
            else:
                start, length = float(iv[0]), float(iv[1])
                if not 0 < length <= 1:
                    raise ValueError("interval length must lie in (0, 1]")
                self.intervals.append((start % 1.0, length))

    def mask(self, grid: Grid) -> np.ndarray:
        m = np.ones(grid.shape(), dtype=bool)
        for ax, iv in enumerate(self.intervals):
            if iv is None:
                continue
            start, length = iv
            if length == 1.0:
                continue
            x = grid.axis_coords(ax)
            m = m & (np.mod(x - start, 1.0) < length)
        return m

    def bump(self, grid: Grid) -> ScalarField:
        vals = np.ones(grid.shape(), dtype=float)
        dvals = [np.zeros(grid.shape(), dtype=float) for _ in range(grid.dim)]
        for ax, iv in enumerate(self.intervals):
            if iv is None or iv[1] == 1.0:
                continue
            b, db = bump_profile(grid, ax, iv[0], iv[1])
            dvals = [dvals[a2] * b + (vals * db if a2 == ax else 0.0)
                     for a2 in range(grid.dim)]
            vals = vals * b
        return ScalarField(grid, vals, dvals)


class Cover:
    """Open box cover of a torus with a cos^2 partition of unity."""

    def __init__(self, domain_dim: int, boxes, grid_sizes):
        self.dim = domain_dim
        self.boxes = list(boxes)
        for b in self.boxes:
            if len(b.intervals) != domain_dim:
                raise ValueError("box dimension does not match the domain")
        self.grid = Grid(grid_sizes)
        if self.grid.dim != domain_dim:
            raise ValueError("grid dimension does not match the domain")
        self.masks = [b.mask(self.grid) for b in self.boxes]
        bumps = [b.bump(self.grid) for b in self.boxes]
        total = bumps[0]
        for b in bumps[1:]:
            total = total + b
        if np.min(np.abs(total.values)) < 1e-12:
            raise ValueError("boxes do not cover the torus")
        inv = total.reciprocal()
        self.partition = [b * inv for b in bumps]
        self._bumps = bumps

    @property
    def n_charts(self) -> int:
        return len(self.boxes)

    def overlap_mask(self, alphas) -> np.ndarray:
        m = np.ones(self.grid.shape(), dtype=bool)
        for a in alphas:
            m = m & self.masks[a]
        return m

    def nonempty(self, alphas) -> bool:
        return bool(np.any(self.overlap_mask(alphas)))

    def pairs(self):
        return [p for p in combinations(range(self.n_charts), 2)
                if self.nonempty(p)]

    def triples(self):
        return [t for t in combinations(range(self.n_charts), 3)
                if self.nonempty(t)]

    def quadruples(self):
        return [q for q in combinations(range(self.n_charts), 4)
                if self.nonempty(q)]

    def partition_residual(self) -> float:
        total = np.zeros(self.grid.shape(), dtype=complex)
        for rho in self.partition:
            total = total + rho.values
        return float(np.max(np.abs(total - 1.0)))

    def repartition(self, power: int = 2):
        """Alternative partition of unity subordinate to the same boxes."""
        bumps = []
        for b in self._bumps:
            p = b
            for _ in range(power - 1):
                p = p * b
            bumps.append(p)
        total = bumps[0]
        for b in bumps[1:]:
            total = total + b
        inv = total.reciprocal()
        return [b * inv for b in bumps]

    def support_check(self) -> bool:
        for rho, mask in zip(self.partition, self.masks):
            if np.any(np.abs(rho.values[~mask]) > 0):
                return False
        return True

    @classmethod
    def standard(cls, dim: int, arcs_per_axis: int = 3, arc_length: float = 0.45,
                 grid_size: int = 48, split_axes=None):
        """Cover by translated arcs along the chosen axes (others full)."""
        axes = range(dim) if split_axes is None else split_axes
        per_axis = []
        for ax in range(dim):
            if ax in axes:
                per_axis.append([(i / arcs_per_axis, arc_length)
                                 for i in range(arcs_per_axis)])
            else:
                per_axis.append([None])
        boxes = []
        idx = [0] * dim

        def rec(ax, chosen):
            if ax == dim:
                boxes.append(Box(chosen))
                return
            for iv in per_axis[ax]:
                rec(ax + 1, chosen + [iv])

        rec(0, [])
        return cls(dim, boxes, (grid_size,) * dim)

    @classmethod
    def single_chart(cls, dim: int, grid_size: int = 32):
        return cls(dim, [Box([None] * dim)], (grid_size,) * dim)


class DForm:
    """Grid differential form carrying exact derivative values.

    comps / dcomps map strictly increasing index tuples to complex arrays;
    dcomps holds the components of the exterior derivative.  mask = None
    means globally defined.
    """

    def __init__(self, grid: Grid, degree: int, comps=None, dcomps=None,
                 mask=None):
        self.grid = grid
        self.degree = degree
        self.comps = dict(comps) if comps else {}
        self.dcomps = dict(dcomps) if dcomps else {}
        self.mask = mask

    # ---- constructors ---------------------------------------------------

    @classmethod
    def zero(cls, grid: Grid, degree: int, mask=None):
        return cls(grid, degree, mask=mask)

    @classmethod
    def from_scalar(cls, f: ScalarField, mask=None):
        comps = {(): f.values.copy()}
        dcomps = {(ax,): f.grads[ax].copy() for ax in range(f.grid.dim)}
        return cls(f.grid, 0, comps, dcomps, mask)

    @classmethod
    def d_scalar(cls, f: ScalarField, mask=None):
        comps = {(ax,): f.grads[ax].copy() for ax in range(f.grid.dim)}
        return cls(f.grid, 1, comps, {}, mask)

    def copy(self):
        return DForm(self.grid, self.degree,
                     {k: v.copy() for k, v in self.comps.items()},
                     {k: v.copy() for k, v in self.dcomps.items()},
                     None if self.mask is None else self.mask.copy())

    # ---- mask plumbing ----------------------------------------------------

    @staticmethod
    def _join_masks(a, b):
        if a is None:
            return b
        if b is None:
            return a
        return a & b

    def restrict(self, mask):
        out = self.copy()
        out.mask = self._join_masks(self.mask, mask)
        return out

    def _zeroed_outside(self, arr):
        if self.mask is None:
            return arr
        return np.where(self.mask, arr, 0.0)

    # ---- algebra ----------------------------------------------------------

    def __add__(self, other):
        if self.grid != other.grid or self.degree != other.degree:
            raise ValueError("incompatible grid forms")
        mask = self._join_masks(self.mask, other.mask)
        comps = {k: v.copy() for k, v in self.comps.items()}
        for k, v in other.comps.items():
            comps[k] = comps[k] + v if k in comps else v.copy()
        dcomps = {k: v.copy() for k, v in self.dcomps.items()}
        for k, v in other.dcomps.items():
            dcomps[k] = dcomps[k] + v if k in dcomps else v.copy()
        return DForm(self.grid, self.degree, comps, dcomps, mask)

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, c: complex):
        return DForm(self.grid, self.degree,
                     {k: c * v for k, v in self.comps.items()},
                     {k: c * v for k, v in self.dcomps.items()}, self.mask)

    def d(self):
        """Exterior derivative; d of the stored derivative is zero."""
        return DForm(self.grid, self.degree + 1,
                     {k: v.copy() for k, v in self.dcomps.items()},
                     {}, self.mask)

    def wedge(self, other):
        from .forms import _merge_sign
        if self.grid != other.grid:
            raise ValueError("incompatible grids")
        deg = self.degree + other.degree
        mask = self._join_masks(self.mask, other.mask)
        if deg > self.grid.dim:
            return DForm(self.grid, self.grid.dim, mask=mask)
        comps = {}

        def acc(target, K, arr):
            if K in target:
                target[K] = target[K] + arr
            else:
                target[K] = arr

        for I, a in self.comps.items():
            for J, b in other.comps.items():
                s, K = _merge_sign(I, J)
                if s is None:
                    continue
                acc(comps, K, s * (a * b))
        # Leibniz: d(a ^ b) = da ^ b + (-1)^{deg a} a ^ db
        dcomps = {}
        sgn = (-1.0) ** self.degree
        if deg + 1 <= self.grid.dim:
            for I, a in self.dcomps.items():
                for J, b in other.comps.items():
                    s, K = _merge_sign(I, J)
                    if s is None:
                        continue
                    acc(dcomps, K, s * (a * b))
            for I, a in self.comps.items():
                for J, b in other.dcomps.items():
                    s, K = _merge_sign(I, J)
                    if s is None:
                        continue
                    acc(dcomps, K, sgn * s * (a * b))
        return DForm(self.grid, deg, comps, dcomps, mask)

    def mul_scalar_field(self, f: ScalarField, mask=None):
        """f * omega with the exact Leibniz derivative."""
        out = DForm.from_scalar(f).wedge(self)
        if mask is not None:
            out.mask = self._join_masks(out.mask, mask)
        return out

    def norm(self) -> float:
        m = 0.0
        for arr in self.comps.values():
            a = self._zeroed_outside(arr)
            if a.size:
                m = max(m, float(np.max(np.abs(a))))
        return m

    def d_norm(self) -> float:
        m = 0.0
        for arr in self.dcomps.values():
            a = self._zeroed_outside(arr)
            if a.size:
                m = max(m, float(np.max(np.abs(a))))
        return m

    def component(self, idx) -> np.ndarray:
        idx = tuple(idx)
        if idx in self.comps:
            return self.comps[idx]
        return np.zeros(self.grid.shape(), dtype=complex)

    def integrate(self) -> complex:
        """Trapezoid integral of the top component over the torus."""
        if self.degree != self.grid.dim:
            raise ValueError("integrate needs a top-degree form")
        if self.mask is not None:
            raise ValueError("integrate needs a globally defined form")
        idx = tuple(range(self.grid.dim))
        return complex(self.component(idx).sum() * self.grid.cell_volume())

    def to_fourier(self, cutoff: int, tail_tol: float = 1e-9):
        """Band-limit to a FourierForm, verifying the discarded tail."""
        if self.mask is not None:
            raise ValueError("band-limiting needs a globally defined form")
        dom = TorusDomain(self.grid.dim, cutoff)
        N = cutoff
        comps = {}
        for I, arr in self.comps.items():
            spec = np.fft.fftn(arr) / arr.size
            total = float(np.sum(np.abs(spec) ** 2))
            kept = np.zeros(dom.mode_shape(), dtype=complex)
            it = np.ndindex(*dom.mode_shape())
            kept_sq = 0.0
            for mi in it:
                k = tuple(m - N for m in mi)
                src = tuple(kj % self.grid.sizes[ax]
                            for ax, kj in enumerate(k))
                kept[mi] = spec[src]
                kept_sq += abs(spec[src]) ** 2
            if total > 0 and np.sqrt(max(total - kept_sq, 0.0) / total) > tail_tol:
                raise ValueError("form is not band-limited within the cutoff")
            comps[I] = kept
        return FourierForm(dom, self.degree, comps)


def weighted_chart_sum(cover: Cover, pieces, degree: int,
                       target_mask=None) -> DForm:
    """Sum rho_gamma * piece_gamma over the target region.

    pieces maps chart index -> DForm defined at least on
    supp rho_gamma  intersect  target; the result is restricted to the
    target (None = the whole torus).
    """
    grid = cover.grid
    out = DForm.zero(grid, degree)
    ambient = np.ones(grid.shape(), dtype=bool) if target_mask is None \
        else target_mask
    for gamma, piece in pieces.items():
        rho = cover.partition[gamma]
        support = (np.abs(rho.values) > 0) & ambient
        if piece.mask is not None and np.any(support & ~piece.mask):
            raise ValueError(
                f"chart {gamma}: partition support leaves the piece's domain")
        term = piece.mul_scalar_field(rho)
        contrib = DForm(grid, degree,
                        {k: np.where(support, v, 0.0)
                         for k, v in term.comps.items()},
                        {k: np.where(support, v, 0.0)
                         for k, v in term.dcomps.items()})
        out = out + contrib
    if target_mask is not None:
        out.mask = target_mask
    return out
