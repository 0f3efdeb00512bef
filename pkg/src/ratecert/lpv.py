"""Parameter-varying state-space plants, scheduling-parameter domains, grids.

A matrix-valued function of the scheduling parameter is represented exactly as
a finite linear combination ``F(theta) = sum_i phi_i(theta) * F_i`` of scalar
basis functions with constant matrix coefficients (:class:`MatrixFn`).  Sums,
products and block compositions stay in this class, so every plant built here
can be evaluated exactly at arbitrary parameter values, scalar or batched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "BasisFn",
    "ONE",
    "coord",
    "MatrixFn",
    "ParamDomain",
    "ConsistentGrid",
    "build_consistent_grid",
    "LpvSystem",
    "eval_system",
    "FixedPointReport",
    "check_fixed_point",
    "check_causality",
]


# ---------------------------------------------------------------------------
# Scalar basis functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BasisFn:
    """Named scalar function of the parameter vector.

    ``fn`` maps arrays of shape ``(..., n_theta)`` to shape ``(...)`` so the
    same object serves pointwise and batched evaluation.
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, theta: np.ndarray) -> np.ndarray:
        return self.fn(np.asarray(theta, dtype=float))

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"BasisFn({self.name})"


ONE = BasisFn("1", lambda th: np.ones(th.shape[:-1]))

_COORDS: dict[int, BasisFn] = {}


def coord(i: int) -> BasisFn:
    """The coordinate function ``theta -> theta[i]`` (cached, shared)."""
    if i not in _COORDS:
        _COORDS[i] = BasisFn(f"theta[{i}]", lambda th, i=i: th[..., i])
    return _COORDS[i]


def _product_basis(f: BasisFn, g: BasisFn) -> BasisFn:
    if f is ONE:
        return g
    if g is ONE:
        return f
    return BasisFn(f"({f.name})*({g.name})", lambda th: f.fn(th) * g.fn(th))


# ---------------------------------------------------------------------------
# Matrix-valued functions of the parameter
# ---------------------------------------------------------------------------

class MatrixFn:
    """Exact linear combination ``sum_i phi_i(theta) * F_i``."""

    __slots__ = ("basis", "coeffs", "shape")

    def __init__(self, basis: Sequence[BasisFn], coeffs: Sequence[np.ndarray]):
        if len(basis) != len(coeffs):
            raise ValueError("basis and coeffs must have equal length")
        merged: dict[int, tuple[BasisFn, np.ndarray]] = {}
        shape = None
        for b, F in zip(basis, coeffs):
            F = np.atleast_2d(np.asarray(F, dtype=float))
            if shape is None:
                shape = F.shape
            elif F.shape != shape:
                raise ValueError("coefficient shapes disagree")
            key = id(b)
            if key in merged:
                merged[key] = (b, merged[key][1] + F)
            else:
                merged[key] = (b, F)
        if shape is None:
            raise ValueError("empty MatrixFn; use MatrixFn.zeros")
        self.basis = tuple(b for b, _ in merged.values())
        self.coeffs = tuple(F for _, F in merged.values())
        self.shape = shape

    # -- constructors ------------------------------------------------------

    @classmethod
    def constant(cls, F: np.ndarray) -> "MatrixFn":
        return cls([ONE], [F])

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "MatrixFn":
        return cls([ONE], [np.zeros((rows, cols))])

    @classmethod
    def eye(cls, n: int) -> "MatrixFn":
        return cls([ONE], [np.eye(n)])

    @classmethod
    def affine(cls, F0: np.ndarray, F1: np.ndarray) -> "MatrixFn":
        """``F0 + theta[0] * F1`` for a scalar parameter."""
        return cls([ONE, coord(0)], [F0, F1])

    @classmethod
    def from_scalar(cls, fn: Callable[[np.ndarray], np.ndarray], name: str) -> "MatrixFn":
        """Wrap a scalar function of theta as a 1x1 MatrixFn."""
        return cls([BasisFn(name, fn)], [np.ones((1, 1))])

    # -- evaluation --------------------------------------------------------

    def __call__(self, theta) -> np.ndarray:
        th = np.atleast_1d(np.asarray(theta, dtype=float))
        out = np.zeros(self.shape)
        for b, F in zip(self.basis, self.coeffs):
            out += float(b(th)) * F
        return out

    def eval_batch(self, thetas: np.ndarray) -> np.ndarray:
        """Evaluate at a batch of parameters, shape (N, n_theta) -> (N, r, c)."""
        thetas = np.asarray(thetas, dtype=float)
        out = np.zeros((thetas.shape[0],) + self.shape)
        for b, F in zip(self.basis, self.coeffs):
            out += b(thetas)[:, None, None] * F
        return out

    # -- exact algebra -----------------------------------------------------

    def __add__(self, other: "MatrixFn") -> "MatrixFn":
        return MatrixFn(self.basis + other.basis, self.coeffs + other.coeffs)

    def __sub__(self, other: "MatrixFn") -> "MatrixFn":
        return self + other.scale(-1.0)

    def scale(self, a: float) -> "MatrixFn":
        return MatrixFn(self.basis, tuple(a * F for F in self.coeffs))

    def __matmul__(self, other: "MatrixFn") -> "MatrixFn":
        basis, coeffs = [], []
        for bf, F in zip(self.basis, self.coeffs):
            for bg, G in zip(other.basis, other.coeffs):
                basis.append(_product_basis(bf, bg))
                coeffs.append(F @ G)
        return MatrixFn(basis, coeffs)

    @staticmethod
    def block(rows: Sequence[Sequence["MatrixFn | None"]]) -> "MatrixFn":
        """Block composition; ``None`` blocks are zero (sizes inferred)."""
        row_h = [
            next(b.shape[0] for b in row if b is not None) for row in rows
        ]
        col_w = [
            next(row[j].shape[1] for row in rows if row[j] is not None)
            for j in range(len(rows[0]))
        ]
        total = (sum(row_h), sum(col_w))
        basis, coeffs = [], []
        r0 = 0
        for row, h in zip(rows, row_h):
            c0 = 0
            for blk, w in zip(row, col_w):
                if blk is not None:
                    if blk.shape != (h, w):
                        raise ValueError("inconsistent block shapes")
                    for b, F in zip(blk.basis, blk.coeffs):
                        big = np.zeros(total)
                        big[r0 : r0 + h, c0 : c0 + w] = F
                        basis.append(b)
                        coeffs.append(big)
                c0 += w
            r0 += h
        return MatrixFn(basis, coeffs)

    @staticmethod
    def hstack(blocks: Sequence["MatrixFn"]) -> "MatrixFn":
        return MatrixFn.block([list(blocks)])

    @staticmethod
    def vstack(blocks: Sequence["MatrixFn"]) -> "MatrixFn":
        return MatrixFn.block([[b] for b in blocks])

    def row(self, i: int) -> "MatrixFn":
        """Extract one row as a 1 x cols MatrixFn."""
        return MatrixFn(self.basis, tuple(F[i : i + 1, :] for F in self.coeffs))

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        names = ", ".join(b.name for b in self.basis)
        return f"MatrixFn{self.shape}[{names}]"


# ---------------------------------------------------------------------------
# Parameter domain and the consistent grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamDomain:
    """Box domain for theta plus bounds on the per-step increment.

    ``delta_lo <= theta_{k+1} - theta_k <= delta_hi`` with both endpoints of
    each step required to lie in ``[lo, hi]``.
    """

    lo: np.ndarray
    hi: np.ndarray
    delta_lo: np.ndarray
    delta_hi: np.ndarray

    def __post_init__(self) -> None:
        for name in ("lo", "hi", "delta_lo", "delta_hi"):
            object.__setattr__(
                self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            )
        if not (self.lo <= self.hi).all():
            raise ValueError("domain requires lo <= hi")
        if not (self.delta_lo <= self.delta_hi).all():
            raise ValueError("domain requires delta_lo <= delta_hi")

    @property
    def n_theta(self) -> int:
        return self.lo.size

    @property
    def is_static(self) -> bool:
        return bool((self.delta_lo == 0).all() and (self.delta_hi == 0).all())

    def contains(self, theta: np.ndarray, tol: float = 1e-12) -> bool:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return bool(
            (theta >= self.lo - tol).all() and (theta <= self.hi + tol).all()
        )

    def admissible_delta_interval(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Componentwise interval of increments keeping ``theta + delta`` in the box."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return (
            np.maximum(self.delta_lo, self.lo - theta),
            np.minimum(self.delta_hi, self.hi - theta),
        )


@dataclass(frozen=True)
class ConsistentGrid:
    """Gridded admissible (theta, delta) pairs over a :class:`ParamDomain`."""

    domain: ParamDomain
    nodes: tuple[tuple[np.ndarray, tuple[np.ndarray, ...]], ...]

    @property
    def thetas(self) -> list[np.ndarray]:
        return [th for th, _ in self.nodes]

    def iter_pairs(self):
        for th, deltas in self.nodes:
            for dl in deltas:
                yield th, dl

    @property
    def n_pairs(self) -> int:
        return sum(len(d) for _, d in self.nodes)


def build_consistent_grid(
    domain: ParamDomain, n_nodes: int = 11, n_delta: int = 2
) -> ConsistentGrid:
    """Grid theta over the box and attach admissible increment samples.

    ``n_delta=2`` keeps only the clipped increment-interval endpoints (exact
    for constraints affine in the increment); ``n_delta=3`` adds the midpoint.
    """
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    axes = [
        np.linspace(domain.lo[i], domain.hi[i], n_nodes)
        if domain.hi[i] > domain.lo[i]
        else np.array([domain.lo[i]])
        for i in range(domain.n_theta)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    thetas = np.stack([m.ravel() for m in mesh], axis=-1)

    nodes = []
    for th in thetas:
        d_lo, d_hi = domain.admissible_delta_interval(th)
        if (d_lo > d_hi + 1e-15).any():
            nodes.append((th, ()))
            continue
        per_coord = []
        for i in range(domain.n_theta):
            pts = [d_lo[i], d_hi[i]]
            if n_delta >= 3:
                pts.insert(1, 0.5 * (d_lo[i] + d_hi[i]))
            per_coord.append(sorted(set(pts)))
        combos = np.meshgrid(*per_coord, indexing="ij")
        deltas = np.stack([c.ravel() for c in combos], axis=-1)
        nodes.append((th, tuple(np.array(d) for d in deltas)))
    return ConsistentGrid(domain, tuple(nodes))


# ---------------------------------------------------------------------------
# Parameter-varying plants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LpvSystem:
    """Discrete-time parameter-varying plant in feedback with p gradient and
    q set-normal channels:

        xi_{k+1} = A(theta_k) xi_k + B(theta_k) u_k
        y_k      = C(theta_k) xi_k + D(theta_k) u_k

    The per-coordinate problem dimension d enters by Kronecker structure; the
    stored matrices are the d=1 reductions.
    """

    A: MatrixFn
    B: MatrixFn
    C: MatrixFn
    D: MatrixFn
    n_xi: int
    p: int
    q: int
    d: int = 1

    def __post_init__(self) -> None:
        n, w = self.n_xi, self.p + self.q
        if self.A.shape != (n, n):
            raise ValueError(f"A must be {n}x{n}, got {self.A.shape}")
        if self.B.shape != (n, w):
            raise ValueError(f"B must be {n}x{w}, got {self.B.shape}")
        if self.C.shape != (w, n):
            raise ValueError(f"C must be {w}x{n}, got {self.C.shape}")
        if self.D.shape != (w, w):
            raise ValueError(f"D must be {w}x{w}, got {self.D.shape}")
        if self.p < 0 or self.q < 0 or self.p + self.q < 1:
            raise ValueError("need at least one feedback channel")

    @property
    def n_channels(self) -> int:
        return self.p + self.q


def eval_system(sys: LpvSystem, theta) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Evaluate (A, B, C, D) at one parameter value."""
    return sys.A(theta), sys.B(theta), sys.C(theta), sys.D(theta)


def check_causality(sys: LpvSystem, thetas: Sequence[np.ndarray]) -> bool:
    """Gradient rows of D must be strictly lower triangular; set-normal rows
    lower triangular (a negative diagonal entry is resolvable in closed form)."""
    for th in thetas:
        D = sys.D(th)
        for i in range(sys.p):
            if np.any(np.abs(D[i, i:]) > 0):
                return False
        for i in range(sys.p, sys.p + sys.q):
            if np.any(np.abs(D[i, i + 1 :]) > 0) or D[i, i] > 0:
                return False
    return True


# ---------------------------------------------------------------------------
# Fixed-point structure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FixedPointReport:
    """Existence/uniformity of the optimizer-to-state map xi* = U x*."""

    ok: bool
    U: np.ndarray
    residual_A: float
    residual_C: float
    kernel_ok: bool


def check_fixed_point(sys: LpvSystem, grid: ConsistentGrid, tol: float = 1e-9) -> FixedPointReport:
    """Solve for a parameter-independent U with (I - A(theta)) U = 0 and
    C(theta) U = 1 at every grid node, and check the channel-kernel structure
    required for the feedback interconnection to share that fixed point."""
    n, w = sys.n_xi, sys.n_channels
    blocks, targets = [], []
    for th in grid.thetas:
        A, C = sys.A(th), sys.C(th)
        blocks.append(np.eye(n) - A)
        targets.append(np.zeros((n, 1)))
        blocks.append(C)
        targets.append(np.ones((w, 1)))
    M = np.vstack(blocks)
    T = np.vstack(targets)
    U, *_ = np.linalg.lstsq(M, T, rcond=None)

    res_A = res_C = 0.0
    for th in grid.thetas:
        A, C = sys.A(th), sys.C(th)
        res_A = max(res_A, float(np.abs((np.eye(n) - A) @ U).max()))
        res_C = max(res_C, float(np.abs(C @ U - 1.0).max()))

    kernel_ok = True
    if sys.q >= 1:
        v = np.concatenate([np.ones(sys.p), -np.ones(sys.q)])
        for th in grid.thetas:
            B, D = sys.B(th), sys.D(th)
            for Mx in (B, D):
                if np.abs(Mx @ v).max() > tol:
                    kernel_ok = False
                sv = np.linalg.svd(Mx, compute_uv=False)
                rank = int((sv > tol * max(1.0, sv[0])).sum())
                if rank != w - 1:
                    kernel_ok = False

    ok = res_A <= tol and res_C <= tol and kernel_ok
    return FixedPointReport(ok, U, res_A, res_C, kernel_ok)
