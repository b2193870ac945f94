"""Exact band-limited function algebra on the torus and the 2-sphere.

Torus fields are trigonometric polynomials stored as lattice modes with
Hermitian coefficients; all derivatives and resolvents act mode by mode.
Sphere fields are combinations of spherical harmonics realized as harmonic
homogeneous polynomials in ambient coordinates, so tangential gradients and
Hessians come from exact polynomial differentiation plus the second
fundamental form, with no special-function code.

Laplacians carry the positive-operator sign everywhere (eigenvalue ``|k|^2``
on the torus, ``l (l + 1)`` on the unit sphere).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from .geometry import ScalarField, Sphere, Torus

__all__ = [
    "TrigPolynomial",
    "SphericalPolynomial",
    "SphereHarmonicTables",
    "random_trig_polynomials",
    "random_spherical_polynomials",
    "harmonic_basis",
    "torus_bochner_residual",
    "sphere_bochner_residual",
]


# ---------------------------------------------------------------------------
# torus: lattice-mode fields

@dataclass
class TrigPolynomial:
    """Real trigonometric polynomial sum_k c_k e^{i k.x}, c_{-k} = conj(c_k)."""

    dim: int
    modes: np.ndarray   # (M, d) int
    coeffs: np.ndarray  # (M,) complex

    def __post_init__(self):
        self.modes = np.asarray(self.modes, dtype=int)
        self.coeffs = np.asarray(self.coeffs, dtype=complex)

    # -- pointwise evaluation ------------------------------------------------
    def _phase(self, X: np.ndarray) -> np.ndarray:
        return np.exp(1j * (X @ self.modes.T))  # (n, M)

    def values(self, X: np.ndarray) -> np.ndarray:
        return (self._phase(X) @ self.coeffs).real

    def grad_values(self, X: np.ndarray) -> np.ndarray:
        ph = self._phase(X)
        return (ph @ (1j * self.modes * self.coeffs[:, None])).real

    def hess_values(self, X: np.ndarray) -> np.ndarray:
        ph = self._phase(X)
        kk = -self.modes[:, :, None] * self.modes[:, None, :]
        return np.einsum("nm,mij->nij", ph, kk * self.coeffs[:, None, None]).real

    def hess_hs_values(self, X: np.ndarray) -> np.ndarray:
        H = self.hess_values(X)
        return np.sqrt(np.sum(H * H, axis=(1, 2)))

    def lap_values(self, X: np.ndarray) -> np.ndarray:
        lam = np.sum(self.modes ** 2, axis=1)
        return (self._phase(X) @ (lam * self.coeffs)).real

    # -- spectral operators ----------------------------------------------------
    def eigenvalues(self) -> np.ndarray:
        return np.sum(self.modes ** 2, axis=1).astype(float)

    def apply_spectral(self, factors: np.ndarray) -> "TrigPolynomial":
        return TrigPolynomial(self.dim, self.modes, self.coeffs * factors)

    def laplacian_poly(self) -> "TrigPolynomial":
        return self.apply_spectral(self.eigenvalues())

    def resolvent(self, sigma: float) -> "TrigPolynomial":
        return self.apply_spectral(1.0 / (self.eigenvalues() + sigma))

    def l2_parseval(self, power: float = 0.0) -> float:
        """L2 norm of (Delta^power u) from the coefficients."""
        lam = self.eigenvalues()
        w = np.abs(self.coeffs) ** 2 * lam ** (2 * power)
        return math.sqrt((2.0 * math.pi) ** self.dim * float(np.sum(w)))

    def as_field(self, name: str = "trig-poly") -> ScalarField:
        def he(X, F):
            return self.hess_values(X)  # frames are the identity on the torus
        return ScalarField(name, self.values, self.grad_values, he, self.lap_values)


def _full_lattice(degree: int, dim: int) -> np.ndarray:
    ax = np.arange(-degree, degree + 1)
    grids = np.meshgrid(*([ax] * dim), indexing="ij")
    K = np.stack([g.ravel() for g in grids], axis=1)
    return K[np.any(K != 0, axis=1)]


def random_trig_polynomials(m: Torus, degree: int, count: int,
                            rng: np.random.Generator) -> List[TrigPolynomial]:
    """Random real band-limited fields, |k|_inf <= degree, zero mean."""
    K = _full_lattice(degree, m.dim)
    # pick one representative per +-k pair for independent draws
    rep = K[np.lexsort(K.T[::-1])]
    rep = rep[: len(rep) // 2]
    out = []
    for _ in range(count):
        c_half = rng.standard_normal(len(rep)) + 1j * rng.standard_normal(len(rep))
        modes = np.concatenate([rep, -rep], axis=0)
        coeffs = np.concatenate([c_half, np.conj(c_half)])
        out.append(TrigPolynomial(m.dim, modes, coeffs / math.sqrt(len(rep))))
    return out


def torus_bochner_residual(u: TrigPolynomial, grid_res: int = 64) -> float:
    """Max-node residual of the curvature-free Bochner identity.

    -(1/2) Lap |grad u|^2 = |Hess u|_HS^2 - <grad Lap u, grad u>, with the
    positive Laplacian applied to the band-limited product via FFT.
    """
    d = u.dim
    if d != 2:
        raise ValueError("FFT residual implemented for the 2-torus")
    n = grid_res
    ax = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    XX, YY = np.meshgrid(ax, ax, indexing="ij")
    X = np.stack([XX.ravel(), YY.ravel()], axis=1)
    G = u.grad_values(X)
    gsq = np.sum(G * G, axis=1).reshape(n, n)
    freqs = np.fft.fftfreq(n, d=1.0 / n)
    k2 = freqs[:, None] ** 2 + freqs[None, :] ** 2
    lap_gsq = np.fft.ifft2(np.fft.fft2(gsq) * k2).real.ravel()  # positive sign
    H = u.hess_values(X)
    hs2 = np.sum(H * H, axis=(1, 2))
    lap_u = u.laplacian_poly()
    cross = np.sum(lap_u.grad_values(X) * G, axis=1)
    res = -0.5 * lap_gsq - hs2 + cross
    return float(np.max(np.abs(res)))


# ---------------------------------------------------------------------------
# sphere: harmonic polynomial fields

@dataclass
class Poly3:
    """Polynomial in three ambient variables as monomial exponent rows."""

    exps: np.ndarray    # (M, 3) int
    coeffs: np.ndarray  # (M,)

    @staticmethod
    def zero() -> "Poly3":
        return Poly3(np.zeros((0, 3), dtype=int), np.zeros(0))

    def compact(self) -> "Poly3":
        if len(self.coeffs) == 0:
            return self
        order = np.lexsort(self.exps.T)
        e = self.exps[order]
        c = self.coeffs[order]
        uniq, idx = np.unique(e, axis=0, return_inverse=True)
        merged = np.zeros(len(uniq))
        np.add.at(merged, idx, c)
        keep = np.abs(merged) > 1e-15 * max(1.0, float(np.max(np.abs(merged), initial=0.0)))
        return Poly3(uniq[keep], merged[keep])

    def values(self, X: np.ndarray) -> np.ndarray:
        if len(self.coeffs) == 0:
            return np.zeros(X.shape[0])
        powers = X[:, None, :] ** self.exps[None, :, :]
        return np.prod(powers, axis=2) @ self.coeffs

    def diff(self, axis: int) -> "Poly3":
        mask = self.exps[:, axis] > 0
        e = self.exps[mask].copy()
        c = self.coeffs[mask] * e[:, axis]
        e[:, axis] -= 1
        return Poly3(e, c).compact()

    def lap_ambient(self) -> "Poly3":
        out = Poly3.zero()
        for ax in range(3):
            out = out + self.diff(ax).diff(ax)
        return out.compact()

    def __add__(self, other: "Poly3") -> "Poly3":
        return Poly3(np.concatenate([self.exps, other.exps]),
                     np.concatenate([self.coeffs, other.coeffs])).compact()

    def __mul__(self, other):
        if np.isscalar(other):
            return Poly3(self.exps, self.coeffs * other)
        e = (self.exps[:, None, :] + other.exps[None, :, :]).reshape(-1, 3)
        c = (self.coeffs[:, None] * other.coeffs[None, :]).ravel()
        return Poly3(e, c).compact()

    def degrees(self) -> np.ndarray:
        return np.sum(self.exps, axis=1)

    def homogeneous_parts(self) -> Dict[int, "Poly3"]:
        degs = self.degrees()
        return {int(d): Poly3(self.exps[degs == d], self.coeffs[degs == d])
                for d in np.unique(degs)}


def _monomials(degree: int) -> np.ndarray:
    out = []
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            out.append((i, j, degree - i - j))
    return np.asarray(out, dtype=int)


_BASIS_CACHE: Dict[int, List[Poly3]] = {}


def harmonic_basis(ell: int) -> List[Poly3]:
    """Orthonormal (in L2 of the unit sphere) solid harmonics of degree ell.

    Constructed from the nullspace of the ambient Laplacian on homogeneous
    degree-ell polynomials, then orthonormalized with an exact quadrature
    Gram matrix; dimension 2 ell + 1.
    """
    if ell in _BASIS_CACHE:
        return _BASIS_CACHE[ell]
    mono = _monomials(ell)
    nm = len(mono)
    if ell >= 2:
        tgt = _monomials(ell - 2)
        index = {tuple(e): i for i, e in enumerate(tgt)}
        A = np.zeros((len(tgt), nm))
        for col, e in enumerate(mono):
            for ax in range(3):
                if e[ax] >= 2:
                    e2 = e.copy()
                    e2[ax] -= 2
                    A[index[tuple(e2)], col] += e[ax] * (e[ax] - 1)
        _, s, vt = np.linalg.svd(A)
        null_dim = nm - int(np.sum(s > 1e-10 * s[0]))
        basis_vecs = vt[nm - null_dim:]
    else:
        basis_vecs = np.eye(nm)
    polys = [Poly3(mono, v).compact() for v in basis_vecs]
    assert len(polys) == 2 * ell + 1, "harmonic space has dimension 2l + 1"

    from .oracle import quadrature_grid
    grid = quadrature_grid(Sphere(2, 1.0), max(ell + 2, 6))
    V = np.stack([p.values(grid.nodes) for p in polys], axis=1)
    G = V.T @ (grid.weights[:, None] * V)
    w, vec = np.linalg.eigh(G)
    T = vec @ np.diag(1.0 / np.sqrt(w)) @ vec.T
    ortho = []
    for col in range(len(polys)):
        q = Poly3.zero()
        for row in range(len(polys)):
            q = q + polys[row] * T[row, col]
        ortho.append(q.compact())
    _BASIS_CACHE[ell] = ortho
    return ortho


@dataclass
class SphericalPolynomial:
    """Band-limited function on the unit 2-sphere: sum over (l, m) harmonics."""

    terms: List[tuple]  # (ell, coeff vector of length 2 ell + 1)

    def _blocks(self):
        for ell, cvec in self.terms:
            basis = harmonic_basis(ell)
            yield ell, cvec, basis

    def values(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(X.shape[0])
        for ell, cvec, basis in self._blocks():
            for c, p in zip(cvec, basis):
                if c != 0.0:
                    out += c * p.values(X)
        return out

    def grad_values(self, X: np.ndarray) -> np.ndarray:
        """Ambient representation of the tangential gradient at |x| = 1."""
        out = np.zeros_like(X)
        for ell, cvec, basis in self._blocks():
            for c, p in zip(cvec, basis):
                if c == 0.0:
                    continue
                amb = np.stack([p.diff(ax).values(X) for ax in range(3)], axis=1)
                out += c * (amb - ell * p.values(X)[:, None] * X)
        return out

    def hess_values(self, X: np.ndarray, frames: np.ndarray) -> np.ndarray:
        """Frame components of the intrinsic Hessian.

        Hess f(u, v) = D^2 f(u, v) - ell f <u, v> per degree-ell harmonic
        (ambient second derivative plus the second fundamental form).
        """
        n = X.shape[0]
        out = np.zeros((n, 2, 2))
        eye = np.eye(2)
        for ell, cvec, basis in self._blocks():
            for c, p in zip(cvec, basis):
                if c == 0.0:
                    continue
                D2 = np.zeros((n, 3, 3))
                for a in range(3):
                    pa = p.diff(a)
                    for b in range(a, 3):
                        vals = pa.diff(b).values(X)
                        D2[:, a, b] = vals
                        D2[:, b, a] = vals
                Hf = np.einsum("nia,nab,njb->nij", frames, D2, frames)
                out += c * (Hf - ell * p.values(X)[:, None, None] * eye[None])
        return out

    def hess_hs_values(self, X: np.ndarray, frames: np.ndarray) -> np.ndarray:
        H = self.hess_values(X, frames)
        return np.sqrt(np.sum(H * H, axis=(1, 2)))

    def lap_values(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(X.shape[0])
        for ell, cvec, basis in self._blocks():
            lam = ell * (ell + 1)
            for c, p in zip(cvec, basis):
                if c != 0.0:
                    out += lam * c * p.values(X)
        return out

    def apply_spectral(self, fn) -> "SphericalPolynomial":
        return SphericalPolynomial(
            [(ell, cvec * fn(ell * (ell + 1))) for ell, cvec in self.terms])

    def laplacian_poly(self) -> "SphericalPolynomial":
        return self.apply_spectral(lambda lam: lam)

    def resolvent(self, sigma: float) -> "SphericalPolynomial":
        return self.apply_spectral(lambda lam: 1.0 / (lam + sigma))

    def l2_parseval(self, power: float = 0.0) -> float:
        total = 0.0
        for ell, cvec in self.terms:
            lam = ell * (ell + 1)
            total += float(np.sum(np.abs(cvec) ** 2)) * lam ** (2 * power)
        return math.sqrt(total)

    def gradient_poly3(self) -> List[Poly3]:
        """The three ambient components of the tangential gradient as Poly3."""
        x_polys = [Poly3(np.eye(3, dtype=int)[a][None, :], np.ones(1)) for a in range(3)]
        comps = [Poly3.zero(), Poly3.zero(), Poly3.zero()]
        for ell, cvec, basis in self._blocks():
            for c, p in zip(cvec, basis):
                if c == 0.0:
                    continue
                for a in range(3):
                    comps[a] = comps[a] + p.diff(a) * c
                    comps[a] = comps[a] + (x_polys[a] * p) * (-ell * c)
        return [q.compact() for q in comps]

    def as_field(self, name: str = "sphere-poly") -> ScalarField:
        return ScalarField(name, self.values, self.grad_values,
                           self.hess_values, self.lap_values)


def random_spherical_polynomials(m: Sphere, degree: int, count: int,
                                 rng: np.random.Generator) -> List[SphericalPolynomial]:
    if m.dim != 2 or abs(m.radius - 1.0) > 0:
        raise ValueError("spectral sphere fields require the unit 2-sphere")
    out = []
    for _ in range(count):
        terms = []
        norm = math.sqrt(sum(2 * ell + 1 for ell in range(1, degree + 1)))
        for ell in range(1, degree + 1):
            terms.append((ell, rng.standard_normal(2 * ell + 1) / norm))
        out.append(SphericalPolynomial(terms))
    return out


def sphere_lap_of_restriction(q: Poly3, X: np.ndarray) -> np.ndarray:
    """Positive Laplacian on S^2 of the restriction of an ambient polynomial.

    Per homogeneous part of degree m:
    Lap_geo (q_m|) = (Lap_amb q_m)| - m (m + 1) q_m| ; returned with the
    positive sign convention.
    """
    out = np.zeros(X.shape[0])
    for mdeg, part in q.homogeneous_parts().items():
        geo = part.lap_ambient().values(X) - mdeg * (mdeg + 1) * part.values(X)
        out -= geo
    return out


class SphereHarmonicTables:
    """Cached node evaluations of the harmonic basis on a quadrature grid.

    Values, tangential gradients and frame Hessian components are stacked
    over the flattened (l, index-in-level) harmonic order so that band
    limited fields are plain matrix products with their coefficient blocks.
    """

    def __init__(self, grid, m: Sphere, lmax: int, with_derivs: bool = True):
        self.grid = grid
        self.lmax = lmax
        X = grid.nodes
        n = X.shape[0]
        blocks = []
        self.offsets = {}
        self.eigen = []
        pos = 0
        for ell in range(0, lmax + 1):
            basis = harmonic_basis(ell)
            self.offsets[ell] = pos
            pos += len(basis)
            blocks.append((ell, basis))
            self.eigen.extend([ell * (ell + 1)] * len(basis))
        self.size = pos
        self.eigen = np.asarray(self.eigen, dtype=float)
        self.values = np.empty((n, pos))
        if with_derivs:
            frames = grid.frames(m)
            self.grads = np.empty((n, 3, pos))
            self.hesses = np.empty((n, 2, 2, pos))
        else:
            self.grads = None
            self.hesses = None
        eye = np.eye(2)
        for ell, basis in blocks:
            for j, pbasis in enumerate(basis):
                col = self.offsets[ell] + j
                vals = pbasis.values(X)
                self.values[:, col] = vals
                if not with_derivs:
                    continue
                amb = np.stack([pbasis.diff(a).values(X) for a in range(3)], axis=1)
                self.grads[:, :, col] = amb - ell * vals[:, None] * X
                D2 = np.zeros((n, 3, 3))
                for a in range(3):
                    pa = pbasis.diff(a)
                    for b in range(a, 3):
                        vv = pa.diff(b).values(X)
                        D2[:, a, b] = vv
                        D2[:, b, a] = vv
                Hf = np.einsum("nia,nab,njb->nij", frames, D2, frames)
                self.hesses[:, :, :, col] = Hf - ell * vals[:, None, None] * eye[None]

    def coeff_matrix(self, family) -> np.ndarray:
        C = np.zeros((self.size, len(family)))
        for col, u in enumerate(family):
            for ell, cvec in u.terms:
                off = self.offsets[ell]
                C[off:off + len(cvec), col] = cvec
        return C


def sphere_bochner_residual(u: SphericalPolynomial, grid,
                            m: Optional[Sphere] = None) -> float:
    """Max-node residual of the Bochner identity on the unit sphere.

    -(1/2) Lap |grad u|^2 = |Hess u|_HS^2 - <grad Lap u, grad u>
                            + Ric(grad u, grad u)
    with the positive Laplacian; Ric = g on the unit 2-sphere.  The
    Laplacian of |grad u|^2 is taken spectrally: the square is band limited
    to degree 2 lmax, so its exact harmonic expansion comes from grid
    quadrature and the eigenvalues act coefficient-wise.
    """
    if m is None:
        m = Sphere(2, 1.0)
    lmax = max(ell for ell, _ in u.terms)
    frames = grid.frames(m)
    G = u.grad_values(grid.nodes)
    gsq = np.sum(G * G, axis=1)
    tables = SphereHarmonicTables(grid, m, 2 * lmax, with_derivs=False)
    coeffs = tables.values.T @ (grid.weights * gsq)
    lap_gsq = tables.values @ (tables.eigen * coeffs)
    recon = tables.values @ coeffs
    if float(np.max(np.abs(recon - gsq))) > 1e-8 * max(1.0, float(np.max(np.abs(gsq)))):
        raise ValueError("grid too coarse to expand |grad u|^2 exactly")
    hs2 = u.hess_hs_values(grid.nodes, frames) ** 2
    cross = np.sum(u.laplacian_poly().grad_values(grid.nodes) * G, axis=1)
    ric = gsq
    res = -0.5 * lap_gsq - hs2 + cross - ric
    return float(np.max(np.abs(res)))
