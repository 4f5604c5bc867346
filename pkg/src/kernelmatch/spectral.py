"""Cotangent Laplacian, truncated eigenbasis, and diffusion kernels."""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg
from scipy import sparse

from .mesh import graph_geodesics

#: above this vertex count the generalized eigenproblem goes to ARPACK
DENSE_EIGEN_LIMIT = 4000

#: largest mesh for which a dense geodesic kernel may be materialized
DENSE_KERNEL_CAP = 4000


class EigensolverError(RuntimeError):
    """Eigendecomposition failed to converge."""


@dataclass(frozen=True)
class SpectralBasis:
    """Truncated Laplacian eigenpairs with the lumped mass vector.

    eigenvalues are non-positive and sorted descending (0 = l1 >= l2 >= ...);
    eigenvectors are M-orthonormal columns (Phi^T M Phi = I).
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        for arr in (self.eigenvalues, self.eigenvectors, self.masses):
            arr.flags.writeable = False

    @property
    def n(self):
        return self.eigenvectors.shape[0]

    @property
    def k(self):
        return self.eigenvectors.shape[1]

    def heat_factor(self, t):
        return heat_kernel(self, t)

    def truncated(self, k):
        if not 1 <= k <= self.k:
            raise ValueError(f"k must be in [1, {self.k}]")
        return SpectralBasis(
            self.eigenvalues[:k].copy(), self.eigenvectors[:, :k].copy(), self.masses
        )


@dataclass(frozen=True)
class HeatKernelFactor:
    """Low-rank square root of a heat kernel: K_sym = factor @ factor.T.

    factor = Phi diag(exp(t * lambda / 2)), shape (n, k). The symmetric
    variant K_sym is PSD with rank <= k; the stochastic variant
    K_sto = K_sym @ diag(M) satisfies K_sto 1 = 1 whenever the constant
    mode is included.
    """

    basis: SpectralBasis = field(repr=False)
    time: float
    factor: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.factor.flags.writeable = False

    @property
    def n(self):
        return self.factor.shape[0]

    @property
    def k(self):
        return self.factor.shape[1]

    def materialize(self, stochastic=False):
        k = self.factor @ self.factor.T
        if stochastic:
            k = k * self.basis.masses[None, :]
        return k

    def apply(self, vecs, stochastic=False):
        """K @ vecs without materializing the n x n kernel."""
        v = np.asarray(vecs, dtype=np.float64)
        if stochastic:
            v = v * (self.basis.masses[:, None] if v.ndim == 2 else self.basis.masses)
        return self.factor @ (self.factor.T @ v)


def cotan_laplacian(mesh):
    """Cotangent stiffness (negative semi-definite) and lumped masses.

    Returns
    -------
    (W, M) : W is a sparse symmetric (n, n) matrix with zero row sums and
        x^T W x <= 0 for all x; M is the (n,) lumped (barycentric) vertex
        mass vector, equal to the mesh vertex areas.
    """
    v, t = mesh.vertices, mesh.triangles
    n = mesh.n_vertices

    double_areas = 2.0 * mesh.triangle_areas
    floor = 1e-12 * double_areas.mean()
    degenerate = double_areas < floor
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} numerically degenerate triangles: "
            "cotangent weights clamped",
            stacklevel=2,
        )
    safe_double_areas = np.maximum(double_areas, floor)

    rows, cols, vals = [], [], []
    # corner c is opposite edge (a, b); its cotangent weights that edge
    for a, b, c in ((1, 2, 0), (2, 0, 1), (0, 1, 2)):
        u = v[t[:, a]] - v[t[:, c]]
        w = v[t[:, b]] - v[t[:, c]]
        cot = (u * w).sum(axis=1) / safe_double_areas
        half = 0.5 * cot
        rows.extend([t[:, a], t[:, b]])
        cols.extend([t[:, b], t[:, a]])
        vals.extend([half, half])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    w_off = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    w = w_off - sparse.diags(np.asarray(w_off.sum(axis=1)).ravel())
    return w.tocsr(), mesh.vertex_areas.copy()


def eigenbasis(w, masses, k, strategy="auto"):
    """Solve W phi = lambda M phi for the k eigenvalues nearest zero.

    Parameters
    ----------
    w : sparse symmetric stiffness from cotan_laplacian
    masses : (n,) positive lumped masses
    k : number of eigenpairs
    strategy : {'auto', 'dense', 'iterative'}
        'auto' goes dense up to DENSE_EIGEN_LIMIT vertices, then uses
        shift-invert ARPACK targeting eigenvalues nearest zero.

    Returns
    -------
    SpectralBasis with eigenvalues clamped to <= 0, sorted descending,
    and a deterministic sign convention (first entry with magnitude
    above 1e-8 is positive).
    """
    m = np.asarray(masses, dtype=np.float64)
    n = m.size
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if (m <= 0).any():
        raise ValueError("masses must be strictly positive")
    if strategy == "auto":
        strategy = "dense" if n <= DENSE_EIGEN_LIMIT else "iterative"

    if strategy == "dense":
        inv_sqrt_m = 1.0 / np.sqrt(m)
        b = (w.multiply(inv_sqrt_m[:, None])).multiply(inv_sqrt_m[None, :]).toarray()
        b = 0.5 * (b + b.T)
        vals, vecs = scipy.linalg.eigh(b, subset_by_index=[n - k, n - 1])
        vals = vals[::-1]
        vecs = vecs[:, ::-1] * inv_sqrt_m[:, None]
    elif strategy == "iterative":
        scale = np.abs(w.diagonal()).max() / m.min()
        sigma = 1e-8 * scale
        try:
            vals, vecs = scipy.sparse.linalg.eigsh(
                w.tocsc(), k=k, M=sparse.diags(m).tocsc(), sigma=sigma,
                which="LM", v0=np.ones(n),
            )
        except scipy.sparse.linalg.ArpackNoConvergence as exc:
            raise EigensolverError(f"ARPACK did not converge: {exc}") from exc
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
    else:
        raise ValueError(f"unknown strategy {strategy!r}")

    # the null mode is exactly zero on a connected mesh; clamp solver noise
    vals = np.minimum(vals, 0.0)
    scale = max(np.abs(vals).max(), 1.0)
    if abs(vals[0]) <= 1e-8 * scale:
        vals[0] = 0.0

    # sign convention for determinism
    for col in range(k):
        column = vecs[:, col]
        above = np.nonzero(np.abs(column) > 1e-8)[0]
        lead = above[0] if above.size else int(np.argmax(np.abs(column)))
        if column[lead] < 0:
            vecs[:, col] = -column

    basis = SpectralBasis(np.ascontiguousarray(vals), np.ascontiguousarray(vecs), m)
    _check_basis(basis, w)
    return basis


def _check_basis(basis, w):
    phi, m = basis.eigenvectors, basis.masses
    gram = phi.T @ (m[:, None] * phi)
    ortho_err = np.abs(gram - np.eye(basis.k)).max()
    if ortho_err > 1e-8:
        raise EigensolverError(f"basis not M-orthonormal: max deviation {ortho_err:.3e}")
    resid = w @ phi - (m[:, None] * phi) * basis.eigenvalues[None, :]
    resid_norm = np.linalg.norm(resid, axis=0)
    w_norm = np.abs(w.data).max() if w.nnz else 1.0
    if (resid_norm > 1e-6 * max(w_norm, 1.0)).any():
        raise EigensolverError(
            f"eigen residuals too large: {resid_norm.max():.3e} vs |W|={w_norm:.3e}"
        )


def heat_kernel(basis, t):
    """Heat kernel factor at diffusion time t: Phi diag(exp(t*lambda/2))."""
    if t <= 0:
        raise ValueError(f"diffusion time must be positive, got {t}")
    weights = np.exp(0.5 * t * basis.eigenvalues)
    return HeatKernelFactor(basis, float(t), basis.eigenvectors * weights[None, :])


def gaussian_geodesic_kernel(mesh, sigma, dense_cap=DENSE_KERNEL_CAP, distances=None):
    """Dense kernel G_ij = exp(-d(i,j)^2 / (2 sigma^2)) with graph geodesics.

    A memory guard rejects meshes above dense_cap vertices. Precomputed
    all-pairs distances may be passed to amortize repeated calls.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    n = mesh.n_vertices
    if n > dense_cap:
        raise ValueError(f"mesh too large for dense kernel: {n} > cap {dense_cap}")
    if distances is None:
        distances = all_pairs_geodesics(mesh)
    g = np.exp(-(distances**2) / (2.0 * sigma**2))
    g = 0.5 * (g + g.T)
    np.fill_diagonal(g, 1.0)
    return g


def all_pairs_geodesics(mesh):
    """Dense (n, n) graph-geodesic distance matrix."""
    return graph_geodesics(mesh, np.arange(mesh.n_vertices))
