"""Pointwise descriptor fields for the data term and initialization."""

from dataclasses import dataclass, field

import numpy as np

from .spectral import heat_kernel

DEFAULT_HKS_COUNT = 100


@dataclass(frozen=True)
class DescriptorField:
    """Per-vertex descriptor matrix: rows are vertices, columns features."""

    values: np.ndarray
    kind: str
    mesh: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] < 1:
            raise ValueError(f"descriptor values must be (n, q), got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("descriptor values must be finite")
        object.__setattr__(self, "values", v)
        v.flags.writeable = False

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def q(self):
        return self.values.shape[1]


def default_hks_times(basis, count=DEFAULT_HKS_COUNT):
    """Logarithmic time grid over [4 ln 10 / |l_k|, 4 ln 10 / |l_2|]."""
    if basis.k < 2:
        raise ValueError("need at least two eigenpairs for the default grid")
    lam2 = abs(basis.eigenvalues[1])
    lam_k = abs(basis.eigenvalues[-1])
    if lam2 == 0.0 or lam_k == 0.0:
        raise ValueError("degenerate spectrum: repeated zero eigenvalues")
    t_min = 4.0 * np.log(10.0) / lam_k
    t_max = 4.0 * np.log(10.0) / lam2
    return np.geomspace(t_min, t_max, count)


def hks(basis, times=None, log_scaled=False, mesh=None):
    """Heat kernel signature: column j holds the kernel diagonal at time j.

    hks(x, t) = sum_i exp(lambda_i t) phi_i(x)^2, always positive.
    """
    if times is None:
        times = default_hks_times(basis)
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    if times.size == 0 or (times <= 0).any():
        raise ValueError("times must be non-empty and positive")
    # (n, k) @ (k, q): weights e^{lambda t} per mode per time
    weights = np.exp(basis.eigenvalues[:, None] * times[None, :])
    values = (basis.eigenvectors**2) @ weights
    if log_scaled:
        values = np.log(values)
    return DescriptorField(values, "hks", mesh)


def landmark_descriptors(basis, landmarks, t, mesh=None):
    """Heat bumps centered at landmark vertices: column j = K_sym d_j.

    Matching landmark lists on two shapes yield comparable fields, which
    realizes sparse-correspondence initialization as a data term.
    """
    landmarks = np.asarray(landmarks, dtype=np.int64)
    if landmarks.ndim != 1 or landmarks.size == 0:
        raise ValueError("landmarks must be a non-empty index list")
    if np.unique(landmarks).size != landmarks.size:
        raise ValueError("duplicate landmark index")
    if landmarks.min() < 0 or landmarks.max() >= basis.n:
        raise ValueError("landmark index out of range")
    factor = heat_kernel(basis, t).factor
    values = factor @ factor[landmarks].T
    return DescriptorField(values, "landmark", mesh)


def xyz_descriptors(mesh, centered=True):
    """Raw vertex coordinates as a q=3 field (extrinsic).

    Rigidly moved targets produce different fields by design; use an
    intrinsic field when shapes are not pre-aligned.
    """
    values = mesh.vertices.copy()
    if centered:
        values = values - values.mean(axis=0, keepdims=True)
    return DescriptorField(values, "xyz", mesh)


def stack(fields, weights=None):
    """Concatenate fields column-wise after per-column RMS scaling.

    Each field's columns are normalized to unit RMS, then multiplied by
    the field's weight, so the data-term tradeoff has comparable meaning
    across descriptor kinds.
    """
    if not fields:
        raise ValueError("need at least one field")
    if weights is None:
        weights = [1.0] * len(fields)
    if len(weights) != len(fields):
        raise ValueError("one weight per field required")
    if any(w <= 0 for w in weights):
        raise ValueError("weights must be strictly positive")
    n = fields[0].n
    mesh = fields[0].mesh
    blocks = []
    for f, w in zip(fields, weights):
        if f.n != n:
            raise ValueError("fields live on meshes with different vertex counts")
        if f.mesh is not None and mesh is not None and f.mesh is not mesh:
            raise ValueError("fields live on different meshes")
        rms = np.sqrt((f.values**2).mean(axis=0))
        rms = np.where(rms > 0.0, rms, 1.0)
        blocks.append(w * f.values / rms[None, :])
    return DescriptorField(np.hstack(blocks), "stacked", mesh)
