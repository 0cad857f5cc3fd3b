"""Dense float64 linear algebra helpers and a counter-based random stream.

Vectors are plain 1-D ``numpy.ndarray`` of dtype float64, matrices 2-D.
Randomness goes through :class:`RngStream`, whose state is exactly the
triple ``(seed, stream_id, counter)``: reconstructing a stream at any
counter reproduces the tail of the sequence bit-for-bit, and distinct
stream ids give statistically independent streams from one master seed.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NonConvergenceError, NumericOverflowError

_MASK64 = (1 << 64) - 1
_INV_2_53 = 2.0 ** -53


def as_vec(x, d: int | None = None) -> np.ndarray:
    """Coerce to a 1-D float64 array, optionally checking the length."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected 1-D vector, got shape {v.shape}")
    if d is not None and v.shape[0] != d:
        raise ValueError(f"expected length {d}, got {v.shape[0]}")
    return v


def as_mat(x, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Coerce to a 2-D float64 array, optionally checking the shape."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected 2-D matrix, got shape {m.shape}")
    if shape is not None and m.shape != shape:
        raise ValueError(f"expected shape {shape}, got {m.shape}")
    return m


def check_finite(arr, what: str = "result"):
    """Raise NumericOverflowError when any element is NaN or infinite."""
    if not np.all(np.isfinite(arr)):
        raise NumericOverflowError(f"{what} contains non-finite values")
    return arr


def dot(a, b) -> float:
    """Compensated inner product Σ aᵢbᵢ.

    Accumulates with ``math.fsum`` so the value is correctly rounded and
    exactly symmetric in its arguments.
    """
    av, bv = as_vec(a), as_vec(b)
    if av.shape[0] != bv.shape[0]:
        raise ValueError(f"length mismatch: {av.shape[0]} vs {bv.shape[0]}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = math.fsum(av * bv)
    if not math.isfinite(out):
        raise NumericOverflowError("dot product overflowed")
    return out


def matvec(M, v) -> np.ndarray:
    """Matrix-vector product Mv with shape validation."""
    Mm, vv = as_mat(M), as_vec(v)
    if Mm.shape[1] != vv.shape[0]:
        raise ValueError(f"shape mismatch: {Mm.shape} @ ({vv.shape[0]},)")
    return check_finite(Mm @ vv, "matvec")


def is_spd(M, tol: float = 1e-10) -> bool:
    """Certify symmetric positive definiteness: symmetry plus Cholesky success."""
    Mm = as_mat(M)
    if Mm.shape[0] != Mm.shape[1]:
        return False
    scale = max(1.0, float(np.abs(Mm).max()))
    if np.abs(Mm - Mm.T).max() > tol * scale:
        return False
    try:
        np.linalg.cholesky(Mm)
    except np.linalg.LinAlgError:
        return False
    return True


class RngStream:
    """Counter-based pseudorandom stream (Philox keyed by seed and stream id).

    The generator state is fully determined by ``(seed, stream_id, counter)``
    where ``counter`` counts raw 64-bit words consumed.  Gaussian draws use a
    fixed-consumption Box-Muller transform — exactly ``2*ceil(n/2)`` raw words
    per ``normals(n)`` call, nothing cached — so interleaving calls never
    shifts the mapping from counter to output.
    """

    def __init__(self, seed: int, stream_id: int = 0, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self._bg = np.random.Philox(
            key=np.array([self.seed, self.stream_id], dtype=np.uint64)
        )
        blocks, rem = divmod(int(counter), 4)
        if blocks:
            self._bg.advance(blocks)
        if rem:
            self._bg.random_raw(rem)
        self.counter = int(counter)

    def __repr__(self):
        return (
            f"RngStream(seed={self.seed}, stream_id={self.stream_id}, "
            f"counter={self.counter})"
        )

    def child(self, stream_id: int) -> "RngStream":
        """Fresh stream with the same seed and a different stream id."""
        return RngStream(self.seed, stream_id)

    def raw(self, n: int) -> np.ndarray:
        """n raw 64-bit words; advances the counter by n."""
        self.counter += int(n)
        return self._bg.random_raw(int(n))

    def uniforms(self, n: int) -> np.ndarray:
        """n doubles uniform on [0, 1); one raw word each."""
        return (self.raw(n) >> np.uint64(11)) * _INV_2_53

    def integers(self, n: int, bound: int) -> np.ndarray:
        """n integers uniform on [0, bound); one raw word each."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return (self.raw(n) % np.uint64(bound)).astype(np.int64)

    def normals(self, n: int) -> np.ndarray:
        """n standard normal draws via pairwise Box-Muller.

        Consumes exactly 2*ceil(n/2) raw words; odd-n calls discard the
        second member of the final pair rather than caching it.
        """
        if n == 0:
            return np.empty(0)
        pairs = (int(n) + 1) // 2
        w = self.raw(2 * pairs)
        u1 = ((w[0::2] >> np.uint64(11)) + np.uint64(1)) * _INV_2_53  # (0, 1]
        u2 = (w[1::2] >> np.uint64(11)) * _INV_2_53  # [0, 1)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = (2.0 * np.pi) * u2
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        return z[:n]


def gaussian(rng: RngStream, d: int, cov) -> np.ndarray:
    """Sample from N(0, cov) for isotropic or diagonal covariance.

    ``cov`` is either a scalar variance σ² (isotropic σ²I) or a length-d
    vector of per-coordinate variances.  Always consumes the fixed
    2*ceil(d/2) raw words, including in the degenerate zero-variance case,
    so coupled streams stay aligned no matter the covariance.
    """
    diag = np.asarray(cov, dtype=np.float64)
    if diag.ndim == 0:
        diag = np.full(d, float(diag))
    elif diag.ndim != 1 or diag.shape[0] != d:
        raise ValueError(f"covariance must be scalar or length-{d} diagonal")
    if np.any(diag < 0.0):
        raise ValueError("negative variance entry in covariance")
    return rng.normals(d) * np.sqrt(diag)


def _graded_start(d: int) -> np.ndarray:
    # grading breaks exact symmetries that would trap the all-ones vector
    # in an invariant subspace
    v = 1.0 + 1e-6 * np.arange(d)
    return v / np.linalg.norm(v)


def _spectral_radius_estimate(M: np.ndarray, iters: int = 100) -> float:
    """Rough spectral radius via norm-growth power steps (symmetric M)."""
    v = _graded_start(M.shape[0])
    rho = 0.0
    for _ in range(iters):
        w = M @ v
        norm_w = float(np.linalg.norm(w))
        if norm_w == 0.0:
            return rho
        if abs(norm_w - rho) <= 1e-3 * max(1e-300, norm_w):
            return norm_w
        rho = norm_w
        v = w / norm_w
    return rho


def _power_top(M: np.ndarray, tol_resid: float, max_iters: int):
    """Top eigenpair of a symmetric PSD matrix by power iteration.

    Converges when the eigen-residual ||Mv - λv|| drops below tol_resid;
    for a degenerate top eigenspace any unit vector in it qualifies.
    """
    v = _graded_start(M.shape[0])
    for _ in range(max_iters):
        w = M @ v
        lam = float(v @ w)
        if float(np.linalg.norm(w - lam * v)) <= tol_resid:
            return lam, v
        norm_w = float(np.linalg.norm(w))
        if norm_w == 0.0:
            return 0.0, v
        v = w / norm_w
    raise NonConvergenceError(
        f"power iteration did not converge in {max_iters} iterations "
        f"(residual tolerance {tol_resid:g})"
    )


def power_iteration_extreme_eigs(M, tol: float = 1e-10, max_iters: int = 100_000):
    """Extreme eigenvalues of a symmetric matrix, plus the top eigenvector.

    Returns ``(lam_min, lam_max, q_max)`` where ``q_max`` is a unit
    eigenvector for ``lam_max``.  Both extremes come from power iteration
    on shifted PSD matrices (shift = spectral-radius estimate), so no
    general eigensolver is involved.  Eigenpairs are accepted when the
    residual ||Mq - λq|| falls below ``tol * max(1, ||M||₂)``; by Weyl's
    bound the eigenvalues then carry the same absolute accuracy.
    """
    Mm = as_mat(M)
    d = Mm.shape[0]
    if Mm.shape[0] != Mm.shape[1]:
        raise ValueError("matrix must be square")
    scale = max(1.0, float(np.abs(Mm).max()))
    if np.abs(Mm - Mm.T).max() > 1e-12 * scale:
        raise ValueError("matrix must be symmetric")

    rho = _spectral_radius_estimate(Mm)
    tol_resid = tol * max(1.0, rho)
    shift = 1.05 * rho + 1e-9 * max(1.0, rho)
    eye = np.eye(d)

    top, q_max = _power_top(Mm + shift * eye, tol_resid, max_iters)
    lam_max = top - shift
    # second pass from the exact top: B = (λ_max + pad)I - M is PSD with its
    # own top at λ_max - λ_min, so the bottom eigenvalue converges fast
    pad = max(10.0 * tol_resid, 1e-9 * max(1.0, abs(lam_max)))
    bottom, _ = _power_top((lam_max + pad) * eye - Mm, tol_resid, max_iters)
    lam_min = lam_max + pad - bottom

    # deterministic sign convention: largest-magnitude component positive
    pivot = int(np.argmax(np.abs(q_max)))
    if q_max[pivot] < 0:
        q_max = -q_max
    return lam_min, lam_max, q_max
