"""Reference kernels for conditioning a feature sequence on a speaker embedding.

``H`` is a ``T x D`` float64 matrix (one row per time step) and ``e`` an
``E``-vector. Projections are given explicitly as weight/bias pairs; nothing
here is learned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class AffineProjection:
    """``x -> weight @ x + bias`` mapping an E-vector to a D-vector."""

    weight: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        weight = np.asarray(self.weight, dtype=np.float64)
        if weight.ndim != 2:
            raise ValueError(f"projection weight must be 2-D, got shape {weight.shape}")
        bias = np.zeros(weight.shape[0]) if self.bias is None else np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"bias shape {bias.shape} does not match weight rows {weight.shape[0]}")
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def constant(cls, value, in_dim: int) -> "AffineProjection":
        """Projection that ignores its input and always yields ``value``."""
        value = np.asarray(value, dtype=np.float64).reshape(-1)
        return cls(np.zeros((value.size, in_dim)), value)

    def __call__(self, e: np.ndarray) -> np.ndarray:
        return self.weight @ e + self.bias


def _check_inputs(H, e) -> tuple[np.ndarray, np.ndarray]:
    H = np.asarray(H, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64).reshape(-1)
    if H.ndim != 2 or H.shape[0] < 1 or H.shape[1] < 1:
        raise ValueError(f"H must be a nonempty T x D matrix, got shape {H.shape}")
    if e.size < 1:
        raise ValueError("speaker embedding must have at least one element")
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(e))):
        raise ValueError("H and e must be finite")
    return H, e


def _project(proj: AffineProjection, H: np.ndarray, e: np.ndarray, name: str) -> np.ndarray:
    if proj.in_dim != e.size or proj.out_dim != H.shape[1]:
        raise ValueError(
            f"{name} maps {proj.in_dim}->{proj.out_dim}, need {e.size}->{H.shape[1]}"
        )
    return proj(e)


def fuse_concat(H, e) -> np.ndarray:
    """Tile ``e`` over time and append it to every row: ``T x (D + E)``."""
    H, e = _check_inputs(H, e)
    return np.concatenate([H, np.broadcast_to(e, (H.shape[0], e.size))], axis=1)


def fuse_add(H, e, proj: AffineProjection) -> np.ndarray:
    H, e = _check_inputs(H, e)
    return H + _project(proj, H, e, "projection")


def fuse_multiply(H, e, proj: AffineProjection) -> np.ndarray:
    H, e = _check_inputs(H, e)
    return H * _project(proj, H, e, "projection")


def fuse_film(H, e, gamma_proj: AffineProjection, beta_proj: AffineProjection) -> np.ndarray:
    """Feature-wise affine modulation ``gamma(e) * h_t + beta(e)``."""
    H, e = _check_inputs(H, e)
    gamma = _project(gamma_proj, H, e, "gamma projection")
    beta = _project(beta_proj, H, e, "beta projection")
    return H * gamma + beta


METHODS = ("concat", "add", "multiply", "film")


# -----------------------------
# text matrix format
# -----------------------------
def parse_matrix(text: str) -> np.ndarray:
    """Parse ``"rows cols"`` followed by ``rows*cols`` whitespace-separated values."""
    tokens = text.split()
    if len(tokens) < 2:
        raise ValueError("matrix text needs a 'rows cols' header")
    try:
        rows, cols = int(tokens[0]), int(tokens[1])
        values = [float(t) for t in tokens[2:]]
    except ValueError as exc:
        raise ValueError(f"bad matrix text: {exc}") from exc
    if rows < 0 or cols < 0 or len(values) != rows * cols:
        raise ValueError(f"header says {rows}x{cols} but found {len(values)} values")
    return np.array(values, dtype=np.float64).reshape(rows, cols)


def format_matrix(M: np.ndarray) -> str:
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    lines = [f"{M.shape[0]} {M.shape[1]}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in M]
    return "\n".join(lines) + "\n"
