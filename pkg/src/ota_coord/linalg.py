"""Complex Gram-system kernels shared by both solver families.

Both receiver formulas invert the conjugate Gram matrix
``G = H_S^T H_S^* + lambda I`` of the selected channel columns
(``lambda = 0`` for zero-forcing, ``lambda = sigma^2 / P`` for the
regularized receiver).  The tree searches shrink subsets one device at a
time, so removing a row/column from an already-inverted Gram is done with a
Schur-complement downdate instead of a fresh factorization.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalInstability, SingularGram
from .model import CoordinationProblem, DeviceSubset

# Reciprocal-condition floor below which an unregularized Gram is treated as
# singular (collinear channels).  Double-precision scale.
RCOND_MIN = 1e-12

# Smallest downdate pivot magnitude that is still trusted; below it the
# caller should recompute the inverse from scratch.
PIVOT_MIN = 1e-12


@dataclass(frozen=True)
class GramInverseState:
    """Inverse of the (regularized) conjugate Gram matrix of a device subset.

    ``inverse`` is Hermitian with rows/columns ordered by ascending device
    index of ``subset``.
    """

    subset: DeviceSubset
    inverse: np.ndarray
    regularizer: float

    def __post_init__(self):
        inverse = np.array(self.inverse, dtype=np.complex128)
        inverse.setflags(write=False)
        object.__setattr__(self, "inverse", inverse)
        object.__setattr__(self, "regularizer", float(self.regularizer))


def _subset_indices(problem: CoordinationProblem, subset: DeviceSubset) -> tuple[int, ...]:
    if subset.size == 0:
        raise ValueError("subset must be non-empty")
    idx = subset.zero_based()
    if idx[-1] >= problem.devices:
        raise ValueError(f"subset {subset} references devices beyond L={problem.devices}")
    return idx


def gram_matrix(problem: CoordinationProblem, subset: DeviceSubset, regularizer: float) -> np.ndarray:
    """Conjugate Gram matrix ``H_S^T H_S^* + lambda I`` of the subset columns."""
    idx = list(_subset_indices(problem, subset))
    cols = problem.channel[:, idx]
    gram = cols.T @ cols.conj()
    if regularizer != 0.0:
        gram = gram + regularizer * np.eye(len(idx))
    return gram


def rcond_estimate(matrix: np.ndarray, inverse: np.ndarray) -> float:
    """1-norm reciprocal condition estimate from a matrix/inverse pair."""
    norm = np.abs(matrix).sum(axis=0).max()
    inv_norm = np.abs(inverse).sum(axis=0).max()
    product = norm * inv_norm
    if not np.isfinite(product) or product <= 0.0:
        return 0.0
    return 1.0 / product


def gram_inverse(
    problem: CoordinationProblem, subset: DeviceSubset, regularizer: float
) -> GramInverseState:
    """Invert the (regularized) conjugate Gram matrix of the subset columns.

    Parameters
    ----------
    problem : CoordinationProblem
        Instance providing the channel columns.
    subset : DeviceSubset
        Non-empty set of devices selecting the columns.
    regularizer : float
        Non-negative diagonal loading; 0 selects the plain Gram.

    Raises
    ------
    SingularGram
        If ``regularizer == 0`` and the Gram is singular or its reciprocal
        condition estimate falls below ``RCOND_MIN``.
    """
    if regularizer < 0:
        raise ValueError("regularizer must be non-negative")
    gram = gram_matrix(problem, subset, regularizer)
    try:
        inverse = np.linalg.inv(gram)
    except np.linalg.LinAlgError as exc:
        raise SingularGram(f"gram matrix of subset {subset} is singular") from exc
    if regularizer == 0.0 and rcond_estimate(gram, inverse) < RCOND_MIN:
        raise SingularGram(
            f"gram matrix of subset {subset} has reciprocal condition below {RCOND_MIN:g}"
        )
    # np.linalg.inv does not return an exactly Hermitian matrix; symmetrize
    # so downstream quadratic forms stay real.
    inverse = 0.5 * (inverse + inverse.conj().T)
    return GramInverseState(subset=subset, inverse=inverse, regularizer=regularizer)


def downdate_remove_device(
    state: GramInverseState, problem: CoordinationProblem, device: int
) -> GramInverseState:
    """Inverse for ``state.subset`` minus one device, without refactorizing.

    Uses the Schur-complement identity: if ``A`` is the inverse of the Gram
    on ``S`` partitioned around the removed device's row/column ``k``, the
    inverse on ``S \\ {device}`` is ``A_kk_complement - a a^H / A[k, k]``.

    Raises
    ------
    NumericalInstability
        If the pivot ``A[k, k]`` is too small in magnitude to divide by;
        callers fall back to :func:`gram_inverse`.
    """
    if not 1 <= device <= problem.devices:
        raise ValueError(f"device {device} outside 1..{problem.devices}")
    members = state.subset.members
    if device not in members:
        raise ValueError(f"device {device} not in subset {state.subset}")
    if len(members) < 2:
        raise ValueError("cannot downdate a single-device subset")
    k = members.index(device)
    pivot = state.inverse[k, k]
    if abs(pivot) < PIVOT_MIN:
        raise NumericalInstability(
            f"downdate pivot {abs(pivot):.3e} below {PIVOT_MIN:g} removing device {device}"
        )
    keep = [i for i in range(len(members)) if i != k]
    block = state.inverse[np.ix_(keep, keep)]
    column = state.inverse[keep, k]
    # pivot is real up to round-off (Hermitian inverse); using its real part
    # keeps the downdated inverse exactly Hermitian.
    reduced = block - np.outer(column, column.conj()) / pivot.real
    return GramInverseState(
        subset=state.subset.remove(device),
        inverse=reduced,
        regularizer=state.regularizer,
    )


def downdate_or_recompute(
    state: GramInverseState, problem: CoordinationProblem, device: int
) -> tuple[GramInverseState, bool]:
    """Downdate, silently recomputing from scratch when the pivot is untrusted.

    Returns the reduced state and a flag telling whether the fallback path
    was taken (so callers can keep a diagnostics counter).  A singular
    reduced Gram still raises :class:`SingularGram`.
    """
    try:
        return downdate_remove_device(state, problem, device), False
    except NumericalInstability:
        reduced = gram_inverse(problem, state.subset.remove(device), state.regularizer)
        return reduced, True
