"""Minimum-MSE coordination.

Counterpart of :mod:`ota_coord.zf` for the full aggregation-error objective:
devices in the chosen subset transmit at the cap, the receiver is the
regularized Gram solve on those columns, and the remaining devices are
exactly zero-forced.  Feasibility demands the out-of-subset scalings stay
strictly below the cap.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import RootInfeasible, SingularGram
from .linalg import (
    GramInverseState,
    downdate_or_recompute,
    gram_inverse,
    gram_matrix,
    rcond_estimate,
    RCOND_MIN,
)
from .model import (
    POWER_REL_TOL,
    CoordinationProblem,
    CoordinationSolution,
    DeviceSubset,
)
from .zf import NULL_PROJECTION_REL, _receiver_from_state

# Children whose errors agree within this are tied; smallest removed device
# index wins, mirroring the zero-forcing descent.
ERROR_TIE_REL = 1e-12


@dataclass(frozen=True)
class MmseFeasibility:
    """Outcome of an MMSE feasibility check, with the setting's error."""

    feasible: bool
    receiver: np.ndarray | None
    scalings: np.ndarray | None
    error: float


def mmse_receiver_for_subset(problem: CoordinationProblem, subset: DeviceSubset) -> np.ndarray:
    """Receiver minimizing the in-subset error plus the noise penalty.

    Solves the diagonally loaded Gram system on the subset columns with
    loading ``sigma^2 / P``; at zero noise it coincides with
    :func:`ota_coord.zf.zf_receiver_for_subset`.
    """
    lam = problem.noise_variance / problem.power_budget
    state = gram_inverse(problem, subset, lam)
    return _receiver_from_state(problem, state)


def _setting_error(
    problem: CoordinationProblem, idx: list[int], proj: np.ndarray, m: np.ndarray
) -> float:
    """Error of a setting with in-subset devices at the cap and the rest zero-forced."""
    sqrt_p = math.sqrt(problem.power_budget)
    residual = sqrt_p * proj[idx] - problem.weights[idx]
    noise = problem.noise_variance * np.vdot(m, m).real
    return float(np.vdot(residual, residual).real + noise)


def check_mmse_feasible(problem: CoordinationProblem, subset: DeviceSubset) -> MmseFeasibility:
    """Evaluate whether ``subset`` describes a feasible MMSE setting.

    Devices in the subset transmit ``sqrt(P)`` (zero phase); outside devices
    are zero-forced and must land strictly below the cap.  The returned
    error is that of the constructed setting, also for infeasible subsets
    (``inf`` when the receiver or a scaling is not computable).
    """
    idx = list(subset.zero_based())
    if not idx:
        raise ValueError("subset must be non-empty")
    if idx[-1] >= problem.devices:
        raise ValueError(f"subset {subset} references devices beyond L={problem.devices}")
    try:
        m = mmse_receiver_for_subset(problem, subset)
    except SingularGram:
        # only reachable at zero noise variance
        return MmseFeasibility(False, None, None, math.inf)
    proj = problem.channel.T @ m
    sqrt_p = math.sqrt(problem.power_budget)
    b = np.full(problem.devices, sqrt_p, dtype=np.complex128)
    outside = np.ones(problem.devices, dtype=bool)
    outside[idx] = False
    feasible = True
    if outside.any():
        mags = np.abs(proj[outside])
        col_norms = np.linalg.norm(problem.channel[:, outside], axis=0)
        if np.any(mags <= NULL_PROJECTION_REL * np.linalg.norm(m) * col_norms):
            return MmseFeasibility(False, m, None, math.inf)
        b[outside] = problem.weights[outside] / proj[outside]
        ratios = (problem.weights[outside] / mags) ** 2 / problem.power_budget
        feasible = bool(np.all(ratios < 1.0 - POWER_REL_TOL))
    return MmseFeasibility(feasible, m, b, _setting_error(problem, idx, proj, m))


def theorem2_shortcut(problem: CoordinationProblem) -> CoordinationSolution | None:
    """Closed-form MMSE optimum under the weakest-device condition.

    Noise-regularized analogue of :func:`ota_coord.zf.theorem1_shortcut`:
    the comparison vector gains ``sigma^2 / P`` on the weakest device's own
    entry and the receiver denominator gains ``sigma^2``.  Returns None when
    the condition fails.
    """
    col_norms = np.linalg.norm(problem.channel, axis=0)
    s = int(np.argmin(col_norms))
    norm_sq = float(col_norms[s]) ** 2
    denom = problem.power_budget * norm_sq + problem.noise_variance
    if denom == 0.0:
        return None
    lam = problem.noise_variance / problem.power_budget
    h_s = problem.channel[:, s]
    g = (h_s.conj() @ problem.channel).astype(np.complex128)
    g[s] += lam
    g /= problem.weights
    mags = np.abs(g)
    g_s_mag = mags[s]
    if np.any(mags < g_s_mag * (1.0 - SHORTCUT_REL := 1e-9)):
        return None
    member_mask = mags <= g_s_mag * (1.0 + SHORTCUT_REL)
    subset = DeviceSubset.from_members(np.nonzero(member_mask)[0] + 1)
    sqrt_p = math.sqrt(problem.power_budget)
    m = sqrt_p * problem.weights[s] * h_s.conj() / denom
    proj = problem.channel.T @ m
    b = np.full(problem.devices, sqrt_p, dtype=np.complex128)
    outside = ~member_mask
    if outside.any():
        mags_out = np.abs(proj[outside])
        col_out = col_norms[outside]
        if np.any(mags_out <= NULL_PROJECTION_REL * np.linalg.norm(m) * col_out):
            return None
        b[outside] = problem.weights[outside] / proj[outside]
    idx = list(subset.zero_based())
    error = _setting_error(problem, idx, proj, m)
    return CoordinationSolution(
        receiver=m, scalings=b, subset=subset, error=error, check_count=0
    )


def ammse_solve(problem: CoordinationProblem) -> CoordinationSolution:
    """Greedy tree descent approximating the optimal MMSE scheme.

    Same shape as :func:`ota_coord.zf.azf_solve` with the MMSE feasibility
    predicate and minimum aggregation error as the child-selection rule.
    """
    if problem.antennas < problem.devices:
        raise ValueError(
            "tree descent needs at least as many antennas as devices; "
            "use the exhaustive search for wider instances"
        )
    lam = problem.noise_variance / problem.power_budget
    try:
        state = gram_inverse(problem, DeviceSubset.full(problem.devices), lam)
    except SingularGram as exc:
        raise RootInfeasible("all-devices root has a singular gram matrix") from exc
    # Root feasibility is vacuous: there are no out-of-subset devices.
    m = _receiver_from_state(problem, state)
    proj = problem.channel.T @ m
    error = _setting_error(problem, list(range(problem.devices)), proj, m)
    check_count = 1
    fallbacks = 0
    col_norms = np.linalg.norm(problem.channel, axis=0)
    while state.subset.size > 1:
        candidates = []
        for device in state.subset.members:
            check_count += 1
            try:
                child, fell_back = downdate_or_recompute(state, problem, device)
            except SingularGram:
                continue
            fallbacks += int(fell_back)
            if child.regularizer == 0.0 and not fell_back:
                gram = gram_matrix(problem, child.subset, 0.0)
                if rcond_estimate(gram, child.inverse) < RCOND_MIN:
                    continue
            child_m = _receiver_from_state(problem, child)
            child_proj = problem.channel.T @ child_m
            idx = list(child.subset.zero_based())
            outside = np.ones(problem.devices, dtype=bool)
            outside[idx] = False
            mags = np.abs(child_proj[outside])
            if np.any(mags <= NULL_PROJECTION_REL * np.linalg.norm(child_m) * col_norms[outside]):
                continue
            ratios = (problem.weights[outside] / mags) ** 2 / problem.power_budget
            if not np.all(ratios < 1.0 - POWER_REL_TOL):
                continue
            child_error = _setting_error(problem, idx, child_proj, child_m)
            candidates.append((child_error, device, child, child_m, child_proj))
        if not candidates:
            break
        best_error = min(c[0] for c in candidates)
        for child_error, device, child, child_m, child_proj in candidates:
            if child_error <= best_error * (1.0 + ERROR_TIE_REL):
                state, m, proj, error = child, child_m, child_proj, child_error
                break
    sqrt_p = math.sqrt(problem.power_budget)
    b = np.full(problem.devices, sqrt_p, dtype=np.complex128)
    outside = np.ones(problem.devices, dtype=bool)
    outside[list(state.subset.zero_based())] = False
    if outside.any():
        b[outside] = problem.weights[outside] / proj[outside]
    return CoordinationSolution(
        receiver=m,
        scalings=b,
        subset=state.subset,
        error=error,
        check_count=check_count,
        downdate_fallbacks=fallbacks,
    )
