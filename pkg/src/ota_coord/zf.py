"""Zero-forcing coordination.

A subset S of devices transmitting at the full power budget determines the
minimum-norm receiver that zero-forces every device; the setting is feasible
when the scalings of the remaining devices stay below the cap.  The module
provides the per-subset receiver, the feasibility check, a closed-form
sufficient-condition shortcut and the greedy tree descent (AZF).
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NullProjection, RootInfeasible, SingularGram
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

# Projections smaller than this (relative to ||m|| ||h_l||) count as the
# receiver being orthogonal to the channel.
NULL_PROJECTION_REL = 1e-14

# Relative tolerance for the shortcut's magnitude comparisons.
SHORTCUT_REL = 1e-9

# Children whose receiver norms agree within this are tied; the smallest
# removed device index wins.
NORM_TIE_REL = 1e-12


@dataclass(frozen=True)
class ZfFeasibility:
    """Outcome of a zero-forcing feasibility check.

    ``violation`` is the largest |b_l|^2 / P over devices outside the subset
    (``inf`` when no receiver or scalings could be computed at all).
    """

    feasible: bool
    receiver: np.ndarray | None
    scalings: np.ndarray | None
    violation: float


def _receiver_from_state(problem: CoordinationProblem, state: GramInverseState) -> np.ndarray:
    idx = list(state.subset.zero_based())
    weights = problem.weights[idx]
    cols = problem.channel[:, idx]
    return cols.conj() @ (state.inverse @ weights) / math.sqrt(problem.power_budget)


def zf_receiver_for_subset(problem: CoordinationProblem, subset: DeviceSubset) -> np.ndarray:
    """Minimum-norm receiver placing every subset device at the power cap.

    Satisfies ``m^T h_l = phi_l / sqrt(P)`` for every device in the subset.
    Raises :class:`SingularGram` when the subset's channel columns are
    collinear (the caller treats the subset as infeasible).
    """
    state = gram_inverse(problem, subset, 0.0)
    return _receiver_from_state(problem, state)


def zf_scalings(problem: CoordinationProblem, m) -> np.ndarray:
    """Per-device scalings ``b_l = phi_l / (m^T h_l)`` zero-forcing all devices.

    Raises :class:`NullProjection` for the first device whose channel is
    numerically orthogonal to the receiver.
    """
    m = np.asarray(m, dtype=np.complex128)
    if m.shape != (problem.antennas,):
        raise ValueError(f"receiver length {m.shape} does not match {problem.antennas} antennas")
    proj = problem.channel.T @ m
    col_norms = np.linalg.norm(problem.channel, axis=0)
    floor = NULL_PROJECTION_REL * np.linalg.norm(m) * col_norms
    dead = np.abs(proj) <= floor
    if dead.any():
        raise NullProjection(int(np.nonzero(dead)[0][0]) + 1)
    return problem.weights / proj


def check_zf_feasible(problem: CoordinationProblem, subset: DeviceSubset) -> ZfFeasibility:
    """Evaluate whether ``subset`` describes a feasible zero-forcing setting.

    Devices inside the subset sit at the power cap analytically and always
    pass; feasibility is decided by the out-of-subset scalings staying below
    the cap (within ``POWER_REL_TOL``).
    """
    idx = subset.zero_based()
    if not idx:
        raise ValueError("subset must be non-empty")
    if idx[-1] >= problem.devices:
        raise ValueError(f"subset {subset} references devices beyond L={problem.devices}")
    try:
        m = zf_receiver_for_subset(problem, subset)
    except SingularGram:
        return ZfFeasibility(False, None, None, math.inf)
    try:
        b = zf_scalings(problem, m)
    except NullProjection:
        return ZfFeasibility(False, m, None, math.inf)
    outside = np.ones(problem.devices, dtype=bool)
    outside[list(idx)] = False
    if outside.any():
        ratios = np.abs(b[outside]) ** 2 / problem.power_budget
        violation = float(ratios.max())
    else:
        violation = 0.0
    return ZfFeasibility(violation <= 1.0 + POWER_REL_TOL, m, b, violation)


def zf_closed_form_error(problem: CoordinationProblem, subset: DeviceSubset) -> float:
    """Aggregation error of the subset's zero-forcing setting, via the Gram form.

    Evaluates ``(sigma^2 / P) phi_S^T (H_S^T H_S^*)^{-1} phi_S``, which equals
    ``sigma^2 ||m||^2`` of the subset receiver.
    """
    state = gram_inverse(problem, subset, 0.0)
    weights = problem.weights[list(subset.zero_based())]
    quad = weights @ (state.inverse @ weights)
    return float(problem.noise_variance / problem.power_budget * quad.real)


def theorem1_shortcut(problem: CoordinationProblem) -> CoordinationSolution | None:
    """Closed-form zero-forcing optimum under the weakest-device condition.

    Let ``s`` be the device with the smallest channel norm and
    ``g_l = h_s^H h_l / phi_l``.  When ``|g_s| <= |g_l|`` for every device,
    the optimum is known in closed form: the receiver is the matched filter
    on the weakest channel and the devices attaining ``|g_l| = |g_s|`` (up to
    ``SHORTCUT_REL``) transmit at the cap.  Returns None when the condition
    fails.
    """
    col_norms = np.linalg.norm(problem.channel, axis=0)
    s = int(np.argmin(col_norms))
    norm_sq = float(col_norms[s]) ** 2
    if norm_sq == 0.0:
        return None
    h_s = problem.channel[:, s]
    g = (h_s.conj() @ problem.channel) / problem.weights
    mags = np.abs(g)
    g_s_mag = mags[s]
    if np.any(mags < g_s_mag * (1.0 - SHORTCUT_REL)):
        return None
    member_mask = mags <= g_s_mag * (1.0 + SHORTCUT_REL)
    subset = DeviceSubset.from_members(np.nonzero(member_mask)[0] + 1)
    sqrt_p = math.sqrt(problem.power_budget)
    m = problem.weights[s] * h_s.conj() / (sqrt_p * norm_sq)
    b = (g[s] / g) * sqrt_p
    error = problem.noise_variance * float(np.vdot(m, m).real)
    return CoordinationSolution(
        receiver=m, scalings=b, subset=subset, error=error, check_count=0
    )


def _outside_caps_ok(
    problem: CoordinationProblem,
    subset: DeviceSubset,
    proj: np.ndarray,
    m_norm: float,
    col_norms: np.ndarray,
) -> bool:
    """Power-cap check for every device outside ``subset`` given projections."""
    outside = np.ones(problem.devices, dtype=bool)
    outside[list(subset.zero_based())] = False
    if not outside.any():
        return True
    mags = np.abs(proj[outside])
    if np.any(mags <= NULL_PROJECTION_REL * m_norm * col_norms[outside]):
        return False
    ratios = (problem.weights[outside] / mags) ** 2 / problem.power_budget
    return bool(np.all(ratios <= 1.0 + POWER_REL_TOL))


def azf_solve(problem: CoordinationProblem) -> CoordinationSolution:
    """Greedy tree descent approximating the optimal zero-forcing scheme.

    Starts from the all-devices root, evaluates every one-device-removed
    child via inverse downdates, keeps the feasible ones and moves to the
    child with the smallest receiver norm; stops when no child is feasible
    or a single device remains.  ``check_count`` is 1 for the root plus one
    per child evaluated.
    """
    if problem.antennas < problem.devices:
        raise ValueError(
            "tree descent needs at least as many antennas as devices; "
            "use the exhaustive search for wider instances"
        )
    try:
        state = gram_inverse(problem, DeviceSubset.full(problem.devices), 0.0)
    except SingularGram as exc:
        raise RootInfeasible("all-devices root has a singular gram matrix") from exc
    # The root zero-forces every device at the cap, hence is always feasible.
    m = _receiver_from_state(problem, state)
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
            if not fell_back:
                gram = gram_matrix(problem, child.subset, 0.0)
                if rcond_estimate(gram, child.inverse) < RCOND_MIN:
                    continue
            child_m = _receiver_from_state(problem, child)
            child_norm = float(np.linalg.norm(child_m))
            proj = problem.channel.T @ child_m
            if not _outside_caps_ok(problem, child.subset, proj, child_norm, col_norms):
                continue
            candidates.append((child_norm, device, child, child_m))
        if not candidates:
            break
        best_norm = min(c[0] for c in candidates)
        for child_norm, device, child, child_m in candidates:
            if child_norm <= best_norm * (1.0 + NORM_TIE_REL):
                state, m = child, child_m
                break
    error = problem.noise_variance * float(np.vdot(m, m).real)
    return CoordinationSolution(
        receiver=m,
        scalings=zf_scalings(problem, m),
        subset=state.subset,
        error=error,
        check_count=check_count,
        downdate_fallbacks=fallbacks,
    )
