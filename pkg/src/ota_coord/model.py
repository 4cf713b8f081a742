"""Domain types for the coordination problem and the aggregation-error metric.

A coordination instance is the uplink channel matrix of a multi-antenna
aggregation node together with per-device combining weights, a per-device
transmit power cap and the receiver noise variance.  Every solver in this
package is scored by :func:`aggregation_error`.
"""

import json
from dataclasses import dataclass

import numpy as np

# Relative tolerance absorbing floating-point round-off in |b|^2 <= P checks.
# In-subset scalings are placed at the cap analytically, so round-off must
# never flip their feasibility.
POWER_REL_TOL = 1e-9


@dataclass(frozen=True, order=True)
class DeviceSubset:
    """Immutable set of 1-based device indices, stored as a bitmask.

    Device ``l`` corresponds to bit ``l - 1``; at most 64 devices are
    representable, which comfortably covers every tractable instance.
    """

    mask: int = 0

    def __post_init__(self):
        if self.mask < 0 or self.mask >= (1 << 64):
            raise ValueError("subset bitmask out of the 64-device range")

    @classmethod
    def from_members(cls, members) -> "DeviceSubset":
        mask = 0
        for device in members:
            device = int(device)
            if not 1 <= device <= 64:
                raise ValueError(f"device index {device} outside 1..64")
            mask |= 1 << (device - 1)
        return cls(mask)

    @classmethod
    def full(cls, devices: int) -> "DeviceSubset":
        if not 1 <= devices <= 64:
            raise ValueError("device count outside 1..64")
        return cls((1 << devices) - 1)

    @property
    def members(self) -> tuple[int, ...]:
        return tuple(i + 1 for i in range(self.mask.bit_length()) if self.mask >> i & 1)

    @property
    def size(self) -> int:
        return self.mask.bit_count()

    def contains(self, device: int) -> bool:
        return bool(self.mask >> (device - 1) & 1)

    def remove(self, device: int) -> "DeviceSubset":
        if not self.contains(device):
            raise ValueError(f"device {device} not in subset")
        return DeviceSubset(self.mask & ~(1 << (device - 1)))

    def zero_based(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.mask.bit_length()) if self.mask >> i & 1)

    def issubset(self, other: "DeviceSubset") -> bool:
        return self.mask & ~other.mask == 0

    def __len__(self) -> int:
        return self.size

    def __iter__(self):
        return iter(self.members)

    def __str__(self) -> str:
        return "{" + ",".join(str(d) for d in self.members) + "}"


@dataclass(frozen=True)
class CoordinationProblem:
    """Channel, weights and budgets describing one coordination instance.

    ``channel`` is the N x L complex uplink matrix whose column ``l`` is the
    channel vector of device ``l``; ``weights`` holds the strictly positive
    combining weights; ``power_budget`` is the per-device transmit power cap
    and ``noise_variance`` the receiver noise power.
    """

    channel: np.ndarray
    weights: np.ndarray
    power_budget: float
    noise_variance: float

    def __post_init__(self):
        channel = np.array(self.channel, dtype=np.complex128)
        weights = np.array(self.weights, dtype=np.float64)
        if channel.ndim != 2 or channel.shape[0] < 1 or channel.shape[1] < 1:
            raise ValueError("channel must be a non-empty 2-D matrix")
        if not np.all(np.isfinite(channel.view(np.float64))):
            raise ValueError("channel contains non-finite entries")
        if weights.ndim != 1 or weights.shape[0] != channel.shape[1]:
            raise ValueError("weights length must match the number of devices")
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise ValueError("weights must be finite and strictly positive")
        power = float(self.power_budget)
        noise = float(self.noise_variance)
        if not np.isfinite(power) or power <= 0:
            raise ValueError("power budget must be positive")
        if not np.isfinite(noise) or noise < 0:
            raise ValueError("noise variance must be non-negative")
        channel.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "channel", channel)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "power_budget", power)
        object.__setattr__(self, "noise_variance", noise)

    @property
    def antennas(self) -> int:
        return self.channel.shape[0]

    @property
    def devices(self) -> int:
        return self.channel.shape[1]

    def with_noise_variance(self, noise_variance: float) -> "CoordinationProblem":
        return CoordinationProblem(self.channel, self.weights, self.power_budget, noise_variance)


@dataclass(frozen=True)
class CoordinationSolution:
    """Receiver, per-device scalings and diagnostics returned by a solver.

    ``subset`` lists the devices transmitting at the full power budget,
    ``error`` is the linear-scale aggregation error of the setting and
    ``check_count`` the number of candidate subsets whose feasibility was
    evaluated (0 for closed-form paths).  ``downdate_fallbacks`` counts
    inverse downdates that were silently replaced by full recomputation.
    """

    receiver: np.ndarray
    scalings: np.ndarray
    subset: DeviceSubset
    error: float
    check_count: int
    downdate_fallbacks: int = 0

    def __post_init__(self):
        receiver = np.array(self.receiver, dtype=np.complex128)
        scalings = np.array(self.scalings, dtype=np.complex128)
        receiver.setflags(write=False)
        scalings.setflags(write=False)
        object.__setattr__(self, "receiver", receiver)
        object.__setattr__(self, "scalings", scalings)
        object.__setattr__(self, "error", float(self.error))


def aggregation_error(problem: CoordinationProblem, m, b) -> float:
    """Exact aggregation error of receiver ``m`` with scalings ``b``.

    Returns ``sum_l |m^T h_l b_l - phi_l|^2 + sigma^2 ||m||^2``, the mean
    squared deviation of the linearly combined received signal from the
    target weighted sum.  Always non-negative.
    """
    m = np.asarray(m, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if m.shape != (problem.antennas,):
        raise ValueError(f"receiver length {m.shape} does not match {problem.antennas} antennas")
    if b.shape != (problem.devices,):
        raise ValueError(f"scalings length {b.shape} does not match {problem.devices} devices")
    residual = (problem.channel.T @ m) * b - problem.weights
    noise = problem.noise_variance * np.vdot(m, m).real
    return float(np.vdot(residual, residual).real + noise)


def example1_problem(noise_variance: float = 0.0) -> CoordinationProblem:
    """Fixed 5-antenna, 4-device instance used throughout the tests.

    The channel matrix is real-valued, all weights are 0.25 and the power
    budget is 1.  The noise variance is not part of the instance definition
    and is taken from the caller.
    """
    channel = np.array(
        [
            [0.30, 0.46, 0.39, 0.19],
            [-0.55, 0.32, -0.52, 0.04],
            [0.32, -0.14, -0.48, -0.11],
            [0.72, 0.13, -0.37, 0.18],
            [0.21, -0.36, -1.32, -0.23],
        ]
    )
    return CoordinationProblem(
        channel=channel,
        weights=np.full(4, 0.25),
        power_budget=1.0,
        noise_variance=noise_variance,
    )


def problem_to_json_dict(problem: CoordinationProblem) -> dict:
    """Serialize a problem to the row-major JSON document schema."""
    return {
        "channel_re": problem.channel.real.tolist(),
        "channel_im": problem.channel.imag.tolist(),
        "weights": problem.weights.tolist(),
        "power": problem.power_budget,
        "noise_variance": problem.noise_variance,
    }


def problem_from_json_dict(doc: dict) -> CoordinationProblem:
    """Parse the JSON document schema produced by :func:`problem_to_json_dict`."""
    try:
        re_part = np.array(doc["channel_re"], dtype=np.float64)
        im_part = np.array(doc["channel_im"], dtype=np.float64)
        weights = np.array(doc["weights"], dtype=np.float64)
        power = float(doc["power"])
        noise = float(doc["noise_variance"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed problem document: {exc}") from exc
    if re_part.ndim != 2 or re_part.shape != im_part.shape:
        raise ValueError("channel_re and channel_im must be matrices of the same shape")
    return CoordinationProblem(re_part + 1j * im_part, weights, power, noise)


def save_problem(problem: CoordinationProblem, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(problem_to_json_dict(problem), fh, indent=2)
        fh.write("\n")


def load_problem(path) -> CoordinationProblem:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"invalid JSON in {path}: {exc}") from exc
    return problem_from_json_dict(doc)
