"""
Fiber ring-cavity network: time-bin map, round-trip losses, output tap.

Times are in ns, losses in dB per round trip. Cavity 0 is the input cavity C1
(fed through S1); by default the output tap S2 sits on cavity 1 (C2), right
after the inter-cavity coupler, so the pulses detected in step ``N`` are the
tapped-cavity component of the coined state after ``N`` round trips.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from . import walk
from .errors import ConfigurationError, DomainError, ScalingError, ValidationError
from .walk import CoinSpec, WalkDistribution, WalkState

__all__ = [
    "CavitySpec",
    "NetworkConfig",
    "PulseTable",
    "StepLimits",
    "Transmission",
    "PolarizationResult",
    "reference_network",
    "bin_time",
    "max_observable_steps",
    "round_trip_transmission",
    "cavity_transmissions",
    "cavity_states",
    "tapped_pulse_table",
    "auto_input_energy",
    "jones_rotation",
    "polarization_walk",
]

# Apparatus constants (ns, dB, dimensionless)
REF_T1_NS = 503.0
REF_T2_NS = 511.0
REF_LOSS_C1_DB = 0.50
REF_LOSS_C2_DB = 0.47
REF_TAP_R = 0.99
REF_PULSE_NS = 2.5
REF_TRIAL_PERIOD_US = 33.0
# Detector path delay; places the last full cluster of a 33 us trial at step 62.
DEFAULT_PATH_OFFSET_NS = 1000.0

MAX_TOTAL_PHOTONS = 1.0
AUTO_TOTAL_PHOTONS = 0.95


def _is_unitary(m: NDArray, tol: float = 1e-12) -> bool:
    return bool(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))) <= tol)


@dataclass(frozen=True)
class CavitySpec:
    round_trip_time: float
    excess_loss: float = 0.0
    jones: Optional[NDArray[np.complex128]] = None

    def __post_init__(self):
        if not self.round_trip_time > 0:
            raise ValidationError(f"round-trip time must be positive, got {self.round_trip_time}")
        if self.excess_loss < 0:
            raise ValidationError(f"excess loss must be >= 0 dB, got {self.excess_loss}")
        if self.jones is not None:
            j = np.asarray(self.jones, dtype=np.complex128)
            if j.shape != (2, 2) or not _is_unitary(j):
                raise ValidationError("Jones matrix must be a 2x2 unitary")
            object.__setattr__(self, "jones", j)


@dataclass(frozen=True)
class NetworkConfig:
    """
    Coupled-cavity network.

    ``coupler_excess_losses`` holds per-pass excess losses (dB) for the input
    coupler S1, the output coupler S2 and the inter-cavity coupler Sc. They
    are added on top of the cavities' own round-trip excess loss: S1 to the
    input cavity, S2 to the output cavity and Sc to every cavity.
    """

    cavities: tuple
    coin: CoinSpec
    input_coupler_reflectivity: float = REF_TAP_R
    output_coupler_reflectivity: float = REF_TAP_R
    coupler_excess_losses: dict = field(default_factory=lambda: {"s1": 0.0, "s2": 0.0, "sc": 0.0})
    pulse_duration: float = REF_PULSE_NS
    trial_period: float = REF_TRIAL_PERIOD_US
    output_cavity_index: int = 1
    detection_path_offset: float = DEFAULT_PATH_OFFSET_NS
    input_polarization: tuple = (1.0, 0.0)

    def __post_init__(self):
        cav = tuple(self.cavities)
        object.__setattr__(self, "cavities", cav)
        n = len(cav)
        if n != self.coin.n_cavities:
            raise ConfigurationError(
                f"coin acts on {self.coin.n_cavities} cavities but {n} are configured"
            )
        for name in ("input_coupler_reflectivity", "output_coupler_reflectivity"):
            r = getattr(self, name)
            if not 0 < r <= 1:
                raise ValidationError(f"{name} must lie in (0, 1], got {r}")
        if any(v < 0 for v in self.coupler_excess_losses.values()):
            raise ValidationError("coupler excess losses must be >= 0 dB")
        if not 0 <= self.output_cavity_index < n:
            raise ConfigurationError(f"output cavity {self.output_cavity_index} out of range")
        times = np.array([c.round_trip_time for c in cav])
        if np.any(times[1:] <= times[0]):
            raise ConfigurationError("cavity 0 must have the shortest round-trip time")
        gaps = np.abs(times[:, None] - times[None, :])[np.triu_indices(n, 1)]
        if np.any(gaps == 0):
            raise ConfigurationError("round-trip times must be pairwise distinct")
        if np.min(gaps) <= self.pulse_duration:
            raise ConfigurationError(
                f"time-bin spacing {np.min(gaps)} ns does not exceed the pulse duration "
                f"{self.pulse_duration} ns"
            )
        if self.trial_period <= 0:
            raise ValidationError("trial period must be positive")

    @property
    def dims(self) -> int:
        return self.coin.dims

    @property
    def n_cavities(self) -> int:
        return len(self.cavities)

    @property
    def t1(self) -> float:
        return self.cavities[0].round_trip_time

    @property
    def tau(self) -> float:
        """Time-bin spacing ``T2 - T1`` (D = 1)."""
        return self.cavities[1].round_trip_time - self.cavities[0].round_trip_time

    @property
    def trial_period_ns(self) -> float:
        return self.trial_period * 1e3

    @property
    def has_polarization(self) -> bool:
        return any(c.jones is not None for c in self.cavities)

    def effective_losses_db(self) -> NDArray[np.float64]:
        """Round-trip excess loss per cavity with coupler excess losses folded in."""
        ex = self.coupler_excess_losses
        out = np.array([c.excess_loss for c in self.cavities], dtype=float)
        out += ex.get("sc", 0.0)
        out[0] += ex.get("s1", 0.0)
        out[self.output_cavity_index] += ex.get("s2", 0.0)
        return out

    def with_coin(self, coin: CoinSpec) -> "NetworkConfig":
        return replace(self, coin=coin)


def reference_network(eta: float = 0.5, **overrides) -> NetworkConfig:
    """The reference two-cavity apparatus (503/511 ns cavities, 0.50/0.47 dB loss, 0.99 taps)."""
    cav = (
        CavitySpec(REF_T1_NS, REF_LOSS_C1_DB),
        CavitySpec(REF_T2_NS, REF_LOSS_C2_DB),
    )
    kw = dict(cavities=cav, coin=walk.coin_from_bias(eta))
    kw.update(overrides)
    return NetworkConfig(**kw)


def _position_tuple(cfg: NetworkConfig, position) -> tuple:
    pos = (int(position),) if np.isscalar(position) else tuple(int(p) for p in position)
    if len(pos) != cfg.n_cavities - 1:
        raise ConfigurationError(
            f"position needs {cfg.n_cavities - 1} traversal counts, got {len(pos)}"
        )
    return pos


def bin_time(cfg: NetworkConfig, step: int, position) -> float:
    """Nominal detection time (ns) of lattice position ``position`` in step ``step``."""
    pos = _position_tuple(cfg, position)
    if step < 0 or any(p < 0 for p in pos) or sum(pos) > step:
        raise DomainError(f"position {position} is not reachable in step {step}")
    times = [c.round_trip_time for c in cfg.cavities]
    t = cfg.detection_path_offset + step * times[0]
    for c, n_c in enumerate(pos, start=1):
        t += n_c * (times[c] - times[0])
    return t


class StepLimits(NamedTuple):
    repetition_limit: int
    overlap_limit: int

    @property
    def limit(self) -> int:
        return min(self.repetition_limit, self.overlap_limit)


def max_observable_steps(cfg: NetworkConfig) -> StepLimits:
    """
    Step limits set by the trial period and by cluster overlap.

    ``repetition_limit`` is the last step whose latest time bin still falls
    inside the trial period. ``overlap_limit`` is the last step whose cluster
    width stays below the reference round-trip time, i.e. before the cluster
    runs into the start of the next one.
    """
    times = np.array([c.round_trip_time for c in cfg.cavities])
    t0, spread = times[0], times.max() - times[0]
    period = cfg.trial_period_ns
    rep = -1
    n = 0
    while cfg.detection_path_offset + n * times.max() < period:
        rep = n
        n += 1
    if spread >= t0:
        warnings.warn("time-bin spread per step reaches the round-trip time; clusters always overlap")
        overlap = 0
    else:
        overlap = int(np.ceil(t0 / spread)) - 1
    return StepLimits(max(rep, 0), overlap)


class Transmission(NamedTuple):
    energy: float
    amplitude: float


def round_trip_transmission(excess_loss_db: float, tap_reflectivity: Optional[float] = None) -> Transmission:
    """Energy factor ``10**(-L/10) * R`` for one round trip, and its square root."""
    if excess_loss_db < 0:
        raise DomainError(f"excess loss must be >= 0 dB, got {excess_loss_db}")
    e = 10.0 ** (-excess_loss_db / 10.0)
    if tap_reflectivity is not None:
        e *= tap_reflectivity
    return Transmission(e, float(np.sqrt(e)))


def cavity_transmissions(cfg: NetworkConfig) -> list:
    """Round-trip transmission of every cavity, including the S1/S2 taps."""
    losses = cfg.effective_losses_db()
    out = []
    for c in range(cfg.n_cavities):
        r = 1.0
        if c == 0:
            r *= cfg.input_coupler_reflectivity
        if c == cfg.output_cavity_index:
            r *= cfg.output_coupler_reflectivity
        out.append(round_trip_transmission(losses[c], r))
    return out


@dataclass(frozen=True)
class PulseTable:
    """
    Mean photon number incident on the detector for each (step, position).

    ``positions`` is 1-D for D = 1 and ``(n, 2D-1)`` otherwise.
    """

    dims: int
    steps: NDArray[np.int64]
    positions: NDArray[np.int64]
    mu: NDArray[np.float64]
    time_ns: NDArray[np.float64]

    def __post_init__(self):
        if np.any(self.mu < 0):
            raise ValidationError("mean photon numbers must be non-negative")

    @property
    def max_step(self) -> int:
        return int(self.steps.max()) if self.steps.size else -1

    def total(self) -> float:
        return float(np.sum(self.mu))

    def step_slice(self, n: int) -> NDArray[np.float64]:
        return self.mu[self.steps == n]

    def lookup(self, n: int, position) -> float:
        sel = self.steps == n
        if self.dims == 1:
            sel &= self.positions == int(position)
        else:
            sel &= np.all(self.positions == np.asarray(position), axis=1)
        idx = np.flatnonzero(sel)
        if idx.size != 1:
            raise KeyError((n, position))
        return float(self.mu[idx[0]])

    def scaled(self, factor: float) -> "PulseTable":
        return replace(self, mu=self.mu * factor)

    def with_mu(self, mu) -> "PulseTable":
        return replace(self, mu=np.asarray(mu, dtype=float))


def _grid_positions(n: int, step: int) -> NDArray[np.int64]:
    """Reachable count vectors of length n-1 (sum <= step) in row-major grid order."""
    m = n - 1
    grid = np.indices((step + 1,) * m).reshape(m, -1).T
    return grid[grid.sum(axis=1) <= step]


def _propagate(cfg: NetworkConfig, steps: int):
    """
    Yield ``(N, a_N, b_N)`` for ``N = 0 .. steps``: the circulating state after
    ``N`` round trips and its coined image at the output tap. Amplitudes carry
    a trailing polarisation axis when any cavity has a Jones matrix.
    """
    n = cfg.n_cavities
    u = cfg.coin.matrix
    amp_t = np.array([t.amplitude for t in cavity_transmissions(cfg)])
    pol = cfg.has_polarization
    if pol:
        jones = [c.jones if c.jones is not None else np.eye(2, dtype=complex) for c in cfg.cavities]
        p0 = np.asarray(cfg.input_polarization, dtype=np.complex128)
        p0 = p0 / np.linalg.norm(p0)
        a = np.zeros((2,) + (1,) * (n - 1) + (n,), dtype=np.complex128)
        a[(slice(None),) + (0,) * (n - 1) + (0,)] = p0
    else:
        a = walk.localized_state(cfg.dims, 0).amplitudes.copy()
    for N in range(steps + 1):
        b = a @ u.T
        yield N, a, b
        if N == steps:
            break
        if pol:
            a = np.stack([walk._shift(b[p]) for p in range(2)])
            for c in range(n):
                # apply this cavity's polarisation rotation to its component
                comp = a[..., c].reshape(2, -1)
                a[..., c] = (jones[c] @ comp).reshape(a[..., c].shape)
        else:
            a = walk._shift(b)
        a *= amp_t


def cavity_states(cfg: NetworkConfig, steps: int) -> list:
    """Circulating (pre-tap) scalar states for steps ``0 .. steps``."""
    if cfg.has_polarization:
        raise ConfigurationError("cavity_states returns scalar states; use polarization_walk")
    return [WalkState(N, a.copy(), float(np.sum(np.abs(a) ** 2))) for N, a, _ in _propagate(cfg, steps)]


def _tapped_energies(cfg: NetworkConfig, steps: int):
    out_c = cfg.output_cavity_index
    leak = 1.0 - cfg.output_coupler_reflectivity
    n = cfg.n_cavities
    for N, _, b in _propagate(cfg, steps):
        e = np.abs(b[..., out_c]) ** 2
        if cfg.has_polarization:
            e = e.sum(axis=0)
        pos = _grid_positions(n, N)
        yield N, pos, leak * e[tuple(pos.T)]


def _unit_table(cfg: NetworkConfig, steps: int) -> PulseTable:
    steps_l, pos_l, mu_l, t_l = [], [], [], []
    times = np.array([c.round_trip_time for c in cfg.cavities])
    for N, pos, e in _tapped_energies(cfg, steps):
        steps_l.append(np.full(len(pos), N))
        pos_l.append(pos)
        mu_l.append(e)
        t_l.append(cfg.detection_path_offset + N * times[0] + pos @ (times[1:] - times[0]))
    positions = np.concatenate(pos_l)
    if cfg.dims == 1:
        positions = positions[:, 0]
    return PulseTable(
        cfg.dims,
        np.concatenate(steps_l).astype(np.int64),
        positions.astype(np.int64),
        np.concatenate(mu_l),
        np.concatenate(t_l),
    )


def auto_input_energy(cfg: NetworkConfig, steps: int, target: float = AUTO_TOTAL_PHOTONS) -> float:
    """Laser-pulse photon number giving ``target`` mean photons per trial at the detector."""
    per_photon = _unit_table(cfg, steps).total() * (1.0 - cfg.input_coupler_reflectivity)
    if per_photon <= 0:
        raise ScalingError("no light reaches the detector; input energy cannot be scaled")
    return target / per_photon


def tapped_pulse_table(cfg: NetworkConfig, steps: int, input_energy: float) -> PulseTable:
    """
    Mean photon number and nominal arrival time of every output pulse.

    ``input_energy`` is the mean photon number of the laser pulse; the
    fraction ``1 - R_S1`` of it is coupled into C1. At each step the output
    coupler leaks ``1 - R_S2`` of the energy in the tapped cavity.
    """
    if steps < 0:
        raise DomainError(f"steps must be >= 0, got {steps}")
    if input_energy < 0:
        raise DomainError(f"input energy must be >= 0, got {input_energy}")
    unit = _unit_table(cfg, steps)
    table = unit.scaled(input_energy * (1.0 - cfg.input_coupler_reflectivity))
    total = table.total()
    if total >= MAX_TOTAL_PHOTONS:
        suggestion = input_energy * AUTO_TOTAL_PHOTONS / total
        raise ScalingError(
            f"output pulses carry {total:.3g} photons per trial (must be < 1); "
            f"use input_energy <= {suggestion:.4g}",
            suggested_input_energy=suggestion,
        )
    return table


_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
}


def jones_rotation(angle: float, axis="z") -> NDArray[np.complex128]:
    """SU(2) polarisation rotation ``exp(-i angle/2 n.sigma)`` about a Stokes axis."""
    if isinstance(axis, str):
        n = {"x": (1, 0, 0), "y": (0, 1, 0), "z": (0, 0, 1)}[axis]
    else:
        n = axis
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    sig = n[0] * _PAULI["x"] + n[1] * _PAULI["y"] + n[2] * _PAULI["z"]
    return np.cos(angle / 2) * np.eye(2) - 1j * np.sin(angle / 2) * sig


@dataclass(frozen=True)
class PolarizationResult:
    distributions: list
    fidelity_to_scalar: NDArray[np.float64]
    visibility: NDArray[np.float64]
    commutator_norm: float


def polarization_walk(cfg: NetworkConfig, steps: int) -> PolarizationResult:
    """
    Lossless walk with a polarisation rotation applied on every cavity traversal.

    Returns the position distributions (polarisation traced out) for steps
    ``1 .. steps``, their fidelity to the scalar walk, and a per-step
    visibility: the polarisation overlap of the two most differently ordered
    paths reaching the central position, ``|<J2^k J1^(N-k) p | J1^(N-k) J2^k p>|``.
    """
    if cfg.dims != 1:
        raise ConfigurationError("polarization_walk is defined for the two-cavity network")
    jones = []
    for c in cfg.cavities:
        j = np.eye(2, dtype=np.complex128) if c.jones is None else np.asarray(c.jones)
        if not _is_unitary(j):
            raise ValidationError("Jones matrix must be unitary")
        jones.append(j)
    j1, j2 = jones
    lossless = replace(
        cfg,
        cavities=tuple(replace(c, excess_loss=0.0, jones=jones[i]) for i, c in enumerate(cfg.cavities)),
        input_coupler_reflectivity=1.0,
        output_coupler_reflectivity=1.0,
        coupler_excess_losses={"s1": 0.0, "s2": 0.0, "sc": 0.0},
    )
    scalar = walk.evolve(walk.localized_state(1, 0), cfg.coin, steps)
    dists, fids, vis = [], [], []
    p0 = np.asarray(cfg.input_polarization, dtype=np.complex128)
    p0 = p0 / np.linalg.norm(p0)
    for N, a, _ in _propagate(lossless, steps):
        if N == 0:
            continue
        e = (np.abs(a) ** 2).sum(axis=(0, -1))
        d = WalkDistribution(N, e / e.sum())
        dists.append(d)
        fids.append(walk.fidelity(d, scalar[N - 1]))
        k = N // 2
        pa = np.linalg.matrix_power(j2, k) @ np.linalg.matrix_power(j1, N - k) @ p0
        pb = np.linalg.matrix_power(j1, N - k) @ np.linalg.matrix_power(j2, k) @ p0
        vis.append(abs(np.vdot(pa, pb)))
    comm = float(np.max(np.abs(j1 @ j2 - j2 @ j1)))
    return PolarizationResult(dists, np.array(fids), np.array(vis), comm)
