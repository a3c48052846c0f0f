"""
Coined discrete-time quantum walk on time-bin lattices.

The walker lives in one of ``2D`` coupled cavities (the coin state) and its
lattice position is the vector of round-trip counts through each cavity.
Cavity 0 is the reference (shortest) cavity; its count is implied by the step
number, so a position is stored as the counts of cavities ``1 .. 2D-1``.
For ``D = 1`` this reduces to a single integer ``k``, the number of round
trips through the longer cavity.

Amplitudes are held densely: a state at step ``N`` is an array of shape
``(N+1,) * (2D-1) + (2D,)``. Entries whose counts exceed ``N`` in total are
always zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ConfigurationError, DomainError, ValidationError

__all__ = [
    "CoinSpec",
    "WalkState",
    "WalkDistribution",
    "coin_from_bias",
    "multiport_coin",
    "localized_state",
    "step",
    "evolve",
    "evolve_states",
    "port_distribution",
    "evolve_port",
    "classical_evolve",
    "fidelity",
    "brute_force_oracle",
    "symmetric_label",
    "position_moments",
]

UNITARY_TOL = 1e-12
EXPLICIT_UNITARY_TOL = 1e-9
MAX_ORACLE_STEPS = 12
MAX_ORACLE_PATHS = 4 ** 11


def _unitarity_error(m: NDArray) -> float:
    return float(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))))


@dataclass(frozen=True)
class CoinSpec:
    """A ``2D x 2D`` coin unitary, optionally remembering the bias it was built from."""

    dims: int
    matrix: NDArray[np.complex128]
    bias: Optional[float] = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.complex128)
        if self.dims < 1:
            raise ValidationError(f"coin dimension must be >= 1, got {self.dims}")
        if m.shape != (2 * self.dims, 2 * self.dims):
            raise ValidationError(
                f"coin for D={self.dims} must be {2 * self.dims}x{2 * self.dims}, got {m.shape}"
            )
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def n_cavities(self) -> int:
        return 2 * self.dims

    def unitarity_error(self) -> float:
        return _unitarity_error(self.matrix)


def coin_from_bias(eta: float) -> CoinSpec:
    """
    Two-cavity coupler coin with stay probability ``eta``.

    Uses the symmetric beam-splitter convention
    ``[[sqrt(eta), i sqrt(1-eta)], [i sqrt(1-eta), sqrt(eta)]]``.
    """
    eta = float(eta)
    if not (0.0 <= eta <= 1.0) or np.isnan(eta):
        raise DomainError(f"coin bias must lie in [0, 1], got {eta}")
    r = np.sqrt(eta)
    t = 1j * np.sqrt(1.0 - eta)
    return CoinSpec(1, np.array([[r, t], [t, r]], dtype=np.complex128), bias=eta)


def multiport_coin(dims: int, spec: Union[str, ArrayLike] = "fourier") -> CoinSpec:
    """
    Coin for a ``2D``-port coupler.

    Parameters
    ----------
    dims : int
        Lattice dimension ``D``.
    spec : "fourier" or array_like
        ``"fourier"`` builds ``F[j, k] = exp(2 pi i j k / 2D) / sqrt(2D)``;
        an explicit matrix is checked for unitarity to 1e-9.
    """
    if dims < 1:
        raise DomainError(f"lattice dimension must be >= 1, got {dims}")
    n = 2 * dims
    if isinstance(spec, str):
        if spec != "fourier":
            raise ValidationError(f"unknown coin construction rule {spec!r}")
        j, k = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        m = np.exp(2j * np.pi * j * k / n) / np.sqrt(n)
        return CoinSpec(dims, m)
    m = np.asarray(spec, dtype=np.complex128)
    if m.shape != (n, n):
        raise ValidationError(f"explicit coin for D={dims} must be {n}x{n}, got {m.shape}")
    err = _unitarity_error(m)
    if err > EXPLICIT_UNITARY_TOL:
        raise ValidationError(f"explicit coin is not unitary (max |U^H U - I| = {err:.3g})")
    return CoinSpec(dims, m)


@dataclass(frozen=True)
class WalkState:
    """Amplitudes over (position, cavity) after ``step`` round trips."""

    step: int
    amplitudes: NDArray[np.complex128]
    surviving_norm: float = 1.0

    @property
    def n_cavities(self) -> int:
        return self.amplitudes.shape[-1]

    @property
    def dims(self) -> int:
        return self.n_cavities // 2

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def position_energy(self) -> NDArray[np.float64]:
        """Unnormalised energy per lattice position (cavity index summed)."""
        return np.sum(np.abs(self.amplitudes) ** 2, axis=-1)

    def amplitude(self, position, cavity: int) -> complex:
        pos = (position,) if np.isscalar(position) else tuple(position)
        return complex(self.amplitudes[pos + (cavity,)])


@dataclass(frozen=True)
class WalkDistribution:
    step: int
    probs: NDArray[np.float64]
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)

    def total(self) -> float:
        return float(np.sum(self.probs))


def localized_state(dims: int = 1, cavity: int = 0) -> WalkState:
    """Walker at the origin in a single cavity (the pulse entering C1 by default)."""
    n = 2 * dims
    if not 0 <= cavity < n:
        raise DomainError(f"cavity index {cavity} out of range for D={dims}")
    amps = np.zeros((1,) * (n - 1) + (n,), dtype=np.complex128)
    amps[(0,) * (n - 1) + (cavity,)] = 1.0
    return WalkState(0, amps)


def _check_dims(state: WalkState, coin: CoinSpec):
    if state.n_cavities != coin.n_cavities:
        raise ConfigurationError(
            f"state has {state.n_cavities} cavities but coin acts on {coin.n_cavities}"
        )


def _loss_vector(loss, n: int) -> Optional[NDArray[np.float64]]:
    if loss is None:
        return None
    t = np.broadcast_to(np.asarray(loss, dtype=np.float64), (n,)).copy()
    if np.any(t <= 0) or np.any(t > 1):
        raise DomainError(f"amplitude transmissions must lie in (0, 1], got {t}")
    return t


def _apply_coin(amps: NDArray, coin: CoinSpec) -> NDArray:
    # contract the last (cavity) axis: b[..., i] = sum_j U[i, j] a[..., j]
    return amps @ coin.matrix.T


def _shift(b: NDArray) -> NDArray:
    n = b.shape[-1]
    m = n - 1
    size = b.shape[0] if m else 1
    out = np.zeros((size + 1,) * m + (n,), dtype=b.dtype)
    base = (slice(0, size),) * m
    out[base + (0,)] = b[..., 0]
    for c in range(1, n):
        idx = list(base)
        idx[c - 1] = slice(1, size + 1)
        out[tuple(idx) + (c,)] = b[..., c]
    return out


def step(state: WalkState, coin: CoinSpec, loss: Optional[Sequence[float]] = None) -> WalkState:
    """
    One round trip: coin at every position, cavity-conditioned shift, then
    optional per-cavity amplitude transmission ``t_c``.
    """
    _check_dims(state, coin)
    t = _loss_vector(loss, state.n_cavities)
    out = _shift(_apply_coin(state.amplitudes, coin))
    if t is not None:
        out *= t
    norm = float(np.sum(np.abs(out) ** 2)) if t is not None else state.surviving_norm
    return WalkState(state.step + 1, out, norm)


def evolve_states(initial: WalkState, coin: CoinSpec, steps: int, loss=None) -> list:
    """States after steps ``1 .. steps``."""
    if steps < 1:
        raise DomainError(f"need at least one step, got {steps}")
    out = []
    s = initial
    for _ in range(steps):
        s = step(s, coin, loss)
        out.append(s)
    return out


def _normalized(step_no: int, energy: NDArray) -> WalkDistribution:
    total = float(np.sum(energy))
    if total <= 0:
        return WalkDistribution(step_no, np.zeros_like(energy), {"empty": True})
    return WalkDistribution(step_no, energy / total, {"energy": total})


def evolve(initial: WalkState, coin: CoinSpec, steps: int, loss=None) -> list:
    """Per-step normalised position distributions for steps ``1 .. steps``."""
    return [_normalized(s.step, s.position_energy()) for s in evolve_states(initial, coin, steps, loss)]


def port_distribution(state: WalkState, coin: CoinSpec, cavity: int = 1) -> WalkDistribution:
    """
    Distribution seen through a tap on ``cavity`` placed just after the coupler.

    This is the component of the coined state ``U a`` in the tapped cavity,
    normalised over positions. It is what the output coupler samples at each
    step of the apparatus.
    """
    _check_dims(state, coin)
    b = _apply_coin(state.amplitudes, coin)[..., cavity]
    return _normalized(state.step, np.abs(b) ** 2)


def evolve_port(initial: WalkState, coin: CoinSpec, steps: int, cavity: int = 1, loss=None) -> list:
    """Tapped-port distributions for steps ``0 .. steps``."""
    out = [port_distribution(initial, coin, cavity)]
    s = initial
    for _ in range(steps):
        s = step(s, coin, loss)
        out.append(port_distribution(s, coin, cavity))
    return out


def classical_evolve(coin: CoinSpec, steps: int, start_cavity: int = 0) -> list:
    """
    Incoherent reference walk: same geometry, transition probabilities ``|U_ij|^2``.
    """
    trans = np.abs(coin.matrix) ** 2
    n = coin.n_cavities
    p = np.zeros((1,) * (n - 1) + (n,))
    p[(0,) * (n - 1) + (start_cavity,)] = 1.0
    out = []
    for N in range(1, steps + 1):
        p = _shift(p @ trans.T)
        out.append(WalkDistribution(N, p.sum(axis=-1)))
    return out


def _pad_to(a: NDArray, shape) -> NDArray:
    if a.shape == tuple(shape):
        return a
    out = np.zeros(shape, dtype=a.dtype)
    out[tuple(slice(0, s) for s in a.shape)] = a
    return out


def fidelity(p, q) -> float:
    """Bhattacharyya coefficient ``sum_i sqrt(p_i q_i)``; positions missing from one side count as 0."""
    a = np.asarray(p.probs if isinstance(p, WalkDistribution) else p, dtype=np.float64)
    b = np.asarray(q.probs if isinstance(q, WalkDistribution) else q, dtype=np.float64)
    if np.any(a < 0) or np.any(b < 0):
        raise ValidationError("probabilities must be non-negative")
    if a.ndim != b.ndim:
        raise ValidationError(f"distributions have different dimensionality ({a.ndim} vs {b.ndim})")
    shape = tuple(max(x, y) for x, y in zip(a.shape, b.shape))
    f = float(np.sum(np.sqrt(_pad_to(a, shape) * _pad_to(b, shape))))
    return min(f, 1.0)


def brute_force_oracle(initial: WalkState, coin: CoinSpec, steps: int, loss=None) -> WalkDistribution:
    """
    Exhaustive path sum.

    Every sequence of cavities visited over ``steps`` round trips is
    enumerated; the amplitude of a sequence is the product of the coin
    elements along it. Amplitudes are summed over sequences that end in the
    same cavity with the same traversal counts, and the resulting
    probabilities are normalised.
    """
    _check_dims(initial, coin)
    if initial.step != 0:
        raise ValidationError("oracle starts from a step-0 state")
    n = coin.n_cavities
    if steps < 0 or steps > MAX_ORACLE_STEPS or n ** steps > MAX_ORACLE_PATHS:
        raise ValidationError(
            f"refusing to enumerate {n}^{steps} paths (limit N <= {MAX_ORACLE_STEPS}, "
            f"{MAX_ORACLE_PATHS} paths)"
        )
    t = _loss_vector(loss, n)
    u = coin.matrix
    a0 = initial.amplitudes.reshape(-1)[-n:]  # origin cell

    if steps == 0:
        return _normalized(0, initial.position_energy())
    shape = (steps + 1,) * (n - 1)
    # flat offset into the count grid contributed by one traversal of each cavity
    stride = np.concatenate([[0], np.cumprod((1,) + shape[:0:-1])[::-1]]).astype(np.int64)
    size = int(np.prod(shape)) * n
    acc_re = np.zeros(size)
    acc_im = np.zeros(size)
    ends = np.arange(n)
    for c0 in range(n):
        if a0[c0] == 0:
            continue
        # one entry per cavity sequence; sequences are extended one round trip at a time
        amp = np.array([a0[c0]], dtype=np.complex128)
        last = np.array([c0])
        where = np.zeros(1, dtype=np.int64)
        for _ in range(steps):
            hop = u[ends[None, :], last[:, None]]
            if t is not None:
                hop = hop * t[None, :]
            amp = (amp[:, None] * hop).reshape(-1)
            where = (where[:, None] + stride[None, :]).reshape(-1)
            last = np.tile(ends, last.size)
        # coherent sum over sequences sharing final counts and final cavity
        key = where * n + last
        acc_re += np.bincount(key, weights=amp.real, minlength=size)
        acc_im += np.bincount(key, weights=amp.imag, minlength=size)
    prob = (acc_re ** 2 + acc_im ** 2).reshape(shape + (n,)).sum(axis=-1)
    return _normalized(steps, prob)


def symmetric_label(k, steps: int):
    """Map the internal position index ``k`` to the symmetric label ``2k - N``."""
    return 2 * np.asarray(k) - steps


def position_moments(dist: WalkDistribution) -> tuple:
    """Mean and standard deviation of the symmetric position ``x = 2k - N`` (D = 1)."""
    p = dist.probs
    x = symmetric_label(np.arange(p.size), dist.step)
    mean = float(np.sum(p * x))
    var = float(np.sum(p * (x - mean) ** 2))
    return mean, np.sqrt(var)
