"""Linear combination of Hamiltonian simulations.

A non-unitary propagator generated by A = H - iL (H, L Hermitian, L the decay
part) is approximated by a Cauchy-kernel quadrature over unitary evolutions:

    u(T) ~= sum_j c_j exp(-i (H + k_j L) T) u0,
    k_j = -K + 2jK/M,  c_j = w_j / (pi (1 + k_j^2)),

with trapezoidal weights w_j (K/M at the endpoints, 2K/M inside). Expectations
can be computed either densely from the pairwise overlaps or, term by term,
through the planner/runtime estimator bridge.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import floor, pi

import numpy as np

from .circuit import PauliString
from .linalg import NotHermitian, eigh, is_hermitian, matexp

__all__ = [
    "QuadratureScheme",
    "GeneratorSpec",
    "EvolutionResult",
    "DegenerateQuadrature",
    "NotPSD",
    "build_quadrature",
    "unitary_node",
    "lchs_state",
    "lchs_expectation",
    "imaginary_time",
    "trotter_oracle",
    "exact_ground",
    "parse_generator",
]


class DegenerateQuadrature(ValueError):
    """Raised when the requested quadrature has too few nodes to mean anything."""


class NotPSD(ValueError):
    """Raised when imaginary-time evolution is requested for a non-PSD matrix."""


@dataclass(frozen=True)
class QuadratureScheme:
    """Cauchy-kernel trapezoidal quadrature: M+1 nodes on [-K, K]."""

    eps: float
    c: float
    T: float
    K: int
    M: int
    nodes: np.ndarray
    weights: np.ndarray
    coeffs: np.ndarray


def build_quadrature(
    eps: float, c: float, T: float, *, emulate_float_truncation: bool = False
) -> QuadratureScheme:
    """Build the scheme with K = floor(c/eps) and M = floor(2KT/eps).

    By default K and M are computed from exact decimal rationals of the inputs,
    so e.g. T=0.6 gives M=12 rather than tripping over binary-float artifacts.
    ``emulate_float_truncation=True`` floors plain binary-float quotients
    instead, reproducing published node counts computed that way (T=0.6 -> 11).
    """
    if eps <= 0 or c <= 0 or T <= 0:
        raise ValueError("eps, c, T must all be positive")
    if emulate_float_truncation:
        k_cut = floor(c / eps)
        m = floor(2 * k_cut * T / eps)
    else:
        k_cut = int(Fraction(str(c)) / Fraction(str(eps)))
        m = int(2 * k_cut * Fraction(str(T)) / Fraction(str(eps)))
    if k_cut < 1:
        raise DegenerateQuadrature(f"K = floor({c}/{eps}) < 1")
    if m < 2:
        raise DegenerateQuadrature(f"M = {m} < 2 nodes")
    j = np.arange(m + 1)
    nodes = (2 * j - m) * (k_cut / m)
    weights = np.full(m + 1, 2 * k_cut / m, dtype=float)
    weights[0] = weights[-1] = k_cut / m
    coeffs = weights / (pi * (1.0 + nodes**2))
    return QuadratureScheme(
        eps=float(eps), c=float(c), T=float(T), K=k_cut, M=m,
        nodes=nodes, weights=weights, coeffs=coeffs,
    )


@dataclass(frozen=True)
class GeneratorSpec:
    """A = H - iL with Hermitian H and L; optionally time-dependent callables."""

    H: np.ndarray | object
    L: np.ndarray | object
    time_dependent: bool = False

    def __post_init__(self):
        if not self.time_dependent:
            h = np.asarray(self.H, dtype=complex)
            l_mat = np.asarray(self.L, dtype=complex)
            if h.shape != l_mat.shape or h.ndim != 2 or h.shape[0] != h.shape[1]:
                raise ValueError("H and L must be square matrices of equal dimension")
            if not is_hermitian(h) or not is_hermitian(l_mat):
                raise NotHermitian("H and L must both be Hermitian within 1e-10")
            object.__setattr__(self, "H", h)
            object.__setattr__(self, "L", l_mat)

    def at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        if self.time_dependent:
            return (
                np.asarray(self.H(t), dtype=complex),
                np.asarray(self.L(t), dtype=complex),
            )
        return self.H, self.L


@dataclass(frozen=True)
class EvolutionResult:
    """Assembled (unnormalized) state, optionally the per-node states."""

    state: np.ndarray
    per_node_states: tuple[np.ndarray, ...] | None = None
    observables: dict[str, float] = field(default_factory=dict)


def unitary_node(g: GeneratorSpec, k: float, T: float, dt: float = 0.01) -> np.ndarray:
    """exp(-i (H + k L) T), or its midpoint-sampled ordered product when H, L vary."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not g.time_dependent:
        return matexp(g.H + k * g.L, -1j * T)
    steps = _step_count(T, dt)
    u = None
    for s in range(steps):
        h_mid, l_mid = g.at((s + 0.5) * dt)
        step = matexp(h_mid + k * l_mid, -1j * dt)
        u = step if u is None else step @ u
    return u


def _step_count(T: float, dt: float) -> int:
    steps = round(T / dt)
    if steps < 1 or abs(steps * dt - T) > 1e-9 * max(1.0, abs(T)):
        raise ValueError(f"dt={dt} does not divide T={T}")
    return steps


def lchs_state(
    g: GeneratorSpec, u0, scheme: QuadratureScheme, dt: float = 0.01
) -> EvolutionResult:
    """u(T) = sum_j c_j U_j u0, keeping the per-node states."""
    u0 = np.asarray(u0, dtype=complex).reshape(-1)
    per_node = tuple(
        unitary_node(g, float(k), scheme.T, dt) @ u0 for k in scheme.nodes
    )
    state = np.zeros_like(u0)
    for c_j, v_j in zip(scheme.coeffs, per_node):
        state = state + c_j * v_j
    return EvolutionResult(state=state, per_node_states=per_node)


def lchs_expectation(
    g: GeneratorSpec,
    u0,
    scheme: QuadratureScheme,
    obs,
    normalize: bool = True,
    dt: float = 0.01,
) -> float:
    """sum_{k,k'} c_k c_k' <v_k|O|v_k'> over the (M+1)^2 node pairs.

    Each pairwise overlap maps to one estimator subtask; the summation order is
    lexicographic in (k, k') to match the runtime's aggregation order exactly.
    With ``normalize`` the form is divided by its O = identity counterpart.
    """
    if isinstance(obs, PauliString):
        obs = obs.matrix()
    obs = np.asarray(obs, dtype=complex)
    if not is_hermitian(obs):
        raise NotHermitian("lchs_expectation needs a Hermitian observable")
    result = lchs_state(g, u0, scheme, dt)
    v = result.per_node_states
    cs = scheme.coeffs
    numerator = 0.0 + 0j
    denominator = 0.0 + 0j
    for a in range(len(v)):
        for b in range(len(v)):
            weight = cs[a] * cs[b]
            numerator += weight * np.vdot(v[a], obs @ v[b])
            if normalize:
                denominator += weight * np.vdot(v[a], v[b])
    if normalize:
        value = numerator / denominator
    else:
        value = numerator
    if abs(value.imag) > 1e-9 * max(1.0, abs(value)):
        raise ValueError(f"expectation has imaginary residue {value.imag:.3e}")
    return float(value.real)


def imaginary_time(
    h, T: float, scheme: QuadratureScheme, dt: float = 0.01, u0=None
) -> EvolutionResult:
    """Approximate exp(-h T) u0 via the H := 0, L := h specialization.

    ``h`` must be Hermitian PSD (the Cauchy identity represents e^{-|x|}).
    ``u0`` defaults to |0...0>.
    """
    h = np.asarray(h, dtype=complex)
    if not is_hermitian(h):
        raise NotHermitian("imaginary-time generator must be Hermitian")
    if float(np.min(np.linalg.eigvalsh(h))) < -1e-10:
        raise NotPSD("imaginary-time evolution needs a PSD matrix")
    if abs(T - scheme.T) > 1e-12 * max(1.0, abs(T)):
        raise ValueError(f"T={T} disagrees with the scheme's T={scheme.T}")
    if u0 is None:
        u0 = np.zeros(h.shape[0], dtype=complex)
        u0[0] = 1.0
    g = GeneratorSpec(H=np.zeros_like(h), L=h)
    return lchs_state(g, u0, scheme, dt)


def trotter_oracle(g_or_a, u0, T: float, dt: float = 0.01) -> np.ndarray:
    """Reference integrator: u <- exp(-i A dt) u repeated T/dt times, A = H - iL."""
    if isinstance(g_or_a, GeneratorSpec):
        if g_or_a.time_dependent:
            raise ValueError("trotter oracle covers time-independent generators")
        a_mat = g_or_a.H - 1j * g_or_a.L
    else:
        a_mat = np.asarray(g_or_a, dtype=complex)
    u = np.asarray(u0, dtype=complex).reshape(-1)
    steps = _step_count(T, dt)
    step = matexp(a_mat, -1j * dt)
    for _ in range(steps):
        u = step @ u
    return u


def exact_ground(h) -> tuple[float, np.ndarray]:
    """Smallest eigenpair of a Hermitian matrix."""
    w, v = eigh(h)
    return float(w[0]), v[:, 0]


def parse_generator(obj: dict) -> tuple[GeneratorSpec, np.ndarray]:
    """Parse {"H": matrix, "L": matrix, "u0": vector} with [re, im] numeric pairs."""
    if not isinstance(obj, dict) or set(obj) != {"H", "L", "u0"}:
        raise ValueError("generator JSON must have exactly the keys H, L, u0")

    def matrix(rows) -> np.ndarray:
        return np.array(
            [[complex(float(e[0]), float(e[1])) for e in row] for row in rows],
            dtype=complex,
        )

    h = matrix(obj["H"])
    l_mat = matrix(obj["L"])
    u0 = np.array(
        [complex(float(e[0]), float(e[1])) for e in obj["u0"]], dtype=complex
    )
    return GeneratorSpec(H=h, L=l_mat), u0
