"""Density-matrix simulation of the Bernstein-Vazirani circuit under calibrated noise.

Density matrices are handled as arrays of shape ``(D, D)`` or batches
``(B, D, D)`` with ``D = 2**n_qubits``; qubit 0 is the most significant bit
of the basis index. Channel parameters may be scalars or length-``B`` arrays,
so a whole batch of noise realizations runs through the circuit at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .copula import DEFAULT_CHUNK_SIZE, CopulaJoint, chunk_rng, map_chunks, sample_normal_scores, scores_to_unit
from .noise_model import NoiseParameter, ParameterKind, unit_to_raw, validate_parameter_set

__all__ = [
    "DensityMatrix",
    "BvCircuit",
    "apply_depolarizing_1q",
    "apply_hadamard_noisy",
    "apply_cnot",
    "apply_cnot_noisy",
    "apply_dephasing",
    "apply_spam",
    "apply_pauli_channel_2q",
    "cnot_pauli_weights",
    "spam_kraus",
    "measurement_probabilities",
    "run_bv",
    "run_bv_batch",
    "bv_observable_analytic",
    "observable_samples",
    "mean_observable",
    "DEFAULT_QUBIT_LIMIT",
    "DEFAULT_CNOT_DURATION",
]

DEFAULT_QUBIT_LIMIT = 10
# Idle time charged per oracle CNOT a qubit waits through, in the units of T2.
DEFAULT_CNOT_DURATION = 0.4

_I2 = np.eye(2)
_X = np.array([[0.0, 1.0], [1.0, 0.0]])
_Y = np.array([[0.0, -1j], [1j, 0.0]])
_Z = np.diag([1.0, -1.0])
_H = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2.0)
PAULIS = (_I2, _X, _Y, _Z)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    n_qubits: int
    entries: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.entries)
        dim = 2**self.n_qubits
        if m.shape != (dim, dim):
            raise ValueError(f"{self.n_qubits} qubits need a {dim}x{dim} matrix, got {m.shape}")
        object.__setattr__(self, "entries", m)

    @classmethod
    def basis(cls, bits: Sequence[int]) -> DensityMatrix:
        dim = 2 ** len(bits)
        idx = int("".join(str(int(b)) for b in bits), 2) if bits else 0
        m = np.zeros((dim, dim))
        m[idx, idx] = 1.0
        return cls(len(bits), m)

    @classmethod
    def from_state(cls, psi: np.ndarray) -> DensityMatrix:
        psi = np.asarray(psi, dtype=complex)
        n = int(round(math.log2(psi.size)))
        psi = psi / np.linalg.norm(psi)
        return cls(n, np.outer(psi, psi.conj()))

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def check(self, tol: float = 1e-10, psd_tol: float = 1e-9) -> None:
        m = self.entries
        if np.max(np.abs(m - m.conj().T)) >= tol:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(m) - 1.0) >= tol:
            raise ValueError(f"density matrix trace is {np.trace(m)}")
        if np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min() < -psd_tol:
            raise ValueError("density matrix has a negative eigenvalue")


# ---------------------------------------------------------------------------
# Array plumbing


def _as_batch(rho):
    """Return ``(batch array, n_qubits, rewrap)`` for any accepted input."""
    if isinstance(rho, DensityMatrix):
        n = rho.n_qubits
        return rho.entries[None], n, lambda out: DensityMatrix(n, out[0])
    a = np.asarray(rho)
    single = a.ndim == 2
    batch = a[None] if single else a
    n = int(round(math.log2(batch.shape[-1])))
    if batch.ndim != 3 or batch.shape[1] != batch.shape[2] or 2**n != batch.shape[-1]:
        raise ValueError(f"expected a (D, D) or (B, D, D) array with D a power of 2, got {a.shape}")
    return batch, n, (lambda out: out[0]) if single else (lambda out: out)


def _view(batch: np.ndarray, q: int, n: int) -> np.ndarray:
    if not 0 <= q < n:
        raise ValueError(f"qubit {q} out of range for {n} qubits")
    left, right = 2**q, 2 ** (n - q - 1)
    return batch.reshape(batch.shape[0], left, 2, right, left, 2, right)


def _prob(p, name: str, batch: int, hi: float = 1.0) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if np.any(~(arr >= 0.0)) or np.any(arr > hi):
        raise ValueError(f"{name} must lie in [0, {hi:g}]")
    return np.broadcast_to(arr, (batch,)) if arr.ndim == 0 else arr


def _weight(w: np.ndarray) -> np.ndarray:
    return w[:, None, None, None, None, None, None]


def _mix_with_identity(batch: np.ndarray, q: int, n: int, p: np.ndarray) -> np.ndarray:
    """``(1-p) rho + p * (I/2 on q) (x) Tr_q rho`` with per-batch ``p``."""
    v = _view(batch, q, n)
    reduced = 0.5 * (v[:, :, 0, :, :, 0, :] + v[:, :, 1, :, :, 1, :])
    out = v * _weight(1.0 - p)
    pr = p[:, None, None, None, None] * reduced
    out[:, :, 0, :, :, 0, :] += pr
    out[:, :, 1, :, :, 1, :] += pr
    return out.reshape(batch.shape)


def _conjugate_1q(batch: np.ndarray, q: int, n: int, u: np.ndarray) -> np.ndarray:
    v = _view(batch, q, n)
    a, b = v[:, :, 0:1], v[:, :, 1:2]
    v = np.concatenate([u[0, 0] * a + u[0, 1] * b, u[1, 0] * a + u[1, 1] * b], axis=2)
    uc = u.conj()
    a, b = v[:, :, :, :, :, 0:1], v[:, :, :, :, :, 1:2]
    v = np.concatenate([uc[0, 0] * a + uc[0, 1] * b, uc[1, 0] * a + uc[1, 1] * b], axis=5)
    return v.reshape(batch.shape)


def _flip(batch: np.ndarray, q: int, n: int) -> np.ndarray:
    return _view(batch, q, n)[:, :, ::-1, :, :, ::-1, :].reshape(batch.shape)


def _cnot_perm(control: int, target: int, n: int) -> np.ndarray:
    idx = np.arange(2**n)
    cbit = (idx >> (n - 1 - control)) & 1
    return idx ^ (cbit << (n - 1 - target))


# ---------------------------------------------------------------------------
# Channels


def apply_depolarizing_1q(rho, qubit: int, p):
    """Isotropic depolarizing: ``(1 - 3p/4) rho + (p/4)(X rho X + Y rho Y + Z rho Z)``."""
    batch, n, wrap = _as_batch(rho)
    return wrap(_mix_with_identity(batch, qubit, n, _prob(p, "depolarizing p", batch.shape[0])))


def apply_hadamard_noisy(rho, qubit: int, fidelity):
    """Hadamard with probability ``F``, otherwise the qubit is replaced by ``I/2``."""
    batch, n, wrap = _as_batch(rho)
    f = _prob(fidelity, "Hadamard fidelity", batch.shape[0])
    return wrap(_mix_with_identity(_conjugate_1q(batch, qubit, n, _H), qubit, n, 1.0 - f))


def apply_cnot(rho, control: int, target: int):
    batch, n, wrap = _as_batch(rho)
    if control == target:
        raise ValueError("control and target must differ")
    perm = _cnot_perm(control, target, n)
    return wrap(batch[:, perm][:, :, perm])


def cnot_pauli_weights(fidelity: float) -> np.ndarray:
    """4x4 weights ``w[a, b]`` of ``P_a (x) P_b`` in the two-qubit CNOT error channel.

    Each qubit independently keeps its state with probability ``F`` or suffers
    one of X, Y, Z with probability ``(1-F)/3``.
    """
    if not 0.0 <= fidelity <= 1.0:
        raise ValueError("CNOT fidelity must lie in [0, 1]")
    single = np.array([fidelity] + [(1 - fidelity) / 3] * 3)
    return np.outer(single, single)


def apply_pauli_channel_2q(rho, q1: int, q2: int, weights: np.ndarray):
    """Explicit sum ``sum_ab w[a,b] (P_a (x) P_b) rho (P_a (x) P_b)``; slow, reference only."""
    batch, n, wrap = _as_batch(rho)
    batch = batch.astype(complex)
    out = np.zeros_like(batch)
    for a in range(4):
        left = _conjugate_1q(batch, q1, n, PAULIS[a])
        for b in range(4):
            if weights[a, b] != 0.0:
                out += weights[a, b] * _conjugate_1q(left, q2, n, PAULIS[b])
    return wrap(out)


def _cnot_error(batch: np.ndarray, control: int, target: int, n: int, f: np.ndarray) -> np.ndarray:
    # The product Pauli channel acts on each qubit as F rho + (1-F)/3 sum_P P rho P,
    # i.e. a depolarizing mix with p = 4(1-F)/3.
    p = 4.0 * (1.0 - f) / 3.0
    return _mix_with_identity(_mix_with_identity(batch, control, n, p), target, n, p)


def apply_cnot_noisy(rho, control: int, target: int, fidelity):
    """Ideal CNOT followed by the product two-qubit Pauli error channel."""
    batch, n, wrap = _as_batch(rho)
    f = _prob(fidelity, "CNOT fidelity", batch.shape[0])
    out = apply_cnot(batch, control, target)
    return wrap(_cnot_error(out, control, target, n, f))


def apply_dephasing(rho, qubit: int, t_idle, t2):
    """Pure dephasing: coherences on ``qubit`` shrink by ``exp(-t_idle / (2 T2))``."""
    batch, n, wrap = _as_batch(rho)
    t = np.broadcast_to(np.asarray(t_idle, dtype=float), (batch.shape[0],))
    t2a = np.broadcast_to(np.asarray(t2, dtype=float), (batch.shape[0],))
    if np.any(~(t2a > 0)):
        raise ValueError("T2 must be positive")
    if np.any(~(t >= 0)):
        raise ValueError("idle time must be non-negative")
    with np.errstate(invalid="ignore"):
        factor = np.where(t == 0, 1.0, np.exp(-t / (2.0 * t2a)))
    v = _view(batch, qubit, n).copy()
    v[:, :, 0, :, :, 1, :] *= factor[:, None, None, None, None]
    v[:, :, 1, :, :, 0, :] *= factor[:, None, None, None, None]
    return wrap(v.reshape(batch.shape))


def spam_kraus(fidelity: float) -> tuple[np.ndarray, np.ndarray]:
    """Readout operators ``M0 = sqrt(F)|0><0| + sqrt(1-F)|1><1|`` and its complement ``M1``."""
    if not 0.0 <= fidelity <= 1.0:
        raise ValueError("SPAM fidelity must lie in [0, 1]")
    a, b = math.sqrt(fidelity), math.sqrt(1.0 - fidelity)
    return np.diag([a, b]), np.diag([b, a])


def measurement_probabilities(rho, qubit: int, fidelity: float) -> tuple[float, float]:
    """``Tr(M_i^dagger M_i rho)`` for the readout operators of :func:`spam_kraus`."""
    batch, n, _ = _as_batch(rho)
    if batch.shape[0] != 1:
        raise ValueError("expects a single density matrix")
    v = _view(batch, qubit, n)[0]
    p0 = float(np.real(np.einsum("lrlr->", v[:, 0, :, :, 0, :])))
    p1 = float(np.real(np.einsum("lrlr->", v[:, 1, :, :, 1, :])))
    m0, m1 = spam_kraus(fidelity)
    return (m0[0, 0] ** 2 * p0 + m0[1, 1] ** 2 * p1, m1[0, 0] ** 2 * p0 + m1[1, 1] ** 2 * p1)


def apply_spam(rho, qubit: int, fidelity):
    """Readout error as a classical bit flip: ``F rho + (1-F) X rho X``.

    The computational-basis statistics equal those of the readout operators
    in :func:`spam_kraus`, so a noiseless projective readout afterwards gives
    ``Pr(0) = F rho_00 + (1-F) rho_11``.
    """
    batch, n, wrap = _as_batch(rho)
    f = _prob(fidelity, "SPAM fidelity", batch.shape[0])
    return wrap(batch * f[:, None, None] + _flip(batch, qubit, n) * (1.0 - f)[:, None, None])


# ---------------------------------------------------------------------------
# Bernstein-Vazirani


@dataclass(frozen=True)
class BvCircuit:
    """Secret ``r`` of length ``n``, ancilla at index ``n``, noise bound by ``params``.

    ``params`` is either a full calibrated set (SPAM, CNOT, dephasing,
    Hadamard) or a depolarizing-only set with one strength per data qubit.
    ``idle_times[q]`` is the dephasing window of qubit ``q``; by default a
    qubit idles one ``cnot_duration`` for every oracle CNOT it is not part of.
    """

    secret: tuple[int, ...]
    params: tuple[NoiseParameter, ...]
    idle_times: tuple[float, ...] | None = None
    cnot_duration: float = DEFAULT_CNOT_DURATION
    qubit_limit: int = DEFAULT_QUBIT_LIMIT
    _bindings: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        secret = tuple(int(b) for b in self.secret)
        if not secret or any(b not in (0, 1) for b in secret):
            raise ValueError("secret must be a non-empty bit string")
        object.__setattr__(self, "secret", secret)
        object.__setattr__(self, "params", tuple(self.params))
        n = len(secret)
        if n > self.qubit_limit:
            raise ValueError(f"secret length {n} exceeds the qubit limit {self.qubit_limit}; use the analytic observable")
        validate_parameter_set(self.params)
        bindings = {p.site: p.id for p in self.params}
        expected = self.expected_sites()
        missing = [s for s in expected if s not in bindings]
        extra = [s for s in bindings if s not in expected]
        if missing:
            raise ValueError(f"incomplete noise bindings, missing {missing}")
        if extra:
            raise ValueError(f"parameters bound to sites not in the circuit: {extra}")
        object.__setattr__(self, "_bindings", bindings)
        if self.idle_times is not None:
            idle = tuple(float(t) for t in self.idle_times)
            if len(idle) != n + 1 or any(t < 0 for t in idle):
                raise ValueError(f"idle_times needs {n + 1} non-negative durations")
            object.__setattr__(self, "idle_times", idle)

    @property
    def n(self) -> int:
        return len(self.secret)

    @property
    def d(self) -> int:
        return len(self.params)

    @property
    def depolarizing_only(self) -> bool:
        return all(p.kind is ParameterKind.DEPOLARIZING for p in self.params)

    @property
    def oracle_controls(self) -> tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.secret) if b)

    def expected_sites(self) -> list[tuple]:
        n = self.n
        if self.params and self.params[0].kind is ParameterKind.DEPOLARIZING:
            return [(ParameterKind.DEPOLARIZING.value, q) for q in range(n)]
        sites = [(ParameterKind.SPAM_FIDELITY.value, q) for q in range(n)]
        sites += [(ParameterKind.CNOT_FIDELITY.value, q, n) for q in self.oracle_controls]
        sites += [(ParameterKind.DEPHASING_TIME.value, q) for q in range(n + 1)]
        sites += [(ParameterKind.HADAMARD_FIDELITY.value, q) for q in range(n + 1)]
        return sites

    def index(self, kind: ParameterKind, *targets: int) -> int:
        return self._bindings[(kind.value, *targets)]

    @cached_property
    def idle(self) -> tuple[float, ...]:
        if self.idle_times is not None:
            return self.idle_times
        controls = self.oracle_controls
        waits = [len(controls) - (q in controls) for q in range(self.n)]
        return tuple(self.cnot_duration * w for w in waits) + (0.0,)

    @property
    def secret_index(self) -> int:
        return int("".join(map(str, self.secret)), 2)


def _initial_batch(n: int, batch: int) -> np.ndarray:
    # Data qubits in |0>, ancilla in |1>.
    dim = 2 ** (n + 1)
    rho = np.zeros((batch, dim, dim))
    rho[:, 1, 1] = 1.0
    return rho


def _success_probability(rho: np.ndarray, circuit: BvCircuit) -> np.ndarray:
    diag = np.real(np.diagonal(rho, axis1=1, axis2=2)).reshape(rho.shape[0], 2**circuit.n, 2)
    return diag[:, circuit.secret_index, :].sum(axis=1)


def run_bv_batch(circuit: BvCircuit, x: np.ndarray) -> np.ndarray:
    """Success probability ``Pr(r)`` for each row of raw noise values ``x`` (shape ``(B, d)``).

    Fidelities are used as given; dephasing entries are T2 values in the same
    units as the idle times.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != circuit.d:
        raise ValueError(f"noise realization has {x.shape[1]} entries, circuit has {circuit.d} parameters")
    n, batch = circuit.n, x.shape[0]
    nq = n + 1
    rho = _initial_batch(n, batch)
    kind = ParameterKind
    if circuit.depolarizing_only:
        for q in range(nq):
            rho = _conjugate_1q(rho, q, nq, _H)
        for q in range(n):
            rho = _mix_with_identity(rho, q, nq, _prob(x[:, circuit.index(kind.DEPOLARIZING, q)], "depolarizing p", batch))
        for c in circuit.oracle_controls:
            rho = apply_cnot(rho, c, n)
        for q in range(n):
            rho = _conjugate_1q(rho, q, nq, _H)
        return _success_probability(rho, circuit)

    def col(k: ParameterKind, *t: int) -> np.ndarray:
        return x[:, circuit.index(k, *t)]

    for q in range(nq):
        rho = apply_hadamard_noisy(rho, q, col(kind.HADAMARD_FIDELITY, q))
    for q in range(nq):
        if circuit.idle[q] > 0:
            rho = apply_dephasing(rho, q, circuit.idle[q], col(kind.DEPHASING_TIME, q))
    for c in circuit.oracle_controls:
        rho = apply_cnot_noisy(rho, c, n, col(kind.CNOT_FIDELITY, c, n))
    for q in range(n):
        rho = apply_hadamard_noisy(rho, q, col(kind.HADAMARD_FIDELITY, q))
    for q in range(n):
        rho = apply_spam(rho, q, col(kind.SPAM_FIDELITY, q))
    return _success_probability(rho, circuit)


def run_bv(circuit: BvCircuit, x: Sequence[float]) -> float:
    return float(run_bv_batch(circuit, np.asarray(x, dtype=float)[None, :])[0])


def bv_observable_analytic(x) -> float | np.ndarray:
    """``prod_i (1 - x_i / 2)`` over the last axis of ``x``."""
    xa = np.asarray(x, dtype=float)
    if np.any(~(xa >= 0.0)) or np.any(xa > 1.0):
        raise ValueError("depolarizing strengths must lie in [0, 1]")
    out = np.prod(1.0 - 0.5 * xa, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Noise-averaged observable


def _raw_values(circuit: BvCircuit, u: np.ndarray) -> np.ndarray:
    raw = u.copy()
    for p in circuit.params:
        if p.rescale is not None:
            raw[:, p.id] = unit_to_raw(u[:, p.id], p)
    return raw


def observable_samples(
    circuit: BvCircuit | None,
    joint: CopulaJoint,
    n_samples: int,
    seed: int | Sequence[int],
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> np.ndarray:
    """Observable value for each of ``n_samples`` noise draws from ``joint``.

    ``circuit=None`` selects the analytic depolarizing observable. Draws use
    the chunk-seeded stream of :func:`reliab.copula.sample`, so equal seeds
    give common random numbers across epochs.
    """
    if circuit is not None and circuit.d != joint.d:
        raise ValueError(f"joint has dimension {joint.d}, circuit has {circuit.d} parameters")
    if circuit is not None:
        dim = 2 ** (circuit.n + 1)
        sub = max(1, (1 << 20) // (dim * dim))

    def chunk(k: int, size: int) -> np.ndarray:
        u = scores_to_unit(joint, sample_normal_scores(joint, size, chunk_rng(seed, k)))
        if circuit is None:
            return bv_observable_analytic(u)
        raw = _raw_values(circuit, u)
        return np.concatenate([run_bv_batch(circuit, raw[i : i + sub]) for i in range(0, size, sub)])

    return np.concatenate(map_chunks(chunk, int(n_samples), chunk_size))


def mean_observable(
    circuit: BvCircuit | None,
    joint: CopulaJoint,
    n_samples: int,
    seed: int | Sequence[int],
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> tuple[float, float]:
    """Monte-Carlo mean and standard error of the observable over ``joint``."""
    v = observable_samples(circuit, joint, n_samples, seed, chunk_size)
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se
