"""Execute task plans on a pool of simulated QPU nodes and aggregate results.

Two node flavors speak one task format: in-process exact backends (optionally
shot-sampling) and remote workers reached over a TCP newline-delimited JSON
protocol. Scheduling is static round-robin by task id; aggregation is an
ordered reduce so results are bit-identical across node counts and transports.
"""

from __future__ import annotations

import json
import socket
import socketserver
import sys
import threading
from dataclasses import dataclass, replace

import numpy as np

from .circuit import (
    Circuit,
    Gate,
    PauliString,
    basis_state,
    circuit_to_json,
    gate_matrix,
    parse_circuit,
    simulate,
    _apply,
)
from .planner import Subtask, build_estimator_circuit

__all__ = [
    "ClusterConfig",
    "TaskSpec",
    "TaskResult",
    "ExactBackend",
    "NodeFailure",
    "CapabilityMismatch",
    "MissingResult",
    "PROTOCOL_VERSION",
    "sample_shots",
    "execute_tasks",
    "run_plan",
    "aggregate",
    "run_density_path",
    "WorkerServer",
    "serve_worker",
]

PROTOCOL_VERSION = 1


class NodeFailure(RuntimeError):
    """Raised when a task cannot be completed within the retry budget."""


class CapabilityMismatch(ValueError):
    """Raised when a task exceeds what the target node can execute."""


class MissingResult(KeyError):
    """Raised when aggregation lacks a result for a plan task."""


@dataclass(frozen=True)
class ClusterConfig:
    """How to run a plan: local in-process nodes or remote TCP workers.

    mode="local": ``nodes`` is a node count. mode="network": ``nodes`` is a
    tuple of "host:port" worker addresses. ``shots=None`` means exact
    expectations; otherwise each readout is estimated from that many samples.
    """

    mode: str = "local"
    nodes: int | tuple[str, ...] = 1
    shots: int | None = None
    seed: int = 0
    retry_limit: int = 2

    def __post_init__(self):
        if self.mode not in ("local", "network"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "local":
            if not isinstance(self.nodes, int) or self.nodes < 1:
                raise ValueError("local mode needs a node count >= 1")
        else:
            addrs = tuple(self.nodes) if not isinstance(self.nodes, int) else ()
            if not addrs or not all(isinstance(a, str) and ":" in a for a in addrs):
                raise ValueError("network mode needs a tuple of host:port addresses")
            object.__setattr__(self, "nodes", addrs)
        if self.shots is not None and (not isinstance(self.shots, int) or self.shots < 1):
            raise ValueError("shots must be >= 1 when present")
        if self.retry_limit < 1:
            raise ValueError("retry_limit must be >= 1")


@dataclass(frozen=True, eq=False)
class TaskSpec:
    """One executable task: a circuit plus readout descriptors.

    kind="estimator" simulates a statevector from |0...0>; kind="density"
    propagates |0...0><0...0| through possibly non-unitary RAW maps without
    renormalization. Readout descriptors:
      - "ax" / "ay": <sigma_x> / <sigma_y> on qubit 0 (the ancilla)
      - "p0:<P>" / "p1:<P>": ancilla projector correlated with Pauli P on the rest
      - "e:<P>": plain Pauli expectation over all qubits
    """

    id: int
    kind: str
    circuit: Circuit
    readouts: tuple[str, ...]


@dataclass(frozen=True)
class TaskResult:
    task_id: int
    value: complex | tuple[float, ...]
    shots_used: int
    node_id: int | str


def sample_shots(exact_probs, n: int, rng: np.random.Generator) -> np.ndarray:
    """Empirical frequency vector of n multinomial draws from exact_probs."""
    p = np.asarray(exact_probs, dtype=float)
    total = float(np.sum(p))
    if abs(total - 1.0) > 1e-9 or np.any(p < -1e-9):
        raise ValueError("probabilities must be normalized within 1e-9")
    p = np.clip(p, 0.0, None)
    p = p / float(np.sum(p))
    if n < 1:
        raise ValueError("need at least one sample")
    counts = rng.multinomial(n, p)
    return counts / float(n)


_ROT_X = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2.0)  # H: X -> Z
_ROT_Y = _ROT_X @ np.diag([1.0, -1.0j]).astype(complex)  # H S^dag: Y -> Z


def _parse_readout(desc: str, n_qubits: int) -> tuple[str | None, str]:
    """Split a readout descriptor into (ancilla part, Pauli letters over the rest)."""
    if desc in ("ax", "ay"):
        return desc, "I" * (n_qubits - 1)
    for prefix in ("p0:", "p1:", "e:"):
        if desc.startswith(prefix):
            letters = desc[len(prefix):]
            want = n_qubits if prefix == "e:" else n_qubits - 1
            if len(letters) != want or any(ch not in "IXYZ" for ch in letters):
                raise ValueError(f"bad readout descriptor {desc!r}")
            return (None if prefix == "e:" else prefix[:2]), letters
    raise ValueError(f"unknown readout descriptor {desc!r}")


def _readout_basis(desc: str, n_qubits: int) -> tuple[list[tuple[int, np.ndarray]], np.ndarray]:
    """Rotations mapping the readout to the computational basis, plus outcome values.

    Returns (rotations as (qubit, 2x2 matrix) pairs, value per basis index).
    """
    anc, letters = _parse_readout(desc, n_qubits)
    rotations: list[tuple[int, np.ndarray]] = []
    letter_of_qubit: dict[int, str] = {}
    offset = 0 if anc is None else 1
    if anc == "ax":
        rotations.append((0, _ROT_X))
        letter_of_qubit[0] = "Z"
    elif anc == "ay":
        rotations.append((0, _ROT_Y))
        letter_of_qubit[0] = "Z"
    for idx, ch in enumerate(letters):
        q = idx + offset
        if ch == "X":
            rotations.append((q, _ROT_X))
        elif ch == "Y":
            rotations.append((q, _ROT_Y))
        if ch != "I":
            letter_of_qubit[q] = "Z"
    values = np.ones(2**n_qubits)
    for q in letter_of_qubit:
        bit = (np.arange(2**n_qubits) >> (n_qubits - 1 - q)) & 1
        values = values * (1.0 - 2.0 * bit)
    if anc in ("p0", "p1"):
        anc_bit = (np.arange(2**n_qubits) >> (n_qubits - 1)) & 1
        keep = 0 if anc == "p0" else 1
        values = values * (anc_bit == keep)
    return rotations, values


def _lift(gate: Gate, n_qubits: int) -> np.ndarray:
    """Dense operator of one gate on the full register (no unitarity check)."""
    dim = 2**n_qubits
    batch = np.eye(dim, dtype=complex).reshape((2,) * n_qubits + (dim,))
    batch = _apply(batch, gate_matrix(gate), gate.qubits)
    return batch.reshape(dim, dim)


def _density_evolve(c: Circuit) -> np.ndarray:
    """Propagate |0...0><0...0| through the gate list as K rho K^dagger maps."""
    dim = 2**c.n_qubits
    rho = np.zeros((dim, dim), dtype=complex)
    rho[0, 0] = 1.0
    for g in c.gates:
        full = _lift(g, c.n_qubits)
        rho = full @ rho @ full.conj().T
    return rho


def _grouped(values: np.ndarray, probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Collapse basis outcomes into (distinct value, total probability) groups."""
    keys = np.round(values, 12)
    uniq = np.unique(keys)
    grouped_p = np.array([float(np.sum(probs[keys == u])) for u in uniq])
    return uniq, grouped_p


@dataclass
class ExactBackend:
    """In-process node: dense statevector / density simulation up to 12 qubits.

    Stateless between calls; with shots, the RNG stream is derived from
    (seed, task id, readout index) so results do not depend on which node or
    transport ran the task.
    """

    max_qubits: int = 12

    @property
    def capabilities(self) -> dict:
        return {
            "max_qubits": self.max_qubits,
            "modes": ("exact_expectation", "shot_sampling", "density_matrix"),
        }

    def run_task(
        self, task: TaskSpec, shots: int | None, seed: int
    ) -> tuple[tuple[float, ...], int]:
        n = task.circuit.n_qubits
        if n > self.max_qubits:
            raise CapabilityMismatch(
                f"task {task.id} needs {n} qubits, node supports {self.max_qubits}"
            )
        if task.kind == "estimator":
            state: np.ndarray | None = simulate(task.circuit, basis_state(n))
            rho = None
        elif task.kind == "density":
            state = None
            rho = _density_evolve(task.circuit)
        else:
            raise ValueError(f"unknown task kind {task.kind!r}")
        values: list[float] = []
        for ridx, desc in enumerate(task.readouts):
            rotations, outcome_values = _readout_basis(desc, n)
            if state is not None:
                rotated = state.reshape((2,) * n)
                for q, rot in rotations:
                    rotated = _apply(rotated, rot, (q,))
                probs = np.abs(rotated.reshape(-1)) ** 2
            else:
                rho_rot = rho
                for q, rot in rotations:
                    full = _lift(Gate("RAW", (q,), raw=rot), n)
                    rho_rot = full @ rho_rot @ full.conj().T
                probs = np.clip(np.real(np.diag(rho_rot)), 0.0, None)
            if shots is None:
                values.append(float(np.dot(probs, outcome_values)))
            else:
                group_vals, group_probs = _grouped(outcome_values, probs)
                tail = 1.0 - float(np.sum(group_probs))
                if tail > 1e-12:
                    # unnormalized density path: a discarded outcome worth 0
                    group_vals = np.append(group_vals, 0.0)
                    group_probs = np.append(group_probs, tail)
                rng = np.random.default_rng((seed, task.id, ridx))
                freq = sample_shots(group_probs, shots, rng)
                values.append(float(np.dot(freq, group_vals)))
        shots_used = 0 if shots is None else shots * len(task.readouts)
        return tuple(values), shots_used


def run_density_path(subcircuit: Circuit, settings) -> list[float]:
    """Exact helper: propagate the (possibly non-unitary) map list and read Tr(rho' P)."""
    rho = _density_evolve(subcircuit)
    out: list[float] = []
    for setting in settings:
        letters = setting.letters if isinstance(setting, PauliString) else str(setting)
        rotations, values = _readout_basis(f"e:{letters}", subcircuit.n_qubits)
        rho_rot = rho
        for q, rot in rotations:
            full = _lift(Gate("RAW", (q,), raw=rot), subcircuit.n_qubits)
            rho_rot = full @ rho_rot @ full.conj().T
        out.append(float(np.dot(np.real(np.diag(rho_rot)), values)))
    return out


# --- wire protocol (network mode) ----------------------------------------------

def _task_message(task: TaskSpec, shots: int | None, seed: int) -> dict:
    return {
        "type": "task",
        "id": task.id,
        "kind": task.kind,
        "circuit": circuit_to_json(task.circuit),
        "readout": list(task.readouts),
        "shots": shots,
        "seed": seed,
    }


class _WorkerHandler(socketserver.StreamRequestHandler):
    def handle(self):  # one connection; one JSON message per line
        for raw_line in self.rfile:
            line = raw_line.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            try:
                msg = json.loads(line)
                mtype = msg["type"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                self._send({"type": "error", "id": -1, "message": f"malformed message: {exc}"})
                continue
            if mtype == "hello":
                if msg.get("proto") != PROTOCOL_VERSION:
                    self._send(
                        {
                            "type": "error",
                            "id": -1,
                            "message": f"unsupported protocol {msg.get('proto')!r}",
                        }
                    )
                    return  # close the connection on version mismatch
                self._send(
                    {
                        "type": "hello_ack",
                        "proto": PROTOCOL_VERSION,
                        "max_qubits": self.server.backend.max_qubits,
                    }
                )
            elif mtype == "task":
                self._handle_task(msg)
            elif mtype == "shutdown":
                threading.Thread(target=self.server.shutdown, daemon=True).start()
                return
            else:
                self._send({"type": "error", "id": -1, "message": f"unknown type {mtype!r}"})

    def _handle_task(self, msg: dict):
        task_id = msg.get("id", -1)
        try:
            kind = msg["kind"]
            if kind not in ("estimator", "density"):
                raise ValueError(f"unknown task kind {kind!r}")
            circuit = parse_circuit(msg["circuit"], require_unitary=(kind == "estimator"))
            task = TaskSpec(
                id=int(task_id),
                kind=kind,
                circuit=circuit,
                readouts=tuple(str(r) for r in msg["readout"]),
            )
            shots = msg.get("shots")
            shots = None if shots is None else int(shots)
            seed = int(msg.get("seed", 0))
            self.server.count_task()
            values, shots_used = self.server.backend.run_task(task, shots, seed)
        except Exception as exc:  # report, keep serving
            self._send({"type": "error", "id": task_id, "message": str(exc)})
            return
        self._send(
            {
                "type": "result",
                "id": task.id,
                "values": [[float(v), 0.0] for v in values],
                "shots_used": shots_used,
            }
        )

    def _send(self, obj: dict):
        if self.server.should_drop():
            # testing hook: simulate a crashed node by slamming the connection
            self.connection.close()
            raise ConnectionAbortedError("worker dropped by failure-injection hook")
        self.wfile.write((json.dumps(obj) + "\n").encode("utf-8"))
        self.wfile.flush()


class WorkerServer(socketserver.ThreadingTCPServer):
    """TCP worker speaking the task protocol; one JSON message per line.

    ``fail_after_tasks`` is a failure-injection hook for tests: after that many
    tasks have been accepted, the worker drops connections as if it crashed.
    """

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], max_qubits: int = 12,
                 fail_after_tasks: int | None = None):
        super().__init__(address, _WorkerHandler)
        self.backend = ExactBackend(max_qubits=max_qubits)
        self.fail_after_tasks = fail_after_tasks
        self._tasks_seen = 0
        self._lock = threading.Lock()

    def count_task(self):
        with self._lock:
            self._tasks_seen += 1

    def should_drop(self) -> bool:
        with self._lock:
            return (
                self.fail_after_tasks is not None
                and self._tasks_seen > self.fail_after_tasks
            )

    def handle_error(self, request, client_address):
        # A controller hanging up mid-stream (or the failure-injection hook)
        # is routine, not a server error worth a traceback.
        exc = sys.exc_info()[1]
        if isinstance(exc, (ConnectionError, BrokenPipeError, OSError)):
            return
        super().handle_error(request, client_address)


def serve_worker(listen_address: str, *, max_qubits: int = 12, announce=None):
    """Run a worker until a shutdown message arrives. Blocks."""
    host, _, port_text = listen_address.rpartition(":")
    server = WorkerServer((host or "127.0.0.1", int(port_text)), max_qubits=max_qubits)
    bound = server.server_address
    line = f"tlpq-worker listening on {bound[0]}:{bound[1]}"
    if announce is None:
        print(line, flush=True)
    else:
        announce(line)
    try:
        server.serve_forever()
    finally:
        server.server_close()


class _WorkerClient:
    """Controller-side persistent connection to one worker."""

    def __init__(self, address: str):
        self.address = address
        self.sock: socket.socket | None = None
        self.file = None
        self.max_qubits: int | None = None

    def _connect(self):
        host, _, port_text = self.address.rpartition(":")
        self.sock = socket.create_connection((host, int(port_text)), timeout=30)
        self.file = self.sock.makefile("rwb")
        self._send({"type": "hello", "proto": PROTOCOL_VERSION})
        ack = self._recv()
        if ack.get("type") != "hello_ack" or ack.get("proto") != PROTOCOL_VERSION:
            raise ConnectionError(f"bad handshake from {self.address}: {ack}")
        self.max_qubits = int(ack["max_qubits"])

    def _send(self, obj: dict):
        self.file.write((json.dumps(obj) + "\n").encode("utf-8"))
        self.file.flush()

    def _recv(self) -> dict:
        line = self.file.readline()
        if not line:
            raise ConnectionError(f"connection to {self.address} closed")
        return json.loads(line.decode("utf-8"))

    def run_task(
        self, task: TaskSpec, shots: int | None, seed: int
    ) -> tuple[tuple[float, ...], int]:
        if self.sock is None:
            self._connect()
        if task.circuit.n_qubits > self.max_qubits:
            raise CapabilityMismatch(
                f"task {task.id} needs {task.circuit.n_qubits} qubits, "
                f"worker {self.address} supports {self.max_qubits}"
            )
        self._send(_task_message(task, shots, seed))
        reply = self._recv()
        if reply.get("type") == "error":
            raise RuntimeError(f"worker {self.address}: {reply.get('message')}")
        if reply.get("type") != "result" or reply.get("id") != task.id:
            raise ConnectionError(f"unexpected reply from {self.address}: {reply}")
        values = tuple(float(re) for re, _ in reply["values"])
        return values, int(reply["shots_used"])

    def shutdown(self):
        try:
            if self.sock is None:
                self._connect()
            self._send({"type": "shutdown"})
        except OSError:
            pass
        self.close()

    def close(self):
        if self.sock is not None:
            try:
                self.sock.close()
            except OSError:
                pass
        self.sock = None
        self.file = None


def execute_tasks(tasks: list[TaskSpec], cfg: ClusterConfig) -> list[TaskResult]:
    """Run every task exactly once; assignment is task id modulo node count.

    Dead nodes are skipped; a failed dispatch retries on the next node in ring
    order, and the task only fails after retry_limit distinct attempts.
    Results are returned in ascending task id order.
    """
    tasks = sorted(tasks, key=lambda t: t.id)
    if cfg.mode == "local":
        backend = ExactBackend()
        worst = max((t.circuit.n_qubits for t in tasks), default=0)
        if worst > backend.max_qubits:
            raise CapabilityMismatch(
                f"plan needs {worst} qubits, nodes support {backend.max_qubits}"
            )
        out = []
        for t in tasks:
            values, shots_used = backend.run_task(t, cfg.shots, cfg.seed)
            out.append(
                TaskResult(
                    task_id=t.id,
                    value=values,
                    shots_used=shots_used,
                    node_id=t.id % cfg.nodes,
                )
            )
        return out
    addresses = list(cfg.nodes)
    clients = [_WorkerClient(a) for a in addresses]
    alive = [True] * len(clients)
    out = []
    try:
        for t in tasks:
            start = t.id % len(clients)
            attempts = 0
            result: TaskResult | None = None
            failure: Exception | None = None
            for k in range(len(clients)):
                idx = (start + k) % len(clients)
                if not alive[idx] or attempts >= cfg.retry_limit:
                    continue
                attempts += 1
                try:
                    values, shots_used = clients[idx].run_task(t, cfg.shots, cfg.seed)
                    result = TaskResult(
                        task_id=t.id,
                        value=values,
                        shots_used=shots_used,
                        node_id=addresses[idx],
                    )
                    break
                except (OSError, ConnectionError, json.JSONDecodeError) as exc:
                    failure = exc
                    alive[idx] = False
                    clients[idx].close()
            if result is None:
                raise NodeFailure(
                    f"task {t.id} failed after {attempts} attempt(s): {failure}"
                )
            out.append(result)
        return out
    finally:
        for c in clients:
            c.close()


def run_plan(plan: list[Subtask], cfg: ClusterConfig) -> list[TaskResult]:
    """Execute a subtask plan; each result's value is the complex overlap."""
    tasks = []
    for s in plan:
        est = build_estimator_circuit(s)
        prep = tuple(
            Gate("X", (1 + idx,))
            for idx, ch in enumerate(s.input_label)
            if ch == "1"
        )
        tasks.append(
            TaskSpec(
                id=s.id,
                kind="estimator",
                circuit=Circuit(est.circuit.n_qubits, prep + est.circuit.gates),
                readouts=est.readouts,
            )
        )
    raw = execute_tasks(tasks, cfg)
    return [
        replace(r, value=complex(r.value[0], r.value[1]))
        for r in raw
    ]


def aggregate(plan: list[Subtask], results: list[TaskResult]) -> complex:
    """Sum over sibling groups of coefficient x product of part overlaps.

    Groups are consumed in ascending id order so the floating-point sum is
    reproducible across modes and node counts.
    """
    by_id: dict[int, TaskResult] = {}
    for r in results:
        if r.task_id in by_id:
            raise MissingResult(f"duplicate result for task {r.task_id}")
        by_id[r.task_id] = r
    total = 0.0 + 0j
    for s in plan:
        if s.id not in by_id:
            raise MissingResult(f"no result for task {s.id}")
    ordered = sorted(plan, key=lambda s: s.id)
    idx = 0
    while idx < len(ordered):
        group_key = ordered[idx].indices[:5]
        coeff = 1.0 + 0j
        product = 1.0 + 0j
        while idx < len(ordered) and ordered[idx].indices[:5] == group_key:
            s = ordered[idx]
            if s.indices[5] == 0:
                coeff = s.coefficient
            value = by_id[s.id].value
            if not isinstance(value, complex):
                value = complex(value[0], value[1])
            product *= value
            idx += 1
        total += coeff * product
    return total
