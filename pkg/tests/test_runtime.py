"""Execution layer: sampling, the in-process backend, the TCP protocol, and
result aggregation.

Oracles here are dense linear algebra built inside the tests (kron products,
explicit density-matrix propagation) so the backend's tensor-contraction path
is checked against an independent computation.
"""

import json
import socket
import threading
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import PAULI, kron_all, pauli_label_matrix, haar_unitary

from tlpq import (
    Circuit,
    ClusterConfig,
    Gate,
    PauliString,
    Subtask,
    TaskSpec,
    aggregate,
    circuit_to_json,
    execute_tasks,
    run_density_path,
    run_plan,
    sample_shots,
)
from tlpq.runtime import (
    PROTOCOL_VERSION,
    CapabilityMismatch,
    ExactBackend,
    MissingResult,
    NodeFailure,
    TaskResult,
    WorkerServer,
    serve_worker,
)


# --- helpers --------------------------------------------------------------------


@contextmanager
def live_worker(max_qubits: int = 12, fail_after_tasks: int | None = None):
    """A WorkerServer on an ephemeral port, torn down afterwards."""
    server = WorkerServer(("127.0.0.1", 0), max_qubits=max_qubits,
                          fail_after_tasks=fail_after_tasks)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"127.0.0.1:{server.server_address[1]}"
    finally:
        server.shutdown()
        server.server_close()
        thread.join(timeout=2)


@contextmanager
def raw_connection(address: str):
    """Line-oriented JSON client speaking the wire protocol by hand."""
    host, _, port = address.rpartition(":")
    sock = socket.create_connection((host, int(port)), timeout=10)
    f = sock.makefile("rwb")

    def send(obj):
        f.write((json.dumps(obj) + "\n").encode())
        f.flush()

    def recv():
        line = f.readline()
        return None if not line else json.loads(line.decode())

    try:
        yield send, recv
    finally:
        sock.close()


def random_circuit(rng, n_qubits: int, n_gates: int = 4) -> Circuit:
    gates = []
    for _ in range(n_gates):
        width = int(rng.integers(1, min(2, n_qubits) + 1))
        start = int(rng.integers(0, n_qubits - width + 1))
        qubits = tuple(range(start, start + width))
        gates.append(Gate("RAW", qubits, raw=haar_unitary(2**width, rng)))
    return Circuit(n_qubits, tuple(gates))


def dense_state(circ: Circuit) -> np.ndarray:
    """|0..0> pushed through the gate list with explicit kron lifts."""
    n = circ.n_qubits
    psi = np.zeros(2**n, dtype=complex)
    psi[0] = 1.0
    for g in circ.gates:
        psi = lift_gate(g, n) @ psi
    return psi


def lift_gate(g: Gate, n: int) -> np.ndarray:
    from tlpq.circuit import gate_matrix

    mat = gate_matrix(g)
    width = len(g.qubits)
    assert g.qubits == tuple(range(g.qubits[0], g.qubits[0] + width))
    before = g.qubits[0]
    after = n - before - width
    return kron_all([np.eye(2**before), mat, np.eye(2**after)])


def dense_density(circ: Circuit) -> np.ndarray:
    rho = np.zeros((2**circ.n_qubits,) * 2, dtype=complex)
    rho[0, 0] = 1.0
    for g in circ.gates:
        full = lift_gate(g, circ.n_qubits)
        rho = full @ rho @ full.conj().T
    return rho


# --- sample_shots ---------------------------------------------------------------


def test_sample_shots_deterministic_per_rng_seed():
    p = [0.1, 0.2, 0.3, 0.4]
    a = sample_shots(p, 500, np.random.default_rng(7))
    b = sample_shots(p, 500, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_sample_shots_certain_outcome_is_exact():
    freq = sample_shots([1.0, 0.0], 37, np.random.default_rng(0))
    assert np.array_equal(freq, [1.0, 0.0])


def test_sample_shots_frequencies_sum_to_one():
    freq = sample_shots([0.25, 0.25, 0.5], 99, np.random.default_rng(3))
    assert freq.sum() == pytest.approx(1.0)
    assert np.all(freq >= 0)


def test_sample_shots_rejects_unnormalized():
    with pytest.raises(ValueError):
        sample_shots([0.5, 0.6], 10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_shots([1.5, -0.5], 10, np.random.default_rng(0))


def test_sample_shots_rejects_zero_draws():
    with pytest.raises(ValueError):
        sample_shots([1.0], 0, np.random.default_rng(0))


def test_sample_shots_error_shrinks_with_more_draws():
    p = np.array([0.5, 0.5])
    errs = {}
    for n in (100, 10_000):
        devs = [
            abs(sample_shots(p, n, np.random.default_rng((n, k)))[0] - 0.5)
            for k in range(30)
        ]
        errs[n] = float(np.mean(devs))
    # expected scaling is 1/sqrt(n): a factor-100 increase should cut the
    # mean deviation by ~10; demand at least 3 to keep the test stable
    assert errs[10_000] < errs[100] / 3


# --- ExactBackend readouts vs dense oracles --------------------------------------


def test_backend_ancilla_readouts_match_dense(rng):
    for trial in range(20):
        circ = random_circuit(rng, 3)
        task = TaskSpec(id=trial, kind="estimator", circuit=circ,
                        readouts=("ax", "ay"))
        (ax, ay), shots_used = ExactBackend().run_task(task, None, 0)
        psi = dense_state(circ)
        x0 = kron_all([PAULI["X"], np.eye(4)])
        y0 = kron_all([PAULI["Y"], np.eye(4)])
        assert ax == pytest.approx(np.real(psi.conj() @ x0 @ psi), abs=1e-12)
        assert ay == pytest.approx(np.real(psi.conj() @ y0 @ psi), abs=1e-12)
        assert shots_used == 0


def test_backend_projector_readouts_match_dense(rng):
    proj0 = np.diag([1.0, 0.0]).astype(complex)
    proj1 = np.diag([0.0, 1.0]).astype(complex)
    for trial in range(10):
        circ = random_circuit(rng, 3)
        letters = "".join(rng.choice(list("IXYZ")) for _ in range(2))
        task = TaskSpec(id=trial, kind="estimator", circuit=circ,
                        readouts=(f"p0:{letters}", f"p1:{letters}"))
        (v0, v1), _ = ExactBackend().run_task(task, None, 0)
        psi = dense_state(circ)
        rest = pauli_label_matrix(letters)
        w0 = np.real(psi.conj() @ kron_all([proj0, rest]) @ psi)
        w1 = np.real(psi.conj() @ kron_all([proj1, rest]) @ psi)
        assert v0 == pytest.approx(w0, abs=1e-12)
        assert v1 == pytest.approx(w1, abs=1e-12)


def test_backend_density_pauli_readout_matches_trace(rng):
    for trial in range(10):
        circ = random_circuit(rng, 2)
        # make one gate non-unitary so the density path is genuinely exercised
        squash = np.array([[1.0, 0.2], [0.0, 0.5]], dtype=complex)
        circ = Circuit(2, circ.gates + (Gate("RAW", (0,), raw=squash),))
        letters = "".join(rng.choice(list("IXYZ")) for _ in range(2))
        task = TaskSpec(id=trial, kind="density", circuit=circ,
                        readouts=(f"e:{letters}",))
        (val,), _ = ExactBackend().run_task(task, None, 0)
        rho = dense_density(circ)
        expected = np.real(np.trace(rho @ pauli_label_matrix(letters)))
        assert val == pytest.approx(expected, abs=1e-12)


def test_backend_shot_values_are_seed_deterministic():
    circ = Circuit(2, (Gate("H", (0,)), Gate("CNOT", (0, 1))))
    task = TaskSpec(id=5, kind="estimator", circuit=circ, readouts=("ax", "ay"))
    backend = ExactBackend()
    first, used1 = backend.run_task(task, 200, seed=9)
    second, used2 = backend.run_task(task, 200, seed=9)
    assert first == second
    assert used1 == used2 == 400  # shots x number of readouts
    other, _ = backend.run_task(task, 200, seed=10)
    assert first != other


def test_backend_shot_estimates_converge(rng):
    circ = Circuit(1, (Gate("RY", (0,), params=(0.7,)),))
    task = TaskSpec(id=0, kind="estimator", circuit=circ, readouts=("ax",))
    psi = dense_state(circ)
    truth = float(np.real(psi.conj() @ PAULI["X"] @ psi))
    errs = {}
    for n in (100, 10_000):
        devs = []
        for k in range(20):
            t = TaskSpec(id=k, kind="estimator", circuit=circ, readouts=("ax",))
            (v,), _ = ExactBackend().run_task(t, n, seed=n)
            devs.append(abs(v - truth))
        errs[n] = float(np.mean(devs))
    assert errs[10_000] < errs[100] / 3


def test_backend_rejects_too_wide_circuit():
    circ = Circuit(4, (Gate("X", (0,)),))
    task = TaskSpec(id=0, kind="estimator", circuit=circ, readouts=("ax",))
    with pytest.raises(CapabilityMismatch):
        ExactBackend(max_qubits=3).run_task(task, None, 0)


def test_backend_rejects_unknown_kind():
    circ = Circuit(1, (Gate("X", (0,)),))
    task = TaskSpec(id=0, kind="mystery", circuit=circ, readouts=("ax",))
    with pytest.raises(ValueError):
        ExactBackend().run_task(task, None, 0)


def test_backend_rejects_bad_readout_descriptor():
    circ = Circuit(2, (Gate("X", (0,)),))
    for bad in ("p0:Q", "p0:XX", "e:X", "zz"):
        task = TaskSpec(id=0, kind="estimator", circuit=circ, readouts=(bad,))
        with pytest.raises(ValueError):
            ExactBackend().run_task(task, None, 0)


# --- run_density_path -------------------------------------------------------------


def test_run_density_path_matches_dense_propagation(rng):
    kraus_like = np.array([[0.9, 0.1], [0.2, 0.4]], dtype=complex)
    circ = Circuit(2, (
        Gate("RAW", (0, 1), raw=haar_unitary(4, rng)),
        Gate("RAW", (1,), raw=kraus_like),
    ))
    settings = [PauliString(2, "XZ"), PauliString(2, "IY"), PauliString(2, "II")]
    got = run_density_path(circ, settings)
    rho = dense_density(circ)
    for value, setting in zip(got, settings):
        expected = np.real(np.trace(rho @ pauli_label_matrix(setting.letters)))
        assert value == pytest.approx(expected, abs=1e-12)


# --- ClusterConfig validation ------------------------------------------------------


def test_cluster_config_defaults():
    cfg = ClusterConfig()
    assert cfg.mode == "local" and cfg.nodes == 1 and cfg.shots is None
    assert cfg.retry_limit == 2


def test_cluster_config_rejects_bad_values():
    with pytest.raises(ValueError):
        ClusterConfig(mode="cloud")
    with pytest.raises(ValueError):
        ClusterConfig(mode="local", nodes=0)
    with pytest.raises(ValueError):
        ClusterConfig(mode="local", nodes=("127.0.0.1:1",))
    with pytest.raises(ValueError):
        ClusterConfig(mode="network", nodes=3)
    with pytest.raises(ValueError):
        ClusterConfig(mode="network", nodes=("localhost",))  # no port
    with pytest.raises(ValueError):
        ClusterConfig(shots=0)
    with pytest.raises(ValueError):
        ClusterConfig(retry_limit=0)


def test_cluster_config_normalizes_address_list():
    cfg = ClusterConfig(mode="network", nodes=["127.0.0.1:1", "127.0.0.1:2"])
    assert isinstance(cfg.nodes, tuple) and len(cfg.nodes) == 2


# --- execute_tasks: local scheduling ------------------------------------------------


def make_tasks(rng, count: int = 9) -> list[TaskSpec]:
    tasks = []
    for i in range(count):
        circ = random_circuit(rng, 2)
        kind = "estimator" if i % 2 == 0 else "density"
        readouts = ("ax", "ay") if kind == "estimator" else ("e:XZ", "e:ZI")
        tasks.append(TaskSpec(id=i, kind=kind, circuit=circ, readouts=readouts))
    return tasks


def test_execute_tasks_orders_results_and_assigns_round_robin(rng):
    tasks = make_tasks(rng)
    shuffled = list(tasks)
    rng.shuffle(shuffled)
    results = execute_tasks(shuffled, ClusterConfig(nodes=3))
    assert [r.task_id for r in results] == list(range(len(tasks)))
    assert [r.node_id for r in results] == [i % 3 for i in range(len(tasks))]


def test_execute_tasks_local_rejects_too_wide_plan():
    wide = TaskSpec(id=0, kind="estimator",
                    circuit=Circuit(13, ()), readouts=("ax",))
    with pytest.raises(CapabilityMismatch):
        execute_tasks([wide], ClusterConfig())


# --- mode invariance: local 1 node == local 16 nodes == 2 TCP workers ---------------


@pytest.mark.parametrize("shots", [None, 64])
def test_modes_agree_bit_for_bit(rng, shots):
    tasks = make_tasks(rng, count=8)
    base = execute_tasks(tasks, ClusterConfig(nodes=1, shots=shots, seed=4))
    wide = execute_tasks(tasks, ClusterConfig(nodes=16, shots=shots, seed=4))
    with live_worker() as addr_a, live_worker() as addr_b:
        net = execute_tasks(
            tasks,
            ClusterConfig(mode="network", nodes=(addr_a, addr_b),
                          shots=shots, seed=4),
        )
    for a, b, c in zip(base, wide, net):
        assert a.value == b.value == c.value  # exact equality, no tolerance
        assert a.shots_used == b.shots_used == c.shots_used


def test_network_failure_injection_retries_elsewhere(rng):
    tasks = make_tasks(rng, count=8)
    healthy = execute_tasks(tasks, ClusterConfig(nodes=1, seed=4))
    with live_worker(fail_after_tasks=3) as flaky, live_worker() as solid:
        survived = execute_tasks(
            tasks,
            ClusterConfig(mode="network", nodes=(flaky, solid),
                          seed=4, retry_limit=2),
        )
    assert [r.value for r in survived] == [r.value for r in healthy]


def test_all_nodes_dead_raises_node_failure(rng):
    tasks = make_tasks(rng, count=4)
    with live_worker(fail_after_tasks=0) as addr:
        with pytest.raises(NodeFailure):
            execute_tasks(
                tasks, ClusterConfig(mode="network", nodes=(addr,), seed=0)
            )


def test_network_capability_mismatch_propagates():
    wide = TaskSpec(id=0, kind="estimator",
                    circuit=Circuit(5, ()), readouts=("ax",))
    with live_worker(max_qubits=4) as addr:
        with pytest.raises(CapabilityMismatch):
            # too-wide tasks are refused outright, not retried as node failures
            execute_tasks([wide], ClusterConfig(mode="network", nodes=(addr,)))


# --- wire protocol, spoken by hand ---------------------------------------------------


def test_protocol_hello_handshake():
    with live_worker(max_qubits=7) as addr, raw_connection(addr) as (send, recv):
        send({"type": "hello", "proto": PROTOCOL_VERSION})
        ack = recv()
        assert ack == {"type": "hello_ack", "proto": PROTOCOL_VERSION,
                       "max_qubits": 7}


def test_protocol_version_mismatch_closes_connection():
    with live_worker() as addr, raw_connection(addr) as (send, recv):
        send({"type": "hello", "proto": 999})
        reply = recv()
        assert reply["type"] == "error" and reply["id"] == -1
        assert recv() is None  # server hung up


def test_protocol_malformed_line_keeps_connection():
    with live_worker() as addr:
        host, _, port = addr.rpartition(":")
        with socket.create_connection((host, int(port)), timeout=10) as sock:
            f = sock.makefile("rwb")
            f.write(b"{this is not json\n")
            f.flush()
            reply = json.loads(f.readline().decode())
            assert reply["type"] == "error" and reply["id"] == -1
            # the connection survives: a well-formed message still works
            f.write((json.dumps({"type": "hello",
                                 "proto": PROTOCOL_VERSION}) + "\n").encode())
            f.flush()
            ack = json.loads(f.readline().decode())
            assert ack["type"] == "hello_ack"


def test_protocol_unknown_type_reports_error_and_continues():
    with live_worker() as addr, raw_connection(addr) as (send, recv):
        send({"type": "frobnicate"})
        reply = recv()
        assert reply["type"] == "error" and reply["id"] == -1
        send({"type": "hello", "proto": PROTOCOL_VERSION})
        assert recv()["type"] == "hello_ack"


def test_protocol_task_roundtrip_matches_local_backend(rng):
    circ = random_circuit(rng, 2)
    task = TaskSpec(id=11, kind="estimator", circuit=circ, readouts=("ax", "ay"))
    local_values, local_used = ExactBackend().run_task(task, 50, 3)
    with live_worker() as addr, raw_connection(addr) as (send, recv):
        send({"type": "hello", "proto": PROTOCOL_VERSION})
        recv()
        send({
            "type": "task",
            "id": 11,
            "kind": "estimator",
            "circuit": circuit_to_json(circ),
            "readout": ["ax", "ay"],
            "shots": 50,
            "seed": 3,
        })
        reply = recv()
    assert reply["type"] == "result" and reply["id"] == 11
    assert reply["shots_used"] == local_used
    got = tuple(re for re, _ in reply["values"])
    assert got == local_values
    assert all(im == 0.0 for _, im in reply["values"])


def test_protocol_task_error_reports_id_and_keeps_serving():
    with live_worker() as addr, raw_connection(addr) as (send, recv):
        send({"type": "hello", "proto": PROTOCOL_VERSION})
        recv()
        send({"type": "task", "id": 42, "kind": "bogus",
              "circuit": {"n": 1, "gates": []}, "readout": ["ax"],
              "shots": None, "seed": 0})
        reply = recv()
        assert reply["type"] == "error" and reply["id"] == 42
        send({"type": "hello", "proto": PROTOCOL_VERSION})
        assert recv()["type"] == "hello_ack"


def test_serve_worker_announces_bound_address_and_stops_on_shutdown():
    lines = []
    done = threading.Event()

    def run():
        serve_worker("127.0.0.1:0", announce=lines.append)
        done.set()

    thread = threading.Thread(target=run, daemon=True)
    thread.start()
    for _ in range(200):
        if lines:
            break
        threading.Event().wait(0.01)
    assert lines and lines[0].startswith("tlpq-worker listening on 127.0.0.1:")
    addr = lines[0].rsplit(" ", 1)[-1]
    with raw_connection(addr) as (send, recv):
        send({"type": "shutdown"})
    assert done.wait(timeout=5)
    thread.join(timeout=2)


# --- run_plan + aggregate ------------------------------------------------------------


def two_part_plan(rng):
    """A tiny hand-built plan: one sibling group spanning two parts."""
    u0 = haar_unitary(2, rng)
    u1 = haar_unitary(2, rng)
    v0 = haar_unitary(2, rng)
    v1 = haar_unitary(2, rng)
    coeff = 0.3 - 0.4j
    subtasks = [
        Subtask(id=0, indices=(0, 0, 0, 0, 0, 0),
                left_circuit=Circuit(1, (Gate("RAW", (0,), raw=u0),)),
                right_circuit=Circuit(1, (Gate("RAW", (0,), raw=v0),)),
                observable=PauliString(1, "Z"), input_label="0",
                coefficient=coeff),
        Subtask(id=1, indices=(0, 0, 0, 0, 0, 1),
                left_circuit=Circuit(1, (Gate("RAW", (0,), raw=u1),)),
                right_circuit=Circuit(1, (Gate("RAW", (0,), raw=v1),)),
                observable=PauliString(1, "Z"), input_label="1",
                coefficient=1.0),
    ]
    zero = np.array([1.0, 0.0], dtype=complex)
    one = np.array([0.0, 1.0], dtype=complex)
    overlap0 = (v0 @ zero).conj() @ PAULI["Z"] @ (u0 @ zero)
    overlap1 = (v1 @ one).conj() @ PAULI["Z"] @ (u1 @ one)
    return subtasks, coeff * overlap0 * overlap1


def test_run_plan_and_aggregate_match_dense_product(rng):
    plan, expected = two_part_plan(rng)
    results = run_plan(plan, ClusterConfig())
    assert all(isinstance(r.value, complex) for r in results)
    total = aggregate(plan, results)
    assert abs(total - expected) < 1e-10


def test_aggregate_rejects_duplicate_results(rng):
    plan, _ = two_part_plan(rng)
    results = run_plan(plan, ClusterConfig())
    with pytest.raises(MissingResult):
        aggregate(plan, results + [results[0]])


def test_aggregate_rejects_missing_results(rng):
    plan, _ = two_part_plan(rng)
    results = run_plan(plan, ClusterConfig())
    with pytest.raises(MissingResult):
        aggregate(plan, results[:-1])
