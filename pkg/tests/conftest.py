import numpy as np
import pytest

from thegcn.graph import EventGraph, NodeFeatures


def central_difference(f, arr, eps=1e-5):
    """Numerical gradient of scalar ``f()`` w.r.t. ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + eps
        up = f()
        arr[i] = old - eps
        down = f()
        arr[i] = old
        grad[i] = (up - down) / (2 * eps)
    return grad


def max_rel_error(a, b, floor=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def five_event_graph():
    """Four nodes, five events, static 3-d features, 2-d edge features."""
    rng = np.random.default_rng(42)
    src = [0, 1, 2, 0, 3]
    dst = [1, 2, 3, 2, 1]
    time = [1.0, 2.0, 3.0, 4.0, 5.0]
    labels = [(v, 0.0, v % 2) for v in range(4)] + [(1, 6.0, 1), (2, 6.0, 0)]
    return EventGraph(4, src, dst, time, edge_feat=rng.normal(size=(5, 2)),
                      features=NodeFeatures.static(rng.normal(size=(4, 3))),
                      labels=labels, num_classes=2)


def random_graph(num_nodes, num_events, seed=0, num_classes=3, label_records=4, horizon=100.0):
    """Random event graph with time-varying labels (every node labeled at t=0)."""
    rng = np.random.default_rng(seed)
    src = rng.integers(0, num_nodes, num_events)
    dst = (src + rng.integers(1, num_nodes, num_events)) % num_nodes
    time = np.round(rng.uniform(0, horizon, num_events), 1)
    labels = [(v, 0.0, int(rng.integers(num_classes))) for v in range(num_nodes)]
    for v in range(num_nodes):
        for t in rng.uniform(0, horizon, label_records - 1):
            labels.append((v, float(np.round(t, 1)), int(rng.integers(num_classes))))
    return EventGraph(num_nodes, src, dst, time,
                      features=NodeFeatures.static(rng.normal(size=(num_nodes, 4))),
                      labels=labels, num_classes=num_classes)


@pytest.fixture
def fixture5():
    return five_event_graph()


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS):
        terminalreporter.write_line(line)
