"""Compare the compiled kernels with the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--nodes 20000] [--repeat 5]

Graphs are random DAGs (for ranks) and random digraphs (for components) in
the CSR layout the planner and scheduler hand to the kernels.  Prints one
line per kernel with the best-of-N time of each backend and the speedup.
"""

import argparse
import time

import numpy as np

from tpgstream import kernels
from tpgstream.planner import _csr


def random_graph(n, m, rng, acyclic):
    a = rng.integers(0, n, m)
    b = rng.integers(0, n, m)
    keep = a != b
    a, b = a[keep], b[keep]
    if acyclic:
        a, b = np.minimum(a, b), np.maximum(a, b)
    return _csr(n, list(zip(a.tolist(), b.tolist())))


def best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=20000)
    ap.add_argument("--degree", type=float, default=3.0)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args(argv)
    py, cy = kernels.python_backend, kernels.compiled_backend
    if cy is None:
        print("compiled backend not built; only the Python fallback is available")
    rng = np.random.default_rng(a.seed)
    m = int(a.nodes * a.degree)
    dag = random_graph(a.nodes, m, rng, True)
    dig = random_graph(a.nodes, m, rng, False)
    cases = [("dag_ranks", lambda be: be.dag_ranks(*dag)),
             ("scc_labels", lambda be: be.scc_labels(*dig)),
             ("spin_us x1000 (10us)", lambda be: [be.spin_us(10) for _ in range(1000)])]
    print(f"nodes={a.nodes} edges~{m} repeat={a.repeat} default backend={kernels.BACKEND}")
    for name, fn in cases:
        tp = best(lambda: fn(py), a.repeat)
        if cy is None:
            print(f"{name:22s} python {tp * 1e3:9.2f} ms")
            continue
        tc = best(lambda: fn(cy), a.repeat)
        print(f"{name:22s} python {tp * 1e3:9.2f} ms   compiled {tc * 1e3:9.2f} ms   "
              f"speedup {tp / tc:6.1f}x")
    if cy is not None:
        assert (py.dag_ranks(*dag) == cy.dag_ranks(*dag)).all()


if __name__ == "__main__":
    main()
