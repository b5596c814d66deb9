"""Pure-Python versions of the compiled kernels (same signatures)."""

import time

import numpy as np

BACKEND = "python"


def spin_us(us):
    """Busy-wait for ``us`` microseconds."""
    if us <= 0:
        return
    end = time.perf_counter() + us * 1e-6
    while time.perf_counter() < end:
        pass


def dag_ranks(indptr, indices):
    """Longest-path rank of every node of a DAG given as out-edge CSR.

    Raises ValueError if the graph has a cycle.
    """
    indptr = np.asarray(indptr, dtype=np.int64).tolist()
    indices = np.asarray(indices, dtype=np.int64).tolist()
    n = len(indptr) - 1
    indeg = [0] * n
    for d in indices:
        indeg[d] += 1
    rank = [0] * n
    stack = [v for v in range(n) if indeg[v] == 0]
    seen = 0
    while stack:
        u = stack.pop()
        seen += 1
        ru = rank[u] + 1
        for j in range(indptr[u], indptr[u + 1]):
            d = indices[j]
            if rank[d] < ru:
                rank[d] = ru
            indeg[d] -= 1
            if indeg[d] == 0:
                stack.append(d)
    if seen != n:
        raise ValueError("graph has a cycle")
    return np.asarray(rank, dtype=np.int64)


def scc_labels(indptr, indices):
    """Strongly connected component label per node (iterative Tarjan)."""
    indptr = np.asarray(indptr, dtype=np.int64).tolist()
    indices = np.asarray(indices, dtype=np.int64).tolist()
    n = len(indptr) - 1
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    label = [-1] * n
    stack = []
    counter = 0
    n_comp = 0
    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, indptr[root])]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, pos = work[-1]
            if pos < indptr[v + 1]:
                work[-1] = (v, pos + 1)
                w = indices[pos]
                if index[w] == -1:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, indptr[w]))
                elif on_stack[w] and index[w] < low[v]:
                    low[v] = index[w]
                continue
            work.pop()
            if work:
                p = work[-1][0]
                if low[v] < low[p]:
                    low[p] = low[v]
            if low[v] == index[v]:
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    label[w] = n_comp
                    if w == v:
                        break
                n_comp += 1
    return np.asarray(label, dtype=np.int64)
