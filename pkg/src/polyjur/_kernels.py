"""Numeric hot loops with a numba path and a pure-numpy fallback.

``POLYJUR_KERNELS=numpy`` (or an environment without numba) selects the
fallback at import time; :func:`set_backend` switches at runtime, which the
tests and the benchmark use to run both paths side by side.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None

NUMBA_AVAILABLE = njit is not None


def _numpy_min_group_size(group_ids: np.ndarray, n_groups: int) -> int:
    counts = np.bincount(group_ids, minlength=n_groups)
    return int(counts[counts > 0].min())


def _numpy_ancestor_pairs(parent: np.ndarray, nodes: np.ndarray):
    rows = np.arange(len(nodes), dtype=np.int64)
    cur = parent[nodes] if len(nodes) else nodes.copy()
    out_rows, out_anc = [], []
    while True:
        live = cur >= 0
        if not live.any():
            break
        rows, cur = rows[live], cur[live]
        out_rows.append(rows)
        out_anc.append(cur)
        cur = parent[cur]
    if not out_rows:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty.copy()
    return np.concatenate(out_rows), np.concatenate(out_anc)


if NUMBA_AVAILABLE:

    @njit(cache=True)
    def _numba_min_group_size(group_ids, n_groups):
        counts = np.zeros(n_groups, dtype=np.int64)
        for i in range(group_ids.shape[0]):
            counts[group_ids[i]] += 1
        best = group_ids.shape[0]
        for g in range(n_groups):
            c = counts[g]
            if c > 0 and c < best:
                best = c
        return best

    @njit(cache=True)
    def _numba_ancestor_pairs(parent, nodes):
        total = 0
        for i in range(nodes.shape[0]):
            p = parent[nodes[i]]
            while p >= 0:
                total += 1
                p = parent[p]
        rows = np.empty(total, dtype=np.int64)
        anc = np.empty(total, dtype=np.int64)
        k = 0
        for i in range(nodes.shape[0]):
            p = parent[nodes[i]]
            while p >= 0:
                rows[k] = i
                anc[k] = p
                k += 1
                p = parent[p]
        return rows, anc


_backend = "numba" if NUMBA_AVAILABLE and os.environ.get("POLYJUR_KERNELS", "numba").lower() != "numpy" else "numpy"


def backend() -> str:
    return _backend


def set_backend(name: str) -> str:
    """Select ``"numba"`` or ``"numpy"``; returns the previous choice."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba is not installed")
    previous, _backend = _backend, name
    return previous


def min_group_size(group_ids: np.ndarray, n_groups: int) -> int:
    """Smallest non-empty bucket size of a dense group labelling ``0..n_groups-1``."""
    group_ids = np.ascontiguousarray(group_ids, dtype=np.int64)
    if group_ids.size == 0:
        raise ValueError("no rows")
    if _backend == "numba":
        return int(_numba_min_group_size(group_ids, int(n_groups)))
    return _numpy_min_group_size(group_ids, int(n_groups))


def ancestor_pairs(parent: np.ndarray, nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For each ``nodes[i]`` list its strict ancestors under the ``parent`` array (-1 = root).

    Returns parallel arrays ``(row, ancestor)`` where ``row`` indexes ``nodes``.
    """
    parent = np.ascontiguousarray(parent, dtype=np.int64)
    nodes = np.ascontiguousarray(nodes, dtype=np.int64)
    if _backend == "numba":
        return _numba_ancestor_pairs(parent, nodes)
    return _numpy_ancestor_pairs(parent, nodes)
