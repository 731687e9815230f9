"""Recursive-matrix random graph generation for fixtures and benchmarks.

Desk-scale power-law graphs (scales 14 through 18 are the intended range)
with the common quadrant split (a, b, c, d) = (0.57, 0.19, 0.19, 0.05).
Generation is fully seeded and reproducible.
"""

from __future__ import annotations

import logging

import numpy as np

from .errors import ConfigError
from .gid import RelTag
from .values import encode_inline

log = logging.getLogger(__name__)

RMAT_A = 0.57
RMAT_B = 0.19
RMAT_C = 0.19
RMAT_D = 0.05

DEFAULT_EDGE_FACTOR = 16


def rmat_edges(scale: int, edge_factor: int = DEFAULT_EDGE_FACTOR,
               seed: int = 0, a: float = RMAT_A, b: float = RMAT_B,
               c: float = RMAT_C, d: float = RMAT_D,
               dedupe: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Vertex-number edge list for a 2^scale-vertex recursive-matrix graph.

    Returns (src, dst) uint64 arrays. Self loops are kept; duplicate edges
    are removed by default.
    """
    if scale < 1 or scale > 30:
        raise ConfigError("scale must be between 1 and 30")
    if edge_factor < 1:
        raise ConfigError("edge factor must be positive")
    total = a + b + c + d
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"quadrant probabilities sum to {total}, not 1")
    rng = np.random.default_rng(seed)
    m = (1 << scale) * edge_factor
    cum = np.cumsum([a, b, c])
    src = np.zeros(m, dtype=np.uint64)
    dst = np.zeros(m, dtype=np.uint64)
    one = np.uint64(1)
    for _ in range(scale):
        q = np.searchsorted(cum, rng.random(m), side="right").astype(np.uint64)
        src = (src << one) | (q >> one)
        dst = (dst << one) | (q & one)
    if dedupe:
        key = (src << np.uint64(scale)) | dst
        key = np.unique(key)
        src = key >> np.uint64(scale)
        dst = key & np.uint64((1 << scale) - 1)
    return src, dst


def load_rmat(engine, scale: int, edge_factor: int = DEFAULT_EDGE_FACTOR,
              seed: int = 0, predicate: str = "linked",
              weight_predicate: str | None = None,
              batch: int = 100_000, dedupe: bool = True) -> dict:
    """Generate and insert an RMAT graph; returns a summary.

    Vertices mint as local names n<number>. With weight_predicate set,
    every edge gets one integer weight property drawn from [1, 2^16).
    """
    src, dst = rmat_edges(scale, edge_factor, seed, dedupe=dedupe)
    rng = np.random.default_rng(seed + 1)
    uniq = np.unique(np.concatenate([src, dst]))
    guis = np.array([engine.vertex(f"n{int(v)}", local=True)
                     for v in uniq.tolist()], dtype=np.uint64)
    lut = np.zeros(1 << scale, dtype=np.uint64)
    lut[uniq] = guis
    p_gui = engine.vertex(predicate, local=True)
    w_gui = (engine.vertex(weight_predicate, local=True)
             if weight_predicate else None)
    n_edges = len(src)
    n_weights = 0
    for start in range(0, n_edges, batch):
        sl = slice(start, start + batch)
        h = engine.begin()
        sids = engine.bulk_insert_edges(h, p_gui, lut[src[sl]], lut[dst[sl]])
        if w_gui is not None:
            weights = rng.integers(1, 1 << 16, size=len(sids))
            flag, _ = encode_inline(1)
            flags = np.full(len(sids), flag, dtype=np.uint8)
            engine.bulk_insert_props(h, w_gui, sids, flags,
                                     weights.astype(np.uint64),
                                     rel=RelTag.EP)
            n_weights += len(sids)
        engine.commit(h)
    log.info("rmat scale %d: %d vertices, %d edges", scale, len(uniq), n_edges)
    return {
        "scale": scale,
        "vertices": int(len(uniq)),
        "edges": int(n_edges),
        "weights": int(n_weights),
        "predicate": p_gui,
        "weight_predicate": w_gui,
    }
