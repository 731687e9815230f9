"""spoi: an in-memory transactional graph store over a single statement relation.

Statements are (S, P, O, I) tuples whose identifier I can itself stand in
subject or object position, which lets one store hold property graphs,
RDF-style triples and statements about statements at the same time. The
package adds snapshot transactions with a logical log, an access pattern
language with a partition-pruning planner, catalog statistics and a set of
graph algorithms over ephemeral CSR projections.
"""

from .engine import GraphStore, Ref
from .errors import (
    CapacityError,
    ConfigError,
    ConflictError,
    CorruptionError,
    ModelError,
    NotFoundError,
    ParseError,
    StateError,
    StoreError,
    ThrottleError,
    UnsupportedError,
    WrongKindError,
)
from .gid import NULL_GUI, RelTag
from .relstore import GridConfig

__all__ = [
    "GraphStore",
    "GridConfig",
    "NULL_GUI",
    "Ref",
    "RelTag",
    "StoreError",
    "ConfigError",
    "CapacityError",
    "ModelError",
    "UnsupportedError",
    "NotFoundError",
    "WrongKindError",
    "ParseError",
    "ConflictError",
    "StateError",
    "ThrottleError",
    "CorruptionError",
]

__version__ = "0.1.0"
