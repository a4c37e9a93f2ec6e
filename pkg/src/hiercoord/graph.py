"""Decomposition topology, profile stacking and coupling-signal routing.

A network of `n_s` subsystems (indexed 1..n_s) interacts through directed
coupling edges.  Each edge carries a vector signal of fixed dimension per
time step; over a prediction horizon of N steps it carries a *profile*
(the per-step vectors stacked time-major).  The same set of edge profiles
can be stacked in two canonical orders:

* out-stacking: edges sorted by (source, dest), grouped per source
  subsystem (the order in which subsystems emit them);
* in-stacking: edges sorted by (dest, source), grouped per destination
  subsystem (the order in which subsystems consume them).

Since both stacks hold exactly the same blocks, a permutation matrix maps
one onto the other; `RoutingMatrix` implements it without materializing
the matrix (a dense export exists for tests).
"""

from dataclasses import dataclass, field

import numpy as np


class TopologyError(ValueError):
    """Raised for structurally invalid topologies or stacking requests."""


@dataclass(frozen=True, order=True)
class CouplingEdge:
    """Directed coupling signal from subsystem `source` to `dest`.

    `dim` is the signal dimension at one time step; over a horizon N the
    edge's profile occupies N*dim scalars.  Structural legality (no
    self-loop, dim >= 1) is checked by `validate_topology`, not here, so
    that bad declarations can be *reported* rather than only raised.
    """

    source: int
    dest: int
    dim: int = 1

    @property
    def key(self):
        return (self.source, self.dest)

    def __str__(self):
        return f"{self.source}->{self.dest}"


@dataclass(frozen=True)
class Topology:
    """Decomposition graph: subsystem count, controlled subset, edges, horizon.

    The edge tuple is canonicalized to (dest, source) lexicographic order at
    construction so that every stacking derived from a topology is
    reproducible.
    """

    n_s: int
    controlled: frozenset = field(default_factory=frozenset)
    edges: tuple = ()
    horizon: int = 1

    def __post_init__(self):
        if self.n_s < 1:
            raise TopologyError(f"subsystem count {self.n_s} < 1")
        if self.horizon < 1:
            raise TopologyError(f"horizon {self.horizon} < 1")
        object.__setattr__(self, "controlled", frozenset(self.controlled))
        for s in self.controlled:
            if not 1 <= s <= self.n_s:
                raise TopologyError(f"controlled id {s} outside 1..{self.n_s}")
        edges = tuple(sorted(self.edges, key=lambda e: (e.dest, e.source)))
        for e in edges:
            if not (1 <= e.source <= self.n_s and 1 <= e.dest <= self.n_s):
                raise TopologyError(f"edge {e} references unknown subsystem")
        object.__setattr__(self, "edges", edges)

    @property
    def uncontrolled(self):
        return frozenset(range(1, self.n_s + 1)) - self.controlled

    @property
    def subsystems(self):
        return range(1, self.n_s + 1)

    def neighbors(self, s):
        """Ids of subsystems whose coupling signals reach subsystem s."""
        self._check_id(s)
        return sorted({e.source for e in self.edges if e.dest == s})

    def in_dim(self, s):
        return sum(e.dim for e in stack_in(self, s))

    def out_dim(self, s):
        return sum(e.dim for e in stack_out(self, s))

    def _check_id(self, s):
        if not 1 <= s <= self.n_s:
            raise TopologyError(f"unknown subsystem id {s}")


def concat_ordered(parts):
    """Concatenate vectors keyed by subsystem id in increasing id order.

    Insertion order of the mapping is irrelevant; only the keys' natural
    order matters.
    """
    if not parts:
        raise ValueError("empty concatenation")
    arrs = [np.atleast_1d(np.asarray(parts[i], dtype=float)) for i in sorted(parts)]
    return np.concatenate(arrs)


def stack_in(topology, s):
    """Edges entering s, in canonical in-stack order (by source id)."""
    topology._check_id(s)
    return [e for e in topology.edges if e.dest == s]


def stack_out(topology, s):
    """Edges leaving s, in canonical out-stack order (by dest id)."""
    topology._check_id(s)
    return sorted((e for e in topology.edges if e.source == s), key=lambda e: e.dest)


def in_stack_order(topology):
    """All edges in global in-stack order: sorted by (dest, source)."""
    return list(topology.edges)


def out_stack_order(topology):
    """All edges in global out-stack order: sorted by (source, dest)."""
    return sorted(topology.edges, key=lambda e: (e.source, e.dest))


def _offsets(edge_list, N):
    out = {}
    pos = 0
    for e in edge_list:
        out[e.key] = (pos, pos + N * e.dim)
        pos += N * e.dim
    return out, pos


class RoutingMatrix:
    """Block permutation sending the stacked out-profiles to in-profiles.

    Stored as an index map (per-edge slices); `dense()` exports the 0/1
    matrix.  `rows_for(s)` gives the row range selecting subsystem s's
    incoming profile block, i.e. the per-subsystem row selector.
    """

    def __init__(self, topology):
        N = topology.horizon
        self.topology = topology
        self.in_edges = in_stack_order(topology)
        self.out_edges = out_stack_order(topology)
        self.in_slices, self.size = _offsets(self.in_edges, N)
        self.out_slices, out_size = _offsets(self.out_edges, N)
        assert out_size == self.size
        # per-subsystem contiguous row ranges in the in-stack
        self._sub_rows = {}
        for s in topology.subsystems:
            spans = [self.in_slices[e.key] for e in stack_in(topology, s)]
            if spans:
                self._sub_rows[s] = (spans[0][0], spans[-1][1])
            else:
                self._sub_rows[s] = (0, 0)
        # gather indices: in_stack[i] = out_stack[perm[i]]
        perm = np.empty(self.size, dtype=np.intp)
        for e in self.in_edges:
            i0, i1 = self.in_slices[e.key]
            o0, o1 = self.out_slices[e.key]
            perm[i0:i1] = np.arange(o0, o1)
        self.perm = perm

    @property
    def rows(self):
        return self.size

    @property
    def cols(self):
        return self.size

    def apply(self, v_out):
        """Return G_in @ v_out: rearrange the out-stack into the in-stack."""
        v_out = np.asarray(v_out, dtype=float)
        if v_out.shape != (self.size,):
            raise ValueError(f"expected out-stack of length {self.size}, got {v_out.shape}")
        return v_out[self.perm]

    def scatter(self, v_in):
        """Inverse routing: rearrange an in-stack back into the out-stack."""
        v_in = np.asarray(v_in, dtype=float)
        if v_in.shape != (self.size,):
            raise ValueError(f"expected in-stack of length {self.size}, got {v_in.shape}")
        out = np.empty_like(v_in)
        out[self.perm] = v_in
        return out

    def rows_for(self, s):
        """Row range (start, stop) of subsystem s's incoming block."""
        return self._sub_rows[s]

    def in_block(self, v_in, s):
        """Slice subsystem s's incoming profile out of the global in-stack."""
        lo, hi = self._sub_rows[s]
        return v_in[lo:hi]

    def in_slice_of(self, edge_key):
        return self.in_slices[edge_key]

    def out_slice_of(self, edge_key):
        return self.out_slices[edge_key]

    def dense(self):
        """0/1 matrix G with G @ out_stack == in_stack."""
        G = np.zeros((self.size, self.size))
        G[np.arange(self.size), self.perm] = 1.0
        return G


def profile_to_matrix(block, edges, N):
    """Flat stacked edge profiles -> step-major (N, sum of dims) matrix.

    Each edge occupies N*dim consecutive scalars, time-major; the matrix
    columns follow the given edge order, which is the layout subsystem
    models consume (one row per step).
    """
    dims = [e.dim for e in edges]
    if block.shape != (N * sum(dims),):
        raise ValueError(f"profile block has length {block.shape[0]}, "
                         f"expected {N * sum(dims)}")
    cols = []
    pos = 0
    for d in dims:
        cols.append(np.asarray(block[pos:pos + N * d]).reshape(N, d))
        pos += N * d
    return np.hstack(cols) if cols else np.zeros((N, 0))


def matrix_to_profile(M, edges, N):
    """Inverse of profile_to_matrix for a (N, sum of dims) matrix."""
    M = np.asarray(M, dtype=float)
    dims = [e.dim for e in edges]
    if M.shape != (N, sum(dims)):
        raise ValueError(f"profile matrix has shape {M.shape}, "
                         f"expected {(N, sum(dims))}")
    parts = []
    pos = 0
    for d in dims:
        parts.append(np.ascontiguousarray(M[:, pos:pos + d]).ravel())
        pos += d
    return np.concatenate(parts) if parts else np.zeros(0)


def shift_profile(block, edges, N):
    """Advance every edge profile one step, holding the last value."""
    out = np.empty_like(np.asarray(block, dtype=float))
    pos = 0
    for e in edges:
        P = np.asarray(block[pos:pos + N * e.dim]).reshape(N, e.dim)
        out[pos:pos + N * e.dim] = np.vstack([P[1:], P[-1:]]).ravel()
        pos += N * e.dim
    return out


def build_routing(topology):
    """Build the global routing matrix for a validated topology.

    Raises TopologyError on structural violations (duplicate edges,
    self-loops, zero-dimension signals); warnings do not block.
    """
    errors = [m for m in validate_topology(topology) if not m.startswith("warning")]
    if errors:
        raise TopologyError("; ".join(errors))
    return RoutingMatrix(topology)


def validate_topology(topology):
    """Structural checks; returns a list of violation/warning strings.

    Violations make the topology unusable for routing; warnings flag
    suspicious but legal structure (unreachable subsystems, empty
    controlled set).  An empty report means the topology is clean.
    """
    report = []
    seen = set()
    for e in topology.edges:
        if e.source == e.dest:
            report.append(f"self-loop on edge {e}")
        if e.dim < 1:
            report.append(f"zero-dimension signal on edge {e}")
        if e.key in seen:
            report.append(f"non-unique edge {e}")
        seen.add(e.key)
    touched = {e.source for e in topology.edges} | {e.dest for e in topology.edges}
    for s in topology.subsystems:
        if s not in touched and topology.n_s > 1:
            report.append(f"warning: subsystem {s} unreachable (no coupling edges)")
    if not topology.controlled:
        report.append("warning: empty controlled set; central cost has only uncontrolled terms")
    return report
