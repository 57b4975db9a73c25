"""Derived vector space: node enumeration, classification, projections, duality.

Each original node p with multiplicity m(p) spawns m(p) derived nodes (p, a),
one per subdomain containing it.  Derived vectors carry one d-block per
derived node; the weighted inner product scales each block product by 1/m(p),
which makes injection an isometry.  The continuous subspace (equal values
across each descendant group) is the image of `inject`; `project_continuous`
averages onto it and `project_zero_average` is its orthogonal complement.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
import scipy.sparse as sp

from .exceptions import InvalidPrimalError
from .ingest import DecompositionMap

DENSE_REFERENCE_CAP = 2000  # scalar unknowns; explicit operator matrices are test-only


class NodeTag(IntEnum):
    INTERIOR = 0
    PRIMAL = 1
    DUAL = 2


def flat_block_indices(nodes: np.ndarray, block_dim: int) -> np.ndarray:
    """Scalar row indices of the given nodes: node p owns rows p*d .. p*d+d-1."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if block_dim == 1:
        return nodes.copy()
    return (nodes[:, None] * block_dim + np.arange(block_dim)).ravel()


@dataclass(frozen=True, eq=False)
class DerivedSpace:
    """Indexed derived node set with its classification and reduction machinery.

    Derived nodes are ordered by subdomain, then node, so each subdomain's
    nodes occupy one contiguous slice (`subdomain_ranges`).  Descendant groups
    (all derived nodes of one original node) are reachable through
    `descendant_ptr`/`descendant_positions` in ascending-subdomain order.
    All index arrays ending in `_flat` address scalar entries (d per node).
    """

    decomposition: DecompositionMap
    block_dim: int
    node_of: np.ndarray
    subdomain_of: np.ndarray
    tags: np.ndarray
    subdomain_ranges: tuple[tuple[int, int], ...]
    descendant_ptr: np.ndarray
    descendant_positions: np.ndarray
    # scalar-level gather/scatter machinery
    origin_flat: np.ndarray          # derived flat -> original flat index
    weight_flat: np.ndarray          # 1/m(p) per derived flat entry
    original_inv_mult_flat: np.ndarray  # 1/m(p) per original flat entry
    # interface restriction (interface nodes only, in derived order)
    gamma_positions: np.ndarray      # derived indices with m(p) > 1
    interior_positions: np.ndarray   # derived indices with m(p) == 1
    gamma_nodes: np.ndarray          # sorted interface node ids
    interior_nodes: np.ndarray       # sorted interior node ids
    gamma_origin_flat: np.ndarray    # gamma-restricted flat -> interface-flat index
    interior_origin_flat: np.ndarray  # interior-restricted flat -> interior-flat index
    gamma_weight_flat: np.ndarray
    gamma_inv_mult_flat: np.ndarray  # 1/m per interface-flat entry

    @property
    def n_derived(self) -> int:
        return len(self.node_of)

    @property
    def n_original(self) -> int:
        return self.decomposition.n_nodes

    @property
    def derived_flat_size(self) -> int:
        return self.n_derived * self.block_dim

    @property
    def original_flat_size(self) -> int:
        return self.n_original * self.block_dim

    def descendants(self, node: int) -> np.ndarray:
        """Derived positions of the given original node, ascending by subdomain."""
        return self.descendant_positions[self.descendant_ptr[node]:self.descendant_ptr[node + 1]]

    def positions_tagged(self, tag: NodeTag) -> np.ndarray:
        return np.nonzero(self.tags == int(tag))[0]

    @property
    def primal_positions(self) -> np.ndarray:
        return self.positions_tagged(NodeTag.PRIMAL)

    @property
    def dual_positions(self) -> np.ndarray:
        return self.positions_tagged(NodeTag.DUAL)

    @property
    def interior_and_primal_positions(self) -> np.ndarray:
        """Derived positions tagged interior or primal (classification only)."""
        return np.nonzero(self.tags != int(NodeTag.DUAL))[0]

    @property
    def interior_and_dual_positions(self) -> np.ndarray:
        """Derived positions tagged interior or dual (classification only)."""
        return np.nonzero(self.tags != int(NodeTag.PRIMAL))[0]


def build_derived_space(
    dm: DecompositionMap,
    block_dim: int = 1,
    primal_min_multiplicity: int | None = None,
    primal_nodes=None,
) -> DerivedSpace:
    """Enumerate derived nodes and classify them as interior, primal or dual.

    Primal selection (optional, classification only): either every interface
    node with multiplicity >= `primal_min_multiplicity`, or an explicit
    `primal_nodes` collection.  Naming a non-interface node explicitly is an
    error; interface nodes not selected are tagged dual.
    """
    if primal_min_multiplicity is not None and primal_nodes is not None:
        raise InvalidPrimalError("give either a multiplicity threshold or an explicit node list")

    node_of = np.concatenate([g for g in dm.subdomain_nodes]) if dm.n_subdomains else np.array([])
    node_of = node_of.astype(np.int64)
    subdomain_of = np.concatenate(
        [np.full(len(g), a, dtype=np.int64) for a, g in enumerate(dm.subdomain_nodes)]
    )
    ranges = []
    start = 0
    for g in dm.subdomain_nodes:
        ranges.append((start, start + len(g)))
        start += len(g)
    n_derived = len(node_of)

    primal_mask = np.zeros(dm.n_nodes, dtype=bool)
    if primal_min_multiplicity is not None:
        primal_mask = dm.multiplicity >= max(primal_min_multiplicity, 2)
    elif primal_nodes is not None:
        for p in primal_nodes:
            p = int(p)
            if not 0 <= p < dm.n_nodes:
                raise InvalidPrimalError(f"primal node {p} out of range")
            if dm.multiplicity[p] == 1:
                raise InvalidPrimalError(f"node {p} has multiplicity 1 and cannot be primal")
            primal_mask[p] = True

    mult_of = dm.multiplicity[node_of]
    tags = np.where(
        mult_of == 1,
        int(NodeTag.INTERIOR),
        np.where(primal_mask[node_of], int(NodeTag.PRIMAL), int(NodeTag.DUAL)),
    ).astype(np.int8)

    # stable sort by node groups descendants; ties keep derived order = ascending subdomain
    descendant_positions = np.argsort(node_of, kind="stable").astype(np.int64)
    descendant_ptr = np.zeros(dm.n_nodes + 1, dtype=np.int64)
    descendant_ptr[1:] = np.cumsum(dm.multiplicity)

    d = block_dim
    origin_flat = flat_block_indices(node_of, d)
    inv_mult = 1.0 / dm.multiplicity.astype(np.float64)
    weight_flat = np.repeat(inv_mult[node_of], d)
    original_inv_mult_flat = np.repeat(inv_mult, d)

    gamma_positions = np.nonzero(mult_of > 1)[0].astype(np.int64)
    interior_positions = np.nonzero(mult_of == 1)[0].astype(np.int64)
    gamma_nodes = dm.interface_nodes.astype(np.int64)
    interior_nodes = dm.interior_nodes.astype(np.int64)
    gamma_rank = np.searchsorted(gamma_nodes, node_of[gamma_positions])
    interior_rank = np.searchsorted(interior_nodes, node_of[interior_positions])
    gamma_origin_flat = flat_block_indices(gamma_rank, d)
    interior_origin_flat = flat_block_indices(interior_rank, d)
    gamma_weight_flat = np.repeat(inv_mult[node_of[gamma_positions]], d)
    gamma_inv_mult_flat = np.repeat(inv_mult[gamma_nodes], d)

    return DerivedSpace(
        decomposition=dm,
        block_dim=d,
        node_of=node_of,
        subdomain_of=subdomain_of,
        tags=tags,
        subdomain_ranges=tuple(ranges),
        descendant_ptr=descendant_ptr,
        descendant_positions=descendant_positions,
        origin_flat=origin_flat,
        weight_flat=weight_flat,
        original_inv_mult_flat=original_inv_mult_flat,
        gamma_positions=gamma_positions,
        interior_positions=interior_positions,
        gamma_nodes=gamma_nodes,
        interior_nodes=interior_nodes,
        gamma_origin_flat=gamma_origin_flat,
        interior_origin_flat=interior_origin_flat,
        gamma_weight_flat=gamma_weight_flat,
        gamma_inv_mult_flat=gamma_inv_mult_flat,
    )


# ---------------------------------------------------------------------------
# Inner products
# ---------------------------------------------------------------------------

def inner_original(u: np.ndarray, v: np.ndarray) -> float:
    """Plain Euclidean inner product over original flat entries."""
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    return float(np.dot(u, v))


def inner_derived(u: np.ndarray, v: np.ndarray, ds: DerivedSpace) -> float:
    """Weighted inner product: each derived entry contributes 1/m(p) times its product."""
    if u.shape != (ds.derived_flat_size,) or v.shape != (ds.derived_flat_size,):
        raise ValueError("derived vectors do not conform to the space")
    return float(np.dot(u * ds.weight_flat, v))


def norm_derived(u: np.ndarray, ds: DerivedSpace) -> float:
    return float(np.sqrt(max(inner_derived(u, u, ds), 0.0)))


# ---------------------------------------------------------------------------
# Injection, retraction, projections
# ---------------------------------------------------------------------------

def inject(u_hat: np.ndarray, ds: DerivedSpace) -> np.ndarray:
    """Copy each original value to all of its descendants; result is continuous."""
    if u_hat.shape != (ds.original_flat_size,):
        raise ValueError(f"expected length {ds.original_flat_size}, got {u_hat.shape}")
    return u_hat[ds.origin_flat]


def retract(u: np.ndarray, ds: DerivedSpace) -> np.ndarray:
    """Average each descendant group back to one original value.

    Defined on all derived vectors; on continuous ones it inverts `inject`.
    Accumulation runs in derived-index order (ascending subdomain), so the
    result is deterministic.
    """
    if u.shape != (ds.derived_flat_size,):
        raise ValueError(f"expected length {ds.derived_flat_size}, got {u.shape}")
    out = np.zeros(ds.original_flat_size)
    np.add.at(out, ds.origin_flat, u)
    out *= ds.original_inv_mult_flat
    return out


def project_continuous(u: np.ndarray, ds: DerivedSpace) -> np.ndarray:
    """Orthogonal projection onto the continuous subspace (descendant-group average)."""
    return inject(retract(u, ds), ds)


def project_zero_average(u: np.ndarray, ds: DerivedSpace) -> np.ndarray:
    """Complementary projection: u minus its continuous part sums to zero per group."""
    return u - project_continuous(u, ds)


def is_dual(u_hat: np.ndarray, u: np.ndarray, ds: DerivedSpace, tol: float = 1e-12) -> bool:
    """True when every descendant of every node carries the original value.

    The comparison is relative-plus-absolute: the max deviation must not
    exceed tol * (1 + max |u_hat|).
    """
    if u_hat.shape != (ds.original_flat_size,) or u.shape != (ds.derived_flat_size,):
        raise ValueError("inputs do not conform to the space")
    scale = 1.0 + (float(np.max(np.abs(u_hat))) if u_hat.size else 0.0)
    defect = float(np.max(np.abs(u - u_hat[ds.origin_flat]))) if u.size else 0.0
    return defect <= tol * scale


def continuity_defect(u: np.ndarray, ds: DerivedSpace) -> float:
    """Relative norm of the zero-average component; 0 for continuous vectors."""
    nu = norm_derived(u, ds)
    if nu == 0.0:
        return 0.0
    return norm_derived(project_zero_average(u, ds), ds) / nu


# ---------------------------------------------------------------------------
# Interface-restricted variants (arrays over interface derived positions only)
# ---------------------------------------------------------------------------

def inject_interface(v_hat_gamma: np.ndarray, ds: DerivedSpace) -> np.ndarray:
    """Copy interface-node values to their descendants; gamma-restricted output."""
    expected = len(ds.gamma_nodes) * ds.block_dim
    if v_hat_gamma.shape != (expected,):
        raise ValueError(f"expected length {expected}, got {v_hat_gamma.shape}")
    return v_hat_gamma[ds.gamma_origin_flat]


def retract_interface(v_gamma: np.ndarray, ds: DerivedSpace) -> np.ndarray:
    """Average gamma-restricted descendant groups back to interface-node values."""
    expected = len(ds.gamma_positions) * ds.block_dim
    if v_gamma.shape != (expected,):
        raise ValueError(f"expected length {expected}, got {v_gamma.shape}")
    out = np.zeros(len(ds.gamma_nodes) * ds.block_dim)
    np.add.at(out, ds.gamma_origin_flat, v_gamma)
    out *= ds.gamma_inv_mult_flat
    return out


def project_continuous_interface(v_gamma: np.ndarray, ds: DerivedSpace) -> np.ndarray:
    return inject_interface(retract_interface(v_gamma, ds), ds)


def inner_interface(u: np.ndarray, v: np.ndarray, ds: DerivedSpace) -> float:
    """Weighted inner product restricted to interface derived entries."""
    return float(np.dot(u * ds.gamma_weight_flat, v))


# ---------------------------------------------------------------------------
# Explicit operator matrices (dense reference path, test-scale only)
# ---------------------------------------------------------------------------

def injection_matrix(ds: DerivedSpace) -> sp.csr_matrix:
    """Injection as an explicit (|X| d) x (N d) 0/1 matrix; capped at test scale."""
    if ds.original_flat_size > DENSE_REFERENCE_CAP:
        raise ValueError(f"dense reference path capped at {DENSE_REFERENCE_CAP} scalar unknowns")
    n = ds.derived_flat_size
    return sp.csr_matrix(
        (np.ones(n), (np.arange(n), ds.origin_flat)), shape=(n, ds.original_flat_size)
    )


def retraction_matrix(ds: DerivedSpace) -> sp.csr_matrix:
    """Retraction as the 1/m-weighted transpose of the injection matrix."""
    if ds.original_flat_size > DENSE_REFERENCE_CAP:
        raise ValueError(f"dense reference path capped at {DENSE_REFERENCE_CAP} scalar unknowns")
    n = ds.derived_flat_size
    return sp.csr_matrix(
        (ds.weight_flat, (ds.origin_flat, np.arange(n))), shape=(ds.original_flat_size, n)
    )
