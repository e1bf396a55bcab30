"""Topology policies: spectral clustering with slice-leader election, and the
two non-isolated baselines.

Vehicles and RSUs are addressed by integer id; serving nodes by ``Node``.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components

from .mobility import distance, nearest_rsu_index, ring_offset

KMEANS_MAX_ITER = 100


class Node(NamedTuple):
    kind: str  # "rsu" or "vehicle"
    id: int


def rsu_node(b: int) -> Node:
    return Node("rsu", int(b))


def vehicle_node(v: int) -> Node:
    return Node("vehicle", int(v))


class SpectralError(RuntimeError):
    pass


@dataclass
class TopologyAssignment:
    """Output of a slicing policy.

    ``serving_map`` routes each vehicle's safety (autonomous-slice) traffic and
    ``video_map`` its infotainment traffic; in the baselines both coincide.
    """

    clusters: list[list[int]] = field(default_factory=list)
    leaders: list[int] = field(default_factory=list)
    serving_map: dict[int, Node] = field(default_factory=dict)
    video_map: dict[int, Node] = field(default_factory=dict)
    epoch_tti: int = 0
    independent: list[int] = field(default_factory=list)
    relays: list[int] = field(default_factory=list)
    offloaded: list[int] = field(default_factory=list)
    warnings: Counter = field(default_factory=Counter)

    @property
    def clustered(self) -> set[int]:
        return {v for c in self.clusters for v in c}

    def check(self, vehicle_ids: Sequence[int], rsu_ids: Sequence[int] = ()) -> None:
        """Assert the partition invariants."""
        ids = set(vehicle_ids)
        seen: set[int] = set()
        for c in self.clusters:
            assert not seen & set(c), "clusters overlap"
            seen |= set(c)
        assert len(self.leaders) == len(self.clusters), "one leader per cluster"
        assert len(set(self.leaders)) == len(self.leaders), "leader reused"
        assert not set(self.leaders) & seen, "leader inside a cluster"
        s = set(self.leaders) | set(self.independent)
        assert not s & seen
        assert s | seen <= ids, "topology references unknown vehicles"
        assert len(s) + len(seen) == len(ids) or not self.clusters, "|V| != |S| + |C|"
        for v, node in list(self.serving_map.items()) + list(self.video_map.items()):
            assert v in ids
            if node.kind == "vehicle":
                assert node.id in ids and node.id != v
            elif rsu_ids:
                assert node.id in set(rsu_ids)


# -- spectral clustering ---------------------------------------------------

def similarity_matrix(positions, sigma_m: float, squared: bool = False) -> np.ndarray:
    """Gaussian similarity exp(-||d_v - d_v'|| / (2 sigma^2)).

    With ``squared`` the conventional exp(-||.||^2 / (2 sigma^2)) kernel is used.
    """
    if not sigma_m > 0:
        raise ValueError("sigma_m must be positive")
    p = np.asarray(positions, dtype=float).reshape(len(positions), -1)
    diff = p[:, None, :] - p[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    d = d2 if squared else np.sqrt(d2)
    return np.exp(-d / (2.0 * sigma_m**2))


def laplacian(A) -> np.ndarray:
    """Unnormalised Laplacian D - W, W being A without self-loops."""
    W = np.array(A, dtype=float)
    np.fill_diagonal(W, 0.0)
    return np.diag(W.sum(axis=1)) - W


def eigengap_k(eigenvalues_ascending, k_max: Optional[int] = None) -> int:
    ev = np.asarray(eigenvalues_ascending, dtype=float)
    if ev.size < 2:
        return 1
    k = int(np.argmax(np.diff(ev))) + 1
    if k_max is not None:
        k = min(k, max(1, k_max))
    return max(k, 1)


def spectral_embed(L, k: int) -> np.ndarray:
    """Rows are vehicles, columns the eigenvectors of the k smallest eigenvalues."""
    n = len(L)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    try:
        _, vecs = scipy.linalg.eigh(L, subset_by_index=[0, k - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SpectralError(str(exc)) from exc
    return vecs


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = [points[rng.integers(n)]]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            i = int(rng.integers(n))
        else:
            i = int(rng.choice(n, p=d2 / total))
        centers.append(points[i])
        d2 = np.minimum(d2, ((points - points[i]) ** 2).sum(axis=1))
    return np.array(centers)


def _sq_dists(points, centroids):
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def kmeans(points, k: int, rng: np.random.Generator, max_iter: int = KMEANS_MAX_ITER,
           history: Optional[list] = None):
    """Lloyd iterations from k-means++ seeds.

    ``k`` is reduced to the number of distinct points. Every returned cluster is
    non-empty. If ``history`` is given, the objective after each iteration is
    appended to it.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = len(pts)
    k = max(1, min(k, len(np.unique(pts, axis=0))))
    centroids = _kmeans_pp(pts, k, rng)
    labels = np.full(n, -1)
    for _ in range(max_iter):
        new = np.argmin(_sq_dists(pts, centroids), axis=1)
        # refill empty clusters with the point worst served by its centroid
        for j in range(k):
            if not np.any(new == j):
                cost = ((pts - centroids[new]) ** 2).sum(axis=1)
                movable = np.bincount(new, minlength=k)[new] > 1
                i = int(np.argmax(np.where(movable, cost, -1.0)))
                new[i] = j
                centroids[j] = pts[i]
        changed = not np.array_equal(new, labels)
        labels = new
        centroids = np.array([pts[labels == j].mean(axis=0) for j in range(k)])
        if history is not None:
            history.append(float(((pts - centroids[labels]) ** 2).sum()))
        if not changed:
            break
    return labels, centroids


def threshold_components(A, threshold: float) -> list[list[int]]:
    W = np.asarray(A) >= threshold
    n_comp, labels = connected_components(W, directed=False)
    return [np.flatnonzero(labels == c).tolist() for c in range(n_comp)]


def cluster_vehicles(positions, sigma_m: float, rng: np.random.Generator, squared: bool = False,
                     k_max: Optional[int] = None, warnings: Optional[Counter] = None) -> list[list[int]]:
    """Partition vehicles (row indices of ``positions``) into clusters."""
    pts = np.asarray(positions, dtype=float)
    n = len(pts)
    if n == 0:
        return []
    if n == 1:
        return [[0]]
    A = similarity_matrix(pts, sigma_m, squared)
    L = laplacian(A)
    if k_max is None:
        k_max = math.ceil(n / 2)
    try:
        vals, vecs = scipy.linalg.eigh(L)
        if not np.all(np.isfinite(vals)):
            raise SpectralError("non-finite eigenvalues")
    except (np.linalg.LinAlgError, ValueError, SpectralError):
        if warnings is not None:
            warnings["eigensolver_fallback"] += 1
        return threshold_components(A, math.exp(-1.0))
    k = eigengap_k(vals, k_max)
    labels, _ = kmeans(vecs[:, :k], k, rng)
    return [np.flatnonzero(labels == j).tolist() for j in range(labels.max() + 1)]


# -- slice leaders ---------------------------------------------------------

@dataclass
class LeaderSelection:
    clusters: list[list[int]]
    leaders: list[int]
    merged: int = 0


def select_slice_leaders(clusters, candidate_vehicles, positions) -> LeaderSelection:
    """Pick, per cluster, the candidate closest to the cluster centre.

    ``clusters`` hold vehicle ids, ``positions`` maps id -> (x, y). Clusters are
    served in size-descending order and a chosen leader is not reused. A
    cluster left without candidates is merged into the cluster with the
    nearest centre that did get a leader.
    """
    pos = {int(v): np.asarray(positions[v], dtype=float) for v in {v for c in clusters for v in c} | set(candidate_vehicles)}
    centres = [np.mean([pos[v] for v in c], axis=0) for c in clusters]
    remaining = sorted(set(int(v) for v in candidate_vehicles))
    order = sorted(range(len(clusters)), key=lambda i: -len(clusters[i]))
    leader_of: dict[int, int] = {}
    for i in order:
        if not remaining:
            continue
        d = np.array([np.linalg.norm(pos[v] - centres[i]) for v in remaining])
        j = int(np.argmin(d))  # remaining is id-sorted, so ties go to the lowest id
        leader_of[i] = remaining.pop(j)

    merged = 0
    out_clusters = {i: list(clusters[i]) for i in leader_of}
    for i in order:
        if i in leader_of:
            continue
        if not leader_of:
            break
        host = min(leader_of, key=lambda h: (np.linalg.norm(centres[h] - centres[i]), h))
        out_clusters[host].extend(clusters[i])
        merged += 1
    keep = [i for i in range(len(clusters)) if i in leader_of]
    return LeaderSelection([sorted(out_clusters[i]) for i in keep], [leader_of[i] for i in keep], merged)


# -- policies --------------------------------------------------------------

def _nearest_among(v: int, pool: np.ndarray, x, y, length, max_range=np.inf) -> Optional[int]:
    pool = pool[pool != v]
    if pool.size == 0:
        return None
    d = distance(x[v], y[v], x[pool], y[pool], length)
    j = int(np.argmin(d))
    return int(pool[j]) if d[j] <= max_range else None


def proposed_topology(x, y, video_capable, rsu_x, rsu_y, highway_length_m, sigma_m, rng,
                      squared: bool = False, relay_range_m: float = 250.0, epoch_tti: int = 0,
                      rsu_of=None) -> TopologyAssignment:
    """Cluster the vehicles under each RSU and elect one slice leader per cluster.

    Clustered vehicles get safety traffic from their leader over V2V. Leaders
    and unclustered vehicles get it from the nearest other leader within
    ``relay_range_m``, otherwise from their RSU. Video always comes from the RSU.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    video_capable = np.asarray(video_capable, dtype=bool)
    n = x.size
    if rsu_of is None:
        rsu_of = nearest_rsu_index(x, y, np.asarray(rsu_x), np.asarray(rsu_y), highway_length_m)
    topo = TopologyAssignment(epoch_tti=epoch_tti)

    for b in range(len(rsu_x)):
        scope = np.flatnonzero(rsu_of == b)
        if scope.size == 0:
            continue
        # unwrap around the RSU so the scope is contiguous
        ux = rsu_x[b] + ring_offset(x[scope], rsu_x[b], highway_length_m)
        pts = np.column_stack([ux, y[scope]])
        if scope.size < 2:
            topo.independent.extend(int(v) for v in scope)
            continue
        local = cluster_vehicles(pts, sigma_m, rng, squared, warnings=topo.warnings)
        clusters = [[int(scope[i]) for i in c] for c in local]
        candidates = [int(v) for v in scope if video_capable[v]]
        positions = {int(v): pts[i] for i, v in enumerate(scope)}
        sel = select_slice_leaders(clusters, candidates, positions)
        topo.warnings["leader_merge"] += sel.merged
        if not sel.leaders:
            topo.independent.extend(int(v) for v in scope)
            continue
        leaders = set(sel.leaders)
        for c, lead in zip(sel.clusters, sel.leaders):
            topo.clusters.append([v for v in c if v not in leaders])
            topo.leaders.append(lead)

    leader_arr = np.array(sorted(topo.leaders), dtype=int)
    for c, lead in zip(topo.clusters, topo.leaders):
        for v in c:
            topo.serving_map[v] = vehicle_node(lead)
    for v in list(topo.leaders) + list(topo.independent):
        host = _nearest_among(v, leader_arr, x, y, highway_length_m, relay_range_m)
        topo.serving_map[v] = vehicle_node(host) if host is not None else rsu_node(rsu_of[v])
    for v in range(n):
        if video_capable[v]:
            topo.video_map[v] = rsu_node(rsu_of[v])
    return topo


def baseline1_topology(x, y, rsu_x, rsu_y, highway_length_m=None, epoch_tti: int = 0,
                       video_capable=None) -> TopologyAssignment:
    """Every vehicle on its nearest RSU for both traffic types."""
    x = np.asarray(x, dtype=float)
    rsu_of = nearest_rsu_index(x, np.asarray(y, dtype=float), np.asarray(rsu_x), np.asarray(rsu_y), highway_length_m)
    video = np.ones(x.size, bool) if video_capable is None else np.asarray(video_capable, bool)
    topo = TopologyAssignment(epoch_tti=epoch_tti, independent=list(range(x.size)))
    for v in range(x.size):
        topo.serving_map[v] = rsu_node(rsu_of[v])
        if video[v]:
            topo.video_map[v] = rsu_node(rsu_of[v])
    return topo


def baseline2_topology(x, y, rsu_x, rsu_y, v2i_sinr_db, offload_threshold_db: float = 0.0,
                       highway_length_m=None, relay_range_m: float = 250.0, never_offload=(),
                       epoch_tti: int = 0, video_capable=None) -> TopologyAssignment:
    """Baseline 1 plus relaying of vehicles whose wideband V2I SINR is below threshold.

    Each offloaded vehicle hangs off the closest non-offloaded vehicle within
    ``relay_range_m``, which then carries both of its traffic types over V2V.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    topo = baseline1_topology(x, y, rsu_x, rsu_y, highway_length_m, epoch_tti, video_capable)
    sinr = np.asarray(v2i_sinr_db, dtype=float)
    offload = sinr < offload_threshold_db
    offload[list(never_offload)] = False
    anchors = np.flatnonzero(~offload)
    relays = set()
    for v in np.flatnonzero(offload):
        host = _nearest_among(int(v), anchors, x, y, highway_length_m, relay_range_m)
        if host is None:
            topo.warnings["offload_no_relay"] += 1
            continue
        topo.serving_map[int(v)] = vehicle_node(host)
        if int(v) in topo.video_map:
            topo.video_map[int(v)] = vehicle_node(host)
        topo.offloaded.append(int(v))
        relays.add(host)
    topo.relays = sorted(relays)
    return topo
