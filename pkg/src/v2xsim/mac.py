"""Proportional-fair PRB allocation and HARQ chase combining."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .channel import (BITS_PER_PRB_PER_SE, MAX_SPECTRAL_EFFICIENCY, block_error_prob, lin2db, mcs_threshold_db,
                      rate_from_sinr, spectral_efficiency)

PF_FLOOR = 1.0


class PfState:
    """Exponentially averaged served bits per TTI, one entry per flow id."""

    def __init__(self, n_flows: int, beta: float = 0.01, initial: float = PF_FLOOR):
        if not 0.0 < beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        self.beta = beta
        self.avg = np.full(n_flows, max(initial, PF_FLOOR), dtype=float)


def update_pf_average(pf: PfState, served_bits, beta: Optional[float] = None) -> PfState:
    beta = pf.beta if beta is None else beta
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    pf.avg = np.maximum((1.0 - beta) * pf.avg + beta * np.asarray(served_bits, dtype=float), PF_FLOOR)
    return pf


@dataclass
class FlowDemand:
    flow_id: int
    queue_bits: int
    # linear SINR per PRB; a scalar means frequency-flat
    prb_sinr: object


def allocate_prbs(node, queue_bits, prb_sinr, avg, beta, first_free=None):
    """Greedy per-PRB proportional-fair allocation for many serving nodes at once.

    Flows must be sorted by ``node`` and, within a node, by flow id. Each PRB
    of each node goes to the eligible flow with the largest instantaneous rate
    over running average; the running average is refreshed after every grant
    with the capacity granted so far. A flow stays eligible while the capacity
    of its grant (effective SINR over the granted PRBs) is below its backlog.
    PRBs below ``first_free[f]`` are reserved at that flow's node.

    Returns ``(granted, capacity, logsum)`` where ``granted`` is an (F, P) bool
    mask, ``capacity`` the transport block size in bits and ``logsum`` the sum
    of log-SINR over granted PRBs.
    """
    node = np.asarray(node)
    queue_bits = np.asarray(queue_bits)
    sinr = np.asarray(prb_sinr, dtype=float)
    n_flows, n_prb = sinr.shape
    granted = np.zeros((n_flows, n_prb), dtype=bool)
    capacity = np.zeros(n_flows, dtype=np.int64)
    logsum = np.zeros(n_flows)
    if n_flows == 0:
        return granted, capacity, logsum
    if np.any(np.diff(node) < 0):
        raise ValueError("flows must be grouped by node in ascending order")
    first_free = np.zeros(n_flows, dtype=int) if first_free is None else np.asarray(first_free)

    rates = rate_from_sinr(sinr, 1)
    with np.errstate(divide="ignore"):
        logs = np.log(sinr)
    starts = np.flatnonzero(np.r_[True, node[1:] != node[:-1]])
    segment = np.repeat(np.arange(starts.size), np.diff(np.r_[starts, n_flows]))
    idx = np.arange(n_flows)
    count = np.zeros(n_flows, dtype=np.int64)
    avg = np.asarray(avg, dtype=float)
    avg_now = avg.copy()
    eligible = queue_bits > 0

    for m in range(n_prb):
        ok = eligible & (rates[:, m] > 0) & (first_free <= m)
        if not ok.any():
            if not eligible.any():
                break
            continue
        metric = np.where(ok, rates[:, m] / avg_now, -1.0)
        best = np.maximum.reduceat(metric, starts)
        is_best = ok & (metric == best[segment])
        winner = np.minimum.reduceat(np.where(is_best, idx, n_flows), starts)
        w = winner[winner < n_flows]
        granted[w, m] = True
        count[w] += 1
        logsum[w] += logs[w, m]
        se = np.minimum(np.log2(1.0 + np.exp(logsum[w] / count[w])), MAX_SPECTRAL_EFFICIENCY)
        capacity[w] = np.floor(count[w] * BITS_PER_PRB_PER_SE * se)
        avg_now[w] = (1.0 - beta) * avg[w] + beta * capacity[w]
        eligible[w] = capacity[w] < queue_bits[w]
    return granted, capacity, logsum


def pf_schedule(flows: Sequence[FlowDemand], pf: PfState, n_prb: int) -> dict[int, int]:
    """Allocate the PRBs of one serving node. Returns flow id -> PRB count for flows granted any."""
    if n_prb <= 0:
        raise ValueError("n_prb must be positive")
    flows = sorted(flows, key=lambda f: f.flow_id)
    if not flows:
        return {}
    sinr = np.array([np.broadcast_to(np.asarray(f.prb_sinr, dtype=float), (n_prb,)) for f in flows])
    ids = np.array([f.flow_id for f in flows])
    granted, _, _ = allocate_prbs(
        np.zeros(len(flows), dtype=int),
        np.array([f.queue_bits for f in flows]),
        sinr,
        pf.avg[ids],
        pf.beta,
    )
    counts = granted.sum(axis=1)
    return {int(fid): int(c) for fid, c in zip(ids, counts) if c}


@dataclass
class HarqProcess:
    flow_id: int
    payload_bits: int
    n_prb: int
    threshold_db: float
    acc_sinr: float
    attempts: int = 1


def resolve_transmission(flow_ids, n_prb, eff_sinr, queue_bits, harq: dict, rng: np.random.Generator,
                         max_attempts: int = 4):
    """Decide ACK/NACK for one TTI of grants and maintain the HARQ table.

    Grants for flows with an entry in ``harq`` are retransmissions of that
    payload; their effective SINR is added to the stored one before the
    outcome draw (chase combining). A new transmission carries
    ``min(rate, queue)`` bits at the efficiency implied by its effective SINR.

    Returns ``(served, dropped, nacked)``: bits acknowledged and bits discarded
    per grant, and the flow ids that received a NACK.
    """
    flow_ids = np.asarray(flow_ids, dtype=np.int64)
    n_prb = np.asarray(n_prb, dtype=np.int64)
    eff_sinr = np.asarray(eff_sinr, dtype=float)
    queue_bits = np.asarray(queue_bits, dtype=np.int64)
    g = flow_ids.size
    served = np.zeros(g, dtype=np.int64)
    dropped = np.zeros(g, dtype=np.int64)
    if g == 0:
        return served, dropped, []

    is_retx = np.fromiter((int(f) in harq for f in flow_ids), dtype=bool, count=g)
    payload = np.minimum(rate_from_sinr(eff_sinr, n_prb), queue_bits)
    threshold = mcs_threshold_db(spectral_efficiency(eff_sinr))
    combined = eff_sinr.copy()
    for i in np.flatnonzero(is_retx):
        h = harq[int(flow_ids[i])]
        payload[i] = h.payload_bits
        threshold[i] = h.threshold_db
        combined[i] = h.acc_sinr + eff_sinr[i]

    sent = payload > 0
    u = np.ones(g)
    u[sent] = rng.random(int(sent.sum()))
    p_err = block_error_prob(lin2db(combined) - threshold)
    ack = sent & (u >= p_err)
    served[ack] = payload[ack]

    nacked = []
    for i in np.flatnonzero(sent):
        fid = int(flow_ids[i])
        if ack[i]:
            harq.pop(fid, None)
            continue
        nacked.append(fid)
        h = harq.get(fid)
        if h is None:
            h = harq[fid] = HarqProcess(fid, int(payload[i]), int(n_prb[i]), float(threshold[i]), float(eff_sinr[i]))
        else:
            h.attempts += 1
            h.acc_sinr = float(combined[i])
        if h.attempts >= max_attempts:
            dropped[i] = h.payload_bits
            del harq[fid]
    return served, dropped, nacked
