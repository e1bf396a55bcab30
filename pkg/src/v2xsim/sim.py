"""Simulation clock, network state and the per-TTI step sequence.

Node indices: RSU ``b`` is node ``b``; vehicle ``v`` is node ``n_rsu + v``.
Flow ids: ``2v`` carries vehicle ``v``'s video, ``2v + 1`` its safety traffic.
In the baselines each vehicle has a single FIFO holding both classes, kept
under flow ``2v``. When baseline 2 offloads ``v``, the relay serves ``2v``
over V2V by default (``relay_mode="access_point"``). With
``relay_mode="two_hop"`` the flow ``2v`` is the RSU-to-relay hop and ``2v + 1``
the relay-to-vehicle hop; whole packets decoded at the relay move to the
second hop at the end of the TTI.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .channel import N_RX_BRANCHES, TTI_S, db2lin, lin2db, noise_mw, path_loss_v2i, path_loss_v2v, per_prb_power_dbm
from .config import SimConfig
from .mac import PfState, allocate_prbs, resolve_transmission, update_pf_average
from .metrics import MetricsCollector, MetricsReport
from .mobility import (RSU, VIDEO_CAPABLE, Vehicle, advance_x, distance, lane_direction, nearest_rsu_index,
                       place_rsus, spawn_vehicles)
from .slicing import Node, TopologyAssignment, baseline1_topology, baseline2_topology, proposed_topology
from .traffic import (AUTONOMOUS, INFOTAINMENT, SAFETY_PACKET_BITS, SAFETY_PERIOD_TTI, VIDEO_PACKET_BITS, Packet,
                      PacketQueue)

STREAM_NAMES = ("placement", "shadowing", "fading_v2i", "fading_v2v", "harq_v2i", "harq_v2v", "kmeans")

# V2V interferers beyond this many strongest ones contribute their mean power
N_FADED_INTERFERERS = 4


def make_rng_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))
    return {name: np.random.default_rng(ss) for name, ss in zip(STREAM_NAMES, children)}


@dataclass
class NetworkState:
    config: SimConfig
    base_vehicles: list[Vehicle]
    rsus: list[RSU]
    x: np.ndarray
    y: np.ndarray
    velocity: np.ndarray
    video: np.ndarray
    rng_streams: dict
    queues: list[PacketQueue]
    pf_state: PfState
    collector: MetricsCollector
    clock_tti: int = 0
    topology: TopologyAssignment = field(default_factory=TopologyAssignment)
    server: Optional[np.ndarray] = None        # flow -> node index, -1 when unrouted
    receiver: Optional[np.ndarray] = None      # flow -> receiving vehicle
    forward_to: Optional[np.ndarray] = None    # flow -> next-hop flow, -1 at the last hop
    harq: dict = field(default_factory=dict)
    shadow_v2i: Optional[np.ndarray] = None    # (n, B) dB
    shadow_v2v: Optional[np.ndarray] = None    # (n, n) dB, symmetric
    fading_v2i: Optional[np.ndarray] = None    # (n, B, P, branches) power gains
    queue_bits: Optional[np.ndarray] = None    # flow -> bits
    slice_bits: Optional[np.ndarray] = None    # (n, 2) bits per vehicle and slice
    last_arrivals: Optional[np.ndarray] = None
    last_served: Optional[np.ndarray] = None
    last_dropped: Optional[np.ndarray] = None
    last_prbs: Optional[np.ndarray] = None     # PRBs granted per flow in the last step

    @property
    def n_vehicles(self) -> int:
        return len(self.base_vehicles)

    @property
    def n_rsu(self) -> int:
        return len(self.rsus)

    @property
    def mixed(self) -> bool:
        return self.config.mode != "proposed"

    @property
    def video_ids(self) -> np.ndarray:
        return np.flatnonzero(self.video)

    @property
    def vehicles(self) -> list[Vehicle]:
        return [replace(v, x_m=float(x)) for v, x in zip(self.base_vehicles, self.x)]

    @property
    def rsu_x(self) -> np.ndarray:
        return np.array([r.x_m for r in self.rsus])

    @property
    def rsu_y(self) -> np.ndarray:
        return np.array([r.y_m for r in self.rsus])

    def queue_flow(self, v: int, slice: int) -> int:
        return 2 * v if self.mixed else 2 * v + slice

    def node_index(self, node: Node) -> int:
        return node.id if node.kind == "rsu" else self.n_rsu + node.id


def init_state(config: SimConfig, vehicles: Optional[list[Vehicle]] = None) -> NetworkState:
    """Place RSUs and vehicles and allocate empty queues. ``vehicles`` overrides placement."""
    config.validate()
    rngs = make_rng_streams(config.seed)
    rsus = place_rsus(config.n_rsu, config.rsu_tx_power_dbm, config.n_prb)
    if vehicles is None:
        vehicles = spawn_vehicles(config.scenario_id, config.length_m, rngs["placement"], config.video_fraction)
    n = len(vehicles)
    state = NetworkState(
        config=config,
        base_vehicles=list(vehicles),
        rsus=rsus,
        x=np.array([v.x_m for v in vehicles], dtype=float),
        y=np.array([v.y_m for v in vehicles], dtype=float),
        velocity=np.array([lane_direction(v.lane) * v.speed_mps for v in vehicles], dtype=float),
        video=np.array([v.service_class == VIDEO_CAPABLE for v in vehicles], dtype=bool),
        rng_streams=rngs,
        queues=[PacketQueue() for _ in range(2 * n)],
        pf_state=PfState(2 * n, config.pf_beta),
        collector=MetricsCollector(n),
    )
    state.server = np.full(2 * n, -1, dtype=np.int64)
    state.receiver = np.arange(2 * n, dtype=np.int64) // 2
    state.forward_to = np.full(2 * n, -1, dtype=np.int64)
    state.queue_bits = np.zeros(2 * n, dtype=np.int64)
    state.slice_bits = np.zeros((n, 2), dtype=np.int64)
    return state


# -- channel -----------------------------------------------------------------

def _v2i_mean_rx_mw(state: NetworkState, rows=None) -> np.ndarray:
    """Mean received power per PRB and branch from every RSU, (rows, B)."""
    cfg = state.config
    rows = np.arange(state.n_vehicles) if rows is None else rows
    d = distance(state.x[rows, None], state.y[rows, None], state.rsu_x[None, :], state.rsu_y[None, :], cfg.length_m)
    p = per_prb_power_dbm(cfg.rsu_tx_power_dbm, cfg.n_prb)
    return db2lin(p - path_loss_v2i(d) - state.shadow_v2i[rows])


def wideband_v2i_sinr_db(state: NetworkState) -> np.ndarray:
    """Large-scale SINR towards the nearest RSU with every other RSU interfering."""
    g = _v2i_mean_rx_mw(state)
    b = nearest_rsu_index(state.x, state.y, state.rsu_x, state.rsu_y, state.config.length_m)
    s = g[np.arange(g.shape[0]), b]
    return lin2db(s / (noise_mw(state.config.noise_figure_db) + g.sum(axis=1) - s))


def v2i_prb_sinr(state: NetworkState, rx: np.ndarray, serving: np.ndarray, active_rsu: np.ndarray) -> np.ndarray:
    """Post-MRC linear SINR per PRB, (len(rx), P). Active RSUs other than the server interfere."""
    g = _v2i_mean_rx_mw(state, rx)
    if state.fading_v2i is not None:
        rxp = g[:, :, None, None] * state.fading_v2i[rx]
    else:
        rxp = np.broadcast_to(g[:, :, None, None], g.shape + (1, N_RX_BRANCHES))
    r = np.arange(rx.size)
    signal = rxp[r, serving]
    mask = active_rsu[None, :] & (np.arange(state.n_rsu)[None, :] != serving[:, None])
    interference = np.einsum("rbpk,rb->rpk", np.broadcast_to(rxp, (rx.size, state.n_rsu) + rxp.shape[2:]), mask)
    sinr = signal / (noise_mw(state.config.noise_figure_db) + interference)
    return np.broadcast_to(sinr.sum(axis=-1), (rx.size, state.config.n_prb))


def v2v_prb_sinr(state: NetworkState, rx: np.ndarray, tx: np.ndarray, active_tx: np.ndarray) -> np.ndarray:
    """Post-MRC linear SINR per PRB on the sidelink pool, (len(rx), P).

    Every vehicle in ``active_tx`` other than the link's own ends interferes on
    all PRBs. The strongest few interferers get independent fading; the rest
    contribute their mean power.
    """
    cfg = state.config
    P = cfg.n_prb
    R = rx.size
    p = db2lin(per_prb_power_dbm(cfg.sl_tx_power_dbm, P))
    x, y, L = state.x, state.y, cfg.length_m
    d = distance(x[rx], y[rx], x[tx], y[tx], L)
    g = p * db2lin(-(path_loss_v2v(d) + state.shadow_v2v[rx, tx]))
    rng = state.rng_streams["fading_v2v"]

    if cfg.fading:
        signal = g[:, None, None] * rng.standard_exponential((R, P, 2))
    else:
        signal = np.broadcast_to(g[:, None, None], (R, P, 2))
    interference = np.zeros((R, 1, 1))
    if active_tx.size:
        di = distance(x[rx, None], y[rx, None], x[None, active_tx], y[None, active_tx], L)
        gi = p * db2lin(-(path_loss_v2v(di) + state.shadow_v2v[rx[:, None], active_tx[None, :]]))
        gi[(active_tx[None, :] == tx[:, None]) | (active_tx[None, :] == rx[:, None])] = 0.0
        if cfg.fading:
            k = min(N_FADED_INTERFERERS, active_tx.size)
            top = np.argpartition(-gi, k - 1, axis=1)[:, :k]
            gtop = np.take_along_axis(gi, top, axis=1)
            rest = np.maximum(gi.sum(axis=1) - gtop.sum(axis=1), 0.0)
            faded = (gtop[:, :, None, None] * rng.standard_exponential((R, k, P, 2))).sum(axis=1)
            interference = faded + rest[:, None, None]
        else:
            interference = gi.sum(axis=1)[:, None, None]
    sinr = signal / (noise_mw(cfg.noise_figure_db) + interference)
    return sinr.sum(axis=-1)


# -- re-slicing --------------------------------------------------------------

def _draw_shadowing(state: NetworkState) -> None:
    cfg = state.config
    rng = state.rng_streams["shadowing"]
    n = state.n_vehicles
    state.shadow_v2i = rng.normal(0.0, cfg.shadowing_std_v2i_db, (n, state.n_rsu))
    upper = np.triu(rng.normal(0.0, cfg.shadowing_std_v2v_db, (n, n)), 1)
    state.shadow_v2v = upper + upper.T


def compute_topology(state: NetworkState) -> TopologyAssignment:
    cfg = state.config
    args = (state.x, state.y, state.rsu_x, state.rsu_y)
    if cfg.mode == "proposed":
        return proposed_topology(*args[:2], state.video, *args[2:], cfg.length_m, cfg.sigma_m,
                                 state.rng_streams["kmeans"], cfg.squared_similarity, cfg.relay_range_m,
                                 epoch_tti=state.clock_tti)
    if cfg.mode == "baseline1":
        return baseline1_topology(*args, cfg.length_m, state.clock_tti, state.video)
    return baseline2_topology(*args, wideband_v2i_sinr_db(state), cfg.offload_threshold_db, cfg.length_m,
                              cfg.relay_range_m, epoch_tti=state.clock_tti, video_capable=state.video)


def apply_topology(state: NetworkState, topo: TopologyAssignment) -> None:
    """Re-route flows. Queues stay with their vehicle; HARQ state of re-routed flows is discarded.

    Packets waiting at a relay whose route is torn down go back to the head of
    the vehicle's RSU-side queue.
    """
    n = state.n_vehicles
    server = np.full(2 * n, -1, dtype=np.int64)
    receiver = np.arange(2 * n, dtype=np.int64) // 2
    forward_to = np.full(2 * n, -1, dtype=np.int64)
    for v, node in topo.serving_map.items():
        server[state.queue_flow(v, AUTONOMOUS)] = state.node_index(node)
    if not state.mixed:
        for v, node in topo.video_map.items():
            server[2 * v] = state.node_index(node)
    elif state.config.relay_mode == "access_point":
        # the relay holds the offloaded vehicle's traffic itself, like a slice leader
        for v in topo.offloaded:
            server[2 * v] = state.node_index(topo.serving_map[v])
    else:
        for v in topo.offloaded:
            relay = topo.serving_map[v].id
            server[2 * v] = state.node_index(topo.serving_map[relay])
            receiver[2 * v] = relay
            forward_to[2 * v] = 2 * v + 1
            server[2 * v + 1] = state.node_index(topo.serving_map[v])

    rerouted = (server != state.server) | (receiver != state.receiver)
    for f in np.flatnonzero(rerouted):
        state.harq.pop(int(f), None)
        if state.mixed and f % 2 == 1 and state.queue_bits[f]:
            _return_to_source(state, int(f))
    state.server, state.receiver, state.forward_to = server, receiver, forward_to
    state.topology = topo


def _return_to_source(state: NetworkState, f: int) -> None:
    src, dst = state.queues[f], state.queues[f - 1]
    packets = list(src.packets)
    src.packets.clear()
    src.total_bits, src.slice_bits = 0, [0, 0]
    for p in reversed(packets):
        p.flow_id = f - 1
        dst.packets.appendleft(p)
        dst.total_bits += p.bits_remaining
        dst.slice_bits[p.slice] += p.bits_remaining
    moved = state.queue_bits[f]
    state.queue_bits[f - 1] += moved
    state.queue_bits[f] = 0
    if state.last_arrivals is not None:
        state.last_arrivals[f - 1] += moved
        state.last_arrivals[f] -= moved


def reslice(state: NetworkState) -> None:
    _draw_shadowing(state)
    topo = compute_topology(state)
    apply_topology(state, topo)
    col = state.collector
    col.warnings.update(topo.warnings)
    if state.clock_tti >= state.config.warmup_tti:
        col.record_epoch(len(topo.leaders), state.config.length_m / 1000.0, topo.clustered)


# -- scheduling and transmission ---------------------------------------------

def _serve_band(state: NetworkState, flows, nodes, sinr, rng, out_served, out_dropped, out_prbs) -> None:
    cfg = state.config
    order = np.lexsort((flows, nodes))
    flows, nodes, sinr = flows[order], nodes[order], sinr[order]
    qbits = state.queue_bits[flows]
    harq = state.harq
    n = flows.size
    is_retx = np.fromiter((int(f) in harq for f in flows), dtype=bool, count=n)
    eff = np.zeros(n)
    nprb = np.zeros(n, dtype=np.int64)
    granted = np.zeros(n, dtype=bool)

    # retransmissions take the lowest PRBs of their node, in flow-id order
    reserved: dict[int, int] = {}
    for i in np.flatnonzero(is_retx):
        h = harq[int(flows[i])]
        start = reserved.get(int(nodes[i]), 0)
        if start + h.n_prb > cfg.n_prb:
            continue  # postponed to a later TTI
        eff[i] = np.exp(np.mean(np.log(sinr[i, start:start + h.n_prb])))
        nprb[i] = h.n_prb
        granted[i] = True
        reserved[int(nodes[i])] = start + h.n_prb

    new = np.flatnonzero(~is_retx)
    if new.size:
        first_free = np.array([reserved.get(int(nd), 0) for nd in nodes[new]], dtype=np.int64)
        mask, _, logsum = allocate_prbs(nodes[new], qbits[new], sinr[new], state.pf_state.avg[flows[new]],
                                        cfg.pf_beta, first_free)
        cnt = mask.sum(axis=1)
        has = cnt > 0
        idx = new[has]
        eff[idx] = np.exp(logsum[has] / cnt[has])
        nprb[idx] = cnt[has]
        granted[idx] = True

    g = np.flatnonzero(granted)
    served, dropped, _ = resolve_transmission(flows[g], nprb[g], eff[g], qbits[g], harq, rng, cfg.harq_max_attempts)
    out_served[flows[g]] = served
    out_dropped[flows[g]] = dropped
    out_prbs[flows[g]] = nprb[g]


def schedule_and_transmit(state: NetworkState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """PF scheduling at every serving node and HARQ resolution.

    Returns acknowledged bits, dropped bits and granted PRBs per flow.
    """
    B = state.n_rsu
    nf = state.queue_bits.size
    served = np.zeros(nf, dtype=np.int64)
    dropped = np.zeros(nf, dtype=np.int64)
    prbs = np.zeros(nf, dtype=np.int64)
    active = np.flatnonzero((state.queue_bits > 0) & (state.server >= 0))
    if active.size == 0:
        return served, dropped, prbs
    srv = state.server[active]

    on_v2i = srv < B
    if on_v2i.any():
        flows, nodes = active[on_v2i], srv[on_v2i]
        active_rsu = np.zeros(B, dtype=bool)
        active_rsu[nodes] = True
        sinr = v2i_prb_sinr(state, state.receiver[flows], nodes, active_rsu)
        _serve_band(state, flows, nodes, sinr, state.rng_streams["harq_v2i"], served, dropped, prbs)

    on_v2v = ~on_v2i
    if on_v2v.any():
        flows, nodes = active[on_v2v], srv[on_v2v]
        tx = nodes - B
        sinr = v2v_prb_sinr(state, state.receiver[flows], tx, np.unique(tx))
        _serve_band(state, flows, nodes, sinr, state.rng_streams["harq_v2v"], served, dropped, prbs)
    return served, dropped, prbs


# -- step --------------------------------------------------------------------

def _enqueue(state: NetworkState, vehicles: np.ndarray, slice: int, bits: int, t: int, arrivals: np.ndarray) -> None:
    flows = 2 * vehicles if state.mixed else 2 * vehicles + slice
    queues = state.queues
    for f in flows.tolist():
        queues[f].push(Packet(f, bits, t, bits, slice))
    state.queue_bits[flows] += bits
    state.slice_bits[vehicles, slice] += bits
    arrivals[flows] += bits


def step(state: NetworkState) -> NetworkState:
    cfg = state.config
    t = state.clock_tti
    in_window = t >= cfg.warmup_tti
    n = state.n_vehicles

    # (1) mobility
    if n:
        state.x = advance_x(state.x, state.velocity, TTI_S, cfg.length_m)

    # (2) arrivals
    # bits entering each queue this step; relay hand-overs move bits between a vehicle's two queues
    arrivals = state.last_arrivals = np.zeros(2 * n, dtype=np.int64)
    _enqueue(state, state.video_ids, INFOTAINMENT, VIDEO_PACKET_BITS, t, arrivals)
    # safety phase is v mod 10, so the due vehicles form an arithmetic progression
    due = np.arange(t % SAFETY_PERIOD_TTI, n, SAFETY_PERIOD_TTI)
    _enqueue(state, due, AUTONOMOUS, SAFETY_PACKET_BITS, t, arrivals)

    # (3) V2I fading; V2V fading is drawn per scheduled link in step (5)
    if cfg.fading and n:
        state.fading_v2i = state.rng_streams["fading_v2i"].standard_exponential((n, state.n_rsu, cfg.n_prb, 2))
    else:
        state.fading_v2i = None

    # (4) re-slice
    if t % cfg.reslice_period_tti == 0:
        reslice(state)

    # (5) + (6)
    served, dropped, prbs = schedule_and_transmit(state)

    # (7) dequeue and metrics
    col = state.collector
    for f in np.flatnonzero(served | dropped):
        q = state.queues[f]
        v = int(f) // 2
        nxt = int(state.forward_to[f])
        for bits, fail in ((int(served[f]), False), (int(dropped[f]), True)):
            if not bits:
                continue
            done, removed = q.drop(bits, t) if fail else q.serve(bits, t)
            state.queue_bits[f] -= bits
            state.slice_bits[v, 0] -= removed[0]
            state.slice_bits[v, 1] -= removed[1]
            if nxt >= 0:
                done = _forward(state, done, nxt, v, t, arrivals)
            elif in_window and not fail:
                col.record_served(v, removed)
            if in_window:
                col.record_packets(done)
    update_pf_average(state.pf_state, served)
    if in_window and n:
        col.record_queues(INFOTAINMENT, state.slice_bits[state.video, INFOTAINMENT])
        col.record_queues(AUTONOMOUS, state.slice_bits[:, AUTONOMOUS])
    state.last_arrivals, state.last_served, state.last_dropped, state.last_prbs = arrivals, served, dropped, prbs

    # (8) clock
    state.clock_tti = t + 1
    return state


def _forward(state: NetworkState, packets, flow: int, v: int, t: int, arrivals: np.ndarray) -> list:
    """Hand decoded packets to the next hop; returns the failed ones, which end here."""
    failed = []
    q = state.queues[flow]
    for p in packets:
        if p.failed:
            failed.append(p)
            continue
        q.push(Packet(flow, p.size_bits, p.arrival_tti, p.size_bits, p.slice))
        state.queue_bits[flow] += p.size_bits
        state.slice_bits[v, p.slice] += p.size_bits
        arrivals[flow] += p.size_bits
    return failed


def finish(state: NetworkState) -> MetricsReport:
    cfg = state.config
    window = max(state.clock_tti - cfg.warmup_tti, 0) * TTI_S
    return state.collector.finish(cfg.to_dict(), window, np.flatnonzero(state.video).tolist(),
                                  list(range(state.n_vehicles)))


def run_simulation(config: SimConfig, vehicles: Optional[list[Vehicle]] = None) -> MetricsReport:
    """Run ``warmup_tti + duration_tti`` steps and return the metrics of the measured window."""
    state = init_state(config, vehicles)
    for _ in range(config.total_tti):
        step(state)
    return finish(state)
