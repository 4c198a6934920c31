"""Slotted event-driven simulator of ``n`` 802.11b DCF stations.

The clock counts PHY ticks (``phy.clock`` microseconds).  Idle periods are
divided into idle slots aligned on ``end_of_busy + DIFS``; a station whose
backoff counter runs out at a slot boundary starts transmitting there, and
two or more stations starting at the same boundary collide.  Idle slots
are skipped in bulk, so the cost is per transmission, not per slot.

A busy period lasts DATA + SIFS + ACK whether or not the frame collided
(after a collision the other stations defer for EIFS, which has the same
length), then the channel idles for DIFS before counting resumes.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .dcf import Scenario, slot_length, solve_fixed_point, stability_threshold
from .minplus import Trace, delay_of


@dataclass(frozen=True)
class SimConfig:
    scenario: Scenario
    duration: float = 20.0  # seconds
    replications: int = 50
    snapshot: float = 10.0  # seconds
    seed: int = 0

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("need at least one replication")
        if not 0 < self.snapshot <= self.duration:
            raise ValueError("snapshot must lie in (0, duration]")


@dataclass
class NodeState:
    queue: deque = field(default_factory=deque)  # arrival ticks
    backoff: int = -1  # -1: no backoff running
    ready: int = 0  # tick from which the counter may run
    stage: int = 0  # collisions suffered by the head packet
    post_backoff: bool = False


@dataclass
class Ticks:
    """Frame timing in integer PHY ticks."""

    difs: int
    sifs: int
    data: int
    ack: int
    slot: int
    us: float  # microseconds per tick

    @property
    def busy(self) -> int:
        return self.data + self.sifs + self.ack

    @property
    def calculus_slot(self) -> int:
        return self.difs + self.data + self.sifs + self.ack

    @classmethod
    def of(cls, scenario: Scenario) -> "Ticks":
        timing = slot_length(scenario)
        clock = scenario.phy.clock

        def conv(us):
            k = round(us / clock)
            if abs(k * clock - us) > 1e-9:
                raise ValueError(f"duration {us} us is not a multiple of the {clock} us clock")
            return int(k)

        return cls(conv(timing.difs), conv(timing.sifs), conv(timing.data), conv(timing.ack),
                   conv(timing.idle_slot), clock)


@dataclass
class Replication:
    """Raw output of one run.  Times are in ticks."""

    ticks: Ticks
    n: int
    saturated: bool
    horizon: int
    snapshot: int
    arrivals: List[np.ndarray]
    departures: List[np.ndarray]  # successes and drops in FIFO order; successes only when saturated
    sojourn: np.ndarray  # per delivered packet
    sojourn_from: np.ndarray  # arrival tick of each delivered packet
    queue_at_snapshot: np.ndarray
    attempts: np.ndarray
    collisions: np.ndarray
    successes: np.ndarray
    drops: np.ndarray
    idle_slots: int
    backoff_slots: np.ndarray  # slots each station spent counting down or transmitting
    end_queue: np.ndarray  # includes a head packet still on the air

    @property
    def horizon_slots(self) -> int:
        return self.horizon // self.ticks.calculus_slot

    @property
    def snapshot_slot(self) -> int:
        return self.snapshot // self.ticks.calculus_slot

    def traces(self, node: int):
        """Arrival and departure traces of ``node`` in calculus slots."""
        cs, hs = self.ticks.calculus_slot, self.horizon_slots
        return (Trace.from_event_times(self.arrivals[node], cs, hs),
                Trace.from_event_times(self.departures[node], cs, hs))


class _Uniforms:
    """Block-buffered uniform draws from a numpy generator."""

    def __init__(self, rng: np.random.Generator, block: int = 1 << 15):
        self.rng, self.block = rng, block
        self.buf = rng.random(block)
        self.pos = 0

    def integer(self, n: int) -> int:
        if self.pos == self.block:
            self.buf = self.rng.random(self.block)
            self.pos = 0
        u = self.buf[self.pos]
        self.pos += 1
        return int(u * n)


def arrival_ticks(scenario: Scenario, rng: np.random.Generator, horizon: int, ticks: Ticks):
    """Per-node arrival instants in ticks, all strictly before ``horizon``."""
    traffic = scenario.traffic
    cs = ticks.calculus_slot
    n_slots = -(-horizon // cs)
    out = []
    for _ in range(scenario.n):
        if traffic is None or traffic.lam == 0:
            out.append(np.empty(0, dtype=np.int64))
        elif traffic.kind == "poisson":
            # batches at the start of every calculus slot
            counts = rng.poisson(traffic.lam, size=n_slots)
            out.append(np.repeat(np.arange(n_slots, dtype=np.int64) * cs, counts))
        else:
            # independent uniform phase per source, so a fixed snapshot instant
            # does not always fall at the same point of every period
            period = cs / traffic.lam
            phase = rng.random() * period
            k = np.arange(int(math.ceil(horizon / period)) + 1)
            times = np.floor(phase + k * period).astype(np.int64)
            out.append(times[times < horizon])
    return out


def run_replication(config: SimConfig, index: int,
                    backoff: Optional[Callable[[int, int], int]] = None,
                    arrivals: Optional[List[np.ndarray]] = None) -> Replication:
    """Simulate one independent run.

    ``backoff(node, cw)`` overrides the uniform ``[0, cw - 1]`` draw and
    ``arrivals`` overrides the traffic generator; both exist for testing.
    """
    sc = config.scenario
    phy = sc.phy
    tk = Ticks.of(sc)
    rng = np.random.default_rng([config.seed, index])
    horizon = int(round(config.duration * 1e6 / tk.us))
    snap = (int(round(config.snapshot * 1e6 / tk.us)) // tk.calculus_slot) * tk.calculus_slot
    n = sc.n
    saturated = sc.saturated
    if arrivals is None:
        arrivals = arrival_ticks(sc, rng, horizon, tk)
    arrivals = [np.asarray(a, dtype=np.int64) for a in arrivals]
    uni = _Uniforms(rng)
    draw = backoff if backoff is not None else (lambda i, cw: uni.integer(cw))

    # merged arrival stream ordered by (time, node)
    if saturated:
        ev_t = np.empty(0, dtype=np.int64)
        ev_n = np.empty(0, dtype=np.int64)
    else:
        ev_t = np.concatenate(arrivals) if n else np.empty(0, dtype=np.int64)
        ev_n = np.concatenate([np.full(a.size, i) for i, a in enumerate(arrivals)])
        order = np.lexsort((ev_n, ev_t))
        ev_t, ev_n = ev_t[order].tolist(), ev_n[order].tolist()
    n_ev = len(ev_t)
    ptr = 0

    DIFS, SLOT, BUSY = tk.difs, tk.slot, tk.busy
    nodes = [NodeState() for _ in range(n)]
    if saturated:
        for i, nd in enumerate(nodes):
            nd.backoff = draw(i, phy.cw(0))
    departures = [[] for _ in range(n)]
    sojourn = []
    sojourn_from = []
    attempts = [0] * n
    collisions = [0] * n
    successes = [0] * n
    drops = [0] * n
    own_slots = [0] * n
    idle_slots = 0
    queue_at_snap = None
    idle_start = 0
    INF = float("inf")

    def has_packet(nd):
        return saturated or bool(nd.queue)

    def entry(nd):
        # first slot index at which the node's counter runs in this idle period
        lag = nd.ready - idle_start - DIFS
        return 0 if lag <= 0 else -(-lag // SLOT)

    def expired(nd, now):
        # post-backoff that ran out before ``now`` in the current idle period
        return nd.backoff >= 0 and not nd.queue and idle_start + DIFS + (entry(nd) + nd.backoff) * SLOT < now

    def snapshot_queues():
        return np.array([len(nd.queue) for nd in nodes])

    while True:
        # next transmission in this idle period
        k_tx = None
        for nd in nodes:
            if nd.backoff >= 0 and has_packet(nd):
                k = entry(nd) + nd.backoff
                if k_tx is None or k < k_tx:
                    k_tx = k
        t_tx = idle_start + DIFS + k_tx * SLOT if k_tx is not None else INF
        a = ev_t[ptr] if ptr < n_ev else INF
        if min(a, t_tx) >= horizon:
            break
        if a <= t_tx:
            if queue_at_snap is None and a >= snap:
                queue_at_snap = snapshot_queues()
            i = ev_n[ptr]
            ptr += 1
            nd = nodes[i]
            if expired(nd, a):
                nd.backoff = -1
            if nd.backoff < 0:
                if not any(o.backoff >= 0 and not expired(o, a) for o in nodes):
                    # nobody is counting, so the slot grid can restart at this arrival
                    for o in nodes:
                        o.backoff = -1
                    idle_start = a
                nd.backoff = draw(i, phy.cw(nd.stage))
                nd.ready = a + DIFS
            nd.queue.append(a)
            continue

        # channel seized at slot index k_tx
        idle_slots += k_tx + 1
        tx = []
        for i, nd in enumerate(nodes):
            if nd.backoff < 0:
                continue
            e = entry(nd)
            if e + nd.backoff == k_tx and has_packet(nd):
                tx.append(i)
                own_slots[i] += nd.backoff + 1
            elif not has_packet(nd) and e + nd.backoff <= k_tx:
                nd.backoff = -1
                nd.post_backoff = False
            elif e <= k_tx:
                nd.backoff -= k_tx - e
                if has_packet(nd):
                    own_slots[i] += k_tx - e
        end = t_tx + BUSY
        while ptr < n_ev and ev_t[ptr] < end:
            a = ev_t[ptr]
            if a >= horizon:
                break
            if queue_at_snap is None and a >= snap:
                queue_at_snap = snapshot_queues()
            i = ev_n[ptr]
            ptr += 1
            nd = nodes[i]
            if nd.backoff < 0:
                nd.backoff = draw(i, phy.cw(nd.stage))
            nd.queue.append(a)
        if end > horizon:
            break
        if queue_at_snap is None and end >= snap:
            queue_at_snap = snapshot_queues()
        for i in tx:
            attempts[i] += 1
        if len(tx) == 1:
            i = tx[0]
            nd = nodes[i]
            successes[i] += 1
            departures[i].append(end)
            if not saturated:
                arrived = nd.queue.popleft()
                sojourn.append(end - arrived)
                sojourn_from.append(arrived)
            nd.stage = 0
            nd.backoff = draw(i, phy.cw(0))
            nd.post_backoff = not has_packet(nd)
        else:
            for i in tx:
                nd = nodes[i]
                collisions[i] += 1
                nd.stage += 1
                if nd.stage > phy.retry_limit:
                    drops[i] += 1
                    if not saturated:
                        nd.queue.popleft()
                        departures[i].append(end)
                    nd.stage = 0
                nd.backoff = draw(i, phy.cw(nd.stage))
                nd.post_backoff = not has_packet(nd)
        idle_start = end
        for nd in nodes:
            nd.ready = 0

    if queue_at_snap is None:
        queue_at_snap = snapshot_queues()
    return Replication(
        ticks=tk, n=n, saturated=saturated, horizon=horizon, snapshot=snap,
        arrivals=arrivals,
        departures=[np.asarray(d, dtype=np.int64) for d in departures],
        sojourn=np.asarray(sojourn, dtype=np.int64),
        sojourn_from=np.asarray(sojourn_from, dtype=np.int64),
        queue_at_snapshot=queue_at_snap,
        attempts=np.asarray(attempts), collisions=np.asarray(collisions),
        successes=np.asarray(successes), drops=np.asarray(drops),
        idle_slots=idle_slots,
        backoff_slots=np.asarray(own_slots),
        end_queue=np.array([len(nd.queue) for nd in nodes]),
    )


def _time_average_backlog(rep: Replication, node: int) -> float:
    """Mean queue length of ``node`` over ``[snapshot, horizon)`` in packets."""
    a = rep.arrivals[node]
    d = np.full(a.size, rep.horizon, dtype=np.int64)
    d[: rep.departures[node].size] = rep.departures[node]
    lo, hi = rep.snapshot, rep.horizon
    inside = np.clip(np.minimum(d, hi) - np.maximum(a, lo), 0, None)
    return float(inside.sum()) / (hi - lo)


@dataclass
class ReplicationStats:
    """Per-replication samples; everything :class:`SimResult` needs."""

    backlog: np.ndarray  # B(t) per node at the snapshot slot; empty when saturated
    delay: np.ndarray  # D(t) per node in calculus slots, -1 when censored
    time_backlog: np.ndarray  # time-averaged queue length per node after the snapshot
    sojourn_sum: int  # ticks, packets that arrived after the snapshot
    delivered: int
    attempts: int
    collisions: int
    successes: int
    drops: int
    backoff_slots: int
    idle_slots: int
    horizon_slots: int
    arrived: int
    end_queue: int


def replication_stats(rep: Replication) -> ReplicationStats:
    late = rep.sojourn_from >= rep.snapshot
    t = rep.snapshot_slot
    backlog, delay, tb = [], [], []
    for i in range(0 if rep.saturated else rep.n):
        arr, dep = rep.traces(i)
        backlog.append(int(arr[t] - dep[t]))
        d = delay_of(arr, dep, t)
        delay.append(-1 if d is None else d)
        tb.append(_time_average_backlog(rep, i))
    return ReplicationStats(
        backlog=np.asarray(backlog, dtype=np.int64), delay=np.asarray(delay, dtype=np.int64),
        time_backlog=np.asarray(tb, dtype=float),
        sojourn_sum=int(rep.sojourn[late].sum()), delivered=int(np.count_nonzero(late)),
        attempts=int(rep.attempts.sum()), collisions=int(rep.collisions.sum()),
        successes=int(rep.successes.sum()), drops=int(rep.drops.sum()),
        backoff_slots=int(rep.backoff_slots.sum()), idle_slots=rep.idle_slots,
        horizon_slots=rep.horizon_slots,
        arrived=int(sum(a.size for a in rep.arrivals)), end_queue=int(rep.end_queue.sum()),
    )


def _run_one(args):
    config, index = args
    return replication_stats(run_replication(config, index))


@dataclass(frozen=True)
class SimResult:
    """Pooled statistics over ``nodes x replications`` samples.

    ``mean_backlog`` and the tails come from the snapshot slot; the
    time-averaged backlog is the Little's-law companion of ``mean_sojourn``.
    Delays are in calculus slots unless the name says seconds.
    """

    config: SimConfig
    slot_seconds: float
    backlog_samples: np.ndarray = field(repr=False)
    delay_samples: np.ndarray = field(repr=False)  # uncensored only
    censored_fraction: float
    mean_backlog: float
    time_avg_backlog: float
    mean_delay: float  # seconds, virtual delay at the snapshot
    mean_sojourn: float  # seconds, per packet arriving after the snapshot
    per_node_throughput: float  # packets per calculus slot
    drops: int
    attempts: int
    collisions: int
    tau: float  # attempts per own backoff slot
    gamma: float  # collisions per attempt

    @property
    def flagged(self) -> bool:
        return self.censored_fraction > 0.01

    def backlog_tail(self, x):
        """Empirical ``P{B > x}``."""
        b = np.sort(self.backlog_samples)
        out = 1.0 - np.searchsorted(b, np.asarray(x, dtype=float), side="right") / max(b.size, 1)
        return out if np.ndim(out) else float(out)

    def delay_tail(self, x):
        """Empirical ``P{D >= x}`` over uncensored samples, ``x`` in calculus slots."""
        d = np.sort(self.delay_samples)
        out = 1.0 - np.searchsorted(d, np.asarray(x, dtype=float), side="left") / max(d.size, 1)
        return out if np.ndim(out) else float(out)


def aggregate(config: SimConfig, stats: List[ReplicationStats]) -> SimResult:
    """Order-independent reduction of per-replication samples."""
    tk = Ticks.of(config.scenario)
    slot_s = tk.calculus_slot * tk.us * 1e-6
    n = config.scenario.n
    backlog = np.concatenate([s.backlog for s in stats])
    delay = np.concatenate([s.delay for s in stats])
    ok = delay[delay >= 0]
    tb = np.concatenate([s.time_backlog for s in stats])
    attempts = sum(s.attempts for s in stats)
    collisions = sum(s.collisions for s in stats)
    delivered = sum(s.delivered for s in stats)
    own = sum(s.backoff_slots for s in stats)
    return SimResult(
        config=config, slot_seconds=slot_s,
        backlog_samples=backlog, delay_samples=ok,
        censored_fraction=float(1.0 - ok.size / delay.size) if delay.size else 0.0,
        mean_backlog=float(backlog.mean()) if backlog.size else 0.0,
        time_avg_backlog=float(tb.mean()) if tb.size else 0.0,
        mean_delay=float(ok.mean() * slot_s) if ok.size else 0.0,
        mean_sojourn=(sum(s.sojourn_sum for s in stats) / delivered * tk.us * 1e-6) if delivered else 0.0,
        per_node_throughput=sum(s.successes for s in stats) / (n * sum(s.horizon_slots for s in stats)),
        drops=sum(s.drops for s in stats), attempts=attempts, collisions=collisions,
        tau=attempts / own if own else 0.0,
        gamma=collisions / attempts if attempts else 0.0,
    )


def run_experiment(config: SimConfig, workers: int = 1) -> SimResult:
    """Run ``config.replications`` independent replications and pool them."""
    jobs = [(config, k) for k in range(config.replications)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            stats = list(pool.map(_run_one, jobs))
    else:
        stats = [_run_one(j) for j in jobs]
    return aggregate(config, stats)


@dataclass(frozen=True)
class SaturationCheck:
    n: int
    tau_model: float
    tau_sim: float
    gamma_model: float
    gamma_sim: float
    throughput_model: float
    throughput_sim: float

    def rel_error(self, name: str) -> float:
        model = getattr(self, f"{name}_model")
        sim = getattr(self, f"{name}_sim")
        return abs(sim - model) / model if model else abs(sim)


def saturation_validate(scenario: Scenario, duration: float = 20.0, replications: int = 2,
                        seed: int = 0, workers: int = 1) -> SaturationCheck:
    """Saturated simulation against the fixed point and the stability threshold."""
    if not scenario.saturated:
        raise ValueError("saturation_validate needs a saturated scenario (traffic=None)")
    config = SimConfig(scenario, duration, replications, duration, seed)
    res = run_experiment(config, workers)
    sol = solve_fixed_point(scenario)
    return SaturationCheck(scenario.n, sol.tau, res.tau, sol.gamma, res.gamma,
                           stability_threshold(sol), res.per_node_throughput)
