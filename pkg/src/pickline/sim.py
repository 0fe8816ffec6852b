"""Discrete-event simulator of the four-process automated picking line.

Four controlled processes, upstream to downstream:

* FR  -- flow rack holding up to 4 allocated shipping boxes; decides which
         unallocated box to allocate when a slot frees up.
* PC  -- 3 parallel conveyors with 6 loading ports each; decides which item
         type to release onto a free port.
* PR1 -- picking robot moving along the conveyors; decides which conveyor to
         pick from, then chains picks while the head item type repeats.
* PR2 -- picking robot between the carousel ring and the rack; decides which
         allocated box to sort the next item into.

Time advances in fixed ticks (0.1 s). Stochastic durations are drawn from
named per-source RNG streams, so (order set, seed, decision script) fully
determines the trajectory.

Release discipline: an item type may only be released to a port while the
allocated boxes still need more of it than is already in flight. This keeps
every in-flight item sortable into some allocated box, which rules out
deadlock by construction.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .config import AGENTS, EnvConfig
from .orders import OrderSet

FR, PC, PR1, PR2 = AGENTS

# robot phases
IDLE, MOVE, PICK, PLACE, WAIT, GRAB = range(6)

# port states
PORT_FREE, PORT_LOADING, PORT_REPLACING = range(3)


class SimProtocolError(RuntimeError):
    """A decision violated the request/mask protocol."""


class DeadlockError(RuntimeError):
    """The episode exceeded the safety tick bound without completing."""


@dataclass
class DecisionRequest:
    agent: str
    tick: int
    observation: np.ndarray
    mask: np.ndarray
    context: tuple[int, int] | None = None  # (conveyor, port) for PC


class PickingEnv:
    """One simulation instance. Single-threaded; run one per rollout."""

    def __init__(self, orders: OrderSet, cfg: EnvConfig | None = None, seed: int = 0,
                 trace: bool = False):
        if orders.n_items == 0:
            raise ValueError("empty order set")
        self.orders = orders
        self.cfg = cfg or EnvConfig()
        self.trace_enabled = trace
        self.reset(seed)

    # -- lifecycle --------------------------------------------------------

    def reset(self, seed: int) -> list[DecisionRequest]:
        cfg = self.cfg
        orders = self.orders
        self.seed = seed
        streams = np.random.SeedSequence(seed).spawn(4)
        self._rng_load = np.random.default_rng(streams[0])
        self._rng_replace = np.random.default_rng(streams[1])
        self._rng_pick1 = np.random.default_rng(streams[2])
        self._rng_pick2 = np.random.default_rng(streams[3])

        self.tick = 0
        self.done = False
        self.makespan_ticks: int | None = None
        self.n_boxes = orders.n_shippings
        self.n_types = orders.n_types

        self.required = orders.required_by_box()
        self.box_need = [dict(req) for req in self.required]
        self.box_remaining = [sum(req.values()) for req in self.required]
        self.box_status = [0] * self.n_boxes  # 0 unallocated, 1 allocated, 2 completed
        self.box_slot: list[int | None] = [None] * self.n_boxes
        self.completed_boxes = 0
        self.sorted_total = 0

        self.fr_slots: list[int | None] = [None] * cfg.fr_slots
        self.fr_slot_ready_at = [0] * cfg.fr_slots

        self.line_queues = [deque(q) for q in orders.lines_by_type()]
        self.unreleased = [sum(q) for q in self.line_queues]
        self.alloc_need = [0] * self.n_types
        self.in_flight = [0] * self.n_types

        self.belts = [[-1] * cfg.conveyor_slots for _ in range(cfg.n_conveyors)]
        self.belt_counts = [0] * cfg.n_conveyors
        # port: [state, type, queue, busy_until]
        self.ports = [[[PORT_FREE, -1, 0, 0] for _ in range(cfg.n_ports)]
                      for _ in range(cfg.n_conveyors)]
        self.last_pc_port = (0, 0)

        self.carousel = [-1] * cfg.carousel_slots
        self.carousel_offset = 0
        self.carousel_count = 0
        self.carousel_type_counts = [0] * self.n_types

        self.pr1 = {"loc": 0, "dir": 1, "phase": IDLE, "busy_until": 0,
                    "target": 0, "holding": -1, "chain_type": -1}
        self.pr2 = {"loc": 0, "dir": 1, "phase": IDLE, "busy_until": 0,
                    "target": 0, "holding": -1}

        self.pending: dict[str, DecisionRequest] = {}
        self.trace_rows: list[tuple[int, str, str, str]] = []
        self._issue_requests()
        return list(self.pending.values())

    # -- randomness -------------------------------------------------------

    def _duration(self, rng: np.random.Generator, mu: int) -> int:
        d = rng.normal(mu, self.cfg.sigma_frac * mu)
        return max(1, int(round(d)))

    # -- protocol ---------------------------------------------------------

    def step(self, decisions: dict[str, int] | None = None
             ) -> tuple[list[DecisionRequest], bool]:
        """Apply decisions answering all pending requests, advance one tick."""
        decisions = decisions or {}
        for agent in self.pending:
            if agent not in decisions:
                raise SimProtocolError(f"missing decision for outstanding request of {agent}")
        for agent in decisions:
            if agent not in self.pending:
                raise SimProtocolError(f"unsolicited decision for {agent}")
        for agent, action in decisions.items():
            req = self.pending[agent]
            if not (0 <= action < len(req.mask)) or not req.mask[action]:
                raise SimProtocolError(f"agent {agent}: action {action} is masked invalid")
            self._apply(agent, int(action), req)
        self.pending.clear()

        self.tick += 1
        if self.tick > self.cfg.max_ticks:
            raise DeadlockError(f"no completion after {self.cfg.max_ticks} ticks (seed {self.seed})")
        self._advance_conveyors()
        self._advance_carousel()
        self._advance_ports()
        self._advance_pr1()
        self._advance_pr2()
        if not self.done:
            self._issue_requests()
        return list(self.pending.values()), self.done

    def _apply(self, agent: str, action: int, req: DecisionRequest) -> None:
        if self.trace_enabled:
            self.trace_rows.append((self.tick, agent, "action", str(action)))
        if agent == FR:
            slot = next(k for k, b in enumerate(self.fr_slots)
                        if b is None and self.fr_slot_ready_at[k] <= self.tick)
            self.fr_slots[slot] = action
            self.box_status[action] = 1
            self.box_slot[action] = slot
            for t, c in self.box_need[action].items():
                self.alloc_need[t] += c
        elif agent == PC:
            conv, port = req.context
            cap = self.alloc_need[action] - self.in_flight[action]
            q = self.line_queues[action].popleft()
            batch = min(q, cap)
            if q > batch:
                self.line_queues[action].appendleft(q - batch)
            self.unreleased[action] -= batch
            self.in_flight[action] += batch
            p = self.ports[conv][port]
            p[0] = PORT_LOADING
            p[1] = action
            p[2] = batch
            p[3] = self.tick + self._duration(self._rng_load, self.cfg.port_load_ticks)
            self.last_pc_port = (conv, port)
        elif agent == PR1:
            r = self.pr1
            if action != r["loc"]:
                r["dir"] = 1 if action > r["loc"] else -1
            r["target"] = action
            r["chain_type"] = -1
            r["phase"] = MOVE
            r["busy_until"] = self.tick + abs(action - r["loc"]) * self.cfg.pr1_travel_ticks
        else:  # PR2
            self.pr2["target"] = action
            self.pr2["phase"] = WAIT

    # -- dynamics ---------------------------------------------------------

    def _advance_conveyors(self) -> None:
        if self.tick % self.cfg.conveyor_period:
            return
        for belt in self.belts:
            n = len(belt)
            for s in range(1, n):
                if belt[s] != -1 and belt[s - 1] == -1:
                    belt[s - 1] = belt[s]
                    belt[s] = -1

    def _advance_carousel(self) -> None:
        if self.tick % self.cfg.carousel_period == 0:
            self.carousel_offset = (self.carousel_offset + 1) % self.cfg.carousel_slots

    def _ring(self, station: int) -> int:
        return (station + self.carousel_offset) % self.cfg.carousel_slots

    def _advance_ports(self) -> None:
        tick = self.tick
        for conv in range(self.cfg.n_conveyors):
            belt = self.belts[conv]
            for port, p in enumerate(self.ports[conv]):
                if p[3] > tick:
                    continue
                if p[0] == PORT_LOADING:
                    slot = self.cfg.port_slot(port)
                    if belt[slot] == -1:
                        belt[slot] = p[1]
                        self.belt_counts[conv] += 1
                        p[2] -= 1
                        if p[2] > 0:
                            p[3] = tick + self._duration(self._rng_load, self.cfg.port_load_ticks)
                        else:
                            p[0] = PORT_REPLACING
                            p[3] = tick + self._duration(self._rng_replace, self.cfg.port_replace_ticks)
                elif p[0] == PORT_REPLACING:
                    p[0] = PORT_FREE
                    p[1] = -1

    def _advance_pr1(self) -> None:
        r = self.pr1
        tick = self.tick
        if r["phase"] == MOVE and r["busy_until"] <= tick:
            r["loc"] = r["target"]
            r["phase"] = PICK if self._pr1_start_pick() else IDLE
        elif r["phase"] == PICK and r["busy_until"] <= tick:
            r["phase"] = PLACE
        if r["phase"] == PLACE:
            slot = self._ring(self.cfg.carousel_input_station)
            if self.carousel[slot] == -1:
                t = r["holding"]
                self.carousel[slot] = t
                self.carousel_count += 1
                self.carousel_type_counts[t] += 1
                r["holding"] = -1
                if not self._pr1_start_pick(chain_only=True):
                    r["phase"] = IDLE
                    r["chain_type"] = -1

    def _pr1_start_pick(self, chain_only: bool = False) -> bool:
        """Grab the head item of the current conveyor if the type chain allows it."""
        r = self.pr1
        belt = self.belts[r["loc"]]
        head = belt[0]
        if head == -1 or (chain_only and head != r["chain_type"]):
            return False
        belt[0] = -1
        self.belt_counts[r["loc"]] -= 1
        r["holding"] = head
        r["chain_type"] = head
        r["phase"] = PICK
        r["busy_until"] = self.tick + self._duration(self._rng_pick1, self.cfg.pr1_pick_ticks)
        return True

    def _advance_pr2(self) -> None:
        r = self.pr2
        tick = self.tick
        if r["phase"] == WAIT:
            slot = self._ring(self.cfg.carousel_output_station)
            t = self.carousel[slot]
            box = self.fr_slots[r["target"]]
            if t != -1 and box is not None and self.box_need[box].get(t, 0) > 0:
                self.carousel[slot] = -1
                self.carousel_count -= 1
                self.carousel_type_counts[t] -= 1
                r["holding"] = t
                r["phase"] = GRAB
                r["busy_until"] = tick + self._duration(self._rng_pick2, self.cfg.pr2_pick_ticks)
        elif r["phase"] == GRAB and r["busy_until"] <= tick:
            k = r["target"]
            if k != r["loc"]:
                r["dir"] = 1 if k > r["loc"] else -1
            r["phase"] = MOVE
            r["busy_until"] = tick + abs(k - r["loc"]) * self.cfg.pr2_travel_ticks
        if r["phase"] == MOVE and r["busy_until"] <= tick:
            r["loc"] = r["target"]
            self._pr2_drop()

    def _pr2_drop(self) -> None:
        r = self.pr2
        t = r["holding"]
        k = r["loc"]
        box = self.fr_slots[k]
        self.box_need[box][t] -= 1
        self.box_remaining[box] -= 1
        self.alloc_need[t] -= 1
        self.in_flight[t] -= 1
        self.sorted_total += 1
        r["holding"] = -1
        r["phase"] = IDLE
        if self.trace_enabled:
            self.trace_rows.append((self.tick, PR2, "sorted", f"type={t} box={box}"))
        if self.box_remaining[box] == 0:
            self.box_status[box] = 2
            self.box_slot[box] = None
            self.fr_slots[k] = None
            self.fr_slot_ready_at[k] = self.tick + self.cfg.fr_replace_ticks
            self.completed_boxes += 1
            if self.trace_enabled:
                self.trace_rows.append((self.tick, FR, "completed", f"box={box}"))
            if self.completed_boxes == self.n_boxes:
                self.done = True
                self.makespan_ticks = self.tick
                self.pending.clear()

    # -- decision requests ------------------------------------------------

    def _issue_requests(self) -> None:
        tick = self.tick
        if FR not in self.pending:
            mask = self.fr_mask()
            if mask is not None and any(b is None and self.fr_slot_ready_at[k] <= tick
                                        for k, b in enumerate(self.fr_slots)):
                self.pending[FR] = self._request(FR, mask)
        if PC not in self.pending:
            ctx = self._free_port()
            if ctx is not None:
                mask = self.pc_mask()
                if mask is not None:
                    self.pending[PC] = self._request(PC, mask, ctx)
        if PR1 not in self.pending and self.pr1["phase"] == IDLE:
            mask = self.pr1_mask()
            if mask is not None:
                self.pending[PR1] = self._request(PR1, mask)
        if PR2 not in self.pending and self.pr2["phase"] == IDLE:
            mask = self.pr2_mask()
            if mask is not None:
                self.pending[PR2] = self._request(PR2, mask)

    def _request(self, agent: str, mask: list[bool],
                 context: tuple[int, int] | None = None) -> DecisionRequest:
        obs = self.observe(agent, context)
        return DecisionRequest(agent, self.tick, obs, np.asarray(mask, dtype=bool), context)

    def _free_port(self) -> tuple[int, int] | None:
        for conv in range(self.cfg.n_conveyors):
            for port, p in enumerate(self.ports[conv]):
                if p[0] == PORT_FREE:
                    return (conv, port)
        return None

    def fr_mask(self) -> list[bool] | None:
        mask = [s == 0 for s in self.box_status]
        return mask if any(mask) else None

    def pc_mask(self) -> list[bool] | None:
        mask = [self.unreleased[t] > 0 and self.alloc_need[t] > self.in_flight[t]
                for t in range(self.n_types)]
        return mask if any(mask) else None

    def pr1_mask(self) -> list[bool] | None:
        mask = [belt[0] != -1 for belt in self.belts]
        return mask if any(mask) else None

    def pr2_mask(self) -> list[bool] | None:
        mask = []
        for k in range(self.cfg.fr_slots):
            box = self.fr_slots[k]
            ok = box is not None and any(
                c > 0 and self.carousel_type_counts[t] > 0
                for t, c in self.box_need[box].items())
            mask.append(ok)
        return mask if any(mask) else None

    def action_sizes(self) -> dict[str, int]:
        return {FR: self.n_boxes, PC: self.n_types,
                PR1: self.cfg.n_conveyors, PR2: self.cfg.fr_slots}

    # -- observations -----------------------------------------------------

    def time_feature(self) -> float:
        return self.tick * self.cfg.tick_seconds / 1000.0

    def observe(self, agent: str, context: tuple[int, int] | None = None) -> np.ndarray:
        if agent == FR:
            feats = self._observe_fr()
        elif agent == PC:
            if context is None:
                req = self.pending.get(PC)
                context = req.context if req is not None else (self._free_port() or self.last_pc_port)
            feats = self._observe_pc(context)
        elif agent == PR1:
            feats = self._observe_pr1()
        elif agent == PR2:
            feats = self._observe_pr2()
        else:
            raise ValueError(f"unknown agent {agent!r}")
        return np.asarray(feats, dtype=np.float64)

    def _observe_fr(self) -> list[float]:
        alloc_items = 0
        alloc_types: set[int] = set()
        for b in range(self.n_boxes):
            if self.box_status[b] == 1:
                alloc_items += self.box_remaining[b]
                alloc_types.update(t for t, c in self.box_need[b].items() if c > 0)
        wait_items = 0
        wait_types = 0
        for t in range(self.n_types):
            w = min(self.unreleased[t], max(0, self.alloc_need[t] - self.in_flight[t]))
            wait_items += w
            wait_types += w > 0
        unalloc = [b for b in range(self.n_boxes) if self.box_status[b] == 0]
        unalloc_items = sum(self.box_remaining[b] for b in unalloc)
        unalloc_types = len({t for b in unalloc for t in self.required[b]})
        return [alloc_items, len(alloc_types), wait_items, wait_types,
                len(unalloc), unalloc_items, unalloc_types]

    def _belt_ends(self, conv: int) -> tuple[int, int]:
        """(first, last) occupied slots; (-1, -1) when empty."""
        belt = self.belts[conv]
        first = last = -1
        for s, t in enumerate(belt):
            if t != -1:
                if first == -1:
                    first = s
                last = s
        return first, last

    def _loading_summary(self, conv: int) -> tuple[int, float]:
        count = 0
        loc = 0.0
        for port, p in enumerate(self.ports[conv]):
            if p[0] == PORT_LOADING:
                count += p[2]
                if loc == 0.0:
                    loc = (port + 1) / self.cfg.n_ports
        return count, loc

    def _observe_pc(self, context: tuple[int, int]) -> list[float]:
        cfg = self.cfg
        conv, _port = context
        norm_slot = 1.0 / (cfg.conveyor_slots - 1)
        feats: list[float] = [conv / (cfg.n_conveyors - 1)]
        feats += [float(c) for c in self.belt_counts]
        for c in range(cfg.n_conveyors):
            first, last = self._belt_ends(c)
            feats.append(max(first, 0) * norm_slot)
            feats.append(max(last, 0) * norm_slot)
        for p in self.ports[conv]:
            feats.append(float(p[2]))
            feats.append(1.0 if p[2] > 0 else 0.0)
        for c in range(cfg.n_conveyors):
            count, loc = self._loading_summary(c)
            feats.append(float(count))
            feats.append(loc)
        return feats

    def _observe_pr1(self) -> list[float]:
        cfg = self.cfg
        r = self.pr1
        norm_slot = 1.0 / (cfg.conveyor_slots - 1)
        feats: list[float] = [r["loc"] / (cfg.n_conveyors - 1), float(r["dir"])]
        feats.append(float(self.carousel_count))
        feats += [float(c) for c in self.belt_counts]
        for c in range(cfg.n_conveyors):
            first, _last = self._belt_ends(c)
            if first == -1:
                feats += [0.0, 0.0]
            else:
                head = self.belts[c][first]
                same = sum(1 for t in self.belts[c] if t == head)
                feats += [first * norm_slot, float(same)]
        for c in range(cfg.n_conveyors):
            _first, last = self._belt_ends(c)
            feats.append(max(last, 0) * norm_slot)
        for p in self.ports[r["loc"]]:
            feats.append(float(p[2]))
        for c in range(cfg.n_conveyors):
            count, loc = self._loading_summary(c)
            feats.append(float(count))
            feats.append(loc)
        return feats

    def _observe_pr2(self) -> list[float]:
        cfg = self.cfg
        r = self.pr2
        feats: list[float] = [r["loc"] / (cfg.fr_slots - 1), float(r["dir"])]
        feats.append(float(self.sorted_total))
        needs = []
        for k in range(cfg.fr_slots):
            box = self.fr_slots[k]
            needs.append(self.box_need[box] if box is not None else None)
        for station in range(cfg.carousel_slots):
            t = self.carousel[self._ring(station)]
            for k in range(cfg.fr_slots):
                feats.append(1.0 if t != -1 and needs[k] is not None
                             and needs[k].get(t, 0) > 0 else 0.0)
        for k in range(cfg.fr_slots):
            box = self.fr_slots[k]
            feats.append(float(self.box_remaining[box]) if box is not None else 0.0)
        return feats

    def global_state(self) -> np.ndarray:
        blocks = [self.observe(a) for a in AGENTS]
        blocks.append(np.array([self.time_feature()]))
        return np.concatenate(blocks)

    # -- diagnostics ------------------------------------------------------

    def item_census(self) -> dict[str, int]:
        in_ports = sum(p[2] for conv in self.ports for p in conv)
        on_belts = sum(self.belt_counts)
        grippers = (self.pr1["holding"] != -1) + (self.pr2["holding"] != -1)
        return {
            "unreleased": sum(self.unreleased),
            "ports": in_ports,
            "belts": on_belts,
            "grippers": grippers,
            "carousel": self.carousel_count,
            "sorted": self.sorted_total,
        }

    def check_conservation(self) -> None:
        census = self.item_census()
        total = sum(census.values())
        if total != self.orders.n_items:
            raise AssertionError(f"item conservation violated at tick {self.tick}: "
                                 f"{census} sums to {total} != {self.orders.n_items}")

    def state_hash(self) -> int:
        payload = (
            self.tick, self.done, tuple(self.box_status), tuple(self.box_remaining),
            tuple(self.fr_slots), tuple(self.fr_slot_ready_at),
            tuple(self.unreleased), tuple(self.alloc_need), tuple(self.in_flight),
            tuple(tuple(b) for b in self.belts),
            tuple(tuple(tuple(p) for p in conv) for conv in self.ports),
            tuple(self.carousel), self.carousel_offset,
            tuple(self.pr1[k] for k in ("loc", "dir", "phase", "busy_until",
                                        "target", "holding", "chain_type")),
            tuple(self.pr2[k] for k in ("loc", "dir", "phase", "busy_until",
                                        "target", "holding")),
        )
        return hash(payload)


def run_episode(env: PickingEnv, decide, seed: int,
                max_ticks: int | None = None) -> int:
    """Run one episode with ``decide(env, request) -> action``; returns makespan ticks."""
    requests = env.reset(seed)
    done = env.done
    while not done:
        decisions = {req.agent: decide(env, req) for req in requests}
        requests, done = env.step(decisions)
    return env.makespan_ticks
