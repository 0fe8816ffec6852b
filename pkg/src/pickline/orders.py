"""Picking-order datasets: schema, CSV loader/saver, and statistical generators.

An order set is a list of order lines (shipping box, item type, quantity).
The four summary statistics used throughout are:

* ``n_orders``    -- number of unique (box, type) lines
* ``n_items``     -- total item count (sum of quantities)
* ``n_types``     -- number of distinct item types
* ``n_shippings`` -- number of distinct shipping boxes
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSV_HEADER = ["box_id", "type_id", "qty"]

# Profiles matching the two reference datasets plus a small one for fast
# desk-scale experiments: (n_orders, n_items, n_types, n_shippings).
PROFILES = {
    "lm": (179, 201, 16, 42),
    "hm": (186, 200, 95, 41),
    "desk": (40, 46, 8, 10),
}


class OrderDataError(ValueError):
    """Raised for malformed or infeasible order data."""


@dataclass(frozen=True)
class OrderLine:
    box_id: int
    type_id: int
    qty: int


@dataclass
class OrderSet:
    lines: list[OrderLine] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.validate()

    # -- statistics -------------------------------------------------------

    @property
    def n_orders(self) -> int:
        return len(self.lines)

    @property
    def n_items(self) -> int:
        return sum(ln.qty for ln in self.lines)

    @property
    def n_types(self) -> int:
        return len({ln.type_id for ln in self.lines})

    @property
    def n_shippings(self) -> int:
        return len({ln.box_id for ln in self.lines})

    @property
    def stats(self) -> tuple[int, int, int, int]:
        return (self.n_orders, self.n_items, self.n_types, self.n_shippings)

    # -- validation -------------------------------------------------------

    def validate(self) -> None:
        if not self.lines:
            raise OrderDataError("order set is empty")
        seen: set[tuple[int, int]] = set()
        for i, ln in enumerate(self.lines):
            if ln.qty < 1:
                raise OrderDataError(f"line {i}: non-positive quantity {ln.qty}")
            if ln.box_id < 0 or ln.type_id < 0:
                raise OrderDataError(f"line {i}: negative id")
            key = (ln.box_id, ln.type_id)
            if key in seen:
                raise OrderDataError(f"line {i}: duplicate (box, type) pair {key}")
            seen.add(key)
        for name, ids in (
            ("box", {ln.box_id for ln in self.lines}),
            ("type", {ln.type_id for ln in self.lines}),
        ):
            if ids != set(range(len(ids))):
                raise OrderDataError(f"{name} ids are not dense in [0, {len(ids)})")

    # -- derived views used by the simulator ------------------------------

    def required_by_box(self) -> list[dict[int, int]]:
        """Per-box multiset of required item types."""
        req: list[dict[int, int]] = [dict() for _ in range(self.n_shippings)]
        for ln in self.lines:
            req[ln.box_id][ln.type_id] = req[ln.box_id].get(ln.type_id, 0) + ln.qty
        return req

    def lines_by_type(self) -> list[list[int]]:
        """Per-type list of line quantities, ordered by box id."""
        out: list[list[int]] = [[] for _ in range(self.n_types)]
        for ln in sorted(self.lines, key=lambda l: (l.type_id, l.box_id)):
            out[ln.type_id].append(ln.qty)
        return out

    def canonical(self) -> "OrderSet":
        return OrderSet(sorted(self.lines, key=lambda l: (l.box_id, l.type_id)))


# -- CSV round trip -------------------------------------------------------


def load_orders(path: str | Path) -> OrderSet:
    """Parse an order CSV with header ``box_id,type_id,qty``."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_orders(text, source=str(path))


def parse_orders(text: str, source: str = "<string>") -> OrderSet:
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows or rows[0] != CSV_HEADER:
        raise OrderDataError(f"{source}: missing or wrong header, expected {','.join(CSV_HEADER)}")
    lines = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise OrderDataError(f"{source}: line {lineno}: expected 3 fields, got {len(row)}")
        try:
            box, typ, qty = (int(v) for v in row)
        except ValueError as exc:
            raise OrderDataError(f"{source}: line {lineno}: non-integer field ({exc})") from None
        if qty < 1:
            raise OrderDataError(f"{source}: line {lineno}: non-positive qty {qty}")
        lines.append(OrderLine(box, typ, qty))
    try:
        return OrderSet(lines)
    except OrderDataError as exc:
        raise OrderDataError(f"{source}: {exc}") from None


def dump_orders(orders: OrderSet) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for ln in orders.canonical().lines:
        writer.writerow([ln.box_id, ln.type_id, ln.qty])
    return buf.getvalue()


def save_orders(orders: OrderSet, path: str | Path) -> None:
    Path(path).write_text(dump_orders(orders), encoding="utf-8", newline="")


# -- generation -----------------------------------------------------------


def generate_orders(profile: str | tuple[int, int, int, int], seed: int) -> OrderSet:
    """Generate an order set whose four stats exactly match ``profile``.

    Line quantities start from a truncated geometric draw and are repaired
    so that the total item count is hit exactly.
    """
    target = PROFILES[profile.lower()] if isinstance(profile, str) else tuple(profile)
    n_orders, n_items, n_types, n_shippings = target
    if n_orders < n_shippings or n_orders < n_types:
        raise OrderDataError(f"infeasible profile {target}: need n_orders >= max(n_types, n_shippings)")
    if n_items < n_orders:
        raise OrderDataError(f"infeasible profile {target}: need n_items >= n_orders")
    if n_orders > n_shippings * n_types:
        raise OrderDataError(f"infeasible profile {target}: only {n_shippings * n_types} unique pairs exist")

    rng = np.random.default_rng(seed)
    pairs: set[tuple[int, int]] = set()
    # Cover every box and every type with max(n_shippings, n_types) unique
    # pairs via shuffled round-robin pairing, then fill with random pairs.
    perm_b = rng.permutation(n_shippings)
    perm_t = rng.permutation(n_types)
    for i in range(max(n_shippings, n_types)):
        pairs.add((int(perm_b[i % n_shippings]), int(perm_t[i % n_types])))
    while len(pairs) < n_orders:
        pairs.add((int(rng.integers(n_shippings)), int(rng.integers(n_types))))

    pair_list = sorted(pairs)
    extra_mean = n_items / n_orders - 1.0
    p = 1.0 / (1.0 + extra_mean) if extra_mean > 0 else 1.0
    qtys = [1 + (int(rng.geometric(p)) - 1 if p < 1.0 else 0) for _ in pair_list]
    # Repair to the exact item total.
    diff = n_items - sum(qtys)
    while diff != 0:
        i = int(rng.integers(len(qtys)))
        if diff > 0:
            qtys[i] += 1
            diff -= 1
        elif qtys[i] > 1:
            qtys[i] -= 1
            diff += 1
    lines = [OrderLine(b, t, q) for (b, t), q in zip(pair_list, qtys)]
    return OrderSet(lines).canonical()
