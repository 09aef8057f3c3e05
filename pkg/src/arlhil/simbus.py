"""Deterministic virtual-time publish/subscribe bus.

Every node talks through named, typed channels.  Deliveries and timers are
events on a single heap ordered by ``(time, registration order, sequence)``,
so a run is a total order of callbacks and therefore reproducible.
"""

from __future__ import annotations

import copy
import heapq
import itertools
import logging
from dataclasses import dataclass
from typing import Any, Callable

log = logging.getLogger(__name__)

KINDS = ("frame", "telemetry", "thermal", "stage", "command")


class BusError(Exception):
    pass


class RegistrationError(BusError, KeyError):
    pass


class PayloadKindError(BusError, TypeError):
    pass


@dataclass(frozen=True)
class Channel:
    name: str
    kind: str


class VirtualClock:
    """Simulated seconds; ``scale`` is the default stride of :meth:`Bus.tick`."""

    def __init__(self, now: float = 0.0, scale: float = 1.0):
        if scale <= 0:
            raise ValueError("clock scale must be positive")
        self._now = float(now)
        self.scale = float(scale)

    @property
    def now(self) -> float:
        return self._now

    def advance_to(self, t: float) -> None:
        if t < self._now:
            raise ValueError(f"clock cannot run backwards ({t} < {self._now})")
        self._now = float(t)


@dataclass(frozen=True)
class Receipt:
    channel: str
    seq: int
    t_publish: float
    t_delivery: float
    subscribers: int


@dataclass(frozen=True)
class Delivery:
    """What a subscriber callback receives."""

    channel: str
    t: float
    seq: int
    payload: Any


@dataclass(frozen=True)
class FiredEvent:
    t: float
    name: str


class _Timer:
    def __init__(self, name: str, callback: Callable[[float], None], period: float | None):
        self.name = name
        self.callback = callback
        self.period = period
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


def payload_kind(payload) -> str | None:
    """Kind tag a payload declares through a ``KIND`` attribute, if any."""
    return getattr(payload, "KIND", None)


class Bus:
    """Single-threaded reference scheduler.

    ``copy_payloads`` hands every subscriber its own deep copy, which gives
    value semantics to mutable payloads such as numpy frames.
    """

    def __init__(self, clock: VirtualClock | None = None, copy_payloads: bool = True):
        self.clock = clock or VirtualClock()
        self.copy_payloads = copy_payloads
        self._channels: dict[str, Channel] = {}
        self._subs: dict[str, list[tuple[int, Callable[[Delivery], None]]]] = {}
        self._last_delivery: dict[str, float] = {}
        self._seq: dict[str, itertools.count] = {}
        self._order = itertools.count()
        self._tiebreak = itertools.count()
        self._heap: list = []

    @property
    def now(self) -> float:
        return self.clock.now

    # channels -----------------------------------------------------------

    def register(self, name: str, kind: str) -> Channel:
        if kind not in KINDS:
            raise ValueError(f"unknown payload kind {kind!r}")
        existing = self._channels.get(name)
        if existing is not None:
            if existing.kind != kind:
                raise PayloadKindError(f"channel {name!r} already carries {existing.kind!r}")
            return existing
        ch = Channel(name, kind)
        self._channels[name] = ch
        self._subs[name] = []
        self._seq[name] = itertools.count()
        self._last_delivery[name] = float("-inf")
        return ch

    def channel(self, name: str) -> Channel:
        try:
            return self._channels[name]
        except KeyError:
            raise RegistrationError(f"unknown channel {name!r}") from None

    @property
    def channels(self) -> list[Channel]:
        return list(self._channels.values())

    def subscribe(self, name: str, callback: Callable[[Delivery], None]) -> int:
        """Attach ``callback``; returns its registration order (the tie-breaker)."""
        self.channel(name)
        order = next(self._order)
        self._subs[name].append((order, callback))
        return order

    # publishing ---------------------------------------------------------

    def publish(self, channel: str | Channel, payload, t: float | None = None) -> Receipt:
        name = channel.name if isinstance(channel, Channel) else channel
        ch = self.channel(name)
        declared = payload_kind(payload)
        if declared is not None and declared != ch.kind:
            raise PayloadKindError(f"{declared!r} payload on {ch.kind!r} channel {name!r}")
        t = self.clock.now if t is None else float(t)
        if t < self.clock.now:
            raise ValueError(f"cannot publish into the past (t={t} < now={self.clock.now})")
        # a message never overtakes an earlier one on the same channel
        t_del = max(t, self._last_delivery[name])
        self._last_delivery[name] = t_del
        seq = next(self._seq[name])
        for order, cb in self._subs[name]:
            body = copy.deepcopy(payload) if self.copy_payloads else payload
            msg = Delivery(name, t_del, seq, body)
            heapq.heappush(self._heap, (t_del, order, next(self._tiebreak), "msg", cb, msg))
        return Receipt(name, seq, t, t_del, len(self._subs[name]))

    # timers -------------------------------------------------------------

    def schedule(self, t: float, callback: Callable[[float], None], name: str = "timer") -> _Timer:
        """One-shot timer at absolute virtual time ``t``."""
        if t < self.clock.now:
            raise ValueError("cannot schedule into the past")
        timer = _Timer(name, callback, None)
        self._push_timer(t, next(self._order), timer)
        return timer

    def every(self, period: float, callback: Callable[[float], None], start: float | None = None,
              name: str = "periodic") -> _Timer:
        if period <= 0:
            raise ValueError("period must be positive")
        timer = _Timer(name, callback, period)
        t0 = self.clock.now + period if start is None else start
        self._push_timer(t0, next(self._order), timer)
        return timer

    def _push_timer(self, t: float, order: int, timer: _Timer) -> None:
        heapq.heappush(self._heap, (t, order, next(self._tiebreak), "timer", timer, order))

    # running ------------------------------------------------------------

    def _fire_next(self) -> FiredEvent | None:
        t, order, _, what, target, extra = heapq.heappop(self._heap)
        self.clock.advance_to(t)
        if what == "msg":
            target(extra)
            return FiredEvent(t, extra.channel)
        if target.cancelled:
            return None
        target.callback(t)
        if target.period is not None and not target.cancelled:
            self._push_timer(t + target.period, extra, target)
        return FiredEvent(t, target.name)

    def advance(self, dt: float) -> list[FiredEvent]:
        """Fire everything due up to ``now + dt`` in order, then set the clock there."""
        if not dt > 0:
            raise ValueError("dt must be positive")
        horizon = self.clock.now + dt
        fired = []
        while self._heap and self._heap[0][0] <= horizon:
            ev = self._fire_next()
            if ev is not None:
                fired.append(ev)
        self.clock.advance_to(horizon)
        return fired

    def tick(self) -> list[FiredEvent]:
        return self.advance(self.clock.scale)

    def run_until(self, done: Callable[[], bool], timeout: float) -> float:
        """Fire events one by one until ``done()`` holds; returns the time it did.

        Raises ``TimeoutError`` if it does not hold within ``timeout`` virtual
        seconds, or ``BusError`` when no event is left to make progress.
        """
        deadline = self.clock.now + timeout
        while not done():
            if not self._heap:
                raise BusError("no pending events; condition can never become true")
            if self._heap[0][0] > deadline:
                self.clock.advance_to(deadline)
                raise TimeoutError(f"condition not met within {timeout} s")
            self._fire_next()
        return self.clock.now

    def pending(self) -> int:
        return len(self._heap)
