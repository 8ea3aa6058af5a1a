"""Minimal process-oriented discrete-event engine on virtual time.

Processes are generators that yield events and are resumed with the event's
value once it fires. Ties are broken by insertion order, so a run is a pure
function of its inputs.
"""

from __future__ import annotations

import gc
import heapq
import itertools
from typing import Any, Callable, Generator, Optional


class SimulationLimitExceeded(RuntimeError):
    pass


class Event:
    __slots__ = ("sim", "callbacks", "triggered", "dispatched", "ok", "value")

    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.callbacks: list[Callable[["Event"], None]] = []
        self.triggered = False
        self.dispatched = False
        self.ok = True
        self.value: Any = None

    def succeed(self, value: Any = None) -> "Event":
        return self._trigger(True, value)

    def fail(self, exc: BaseException) -> "Event":
        return self._trigger(False, exc)

    def _trigger(self, ok: bool, value: Any) -> "Event":
        if self.triggered:
            raise RuntimeError("event already triggered")
        self.triggered = True
        self.ok = ok
        self.value = value
        self.sim._call_soon(self._dispatch)
        return self

    def _dispatch(self) -> None:
        self.dispatched = True
        callbacks, self.callbacks = self.callbacks, []
        for cb in callbacks:
            cb(self)

    def add_callback(self, cb: Callable[["Event"], None]) -> None:
        if self.dispatched:
            self.sim._call_soon(lambda: cb(self))
        else:
            self.callbacks.append(cb)


class Process(Event):
    __slots__ = ("_gen", "cancelled")

    def __init__(self, sim: "Simulation", gen: Generator):
        super().__init__(sim)
        self._gen = gen
        self.cancelled = False
        sim._call_soon(lambda: self._resume(None, True))

    def cancel(self) -> None:
        """Abandon the process: it is never resumed again."""
        if not self.triggered and not self.cancelled:
            self.cancelled = True
            self._gen.close()

    def _on_event(self, event: Event) -> None:
        self._resume(event.value, event.ok)

    def _resume(self, value: Any, ok: bool) -> None:
        if self.cancelled or self.triggered:
            return
        try:
            target = self._gen.send(value) if ok else self._gen.throw(value)
        except StopIteration as stop:
            self.succeed(stop.value)
            return
        except Exception as exc:  # noqa: BLE001 - surfaced to the waiting process
            self.fail(exc)
            return
        if not isinstance(target, Event):
            raise TypeError(f"process yielded {target!r}, expected an Event")
        target.add_callback(self._on_event)


class Simulation:
    def __init__(self, max_events: int = 20_000_000):
        self.now = 0
        self.max_events = max_events
        self.events_processed = 0
        self._queue: list[list] = []
        self._seq = itertools.count()

    def schedule(self, delay: int, fn: Callable[[], None]) -> list:
        """Queue `fn`; the returned handle can be passed to `cancel`."""
        if delay < 0:
            raise ValueError("cannot schedule into the past")
        entry = [self.now + delay, next(self._seq), fn]
        heapq.heappush(self._queue, entry)
        return entry

    @staticmethod
    def cancel(handle: list) -> None:
        handle[2] = None

    def _call_soon(self, fn: Callable[[], None]) -> None:
        self.schedule(0, fn)

    def event(self) -> Event:
        return Event(self)

    def timeout(self, delay: int, value: Any = None) -> Event:
        return self.timer(delay, value)[0]

    def timer(self, delay: int, value: Any = None) -> tuple[Event, list]:
        """A timeout event plus the handle that cancels it."""
        ev = Event(self)

        def fire():
            # already running off the queue, so subscribers run right away
            ev.triggered = True
            ev.value = value
            ev._dispatch()

        return ev, self.schedule(delay, fire)

    def process(self, gen: Generator) -> Process:
        return Process(self, gen)

    def first_of(self, *events: Optional[Event]) -> Event:
        """Fires with (index, event) for whichever of `events` fires first."""
        winner = Event(self)

        def make(i):
            def cb(ev):
                if not winner.triggered:
                    winner.succeed((i, ev))
            return cb

        for i, ev in enumerate(events):
            if ev is not None:
                ev.add_callback(make(i))
        return winner

    def run(self, until: Optional[int] = None) -> None:
        # the loop allocates many short-lived events; frequent young-generation
        # collections cost more than they reclaim
        saved = gc.get_threshold()
        gc.set_threshold(max(saved[0], 200_000), saved[1], saved[2])
        try:
            self._run(until)
        finally:
            gc.set_threshold(*saved)

    def _run(self, until: Optional[int]) -> None:
        while self._queue:
            t, _, fn = self._queue[0]
            if until is not None and t > until:
                break
            heapq.heappop(self._queue)
            if fn is None:
                continue
            self.events_processed += 1
            if self.events_processed > self.max_events:
                raise SimulationLimitExceeded(
                    f"more than {self.max_events} events processed at t={t}ms; "
                    "check the composition for runaway fan-out"
                )
            self.now = t
            fn()
