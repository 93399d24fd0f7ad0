"""Time source abstraction.

Everything in the stack that sleeps, enforces a deadline, or timestamps goes
through a Clock.  SystemClock is the production implementation.  VirtualClock
implements discrete-event virtual time across real threads: when every
attached thread is blocked, time jumps to the earliest pending deadline.
That makes second-scale protocol timing (NULL/WTX heartbeats, keepalive,
injected latency) testable in milliseconds and bit-for-bit deterministic.

All cross-thread events that a waiter may be blocked on (channel buffers,
queues) must be mutated while holding ``clock.cond`` and followed by
``clock.notify_all()``; waiters use ``clock.wait_for(predicate, deadline)``.
"""

from __future__ import annotations

import threading
import time
from typing import Callable


class Clock:
    """Interface; see SystemClock / VirtualClock."""

    cond: threading.Condition

    def now(self) -> float:
        raise NotImplementedError

    def sleep(self, duration: float) -> None:
        raise NotImplementedError

    def wait_for(self, predicate: Callable[[], bool], deadline: float) -> bool:
        """Block until predicate() is true (-> True) or now() >= deadline (-> False)."""
        raise NotImplementedError

    def notify_all(self) -> None:
        with self.cond:
            self.cond.notify_all()

    def spawn(self, target: Callable[[], None], name: str | None = None) -> threading.Thread:
        """Start a daemon thread attached to this clock."""
        raise NotImplementedError

    def attach_current_thread(self):
        """Context manager attaching the calling thread (no-op on SystemClock)."""
        raise NotImplementedError


class SystemClock(Clock):
    def __init__(self) -> None:
        self.cond = threading.Condition()

    def now(self) -> float:
        return time.monotonic()

    def sleep(self, duration: float) -> None:
        if duration > 0:
            time.sleep(duration)

    def wait_for(self, predicate, deadline) -> bool:
        with self.cond:
            while not predicate():
                remaining = deadline - self.now()
                if remaining <= 0:
                    return False
                if remaining == float("inf"):
                    self.cond.wait(None)
                else:
                    self.cond.wait(min(remaining, threading.TIMEOUT_MAX))
            return True

    def spawn(self, target, name=None) -> threading.Thread:
        t = threading.Thread(target=target, name=name, daemon=True)
        t.start()
        return t

    def attach_current_thread(self):
        return _NullContext()


class _NullContext:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


class VirtualClockDeadlock(RuntimeError):
    """Every attached thread is blocked and no finite deadline is pending."""


# Real-time ceiling on a single virtual wait; trips only on bugs, never in a
# healthy run where virtual time advances instead.
_STALL_LIMIT = 60.0


class VirtualClock(Clock):
    """Deterministic virtual time shared by a set of cooperating threads.

    Threads must be attached (``spawn`` or ``attach_current_thread``) so the
    clock knows when everyone is blocked and time may advance.
    """

    def __init__(self, start: float = 0.0) -> None:
        self.cond = threading.Condition()
        self._now = float(start)
        # The creating thread counts as attached from the start; otherwise
        # workers spawned before the creator parks could advance time under
        # its feet.  Its first attach_current_thread() adopts this slot.
        self._creator = threading.get_ident()
        self._creator_attached = True
        self._running = 1
        # ident -> (wake deadline, epoch at park time)
        self._parked: dict[int, tuple[float, int]] = {}
        self._epoch = 0

    def now(self) -> float:
        return self._now

    def notify_all(self) -> None:
        with self.cond:
            self._epoch += 1
            self.cond.notify_all()

    def sleep(self, duration: float) -> None:
        self.wait_for(lambda: False, self._now + max(0.0, duration))

    def wait_for(self, predicate, deadline) -> bool:
        ident = threading.get_ident()
        with self.cond:
            while True:
                if predicate():
                    return True
                if self._now >= deadline:
                    return False
                self._parked[ident] = (deadline, self._epoch)
                self._running -= 1
                if self._running == 0 and self._try_advance():
                    # time moved (possibly past our deadline); re-check
                    self._parked.pop(ident, None)
                    self._running += 1
                    continue
                started = time.monotonic()
                self.cond.wait(_STALL_LIMIT)
                if time.monotonic() - started >= _STALL_LIMIT:
                    self._parked.pop(ident, None)
                    self._running += 1
                    raise VirtualClockDeadlock(
                        "virtual clock stalled: no progress within %.0fs" % _STALL_LIMIT
                    )
                self._parked.pop(ident, None)
                self._running += 1

    def _try_advance(self) -> bool:
        # Only advance when no parked thread has a pending wakeup (a notify
        # since it parked); such a thread will run and re-park first.
        if any(epoch != self._epoch for _, epoch in self._parked.values()):
            return False
        deadlines = [d for d, _ in self._parked.values() if d != float("inf")]
        if not deadlines:
            # Everyone waits on an event with no deadline.  Another thread
            # may still attach and produce one; if not, the stall guard in
            # wait_for reports the deadlock.
            return False
        target = min(deadlines)
        if target <= self._now:
            return False
        self._now = target
        self._epoch += 1
        self.cond.notify_all()
        return True

    def _attach(self) -> None:
        with self.cond:
            if self._creator_attached and threading.get_ident() == self._creator:
                self._creator_attached = False  # adopt the initial slot
            else:
                self._running += 1
            self._epoch += 1
            self.cond.notify_all()

    def _detach(self) -> None:
        with self.cond:
            self._running -= 1
            self._epoch += 1
            if self._running == 0 and self._parked:
                self._try_advance()
            self.cond.notify_all()

    def spawn(self, target, name=None) -> threading.Thread:
        # Attach before start so the spawner cannot advance time past the
        # child's first wait.
        with self.cond:
            self._running += 1

        def run():
            try:
                target()
            finally:
                self._detach()

        t = threading.Thread(target=run, name=name, daemon=True)
        t.start()
        return t

    def attach_current_thread(self):
        return _Attachment(self)


class _Attachment:
    def __init__(self, clock: VirtualClock) -> None:
        self._clock = clock

    def __enter__(self):
        self._clock._attach()
        return self

    def __exit__(self, *exc):
        self._clock._detach()
        return False
