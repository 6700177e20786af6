"""Simulated message passing over in-process ranks.

``launch(P, program)`` runs ``program(ctx)`` once per rank on its own thread.
Ranks exchange data only through their :class:`CommContext`: blocking
point-to-point ``send``/``recv`` with FIFO order per (source, dest, tag), and
collectives whose results are reduced in fixed rank order so repeated runs are
bitwise identical.

When every live rank is blocked for longer than the deadlock timeout the run
is aborted with a :class:`DeadlockError` describing what each rank waits on.
"""

from __future__ import annotations

import os
import pickle
import threading
import time
from collections import deque
from typing import Any, Callable, Sequence

import numpy as np

__all__ = [
    "CommContext",
    "CommError",
    "DeadlockError",
    "RankAborted",
    "launch",
    "serial_comm",
    "default_ranks",
    "default_timeout",
]

_POLL_S = 0.05


class CommError(RuntimeError):
    """Invalid use of the communicator (bad rank, mismatched collective)."""


class DeadlockError(CommError):
    """All ranks blocked past the timeout."""


class RankAborted(CommError):
    """Raised in surviving ranks after another rank failed."""


def default_timeout() -> float:
    return float(os.environ.get("TRELLIS_COMM_TIMEOUT_S", "30"))


def default_ranks() -> int:
    return int(os.environ.get("TRELLIS_RANKS", "4"))


def _encode(payload: Any) -> Any:
    if isinstance(payload, bytes):
        return payload
    return ("__pickled__", pickle.dumps(payload, protocol=pickle.HIGHEST_PROTOCOL))


def _decode(blob: Any) -> Any:
    if isinstance(blob, tuple) and len(blob) == 2 and blob[0] == "__pickled__":
        return pickle.loads(blob[1])
    return blob


class _Transport:
    def __init__(self, size: int, timeout: float) -> None:
        self.size = size
        self.timeout = timeout
        self.lock = threading.Lock()
        self.conds = [threading.Condition(self.lock) for _ in range(size)]
        self.mail: dict[tuple[int, int, int], deque] = {}
        self.slots: dict[int, dict] = {}
        self.waiting: list[str | None] = [None] * size
        self.finished = [False] * size
        self.idle_count = 0
        self.idle_since: float | None = None
        self.abort: BaseException | None = None

    # all methods below are called with self.lock held
    def _mark_idle(self, rank: int, what: str | None) -> None:
        was = self.waiting[rank] is not None or self.finished[rank]
        self.waiting[rank] = what
        now = what is not None or self.finished[rank]
        if now and not was:
            self.idle_count += 1
        elif was and not now:
            self.idle_count -= 1
        if self.idle_count == self.size:
            if self.idle_since is None:
                self.idle_since = time.monotonic()
        else:
            self.idle_since = None

    def _notify_all(self) -> None:
        for c in self.conds:
            c.notify_all()

    def finish(self, rank: int) -> None:
        with self.lock:
            self.waiting[rank] = None
            if not self.finished[rank]:
                self.finished[rank] = True
                self.idle_count += 1
            if self.idle_count == self.size and self.idle_since is None:
                self.idle_since = time.monotonic()
            self._notify_all()

    def fail(self, exc: BaseException) -> None:
        with self.lock:
            if self.abort is None:
                self.abort = exc
            self._notify_all()

    def wait(self, rank: int, what: str, ready: Callable[[], bool]) -> None:
        if ready():
            return
        self._mark_idle(rank, what)
        try:
            while True:
                if self.abort is not None:
                    if isinstance(self.abort, DeadlockError):
                        raise DeadlockError(str(self.abort))
                    raise RankAborted(f"rank {rank}: aborted because another rank failed")
                if ready():
                    return
                if self.idle_since is not None and (
                    time.monotonic() - self.idle_since >= self.timeout
                ):
                    lines = []
                    for r in range(self.size):
                        state = "finished" if self.finished[r] else (self.waiting[r] or "running")
                        lines.append(f"  rank {r}: {state}")
                    exc = DeadlockError(
                        f"deadlock: all ranks blocked for {self.timeout:g} s\n" + "\n".join(lines)
                    )
                    self.abort = exc
                    self._notify_all()
                    raise exc
                self.conds[rank].wait(_POLL_S if self.idle_since is not None else 0.5)
        finally:
            self._mark_idle(rank, None)


class CommContext:
    """Per-rank handle on a shared transport.

    A context is confined to its rank; never hand it to another rank's thread.
    """

    def __init__(self, transport: _Transport, rank: int) -> None:
        self._t = transport
        self.rank = rank
        self.size = transport.size
        self._coll_seq = 0

    def __repr__(self) -> str:
        return f"CommContext(rank={self.rank}, size={self.size})"

    def _check_rank(self, r: int) -> None:
        if not (isinstance(r, (int, np.integer)) and 0 <= r < self.size):
            raise CommError(f"invalid rank {r} for communicator of size {self.size}")

    # -- point to point ---------------------------------------------------
    def send(self, dest: int, tag: int, payload: Any) -> None:
        self._check_rank(dest)
        blob = _encode(payload)
        t = self._t
        with t.lock:
            t.mail.setdefault((self.rank, int(dest), int(tag)), deque()).append(blob)
            t.conds[dest].notify_all()

    def recv(self, source: int, tag: int) -> Any:
        self._check_rank(source)
        key = (int(source), self.rank, int(tag))
        t = self._t
        with t.lock:
            t.wait(self.rank, f"recv(source={source}, tag={tag})",
                   lambda: bool(t.mail.get(key)))
            box = t.mail[key]
            blob = box.popleft()
            if not box:
                del t.mail[key]
        return _decode(blob)

    # -- collectives ------------------------------------------------------
    def _collective(self, kind: str, value: Any, combine: Callable[[list], Any] | None = None,
                    encoded: bool = False) -> Any:
        """Deposit ``value`` in the next collective slot and wait for all ranks.

        With ``combine``, the last rank to arrive computes ``combine(values)``
        once and every rank receives a decoded copy of that result.
        """
        t = self._t
        seq = self._coll_seq
        self._coll_seq += 1
        blob = value if encoded else _encode(value)
        with t.lock:
            slot = t.slots.get(seq)
            if slot is None:
                slot = {"kind": kind, "values": [None] * self.size, "count": 0, "reads": 0}
                t.slots[seq] = slot
            if slot["kind"] != kind:
                exc = CommError(
                    f"collective mismatch at call #{seq}: rank {self.rank} called "
                    f"{kind} but another rank called {slot['kind']}"
                )
                t.abort = t.abort or exc
                t._notify_all()
                raise exc
            slot["values"][self.rank] = blob
            slot["count"] += 1
            if slot["count"] == self.size:
                if combine is not None:
                    try:
                        slot["result"] = combine(slot["values"])
                    except BaseException as exc:
                        slot["result"] = exc
                t._notify_all()
            t.wait(self.rank, f"{kind} (collective #{seq})",
                   lambda: slot["count"] == self.size)
            values = slot["values"]
            result = slot.get("result")
            slot["reads"] += 1
            if slot["reads"] == self.size:
                del t.slots[seq]
        if combine is None:
            return [_decode(v) for v in values]
        if isinstance(result, BaseException):
            raise result
        return result.copy()

    def barrier(self) -> None:
        if self.size > 1:
            self._collective("barrier", b"")

    def all_gather(self, local: Any) -> list:
        if self.size == 1:
            return [_decode(_encode(local))]
        return self._collective("all_gather", local)

    def broadcast(self, root: int, payload: Any = None) -> Any:
        self._check_rank(root)
        if self.size == 1:
            return _decode(_encode(payload))
        values = self._collective(f"broadcast(root={root})",
                                  payload if self.rank == root else None)
        return values[root]

    def all_reduce(self, local: Sequence[float], op: str = "sum") -> np.ndarray:
        """Elementwise reduction, accumulated in rank order 0, 1, ..., P-1."""
        if op not in ("sum", "max", "min"):
            raise CommError(f"unknown reduction {op!r}")
        arr = np.array(local, dtype=np.float64).reshape(-1)
        if self.size == 1:
            return arr

        def combine(parts: list) -> np.ndarray:
            n = parts[0].shape[0]
            if any(p.shape[0] != n for p in parts):
                raise CommError(f"all_reduce length mismatch: {[p.shape[0] for p in parts]}")
            acc = parts[0].copy()
            for p in parts[1:]:
                if op == "sum":
                    acc = acc + p
                elif op == "max":
                    acc = np.maximum(acc, p)
                else:
                    acc = np.minimum(acc, p)
            return acc

        # arr is a private copy, so it can be deposited without pickling
        return self._collective(f"all_reduce({op})", arr, combine, encoded=True)

    def all_reduce_scalar(self, value: float, op: str = "sum") -> float:
        return float(self.all_reduce([value], op)[0])

    def exchange(self, outgoing: dict[int, Any], tag: int = -7) -> dict[int, Any]:
        """Sparse all-to-all: send ``outgoing[r]`` to each listed rank ``r``.

        Returns the payloads received, keyed by source rank in ascending order.
        """
        if self.size == 1:
            return {0: _decode(_encode(outgoing[0]))} if 0 in outgoing else {}
        dests = self.all_gather(sorted(int(r) for r in outgoing))
        for r in sorted(outgoing):
            if r != self.rank:
                self.send(r, tag, outgoing[r])
        received = {}
        for src in range(self.size):
            if self.rank in dests[src]:
                if src == self.rank:
                    received[src] = _decode(_encode(outgoing[src]))
                else:
                    received[src] = self.recv(src, tag)
        return received


def serial_comm(timeout: float | None = None) -> CommContext:
    """A standalone single-rank context, no launcher needed."""
    return CommContext(_Transport(1, default_timeout() if timeout is None else timeout), 0)


def launch(P: int, program: Callable[..., Any], *args: Any,
           timeout: float | None = None, **kwargs: Any) -> list:
    """Run ``program(ctx, *args, **kwargs)`` on ``P`` simulated ranks.

    Returns the per-rank results indexed by rank.  The first per-rank failure
    is re-raised in the caller after all ranks stop.
    """
    if P < 1:
        raise CommError("rank count must be at least 1")
    transport = _Transport(P, default_timeout() if timeout is None else timeout)
    results: list = [None] * P
    errors: list[tuple[float, int, BaseException]] = []
    err_lock = threading.Lock()

    def run(rank: int) -> None:
        ctx = CommContext(transport, rank)
        try:
            results[rank] = program(ctx, *args, **kwargs)
        except BaseException as exc:  # noqa: BLE001 - rethrown in caller
            with err_lock:
                errors.append((time.monotonic(), rank, exc))
            if not isinstance(exc, RankAborted):
                transport.fail(exc)
        finally:
            transport.finish(rank)

    if P == 1:
        run(0)
    else:
        threads = [threading.Thread(target=run, args=(r,), name=f"trellis-rank-{r}",
                                    daemon=True) for r in range(P)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
    if errors:
        primary = [e for e in errors if not isinstance(e[2], RankAborted)] or errors
        primary.sort(key=lambda e: e[0])
        raise primary[0][2]
    return results
