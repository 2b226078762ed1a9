"""Batched request scheduling.

One serialized queue per backend: requests accumulate until the batch is
full or the linger deadline passes, then the whole batch goes to the
backend in one flush. Responses come back in request order; a failed item
falls back to the standard per-request retry path so batching never
changes content relative to sequential calls.
"""

from __future__ import annotations

import queue
import threading
import time
from concurrent.futures import Future

from ..errors import BackendError
from .core import ChatClient, ChatRequest, ChatResponse, request_digest

_CLOSE = object()


class BatchScheduler:
    """Owns the queue and worker thread for one client."""

    def __init__(self, client: ChatClient, capacity=None, linger_ms=None):
        self.client = client
        self.capacity = capacity if capacity is not None else client.config.batch_capacity
        linger = linger_ms if linger_ms is not None else client.config.batch_linger_ms
        self.linger = linger / 1000.0
        if self.capacity < 1:
            raise ValueError("batch capacity must be >= 1")
        self.flush_sizes: list[int] = []
        self._queue: queue.Queue = queue.Queue()
        self._worker = threading.Thread(target=self._run, daemon=True)
        self._worker.start()

    def submit(self, request: ChatRequest) -> Future:
        future: Future = Future()
        self._queue.put((request, future))
        return future

    def close(self) -> None:
        """Flush whatever is pending and stop the worker."""
        self._queue.put(_CLOSE)
        self._worker.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _run(self):
        closed = False
        while not closed:
            try:
                item = self._queue.get(timeout=0.1)
            except queue.Empty:
                continue
            if item is _CLOSE:
                break
            batch = [item]
            deadline = time.monotonic() + self.linger
            while len(batch) < self.capacity:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                try:
                    nxt = self._queue.get(timeout=remaining)
                except queue.Empty:
                    break
                if nxt is _CLOSE:
                    closed = True
                    break
                batch.append(nxt)
            self._flush(batch)
        # drain anything left behind the close marker
        leftovers = []
        while True:
            try:
                item = self._queue.get_nowait()
            except queue.Empty:
                break
            if item is not _CLOSE:
                leftovers.append(item)
        for start in range(0, len(leftovers), self.capacity):
            self._flush(leftovers[start : start + self.capacity])

    def _flush(self, batch):
        self.flush_sizes.append(len(batch))
        requests_ = [request for request, _ in batch]
        start = self.client.clock()
        results = self.client.backend.send_batch(requests_)
        latency = self.client.clock() - start
        for (request, future), result in zip(batch, results):
            digest = request_digest(request)
            if isinstance(result, Exception):
                self.client._log_exchange(request, digest, None, str(result), latency, 1)
                # isolate and retry this item through the standard path
                try:
                    future.set_result(self.client.complete(request))
                except BackendError as exc:
                    future.set_exception(exc)
            else:
                self.client._log_exchange(request, digest, result, None, latency, 1)
                future.set_result(
                    ChatResponse(
                        text=result,
                        latency=latency,
                        attempt_count=1,
                        backend_name=self.client.config.name,
                    )
                )


def batch_submit(requests_, client: ChatClient, capacity=None, linger_ms=None):
    """Run a request list through the batch scheduler, preserving order.

    Returns one entry per request: a ChatResponse, or the exception that
    request ended with (failures are isolated, never raised here).
    """
    requests_ = list(requests_)
    names = {r.backend_name for r in requests_}
    if len(names) > 1:
        raise ValueError(f"requests must share one backend, got {sorted(names)}")
    with BatchScheduler(client, capacity=capacity, linger_ms=linger_ms) as scheduler:
        futures = [scheduler.submit(r) for r in requests_]
    results = []
    for future in futures:
        exc = future.exception()
        results.append(future.result() if exc is None else exc)
    return results
