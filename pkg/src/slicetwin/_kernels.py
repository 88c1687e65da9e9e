"""JIT-compiled queueing recursions used by the sliced-mode simulator.

All times are integer nanoseconds.  An arrival is dropped when the number of
requests in system (waiting + in service) at its queue has reached the buffer
limit.  Departure time of an accepted request k at a FIFO single server is
max(arrival_k, departure_{k-1}) + service_k, which the kernels evaluate
together with incremental occupancy tracking.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def fifo_stage(arr, svc, buf):
    """Single-server FIFO queue with finite buffer.

    arr: sorted arrival times, int64 ns
    svc: service duration per request, int64 ns
    buf: max requests in system
    Returns (departures, accepted); departure is -1 for dropped requests.
    """
    n = arr.shape[0]
    dep = np.full(n, -1, np.int64)
    ok = np.zeros(n, np.bool_)
    free = np.int64(0)
    ring = np.empty(buf + 1, np.int64)   # outstanding departure times, FIFO order
    head, tail, cnt = 0, 0, 0
    for k in range(n):
        t = arr[k]
        while cnt > 0 and ring[head] <= t:
            head += 1
            if head == buf + 1:
                head = 0
            cnt -= 1
        if cnt >= buf:
            continue
        start = t if t > free else free
        d = start + svc[k]
        dep[k] = d
        ok[k] = True
        free = d
        ring[tail] = d
        tail += 1
        if tail == buf + 1:
            tail = 0
        cnt += 1
    return dep, ok


@njit(cache=True)
def _heap_push(heap, size, val):
    heap[size] = val
    i = size
    while i > 0:
        parent = (i - 1) >> 1
        if heap[parent] <= heap[i]:
            break
        heap[parent], heap[i] = heap[i], heap[parent]
        i = parent
    return size + 1


@njit(cache=True)
def _heap_pop(heap, size):
    size -= 1
    heap[0] = heap[size]
    i = 0
    while True:
        left = 2 * i + 1
        right = left + 1
        smallest = i
        if left < size and heap[left] < heap[smallest]:
            smallest = left
        if right < size and heap[right] < heap[smallest]:
            smallest = right
        if smallest == i:
            break
        heap[smallest], heap[i] = heap[i], heap[smallest]
        i = smallest
    return size


@njit(cache=True)
def multi_server_stage(arr, svc_by_server, buf):
    """One FIFO queue feeding several servers with per-server service times.

    Requests are assigned in arrival order to the earliest-available server
    (ties break to the lowest index).  svc_by_server[j] is the full service
    duration of one request on server j.
    Returns (departures, accepted); departure is -1 for dropped requests.
    """
    n = arr.shape[0]
    m = svc_by_server.shape[0]
    dep = np.full(n, -1, np.int64)
    ok = np.zeros(n, np.bool_)
    free = np.zeros(m, np.int64)
    heap = np.empty(buf + 2, np.int64)   # outstanding departures, min-heap
    hsize = 0
    for k in range(n):
        t = arr[k]
        while hsize > 0 and heap[0] <= t:
            hsize = _heap_pop(heap, hsize)
        if hsize >= buf:
            continue
        best = 0
        for j in range(1, m):
            if free[j] < free[best]:
                best = j
        start = t if t > free[best] else free[best]
        d = start + svc_by_server[best]
        dep[k] = d
        ok[k] = True
        free[best] = d
        hsize = _heap_push(heap, hsize, d)
    return dep, ok
