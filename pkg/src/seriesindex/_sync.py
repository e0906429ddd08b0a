import os
import threading

THREADS_ENV = "SERIESINDEX_THREADS"


class AtomicCounter:
    """Shared fetch-and-increment counter."""

    def __init__(self, value=0):
        self._value = int(value)
        self._lock = threading.Lock()

    def fetch_inc(self, d=1):
        with self._lock:
            v = self._value
            self._value += d
            return v

    @property
    def value(self):
        return self._value


def default_threads() -> int:
    """Worker count: the env override if set, else the hardware thread count."""
    env = os.environ.get(THREADS_ENV)
    if env:
        n = int(env)
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be positive, got {env}")
        return n
    return os.cpu_count() or 1


def run_workers(target, n_workers, *args, barrier=None):
    """Run ``target(pid, *args)`` on n_workers threads and re-raise the first failure.

    A single worker runs inline on the calling thread. A failing worker breaks
    ``barrier`` so its peers do not wait forever.
    """
    if n_workers == 1:
        target(0, *args)
        return
    errors = []

    def wrapped(pid):
        try:
            target(pid, *args)
        except BaseException as exc:  # propagated below
            errors.append(exc)
            if barrier is not None:
                barrier.abort()

    threads = [threading.Thread(target=wrapped, args=(p,), daemon=True) for p in range(n_workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        real = [e for e in errors if not isinstance(e, threading.BrokenBarrierError)]
        raise (real or errors)[0]
