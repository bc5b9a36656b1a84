import os
import sys
import json
import math
import hashlib
import tempfile
import multiprocessing
from queue import Queue
from threading import Thread
from contextlib import contextmanager

import numpy as np


class TailriskError(Exception):
    """Base class for all errors raised by tailrisk."""


def bool_from_string(val, default=None):
    if val in (True, False, 1, 0):
        return bool(val)
    if isinstance(val, str):
        val = val.lower()
        if val in ('true', 'yes', '1', 'on'):
            return True
        elif val in ('false', 'no', '0', 'off'):
            return False
    return default


def get_thread_count(value=None):
    """Resolves the worker count.  An explicit value wins over the
    `TAILRISK_THREADS` environment variable which wins over the CPU count.
    """
    if value is None:
        value = os.environ.get('TAILRISK_THREADS') or None
    if value is None:
        return multiprocessing.cpu_count()
    try:
        value = int(value)
    except (TypeError, ValueError):
        raise TailriskError('Invalid thread count "%s"' % value)
    return max(1, value)


class JSONEncoder(json.JSONEncoder):

    def default(self, o):
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.floating):
            return float(o)
        if isinstance(o, np.bool_):
            return bool(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        if hasattr(o, 'to_json'):
            return o.to_json()
        return json.JSONEncoder.default(self, o)


def dump_json(obj, f):
    json.dump(obj, f, cls=JSONEncoder, indent=2, sort_keys=True)
    f.write('\n')


def get_structure_hash(params):
    """Given a Python structure this generates a hash.  This is used to
    key cached pipeline stages on their resolved configuration.  Floats
    are hashed by their exact representation.
    """
    h = hashlib.md5()

    def _hash(obj):
        if obj is None:
            h.update(b'N;')
        elif obj is True:
            h.update(b'T;')
        elif obj is False:
            h.update(b'F;')
        elif isinstance(obj, dict):
            h.update(('D%d;' % len(obj)).encode('ascii'))
            for key, value in sorted(obj.items()):
                _hash(key)
                _hash(value)
        elif isinstance(obj, tuple):
            h.update(('T%d;' % len(obj)).encode('ascii'))
            for item in obj:
                _hash(item)
        elif isinstance(obj, list):
            h.update(('L%d;' % len(obj)).encode('ascii'))
            for item in obj:
                _hash(item)
        elif isinstance(obj, (int, np.integer)):
            h.update(('I%d;' % obj).encode('ascii'))
        elif isinstance(obj, (float, np.floating)):
            h.update(('R%s;' % float(obj).hex()).encode('ascii'))
        elif isinstance(obj, bytes):
            h.update(('B%d;' % len(obj)).encode('ascii') + obj + b';')
        elif isinstance(obj, str):
            data = obj.encode('utf-8')
            h.update(('S%d;' % len(data)).encode('ascii') + data + b';')
        elif isinstance(obj, np.ndarray):
            data = np.ascontiguousarray(obj).tobytes()
            h.update(('A%s%d;' % (obj.dtype.str, len(data))).encode('ascii'))
            h.update(data)
        elif hasattr(obj, 'to_json'):
            _hash(obj.to_json())
        else:
            raise TypeError('Cannot hash %r' % type(obj).__name__)
    _hash(params)
    return h.hexdigest()


def file_checksum(filename):
    """Returns the sha1 checksum of a file."""
    h = hashlib.sha1()
    with open(filename, 'rb') as f:
        while 1:
            chunk = f.read(16 * 1024)
            if not chunk:
                break
            h.update(chunk)
    return h.hexdigest()


@contextmanager
def atomic_open(filename, mode='r'):
    if 'r' not in mode:
        fd, tmp_filename = tempfile.mkstemp(
            dir=os.path.dirname(filename) or '.', prefix='.__atomic-write')
        os.chmod(tmp_filename, 0o644)
        f = os.fdopen(fd, mode)
    else:
        f = open(filename, mode)
        tmp_filename = None
    try:
        yield f
    except BaseException:
        f.close()
        if tmp_filename is not None:
            try:
                os.remove(tmp_filename)
            except OSError:
                pass
        raise
    else:
        f.close()
        if tmp_filename is not None:
            os.replace(tmp_filename, filename)


def safe_call(func, args=None, kwargs=None):
    try:
        return func(*(args or ()), **(kwargs or {})), None
    except Exception:
        return None, sys.exc_info()


class Worker(Thread):

    def __init__(self, tasks):
        Thread.__init__(self)
        self.tasks = tasks
        self.daemon = True
        self.start()

    def run(self):
        while 1:
            task = self.tasks.get()
            if task is None:
                self.tasks.task_done()
                break
            func, args, kwargs = task
            try:
                func(*args, **kwargs)
            finally:
                self.tasks.task_done()


class WorkerPool(object):

    def __init__(self, num_threads=None):
        num_threads = get_thread_count(num_threads)
        self.num_threads = num_threads
        self.tasks = Queue(num_threads)
        for _ in range(num_threads):
            Worker(self.tasks)

    def add_task(self, func, *args, **kargs):
        self.tasks.put((func, args, kargs))

    def wait_for_completion(self):
        self.tasks.join()

    def shutdown(self):
        for _ in range(self.num_threads):
            self.tasks.put(None)
        self.tasks.join()


def parallel_map(func, items, num_threads=None):
    """Maps `func` over `items` and returns the results in input order, no
    matter how the work was scheduled.  The first exception (in input order)
    is re-raised after all tasks finished.
    """
    items = list(items)
    num_threads = get_thread_count(num_threads)
    results = [None] * len(items)
    errors = [None] * len(items)

    if num_threads == 1 or len(items) < 2:
        for idx, item in enumerate(items):
            results[idx] = func(item)
        return results

    def _run(idx, item):
        results[idx], errors[idx] = safe_call(func, (item,))

    pool = WorkerPool(min(num_threads, len(items)))
    for idx, item in enumerate(items):
        pool.add_task(_run, idx, item)
    pool.wait_for_completion()
    pool.shutdown()

    for exc_info in errors:
        if exc_info is not None:
            raise exc_info[1].with_traceback(exc_info[2])
    return results


def stable_sum(values):
    """Compensated summation over a flat array; results do not depend on
    the order floating point errors accumulate in.
    """
    return math.fsum(np.asarray(values, dtype=np.float64).ravel().tolist())


def stable_mean(values):
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise TailriskError("Mean of an empty sequence")
    return stable_sum(values) / values.size
