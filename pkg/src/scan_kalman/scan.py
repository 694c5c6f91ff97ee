"""Generic inclusive associative scan with sequential and chunked-parallel strategies.

Elements are numpy arrays or (named) tuples of arrays ("trees"). The
chunked strategy evaluates ``combine`` on batches, so ``combine`` must act
elementwise over any leading axes (plain numpy arithmetic and ``@`` both do).

Chunked-parallel layout:

1. split the sequence into chunks of ``chunk_size``; every chunk is scanned
   locally with a vectorized odd/even recursion, chunks spread over
   ``workers`` threads;
2. the chunk totals are scanned;
3. chunk k > 0 is fixed up as ``combine(carry[k-1], local[k])``.

No identity element is used anywhere. The reassociation pattern depends only
on ``chunk_size``, so results are bit-identical for any number of workers.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

SEQUENTIAL = "sequential"
CHUNKED = "chunked-parallel"
FORWARD = "forward"
REVERSE = "reverse"

WORKERS_ENV = "SCAN_KALMAN_WORKERS"


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:  # not available on macOS
        return os.cpu_count() or 1


@dataclass(frozen=True)
class ScanPlan:
    direction: str = FORWARD
    strategy: str = SEQUENTIAL
    chunk_size: int = 1024
    workers: int = field(default_factory=default_workers)

    def __post_init__(self):
        if self.direction not in (FORWARD, REVERSE):
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.strategy not in (SEQUENTIAL, CHUNKED):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


class ScanBreakdown(ArithmeticError):
    """A combine produced a non-finite value. ``start``/``stop`` bound the
    offending element range (half-open, 0-based, in scan order)."""

    def __init__(self, start: int, stop: int, detail: str = ""):
        self.start, self.stop = start, stop
        msg = f"non-finite combine result for elements [{start}, {stop})"
        super().__init__(msg + (f": {detail}" if detail else ""))


# -- tree helpers ---------------------------------------------------------

def _is_node(x) -> bool:
    return isinstance(x, tuple)


def tree_map(fn: Callable, *trees):
    first = trees[0]
    if _is_node(first):
        children = [tree_map(fn, *parts) for parts in zip(*trees)]
        if hasattr(first, "_fields"):
            return type(first)(*children)
        return tuple(children)
    return fn(*trees)


def tree_leaves(tree) -> list:
    if _is_node(tree):
        return [leaf for child in tree for leaf in tree_leaves(child)]
    return [tree]


def stack(elements: Sequence) -> Any:
    return tree_map(lambda *xs: np.stack([np.asarray(x) for x in xs]), *elements)


def unstack(batched, n: int) -> list:
    return [tree_map(lambda x: x[i], batched) for i in range(n)]


def _length(batched) -> int:
    return int(np.shape(tree_leaves(batched)[0])[0])


def _slice(batched, sl):
    return tree_map(lambda x: x[sl], batched)


# -- scans ----------------------------------------------------------------

def scan(elements: Sequence, combine: Callable, plan: ScanPlan | None = None) -> list:
    """Inclusive scan over a list of elements; returns a list of equal length.

    Forward: ``out[t] = e_0 * e_1 * ... * e_t``. Reverse:
    ``out[t] = e_t * e_{t+1} * ... * e_{n-1}``.
    """
    if len(elements) == 0:
        raise ValueError("cannot scan an empty sequence")
    out = scan_stacked(stack(elements), combine, plan)
    return unstack(out, len(elements))


def scan_stacked(batched, combine: Callable, plan: ScanPlan | None = None,
                 check_finite: bool = True):
    """Inclusive scan over a tree of arrays whose leading axis is time."""
    plan = plan or ScanPlan()
    n = _length(batched)
    if n == 0:
        raise ValueError("cannot scan an empty sequence")
    if plan.direction == REVERSE:
        flipped = tree_map(lambda x: x[::-1], batched)
        out = _scan_forward(flipped, lambda x, y: combine(y, x), plan, check_finite)
        return tree_map(lambda x: np.ascontiguousarray(x[::-1]), out)
    return _scan_forward(batched, combine, plan, check_finite)


def _scan_forward(batched, combine, plan, check_finite):
    n = _length(batched)
    if plan.strategy == SEQUENTIAL:
        out = _sequential(batched, combine, n)
    else:
        out = _chunked(batched, combine, n, plan.chunk_size, plan.workers)
    if check_finite:
        _check_finite(out, n, plan)
    return out


def _sequential(batched, combine, n):
    out = tree_map(lambda x: np.empty_like(x, dtype=np.result_type(x, float)), batched)
    acc = _slice(batched, slice(0, 1))
    _assign(out, slice(0, 1), acc)
    for t in range(1, n):
        acc = combine(acc, _slice(batched, slice(t, t + 1)))
        _assign(out, slice(t, t + 1), acc)
    return out


def _assign(dst, sl, src):
    for d, s in zip(tree_leaves(dst), tree_leaves(src)):
        d[sl] = s


def odd_even_scan(batched, combine):
    """Vectorized inclusive scan along axis 0 (work-efficient odd/even recursion)."""
    n = _length(batched)
    if n < 2:
        return batched
    pairs = combine(_slice(batched, slice(0, -1, 2)), _slice(batched, slice(1, None, 2)))
    odd = odd_even_scan(pairs, combine)
    if n % 2 == 0:
        even_rest = combine(_slice(odd, slice(0, -1)), _slice(batched, slice(2, None, 2)))
    else:
        even_rest = combine(odd, _slice(batched, slice(2, None, 2)))

    def interleave(x, o, e_rest):
        res = np.empty((n,) + np.broadcast_shapes(o.shape[1:], x.shape[1:]),
                       dtype=np.result_type(x, o, e_rest))
        res[0] = x[0]
        res[2::2] = e_rest
        res[1::2] = o
        return res

    return tree_map(interleave, batched, odd, even_rest)


def _to_blocks(x, nchunks, chunk):
    # (nchunks*chunk, ...) -> (chunk, nchunks, ...): time-within-chunk leads
    return np.swapaxes(x.reshape((nchunks, chunk) + x.shape[1:]), 0, 1)


def _from_blocks(x):
    x = np.swapaxes(x, 0, 1)
    return x.reshape((x.shape[0] * x.shape[1],) + x.shape[2:])


def _chunked(batched, combine, n, chunk, workers):
    if n <= chunk:
        return odd_even_scan(batched, combine)
    nfull = n // chunk
    tail = n - nfull * chunk
    # work units: contiguous groups of full chunks, plus the ragged tail chunk
    groups = np.array_split(np.arange(nfull), min(workers, nfull))
    units = [(int(g[0]) * chunk, (int(g[-1]) + 1) * chunk) for g in groups if len(g)]
    if tail:
        units.append((nfull * chunk, n))

    def local(unit):
        lo, hi = unit
        part = _slice(batched, slice(lo, hi))
        if hi - lo <= chunk:
            return odd_even_scan(part, combine)
        k = (hi - lo) // chunk
        blocks = tree_map(lambda x: _to_blocks(x, k, chunk), part)
        return tree_map(_from_blocks, odd_even_scan(blocks, combine))

    with ThreadPoolExecutor(max_workers=workers) as pool:
        locals_ = list(pool.map(local, units)) if workers > 1 else [local(u) for u in units]

        # totals of each chunk, in order
        totals = []
        for (lo, hi), res in zip(units, locals_):
            size = hi - lo
            ends = np.arange(min(chunk, size) - 1, size, chunk)
            totals.append(tree_map(lambda x: x[ends], res))
        totals = tree_map(lambda *xs: np.concatenate(xs), *totals)
        carry = odd_even_scan(totals, combine)  # carry[k] = e_0 * ... * end of chunk k

        def fixup(args):
            (lo, hi), res = args
            size = hi - lo
            first_chunk = lo // chunk
            k = -(-size // chunk)
            if first_chunk == 0:
                # chunk 0 needs no carry; fix up the rest of this unit only
                if k == 1:
                    return res
                head = _slice(res, slice(0, chunk))
                rest = fixup_range(res, chunk, size, 1)
                return tree_map(lambda h, r: np.concatenate([h, r]), head, rest)
            return fixup_range(res, 0, size, first_chunk)

        def fixup_range(res, start, stop, first_chunk):
            size = stop - start
            body = _slice(res, slice(start, stop))
            if size <= chunk:
                c = _slice(carry, slice(first_chunk - 1, first_chunk))
                return combine(c, body)
            k = size // chunk
            c = _slice(carry, slice(first_chunk - 1, first_chunk - 1 + k))
            blocks = tree_map(lambda x: _to_blocks(x, k, chunk), body)
            c = tree_map(lambda x: x[None], c)
            return tree_map(_from_blocks, combine(c, blocks))

        pairs = list(zip(units, locals_))
        if workers > 1:
            fixed = list(pool.map(fixup, pairs))
        else:
            fixed = [fixup(p) for p in pairs]
    return tree_map(lambda *xs: np.concatenate(xs), *fixed)


def _check_finite(out, n, plan):
    bad = np.zeros(n, dtype=bool)
    for leaf in tree_leaves(out):
        leaf = np.asarray(leaf)
        if np.issubdtype(leaf.dtype, np.inexact):
            bad |= ~np.isfinite(leaf.reshape(n, -1)).all(axis=1)
    if bad.any():
        first = int(np.argmax(bad))
        if plan.strategy == CHUNKED:
            lo = (first // plan.chunk_size) * plan.chunk_size
            hi = min(n, lo + plan.chunk_size)
        else:
            lo, hi = max(first - 1, 0), first + 1
        if plan.direction == REVERSE:
            lo, hi = n - hi, n - lo
        raise ScanBreakdown(lo, hi)


# -- associativity check ----------------------------------------------------

@dataclass
class AssociativityReport:
    trials: int
    tol: float
    max_violation: dict  # component name -> max abs violation

    @property
    def worst(self) -> float:
        return max(self.max_violation.values())

    @property
    def ok(self) -> bool:
        return self.worst <= self.tol


def check_associativity(combine: Callable, sampler: Callable, trials: int = 1000,
                        tol: float = 1e-10, seed: int = 0) -> AssociativityReport:
    """Compare (a*b)*c with a*(b*c) on ``trials`` random triples.

    ``sampler(rng)`` returns one random element.
    """
    rng = np.random.default_rng(seed)
    xs = stack([sampler(rng) for _ in range(trials)])
    ys = stack([sampler(rng) for _ in range(trials)])
    zs = stack([sampler(rng) for _ in range(trials)])
    left = combine(combine(xs, ys), zs)
    right = combine(xs, combine(ys, zs))
    names = getattr(left, "_fields", None)
    lv, rv = tree_leaves(left), tree_leaves(right)
    if names is None or len(names) != len(lv):
        names = [f"leaf{i}" for i in range(len(lv))] if len(lv) > 1 else ["value"]
    viol = {name: float(np.max(np.abs(np.asarray(u) - np.asarray(v))))
            for name, u, v in zip(names, lv, rv)}
    return AssociativityReport(trials, tol, viol)
