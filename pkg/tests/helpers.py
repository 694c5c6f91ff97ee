"""Random element samplers shared by the associativity tests."""
import numpy as np

from scan_kalman import sequential
from scan_kalman.model import random_spec
from scan_kalman.parallel import (combine_filter, combine_smooth, make_filter_elements,
                                  make_smooth_elements)
from scan_kalman.scan import odd_even_scan


def _pool_with_aggregates(elems, combine, rng, n_ranges=64):
    """Raw elements plus combinations of random contiguous ranges."""
    T = len(elems[0])
    rows = [type(elems)(*(x[t] for x in elems)) for t in range(T)]
    for _ in range(n_ranges):
        lo = int(rng.integers(0, T - 1))
        hi = int(rng.integers(lo + 1, min(T, lo + 12) + 1))
        part = type(elems)(*(x[lo:hi] for x in elems))
        agg = odd_even_scan(part, combine)
        rows.append(type(elems)(*(x[-1] for x in agg)))
    return rows


def filter_element_pool(d=4, n_specs=8, T=64, seed=0):
    rng = np.random.default_rng(seed)
    pool = []
    for _ in range(n_specs):
        spec = random_spec(rng, d, T, p_missing=0.25)
        pool += _pool_with_aggregates(make_filter_elements(spec), combine_filter, rng)
    return pool


def smooth_element_pool(d=4, n_specs=8, T=64, seed=0):
    rng = np.random.default_rng(seed)
    pool = []
    for _ in range(n_specs):
        spec = random_spec(rng, d, T, p_missing=0.25)
        bt = sequential.filter(spec)
        elems = make_smooth_elements(spec, bt.filtered_mean, bt.filtered_var)
        pool += _pool_with_aggregates(elems, combine_smooth, rng)
    return pool


def sampler(pool):
    return lambda rng: pool[int(rng.integers(len(pool)))]
