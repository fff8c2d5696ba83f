"""Forward-pass timing on synthetic input."""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from . import network
from .netdef import account
from .tensor import DTYPE, thread_limit


@dataclass
class BenchReport:
    samples: list
    bflops: float
    threads: int | None
    output: np.ndarray

    @property
    def mean(self):
        return statistics.fmean(self.samples)

    @property
    def median(self):
        return statistics.median(self.samples)

    @property
    def fps(self):
        return 1.0 / self.mean

    @property
    def gflops_per_s(self):
        return self.bflops / self.mean

    def to_text(self):
        return (
            f"samples: {len(self.samples)}\n"
            f"threads: {self.threads if self.threads is not None else 'default'}\n"
            f"mean latency: {self.mean * 1e3:.2f} ms\n"
            f"median latency: {self.median * 1e3:.2f} ms\n"
            f"FPS: {self.fps:.4f}\n"
            f"BFLOPs: {self.bflops:.3f}\n"
            f"effective GFLOP/s: {self.gflops_per_s:.2f}\n"
        )


def synthetic_input(defn, seed=0):
    c, h, w = defn.input_shape
    return np.random.default_rng(seed).random((1, c, h, w), dtype=np.float32).astype(DTYPE)


def benchmark(defn, params, iterations=5, warmup=1, threads=None, seed=0):
    """Time ``iterations`` inference passes after ``warmup`` untimed ones."""
    x = synthetic_input(defn, seed)
    samples = []
    with thread_limit(threads):
        for _ in range(warmup):
            out = network.run(defn, params, x)
        for _ in range(iterations):
            t0 = time.perf_counter()
            out = network.run(defn, params, x)
            samples.append(time.perf_counter() - t0)
        if not iterations and not warmup:
            out = network.run(defn, params, x)
    return BenchReport(samples, account(defn).bflops, threads, out)
