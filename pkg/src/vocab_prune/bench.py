"""Per-token decode latency as a function of vocabulary size.

Each timed step runs a decoder-body stand-in (``decoder_layers`` dense
blocks of 12*d^2 weights, the usual attention-plus-MLP volume of one
transformer layer) followed by the output projection, a max-subtracted
softmax over the vocabulary and an argmax. Only the projection and the
softmax depend on vocabulary size. ``decoder_layers=0`` times the
projection kernel in isolation.

The body reuses one layer's weights for every layer. At batch 1 each layer
is a matrix-vector product that streams its weights from memory, so the
cost matches distinct weights as long as one layer does not fit in cache
(true for hidden sizes of roughly 1024 and up).
"""

from __future__ import annotations

import csv
import io
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import AllocationFailure, InvariantError, NumericsMismatch

DEFAULT_VOCAB_SIZES = (65_269, 56_660, 41_704)


@dataclass(frozen=True)
class BenchConfig:
    hidden_dim: int = 2048
    vocab_sizes: tuple[int, ...] = DEFAULT_VOCAB_SIZES
    batch: int = 1
    warmup_iters: int = 10
    timed_iters: int = 30
    seed: int = 0
    decoder_layers: int = 28

    def __post_init__(self):
        if not self.vocab_sizes or any(v < 1 for v in self.vocab_sizes):
            raise InvariantError("vocab_sizes must be a nonempty list of positive sizes")
        if self.timed_iters < 30:
            raise InvariantError(f"timed_iters must be >= 30, got {self.timed_iters}")
        if self.warmup_iters < 10:
            raise InvariantError(f"warmup_iters must be >= 10, got {self.warmup_iters}")
        if self.hidden_dim < 1 or self.batch < 1 or self.decoder_layers < 0:
            raise InvariantError("hidden_dim and batch must be positive, decoder_layers non-negative")


@dataclass(frozen=True)
class BenchRow:
    vocab_size: int
    mean_ms: float
    stddev_ms: float
    improvement_pct: float


@dataclass
class BenchResult:
    rows: list[BenchRow]
    config: BenchConfig
    samples_ms: dict[int, list[float]] = field(default_factory=dict, repr=False)

    def row(self, vocab_size: int) -> BenchRow:
        return next(r for r in self.rows if r.vocab_size == vocab_size)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["vocab_size", "mean_ms", "stddev_ms", "improvement_pct"])
        for r in self.rows:
            w.writerow([r.vocab_size, f"{r.mean_ms:.4f}", f"{r.stddev_ms:.4f}", f"{r.improvement_pct:.4f}"])
        return buf.getvalue()


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax over the last axis."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=-1, keepdims=True)
    return shifted


@dataclass
class Workload:
    hidden: np.ndarray
    projection: np.ndarray  # [V_max, d]; rows [:V] form the V-sized head
    up: np.ndarray | None
    down: np.ndarray | None
    layers: int

    def body(self) -> np.ndarray:
        x = self.hidden
        for _ in range(self.layers):
            u = x @ self.up.T
            np.maximum(u, 0, out=u)
            x = x + u @ self.down.T
            x *= 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + 1e-6)
        return x

    def step(self, vocab_size: int) -> np.ndarray:
        x = self.body()
        probs = softmax(x @ self.projection[:vocab_size].T)
        return probs.argmax(axis=-1)


def _estimate_bytes(cfg: BenchConfig) -> int:
    d, vmax = cfg.hidden_dim, max(cfg.vocab_sizes)
    body = 12 * d * d * 4 if cfg.decoder_layers else 0
    return vmax * d * 4 + body + 3 * cfg.batch * vmax * 4 + cfg.batch * 12 * d * 4


def _available_bytes() -> int | None:
    try:
        return os.sysconf("SC_AVPHYS_PAGES") * os.sysconf("SC_PAGE_SIZE")
    except (ValueError, OSError, AttributeError):
        return None


def make_workload(cfg: BenchConfig) -> Workload:
    need = _estimate_bytes(cfg)
    avail = _available_bytes()
    if avail is not None and need > avail:
        raise AllocationFailure(f"benchmark needs ~{need / 2**20:.0f} MiB, only {avail / 2**20:.0f} MiB available")
    d = cfg.hidden_dim
    rng = np.random.default_rng(cfg.seed)
    try:
        hidden = rng.standard_normal((cfg.batch, d), dtype=np.float32)
        proj = rng.standard_normal((max(cfg.vocab_sizes), d), dtype=np.float32)
        proj *= 1.0 / math.sqrt(d)
        up = down = None
        if cfg.decoder_layers:
            up = rng.standard_normal((6 * d, d), dtype=np.float32)
            up *= 1.0 / math.sqrt(d)
            down = rng.standard_normal((d, 6 * d), dtype=np.float32)
            down *= 1.0 / math.sqrt(6 * d)
    except MemoryError:
        raise AllocationFailure(f"could not allocate the ~{need / 2**20:.0f} MiB benchmark workload") from None
    return Workload(hidden, proj, up, down, cfg.decoder_layers)


def run_bench(cfg: BenchConfig) -> BenchResult:
    """Time one decode step per vocabulary size.

    Iterations are interleaved round-robin across sizes so slow drift in
    machine state is shared evenly instead of biasing whichever size runs last.
    """
    work = make_workload(cfg)
    sizes = list(dict.fromkeys(cfg.vocab_sizes))
    samples: dict[int, list[float]] = {v: [] for v in sizes}
    with threadpool_limits(limits=1):
        for _ in range(cfg.warmup_iters):
            for v in sizes:
                work.step(v)
        for _ in range(cfg.timed_iters):
            for v in sizes:
                t0 = time.perf_counter()
                work.step(v)
                samples[v].append((time.perf_counter() - t0) * 1000.0)
    largest = max(sizes)
    base = float(np.mean(samples[largest]))
    rows = []
    for v in cfg.vocab_sizes:
        s = np.asarray(samples[v])
        mean = float(s.mean())
        rows.append(
            BenchRow(
                vocab_size=v,
                mean_ms=mean,
                stddev_ms=float(s.std(ddof=1)),
                improvement_pct=0.0 if v == largest else (base - mean) / base * 100.0,
            )
        )
    return BenchResult(rows, cfg, samples)


def check_numerics(hidden_dim: int, vocab_size: int, seed: int = 0) -> dict[str, float]:
    """Compare the benchmark's softmax with a naive float64 two-pass reference."""
    if hidden_dim > 1024 or vocab_size > 1024:
        raise InvariantError("check_numerics is meant for sizes <= 1024")
    rng = np.random.default_rng(seed)
    hidden = rng.standard_normal((1, hidden_dim), dtype=np.float32)
    proj = rng.standard_normal((vocab_size, hidden_dim), dtype=np.float32) / np.float32(math.sqrt(hidden_dim))
    logits = hidden @ proj.T
    probs = softmax(logits.copy())

    ref_logits = logits.astype(np.float64)[0]
    total = 0.0
    for x in ref_logits:
        total += math.exp(x)
    ref = np.array([math.exp(x) / total for x in ref_logits])

    sum_dev = abs(float(probs.sum(dtype=np.float64)) - 1.0)
    max_dev = float(np.max(np.abs(probs[0].astype(np.float64) - ref)))
    if sum_dev > 1e-5:
        raise NumericsMismatch(f"probabilities sum to 1 +/- {sum_dev:.3e}, tolerance 1e-5")
    if max_dev > 1e-6:
        raise NumericsMismatch(f"max deviation from reference {max_dev:.3e} exceeds 1e-6")
    return {"sum_deviation": sum_dev, "max_deviation": max_dev}
