"""Wall-clock harness comparing sampling strategies.

Four strategies are timed: two independent teacher one-step samples (the
fixed budget baseline), the student's batched screening of N candidates,
one teacher refinement, and the combined scout-and-refine pipeline. Each
row reports the mean and unbiased standard deviation over at least 30
measured repetitions after a short discarded warmup.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .scout import ScoutConfig, scout_and_refine

MIN_REPEATS = 30

STRATEGY_BASELINE = "teacher-pair"
STRATEGY_SCOUT = "student-screen"
STRATEGY_REFINE = "teacher-refine"
STRATEGY_TOTAL = "scout-and-refine"


@dataclass(frozen=True)
class BenchConfig:
    repeats: int = 40
    warmup: int = 5
    n_candidates: int = 100
    scorer: str = "mixture_logpdf"
    class_label: int = 0
    guidance: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.repeats < MIN_REPEATS:
            raise ValueError(f"repeats must be >= {MIN_REPEATS} for reported rows")
        if self.warmup < 0 or self.n_candidates < 1:
            raise ValueError("invalid warmup or candidate count")


@dataclass
class TimingRow:
    strategy: str
    avg_ms: float
    std_ms: float
    runs: int


def _measure(fn, repeats, warmup):
    for _ in range(warmup):
        fn()
    samples = np.empty(repeats)
    for i in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples[i] = (time.perf_counter() - t0) * 1e3
    return float(samples.mean()), float(samples.std(ddof=1))


def run_bench(student, teacher, scorer, cfg: BenchConfig):
    """Time the four strategies; returns TimingRow entries in report order."""
    rng = np.random.default_rng([cfg.seed, 0xBE])
    dim = student.cfg.data_dim
    y1 = np.full(1, cfg.class_label)

    def teacher_pair():
        # the baseline budget: two sequential one-noise teacher samples
        for _ in range(2):
            teacher.one_step(rng.standard_normal((1, dim)), 1.0, y1, cfg.guidance)

    def student_screen():
        z = rng.standard_normal((cfg.n_candidates, dim)).astype(student.dtype)
        y = np.full(cfg.n_candidates, cfg.class_label)
        scorer(student.one_step(z, y, cfg.guidance))

    def teacher_refine():
        teacher.one_step(rng.standard_normal((1, dim)), 1.0, y1, cfg.guidance)

    scout_seed = int(rng.integers(0, 2**32))

    def combined():
        scfg = ScoutConfig(
            n_candidates=cfg.n_candidates,
            scorer=cfg.scorer,
            class_label=cfg.class_label,
            guidance=cfg.guidance,
            seed=scout_seed,
        )
        result = scout_and_refine(student, teacher, scorer, scfg)
        if result.total_ms < max(result.scout_ms, result.refine_ms):
            raise RuntimeError("phase timings exceed the total they compose")

    rows = []
    for name, fn in (
        (STRATEGY_BASELINE, teacher_pair),
        (STRATEGY_SCOUT, student_screen),
        (STRATEGY_REFINE, teacher_refine),
        (STRATEGY_TOTAL, combined),
    ):
        avg, std = _measure(fn, cfg.repeats, cfg.warmup)
        rows.append(TimingRow(strategy=name, avg_ms=avg, std_ms=std, runs=cfg.repeats))
    return rows
