"""Timing of the kernels and the forward stages on each kernel backend."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .config import Config
from .model import TrackerModel
from .tensor import no_grad

STAGES = ("backbone", "correlation", "head")


@dataclass
class BenchReport:
    config: Config
    repeats: int
    kernels: dict[str, dict[str, float]] = field(default_factory=dict)  # backend -> kernel -> ms
    stages: dict[str, dict[str, float]] = field(default_factory=dict)   # backend -> stage -> ms

    def forward_ms(self, backend: str) -> float:
        return sum(self.stages[backend][s] for s in STAGES)

    def to_text(self) -> str:
        names = list(self.stages)
        c = self.config
        lines = [f"forward at N_t={c.n_template} N_s={c.n_search} K={c.knn_k} iterations={c.iterations} "
                 f"dtype={c.dtype}, median of {self.repeats} (ms)",
                 f"{'':<24}" + "".join(f"{n:>12}" for n in names)]
        rows = [(k, [self.kernels[n][k] for n in names]) for k in next(iter(self.kernels.values()))]
        rows += [(s, [self.stages[n][s] for n in names]) for s in STAGES]
        rows.append(("forward total", [self.forward_ms(n) for n in names]))
        for label, vals in rows:
            lines.append(f"{label:<24}" + "".join(f"{v:>12.2f}" for v in vals))
        if len(names) > 1:
            base = self.forward_ms(names[0])
            lines.append(f"{'forward speedup':<24}" + "".join(f"{base / self.forward_ms(n):>11.2f}x" for n in names))
        return "\n".join(lines)


def _median_ms(fn: Callable[[], object], repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return 1e3 * float(np.median(times))


def run_bench(config: Config | None = None, repeats: int = 5, backends: list[str] | None = None,
              seed: int = 0) -> BenchReport:
    """Time kNN/scatter kernels and the three forward stages per backend.

    Defaults to the full-size model at float32 (the deployment precision).
    """
    config = config or Config(dtype="float32")
    names = backends or sorted(kernels.backends(), key=lambda n: n != "python")
    rng = np.random.default_rng(seed)
    model = TrackerModel(config, seed=seed)
    template = rng.normal(scale=[1.5, 0.8, 0.6], size=(config.n_template, 3))
    search = rng.uniform([-5, -3, -1], [5, 3, 1], size=(config.n_search, 3))
    feats = rng.normal(size=(config.n_search, config.out_channels))
    rows = rng.normal(size=(config.n_search * config.knn_k, config.out_channels))
    index = rng.integers(0, config.n_search, size=len(rows))
    cells = rng.integers(0, 24 * 38, size=config.n_search)

    report = BenchReport(config, repeats)
    for name in names:
        with kernels.use_backend(name), no_grad():
            model.forward(template, search, seed)  # warm-up
            report.kernels[name] = {
                f"knn coords k={config.knn_k}": _median_ms(lambda: kernels.knn(search, search, config.knn_k), repeats),
                f"knn features k={config.knn_k}": _median_ms(lambda: kernels.knn(feats, feats, config.knn_k), repeats),
                "scatter_add_rows": _median_ms(lambda: kernels.scatter_add_rows(rows, index, config.n_search),
                                               repeats),
                "scatter_max": _median_ms(lambda: kernels.scatter_max(feats, cells, 24 * 38), repeats),
            }
            per_stage = {s: [] for s in STAGES}
            for _ in range(repeats):
                t = model.forward(template, search, seed).timings_ms
                for s in STAGES:
                    per_stage[s].append(t[s])
            report.stages[name] = {s: float(np.median(v)) for s, v in per_stage.items()}
    return report
