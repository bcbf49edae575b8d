"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


class GradcheckError(ValueError):
    pass


@dataclass
class GradReport:
    tol: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def failed(self) -> list[str]:
        return [k for k, v in self.errors.items() if not v <= self.tol]

    @property
    def ok(self) -> bool:
        return not self.failed

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def __str__(self) -> str:
        lines = [f"{'FAIL' if v > self.tol else 'ok  '} {k}: {v:.3e}" for k, v in self.errors.items()]
        return "\n".join(lines)


def _entry_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float,
                  noise: np.ndarray | float = 0.0) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.maximum(np.abs(analytic - numeric) - noise, 0.0) / denom


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float,
                   noise: np.ndarray | float = 0.0) -> float:
    """Max elementwise ``max(|a - n| - noise, 0) / max(|a|, |n|, floor)``."""
    if not analytic.size:
        return 0.0
    return float(np.max(_entry_errors(analytic, numeric, floor, noise)))


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor] | dict[str, Tensor],
    step: float = 1e-6,
    tol: float = 1e-5,
    floor: float = 1e-6,
    roundoff: float = 8.0,
    max_entries: int | None = None,
    seed: int = 0,
    fallback_steps: Sequence[float] = (),
) -> GradReport:
    """Compare the tape gradient of scalar ``f()`` with central differences.

    ``f`` must rebuild its graph on every call. ``floor`` bounds the
    denominator so entries whose true gradient is ~0 are judged on an
    absolute scale. The central difference itself carries a rounding error
    of about ``eps * |f| / step``; discrepancies up to ``roundoff`` times
    that bound are not resolvable and are not counted. With ``max_entries``
    only a random subset of each parameter's entries is perturbed.

    Entries over ``tol`` are re-measured at each of ``fallback_steps`` and
    keep their smallest error. A wrong gradient fails at every step, while
    a perturbation that straddles a relu/max kink (large steps) or drowns
    in round-off (small steps) only fails at some.
    """
    for s in (step, *fallback_steps):
        if not s > 0:
            raise GradcheckError(f"step must be positive, got {s}")
    named = params.items() if isinstance(params, dict) else (
        (getattr(p, "name", "") or f"param{i}", p) for i, p in enumerate(params))
    named = list(named)

    for _, p in named:
        p.grad = None
    out = f()
    if not np.isfinite(out.data).all():
        raise GradcheckError(f"function value is not finite: {out.data}")
    out.backward()
    analytic = {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for n, p in named}

    rng = np.random.default_rng(seed)
    report = GradReport(tol=tol)
    for name, p in named:
        flat = p.data.reshape(-1)
        eps = float(np.finfo(p.data.dtype).eps)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = np.sort(rng.choice(flat.size, max_entries, replace=False))
        a = analytic[name].reshape(-1)
        err = np.array([_entry_error(f, flat, e, a[e], step, floor, roundoff * eps) for e in entries])
        for s in fallback_steps:
            for j in np.flatnonzero(err > tol):
                err[j] = min(err[j], _entry_error(f, flat, entries[j], a[entries[j]], s, floor, roundoff * eps))
        report.errors[name] = float(err.max()) if err.size else 0.0
    return report


def _entry_error(f, flat: np.ndarray, e: int, analytic: float, step: float, floor: float, noise_scale: float) -> float:
    orig = flat[e]
    flat[e] = orig + step
    hi = _value(f)
    flat[e] = orig - step
    lo = _value(f)
    flat[e] = orig
    numeric = (hi - lo) / (2.0 * step)
    noise = noise_scale * max(abs(hi), abs(lo)) / step
    return float(_entry_errors(np.array([analytic]), np.array([numeric]), floor, noise)[0])


def _value(f) -> float:
    with no_grad():
        v = f()
    val = float(np.asarray(v.data).sum())
    if not np.isfinite(val):
        raise GradcheckError("function value is not finite under perturbation")
    return val
