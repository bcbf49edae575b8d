"""The finite-difference suite behind ``siamtrack gradcheck``.

Every differentiable primitive is checked on randomized shapes up to 32x32
at tol 1e-5; each network stage is checked on toy sizes at the same
tolerance; composed paths (backbone, correlation, full training loss) are
checked at tol 1e-4 on 16-64 point scenes. All checks run in float64.
"""
from __future__ import annotations

import time
import zlib
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import tensor as T
from .attention import AttentionParams, PosEmbedParams, cross_attention, local_attention, pos_embed, self_attention
from .backbone import BackboneParams, DecoderLayer, EdgeConv, decoder_layer, edge_conv, encode
from .config import Config
from .correlation import CorrelationParams, FusionMap, correlate, cross_feature_aug, ego_feature_aug
from .geometry import Box7, knn_coords
from .gradcheck import GradReport, finite_diff_check
from .head import BEVGrid, GridSpec, HeadParams, bev_head, scatter_to_bev
from .model import TrackerModel
from .tensor import Parameter, Tensor

PRIMITIVE_TOL = 1e-5
END_TO_END_TOL = 1e-4
# composed objectives sum many terms: small steps drown in round-off while
# large ones cross relu and max kinks, so failing entries get a second step
E2E_STEP = 1e-5
E2E_FALLBACK = (1e-6,)
_E2E = dict(step=E2E_STEP, fallback_steps=E2E_FALLBACK)


def _fd(f, params, **kw) -> GradReport:
    kw.setdefault("fallback_steps", (1e-5,))
    return finite_diff_check(f, params, **kw)


@dataclass
class CheckResult:
    name: str
    report: GradReport
    seconds: float

    @property
    def ok(self) -> bool:
        return self.report.ok

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"{status} {self.name:<36} max rel err {self.report.max_error:.2e} " \
               f"(tol {self.report.tol:.0e}, {self.seconds:.2f}s)"


def _rng(name: str, seed: int) -> np.random.Generator:
    return np.random.default_rng([zlib.crc32(name.encode()), seed])


def _p(rng, *shape, name="x"):
    return Parameter(rng.normal(size=shape), name=name)


_UNARY: dict[str, Callable[[Tensor], Tensor]] = {
    "elu1": T.elu1, "relu": T.relu, "exp": T.exp, "sigmoid": T.sigmoid, "softplus": T.softplus,
    "abs": T.abs, "power": lambda x: x ** 2,
    "log": lambda x: T.log(T.abs(x) + 0.5), "sqrt": lambda x: T.sqrt(T.abs(x) + 0.5),
}
_BINARY = {"add": T.add, "sub": T.sub, "mul": T.mul, "div": T.div}


def _primitive_checks(seed: int, entries: int) -> Iterator[tuple[str, Callable[[], GradReport]]]:
    shapes = [(1,), (7,), (3, 5), (32, 32)]
    for op, fn in _UNARY.items():
        for shape in shapes:
            def check(op=op, fn=fn, shape=shape):
                rng = _rng(f"{op}{shape}", seed)
                x = _p(rng, *shape)
                w = rng.normal(size=shape)
                return _fd(lambda: (fn(x) * w).sum(), [x], tol=PRIMITIVE_TOL, max_entries=entries)
            yield f"{op} {shape}", check

    for op, fn in _BINARY.items():
        for sa, sb in [((4, 5), (4, 5)), ((3, 1), (1, 6)), ((32, 32), (32,))]:
            def check(op=op, fn=fn, sa=sa, sb=sb):
                rng = _rng(f"{op}{sa}{sb}", seed)
                a = _p(rng, *sa, name="a")
                # keep divisors away from zero
                b = Parameter(rng.uniform(0.5, 2.0, size=sb) * rng.choice([-1, 1], size=sb), name="b")
                w = rng.normal(size=np.broadcast_shapes(sa, sb))
                return _fd(lambda: (fn(a, b) * w).sum(), [a, b], tol=PRIMITIVE_TOL,
                                         max_entries=entries)
            yield f"{op} {sa}x{sb}", check

    for m, k, n in [(5, 4, 3), (32, 16, 32), (32, 32, 32)]:
        def check(m=m, k=k, n=n):
            rng = _rng(f"matmul{m}{k}{n}", seed)
            a, b = _p(rng, m, k, name="a"), _p(rng, k, n, name="b")
            w = rng.normal(size=(m, n))
            return _fd(lambda: ((a @ b) * w).sum(), [a, b], tol=PRIMITIVE_TOL, max_entries=entries)
        yield f"matmul {m}x{k}x{n}", check

    def shape_ops():
        rng = _rng("shape", seed)
        x = _p(rng, 4, 6)
        w = rng.normal(size=(3, 2, 4))
        idx = np.array([[0, 0, 3], [2, 1, 0]])
        w2 = rng.normal(size=(2, 3, 6))

        def f():
            y = x.reshape(2, 3, 4).transpose(1, 0, 2)
            return (y * w).sum() + x[1:3, ::2].sum() + T.concat([x, x * 2.0], axis=0).mean() \
                + (T.take_rows(x, idx) * w2).sum() + T.tsum(x, axis=0).sum()
        return _fd(f, [x], tol=PRIMITIVE_TOL)
    yield "reshape/transpose/index/concat", shape_ops

    def max_reduce():
        rng = _rng("max", seed)
        x = _p(rng, 5, 7, 3)
        w = rng.normal(size=(5, 3))
        return _fd(lambda: (T.max_reduce(x, axis=1) * w).sum(), [x], tol=PRIMITIVE_TOL)
    yield "max_reduce", max_reduce

    def layer_norm():
        rng = _rng("ln", seed)
        x = _p(rng, 6, 8)
        g = Parameter(rng.uniform(0.5, 1.5, size=8), name="gamma")
        b = _p(rng, 8, name="beta")
        w = rng.normal(size=(6, 8))
        return _fd(lambda: (T.layer_norm(x, g, b) * w).sum(), [x, g, b], tol=PRIMITIVE_TOL)
    yield "layer_norm", layer_norm

    def conv2d():
        rng = _rng("conv", seed)
        x, k, b = _p(rng, 2, 5, 5), _p(rng, 3, 2, 3, 3, name="k"), _p(rng, 3, name="b")
        w = rng.normal(size=(3, 5, 5))
        return _fd(lambda: (T.conv2d(x, k, b) * w).sum(), [x, k, b], tol=PRIMITIVE_TOL)
    yield "conv2d", conv2d

    def scatter():
        rng = _rng("scatter", seed)
        x = _p(rng, 9, 4)
        cells = np.array([0, 2, 2, 3, 0, 3, 3, 5, 2])
        w = rng.normal(size=(6, 4))
        return _fd(lambda: (T.scatter_max(x, cells, 6)[0] * w).sum(), [x], tol=PRIMITIVE_TOL)
    yield "scatter_max", scatter


def _module_checks(seed: int) -> Iterator[tuple[str, Callable[[], GradReport]]]:
    def pos():
        rng = _rng("pos", seed)
        p = PosEmbedParams(rng, 8)
        p.assign_names("pos.")
        x = _p(rng, 8, 3, name="coords")
        w = rng.normal(size=(8, 8))
        return _fd(lambda: (pos_embed(x, p) * w).sum(), [x] + p.parameters(), tol=PRIMITIVE_TOL)
    yield "position embedding", pos

    def attn(kind):
        def check():
            rng = _rng(kind, seed)
            params = AttentionParams(rng, 8, heads=2)
            params.assign_names("attn.")
            if kind == "self":
                tok, pe = _p(rng, 6, 8, name="tok"), _p(rng, 6, 8, name="pos")
                fn, ins, n = (lambda: self_attention(tok, pe, params)), [tok, pe], 6
            elif kind == "cross":
                q, kv, vp = _p(rng, 4, 8, name="q"), _p(rng, 6, 8, name="kv"), _p(rng, 6, 8, name="vp")
                fn, ins, n = (lambda: cross_attention(q, kv, vp, params)), [q, kv, vp], 4
            else:
                tok, pe = _p(rng, 8, 8, name="tok"), _p(rng, 8, 8, name="pos")
                nbrs = rng.integers(0, 8, size=(8, 3))
                fn, ins, n = (lambda: local_attention(tok, pe, nbrs, params)), [tok, pe], 8
            w = rng.normal(size=(n, 8))
            return _fd(lambda: (fn() * w).sum(), ins + params.parameters(), tol=PRIMITIVE_TOL)
        return check
    for kind in ("self", "cross", "local"):
        yield f"{kind} attention", attn(kind)

    def edge():
        rng = _rng("edge", seed)
        ec = EdgeConv(rng, 3, 5)
        ec.assign_names("edge.")
        x = _p(rng, 8, 3)
        nbrs = knn_coords(x.data, 4).indices
        w = rng.normal(size=(8, 5))
        return _fd(lambda: (edge_conv(x, nbrs, ec) * w).sum(), [x] + ec.parameters(),
                                 tol=PRIMITIVE_TOL)
    yield "edge conv (8 points, k=4)", edge

    def decoders():
        rng = _rng("decoder", seed)
        top = DecoderLayer(rng, 8, 16, 8, heads=2, norm=True, dtype=np.float64)
        bottom = DecoderLayer(rng, 3, 8, 8, heads=2, norm=True, dtype=np.float64)
        top.assign_names("top.")
        bottom.assign_names("bottom.")
        c2, c1, c0 = rng.normal(size=(3, 3)), rng.normal(size=(6, 3)), rng.normal(size=(12, 3))
        f2, f1 = _p(rng, 3, 16, name="f2"), _p(rng, 6, 8, name="f1")
        w = rng.normal(size=(12, 8))

        def f():
            return (decoder_layer(Tensor(c0), decoder_layer(f1, f2, c2, top), c1, bottom) * w).sum()
        return _fd(f, [f1, f2] + top.parameters() + bottom.parameters(), tol=PRIMITIVE_TOL)
    yield "two stacked decoder layers", decoders

    def corr_setup(rng, fusion="attention"):
        params = CorrelationParams(rng, 8, 2, 4, heads=2, fusion=fusion)
        params.assign_names("correlation.")
        return params, _p(rng, 16, 8, name="ys"), _p(rng, 8, 8, name="yt"), \
            rng.normal(size=(16, 3)), rng.normal(size=(8, 3))

    def cross_aug():
        rng = _rng("cf", seed)
        params, ys, yt, sc, tc = corr_setup(rng)
        it = params.iterations[0]
        w = rng.normal(size=(16, 8))
        return _fd(lambda: (cross_feature_aug(FusionMap(ys, sc), yt, tc, it).features * w).sum(),
                                 [ys, yt] + it.cross.parameters() + it.template_pos.parameters(),
                                 tol=PRIMITIVE_TOL)
    yield "cross-feature augmentation", cross_aug

    def ego_aug():
        rng = _rng("ef", seed)
        params, ys, _, sc, _ = corr_setup(rng)
        it = params.iterations[0]
        w = rng.normal(size=(16, 8))
        return _fd(lambda: (ego_feature_aug(FusionMap(ys, sc), it, 4).features * w).sum(),
                                 [ys] + it.ego.parameters() + it.search_pos.parameters(), tol=PRIMITIVE_TOL)
    yield "ego-feature augmentation", ego_aug

    def bev_scatter():
        rng = _rng("bev", seed)
        x = _p(rng, 5, 3)
        coords = np.array([[0.0, 0, 0], [0.05, 0.1, 0], [1.0, 1.0, 0], [-2.0, 0.5, 0], [1.05, 1.1, 0]])
        spec = GridSpec()
        w = rng.normal(size=(3,) + spec.shape)
        return _fd(lambda: (scatter_to_bev(x, coords, spec).features * w).sum(), [x],
                                 tol=PRIMITIVE_TOL)
    yield "BEV scatter", bev_scatter

    def head():
        rng = _rng("head", seed)
        params = HeadParams(rng, 3, 4)
        params.assign_names("head.")
        for p in params.parameters():
            if p.ndim == 1:
                p.data[...] = rng.normal(scale=0.1, size=p.shape)
        x = _p(rng, 3, 8, 8, name="grid")
        w = rng.normal(size=(6, 8, 8))

        def f():
            out = bev_head(BEVGrid(x, np.ones((8, 8), bool), 0, GridSpec(1.2, 1.2, 0.3)), params)
            return (out.heatmap * w[0]).sum() + (out.offset * w[1:3]).sum() + (out.z * w[3:4]).sum() \
                + (out.yaw * w[4:6]).sum()
        return _fd(f, [x] + params.parameters(), tol=PRIMITIVE_TOL)
    yield "BEV head (8x8 grid)", head


def _end_to_end_checks(seed: int) -> Iterator[tuple[str, Callable[[], GradReport]]]:
    def backbone():
        rng = _rng("backbone", seed)
        params = BackboneParams(rng, (8, 16, 16), 8, (4, 4, 4))
        params.assign_names("backbone.")
        pts = rng.normal(size=(64, 3))
        w = rng.normal(size=(64, 8))
        return _fd(lambda: (encode(pts, params, 3).output * w).sum(), params.parameters(),
                                 tol=END_TO_END_TOL, max_entries=6, **_E2E)
    yield "backbone end-to-end (64 points)", backbone

    def corr(fusion):
        def check():
            rng = _rng(f"corr-{fusion}", seed)
            params = CorrelationParams(rng, 8, 2, 4, heads=2, fusion=fusion)
            params.assign_names("correlation.")
            ys, yt = _p(rng, 16, 8, name="ys"), _p(rng, 8, 8, name="yt")
            sc, tc = rng.normal(size=(16, 3)), rng.normal(size=(8, 3))
            w = rng.normal(size=(16, 8))
            return _fd(lambda: (correlate(ys, yt, sc, tc, params).features * w).sum(),
                                     [ys, yt] + params.parameters(), tol=END_TO_END_TOL, **_E2E)
        return check
    yield "correlation end-to-end (attention)", corr("attention")
    yield "correlation end-to-end (cosine)", corr("cosine")

    def full_loss():
        from .training import LossWeights, Sample, sample_loss

        rng = _rng("loss", seed)
        cfg = Config(n_template=16, n_search=16, channels=(4, 8, 8), out_channels=8, neighbors=(4, 2, 2),
                     knn_k=4, head_channels=4, grid_x=1.2, grid_y=1.2, log_every=0)
        model = TrackerModel(cfg, seed=seed)
        # nonzero biases so no gradient is trivially zero
        for p in model.parameters():
            if p.ndim == 1 and "norm" not in p.name:
                p.data[...] = rng.normal(scale=0.05, size=p.shape)
        search = np.concatenate([rng.normal(scale=0.15, size=(8, 3)) + [0.3, 0.1, 0],
                                 rng.uniform(-1.1, 1.1, size=(8, 3))])
        template = rng.normal(scale=0.3, size=(16, 3))
        s = Sample(template, search, Box7((0.3, 0.1, 0.05), (0.6, 0.4, 0.4), 0.1), Box7((0, 0, 0), (1, 1, 1)), 7)
        weights = LossWeights()
        return _fd(lambda: sample_loss(model, s, weights).total, model.parameters(),
                                 tol=END_TO_END_TOL, max_entries=4, **_E2E)
    yield "full training loss (16-point scene)", full_loss


def gradient_suite(seed: int = 0, entries: int = 64) -> Iterator[CheckResult]:
    """Run every check lazily, yielding one result per check."""
    for group in (_primitive_checks(seed, entries), _module_checks(seed), _end_to_end_checks(seed)):
        for name, check in group:
            t0 = time.perf_counter()
            report = check()
            yield CheckResult(name, report, time.perf_counter() - t0)
