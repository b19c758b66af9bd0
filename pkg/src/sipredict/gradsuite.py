"""Randomized finite-difference verification of every differentiable op

and of the fully assembled predictor at a small width. Everything runs at
64-bit so the numeric comparison is meaningful; the library's float32
default is untouched outside the suite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import MultiHeadAttention, TransformerBlock
from .model import BinauralInput, ModelConfig, PredictorModel
from .tensor import Tensor, gradient_check, gradient_check_params

TOL = 1e-4


@dataclass
class CaseResult:
    name: str
    cases: int
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= TOL


@dataclass
class SuiteReport:
    results: list[CaseResult]
    elapsed_s: float

    @property
    def total_cases(self) -> int:
        return sum(r.cases for r in self.results)

    @property
    def max_rel_err(self) -> float:
        return max(r.max_rel_err for r in self.results)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self) -> list[str]:
        width = max(len(r.name) for r in self.results)
        out = [
            f"{r.name:<{width}}  cases={r.cases:<3d}  max_rel_err={r.max_rel_err:.3e}  "
            f"{'ok' if r.passed else 'FAIL'}"
            for r in self.results
        ]
        out.append(
            f"total: {self.total_cases} cases, max relative error {self.max_rel_err:.3e}, "
            f"{'PASS' if self.passed else 'FAIL'} (tolerance {TOL:g}), {self.elapsed_s:.1f}s"
        )
        return out


def _tensor(rng, *shape) -> Tensor:
    return Tensor(rng.uniform(-2.0, 2.0, size=shape), requires_grad=True)


def _op_cases(rng):
    """(name, build) pairs; build -> (f, x) for one randomized gradient check."""

    def shapes():
        return int(rng.integers(1, 5)), int(rng.integers(1, 6))

    def case_add():
        n, d = shapes()
        other = _tensor(rng, n, d)
        return (lambda x: T.add(x, other)), _tensor(rng, n, d)

    def case_add_bias():
        n, d = shapes()
        x = _tensor(rng, n, d)
        return (lambda b: T.add(x, b)), _tensor(rng, d)

    def case_sub():
        n, d = shapes()
        other = _tensor(rng, n, d)
        return (lambda x: T.sub(x, other)), _tensor(rng, n, d)

    def case_mul():
        n, d = shapes()
        other = _tensor(rng, n, d)
        return (lambda x: T.mul(x, other)), _tensor(rng, n, d)

    def case_scale():
        n, d = shapes()
        s = float(rng.uniform(-3, 3))
        return (lambda x: T.scale(x, s)), _tensor(rng, n, d)

    def case_shift():
        n, d = shapes()
        c = float(rng.uniform(-3, 3))
        return (lambda x: T.shift(x, c)), _tensor(rng, n, d)

    def case_matmul_lhs():
        n, k = shapes()
        d = int(rng.integers(1, 6))
        other = _tensor(rng, k, d)
        return (lambda x: T.matmul(x, other)), _tensor(rng, n, k)

    def case_matmul_rhs():
        n, k = shapes()
        d = int(rng.integers(1, 6))
        x = _tensor(rng, n, k)
        return (lambda b: T.matmul(x, b)), _tensor(rng, k, d)

    def case_transpose():
        n, d = shapes()
        return T.transpose, _tensor(rng, n, d)

    def case_slice():
        n = int(rng.integers(2, 6))
        d = int(rng.integers(2, 6))
        lo = int(rng.integers(0, d - 1))
        hi = int(rng.integers(lo + 1, d + 1))
        return (lambda x: T.slice_along(x, 1, lo, hi)), _tensor(rng, n, d)

    def case_concat():
        n, d = shapes()
        other = _tensor(rng, n, d)
        return (lambda x: T.concat([x, other], axis=0)), _tensor(rng, n, d)

    def case_sum_all():
        n, d = shapes()
        return T.sum_all, _tensor(rng, n, d)

    def case_sigmoid():
        n, d = shapes()
        return T.sigmoid, _tensor(rng, n, d)

    def case_tanh():
        n, d = shapes()
        return T.tanh, _tensor(rng, n, d)

    def case_gelu():
        n, d = shapes()
        return T.gelu, _tensor(rng, n, d)

    def case_softmax():
        n, d = shapes()
        return (lambda x: T.softmax(x, axis=-1)), _tensor(rng, n, d)

    def case_layer_norm():
        n, d = shapes()
        gain = _tensor(rng, d)
        bias = _tensor(rng, d)
        return (lambda x: T.layer_norm(x, gain, bias)), _tensor(rng, n, d)

    def case_masked_mean():
        n = int(rng.integers(2, 6))
        d = int(rng.integers(1, 6))
        mask = np.zeros(n, dtype=bool)
        mask[rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)] = True
        return (lambda x: T.masked_mean(x, mask)), _tensor(rng, n, d)

    def case_dropout():
        n, d = shapes()
        seed = int(rng.integers(0, 2**31))
        # fresh generator per call keeps f deterministic across fd probes
        return (lambda x: T.dropout(x, 0.3, np.random.default_rng(seed))), _tensor(rng, n, d)

    return [
        ("add", case_add),
        ("add-row-bias", case_add_bias),
        ("sub", case_sub),
        ("mul", case_mul),
        ("scale", case_scale),
        ("shift", case_shift),
        ("matmul-lhs", case_matmul_lhs),
        ("matmul-rhs", case_matmul_rhs),
        ("transpose", case_transpose),
        ("slice", case_slice),
        ("concat", case_concat),
        ("sum", case_sum_all),
        ("sigmoid", case_sigmoid),
        ("tanh", case_tanh),
        ("gelu", case_gelu),
        ("softmax", case_softmax),
        ("layer-norm", case_layer_norm),
        ("masked-mean", case_masked_mean),
        ("dropout", case_dropout),
    ]


def _toy_model_input(rng, cfg: ModelConfig):
    t = int(rng.integers(cfg.downsample_factor, 3 * cfg.downsample_factor))
    mk = lambda: Tensor(rng.uniform(-1.0, 1.0, size=(t, cfg.sfm_feature_dim)))
    return BinauralInput(
        noisy_l=mk(), enhanced_l=mk(), noisy_r=mk(), enhanced_r=mk(),
        audiogram=rng.uniform(0.0, 80.0, size=cfg.audiogram_dim),
    )


def run_suite(seed: int = 0, cases_per_op: int = 6) -> SuiteReport:
    start = time.perf_counter()
    results: list[CaseResult] = []
    with T.using_dtype(np.float64):
        rng = np.random.default_rng((int(seed), 909))
        for name, build in _op_cases(rng):
            worst = 0.0
            for _ in range(cases_per_op):
                f, x = build()
                # weighted sum keeps the scalar objective sensitive to every
                # output element (a plain sum zeroes softmax gradients)
                w = Tensor(rng.uniform(0.5, 1.5, size=f(x).shape))
                report = gradient_check(lambda v: T.sum_all(T.mul(f(v), w)), x)
                worst = max(worst, report.max_rel_err)
            results.append(CaseResult(name, cases_per_op, worst))

        cfg = ModelConfig(
            d_model=8, n_heads=2, ff_mult=2, sfm_feature_dim=5,
            downsample_factor=4, dropout=0.0,
        )

        worst = 0.0
        n_attn = max(2, cases_per_op // 2)
        for _ in range(n_attn):
            attn = MultiHeadAttention(8, 2, rng=rng)
            q = _tensor(rng, 3, 8)
            kv = _tensor(rng, 4, 8)
            w1 = Tensor(rng.uniform(0.5, 1.5, size=(3, 8)))
            report = gradient_check(lambda x: T.sum_all(T.mul(attn(x, kv, kv), w1)), q)
            worst = max(worst, report.max_rel_err)
            block = TransformerBlock(8, 2, ff_mult=2, dropout=0.0, rng=rng)
            report = gradient_check(lambda x: T.sum_all(T.mul(block(x, kv=kv), w1)), q)
            worst = max(worst, report.max_rel_err)
        results.append(CaseResult("attention-block", 2 * n_attn, worst))

        worst = 0.0
        n_model = max(2, cases_per_op // 3)
        for k in range(n_model):
            model = PredictorModel(cfg, seed=int(rng.integers(0, 2**31)))
            inp = _toy_model_input(rng, cfg)
            x = Tensor(inp.noisy_l.data.copy(), requires_grad=True)

            def forward(v):
                probe = BinauralInput(
                    noisy_l=v, enhanced_l=inp.enhanced_l,
                    noisy_r=inp.noisy_r, enhanced_r=inp.enhanced_r,
                    audiogram=inp.audiogram,
                )
                return model.predict_tensor(probe)

            report = gradient_check(forward, x)
            worst = max(worst, report.max_rel_err)
        results.append(CaseResult("predictor-input", n_model, worst))

        model = PredictorModel(cfg, seed=11)
        inp = _toy_model_input(rng, cfg)
        reports = gradient_check_params(lambda: model.predict_tensor(inp), model.parameters())
        worst = max(r.max_rel_err for r in reports.values())
        results.append(CaseResult("predictor-params", len(reports), worst))

    return SuiteReport(results, time.perf_counter() - start)
