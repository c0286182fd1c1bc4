"""Built-in verification suite: exact mask-enumeration oracle checks and
the Jensen-gap sandwich, runnable from a fresh install with no data."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bounds import (
    enumerate_masks_exact,
    exact_jensen_gap,
    h_function,
    jensen_gap_approx,
    liao_gap_bounds,
)
from .dropout import DropoutSpec
from .family import FamilyParams, deterministic_predict, mc_predict
from .mlp import Mlp
from .numeric import SplitSeed, log_sum_exp, softmax_with_temperature
from .training import blas_single_thread

__all__ = ["SelfTestCheck", "run_selftest"]


@dataclass(frozen=True)
class SelfTestCheck:
    name: str
    passed: bool
    detail: str


def _random_mlp(seed: SplitSeed, rate: float = 0.4) -> Mlp:
    spec = DropoutSpec(sites=(("in", rate), ("h1", rate)))
    return Mlp([3, 5, 3], spec, init_seed=seed)


def _check_numeric() -> SelfTestCheck:
    ok = bool(
        abs(log_sum_exp([math.log(0.5), math.log(0.5)])) < 1e-12
        and abs(log_sum_exp([0.0, 0.0, 0.0]) - math.log(3.0)) < 1e-12
        and abs(log_sum_exp([-1000.0, -1000.0]) - (-1000.0 + math.log(2.0))) < 1e-9
        and abs(softmax_with_temperature([0.0, 0.0], 1.0).sum() - 1.0) < 1e-12
    )
    return SelfTestCheck("numeric_identities", ok, "log_sum_exp and softmax oracles")


def _check_enumeration() -> SelfTestCheck:
    alphas = (0.25, 0.5, 0.75, 1.0)
    failures = []
    for trial in range(3):
        seed = SplitSeed(90 + trial)
        model = _random_mlp(seed.child(0))
        x = seed.child(1).generator().standard_normal(3)
        exact = enumerate_masks_exact(model, x, rate_scale=1.0, alphas=alphas)
        for a in alphas:
            chain = exact.e_ln_p <= exact.ln_pow_mean[a] + 1e-12
            if not chain.all():
                failures.append(f"trial {trial}: E ln p > ln M_{a}")
            if exact.ln_z[a] > 1e-12:
                failures.append(f"trial {trial}: ln Z({a}) > 0")
        if abs(exact.ln_z[1.0]) > 1e-12:
            failures.append(f"trial {trial}: ln Z(1) != 0")
        # MC agreement on the arithmetic expectation of the first class
        agg, matrix = mc_predict(model, x,
                                 FamilyParams(alpha=1.0, lam=1.0, samples=20000),
                                 seed.child(2))
        p = np.exp(matrix[:, 0])
        se = float(np.std(p, ddof=1) / np.sqrt(p.size))
        if abs(float(np.mean(p)) - exact.e_p[0]) > 4.0 * se + 1e-12:
            failures.append(f"trial {trial}: MC mean off by > 4 se")
    return SelfTestCheck("enumeration_oracle", not failures, "; ".join(failures) or
                         "chain inequalities exact, MC within 4 se")


def _check_gap_sandwich() -> SelfTestCheck:
    failures = []
    gb = liao_gap_bounds([0.4, 0.6])
    worked = (
        abs(gb.lower - 0.017678443206045374) < 1e-9
        and abs(gb.upper - 0.023143551314209756) < 1e-9
        and abs(exact_jensen_gap([0.4, 0.6]) - 0.020410997260127565) < 1e-12
        and abs(jensen_gap_approx([0.4, 0.6]) - 0.02) < 1e-15
    )
    if not worked:
        failures.append("worked {0.4, 0.6} case mismatch")
    rng = SplitSeed(411).generator()
    for _ in range(100):
        s = rng.beta(2.0, 3.0, size=int(rng.integers(2, 40))) * 0.98 + 0.01
        gap = exact_jensen_gap(s)
        gb = liao_gap_bounds(s)
        if not (gb.lower - 1e-12 <= gap <= gb.upper + 1e-12):
            failures.append("sandwich violated")
            break
    for mu in (0.1, 0.5, 0.9):
        if abs(h_function(mu + 1e-8, mu) - 1.0 / (2 * mu * mu)) > 1e-4:
            failures.append(f"h discontinuous near mu={mu}")
    return SelfTestCheck("gap_sandwich", not failures, "; ".join(failures) or
                         "sandwich holds on 100 random sample sets")


def _check_collapse() -> SelfTestCheck:
    model = _random_mlp(SplitSeed(7).child(0))
    x = SplitSeed(7).child(1).generator().standard_normal(3)
    det = deterministic_predict(model, x, temperature=1.0, rate_scale=0.0)
    ok = True
    for alpha in (0.0, 0.5, 1.0):
        agg, _ = mc_predict(model, x, FamilyParams(alpha=alpha, lam=0.0, samples=5),
                            SplitSeed(8))
        ok = ok and bool(np.array_equal(agg.normalized_log, det))
    return SelfTestCheck("lambda_zero_collapse", ok,
                         "MC at lambda=0 equals the deterministic pass bitwise")


def run_selftest() -> list[SelfTestCheck]:
    with blas_single_thread():
        return [
            _check_numeric(),
            _check_enumeration(),
            _check_gap_sandwich(),
            _check_collapse(),
        ]
