"""Property suites: oracle equivalence, the ONNG D-by-L bound, the product
rule, nonnegativity of kNN/RST costs, Mecke and p-Poincaré checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .errors import ArgumentError
from .estimators import MECKE_CATALOGUE, STREAM_TAGS, mecke_check, poincare_check
from .functionals import (
    FunctionalSpec,
    add_one_cost_fast,
    add_one_cost_oracle,
    evaluate,
    gilbert_second_cost_closed_form,
    onng_L_term,
    onng_radius,
    second_add_one_cost,
)
from .geometry import ConvexBody, cone_cover
from .graphs import build_graph
from .sampling import RngStream, add_point, derive_stream_id, sample_poisson

SUITES = ("oracle", "dbyl", "product", "nonneg", "mecke", "poincare")
FAULTS = ("edge_weight",)
REL_TOL = 1e-10


@dataclass
class Check:
    label: str
    passed: bool
    detail: dict = field(default_factory=dict)


@dataclass
class SuiteResult:
    name: str
    checks: List[Check]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "suite": self.name,
            "passed": self.passed,
            "checks": [{"label": c.label, "passed": c.passed, **c.detail} for c in self.checks],
        }


def _rng(seed: int, suite: int, case: int) -> np.random.Generator:
    return RngStream(seed, derive_stream_id(STREAM_TAGS["verify"], suite, case)).generator()


def _stream(seed: int, suite: int, case: int) -> RngStream:
    return RngStream(seed, derive_stream_id(STREAM_TAGS["verify"], suite, case) | (1 << 31))


def _rel_err(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


def _perturb(value: float, fault: Optional[str]) -> float:
    # the injected fault scales every computed add-one cost as if one edge weight were off;
    # only suites comparing costs exactly are expected to notice it
    return value * (1.0 + 1e-6) + 1e-9 if fault == "edge_weight" else value


# family settings giving roughly 200 points per configuration
def oracle_cases(d: int) -> Dict[str, tuple]:
    side = 200.0 ** (1.0 / d)
    box = ConvexBody.box([0.0] * d, [side] * d)
    centred = ConvexBody.box([-side / 2] * d, [side / 2] * d)
    return {
        "onng": (FunctionalSpec.power("onng", 0.5), box, True),
        "gilbert": (FunctionalSpec.power("gilbert", 1.0, epsilon=1.5), box, False),
        "knn": (FunctionalSpec.phi_weight("knn", "inv_power", 0.5, k=4), box, False),
        "rst": (FunctionalSpec.phi_weight("rst", "inv_power", 0.5), centred, False),
    }


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def suite_oracle(seed: int, configs: int = 100, d: int = 2, fault: Optional[str] = None) -> SuiteResult:
    checks = []
    for fi, (family, (spec, body, marked)) in enumerate(oracle_cases(d).items()):
        worst_cost = 0.0
        builds_equal = True
        d2_exact = True
        for case in range(configs):
            rng = _rng(seed, 1, fi * 100000 + case)
            config = sample_poisson(body, 1.0, marked, _stream(seed, 1, fi * 100000 + case))
            fast_graph = spec.build(config)
            builds_equal &= fast_graph.same_edges(spec.build(config, brute=True))
            x = body.sample_uniform(rng, 1)[0]
            m = float(rng.random()) if marked else None
            fast = add_one_cost_fast(spec, config, fast_graph, x, m).first_order
            slow = add_one_cost_oracle(spec, config, x, m).first_order
            worst_cost = max(worst_cost, _rel_err(_perturb(fast, fault), slow))
            if family == "gilbert":
                y = body.sample_uniform(rng, 1)[0]
                eps = spec.graph_params["epsilon"]
                d2 = second_add_one_cost(spec, config, x, y)
                d2_exact &= _perturb(d2, fault) == gilbert_second_cost_closed_form(x, y, eps, spec.alpha)
        checks.append(Check(f"{family}: incremental cost equals rebuild", worst_cost <= REL_TOL,
                            {"max_rel_err": worst_cost, "configs": configs}))
        checks.append(Check(f"{family}: accelerated build equals brute force", bool(builds_equal)))
        if family == "gilbert":
            checks.append(Check("gilbert: second-order cost equals closed form", bool(d2_exact)))
    return SuiteResult("oracle", checks)


def suite_dbyl(seed: int, pairs: int = 1000, fault: Optional[str] = None) -> SuiteResult:
    checks = []
    for ai, alpha in enumerate((0.3, 0.5)):
        for d in (1, 2):
            side = 60.0 ** (1.0 / d)
            body = ConvexBody.box([0.0] * d, [side] * d)
            spec = FunctionalSpec.power("onng", alpha)
            cover = cone_cover(d)
            worst = -math.inf
            violations = 0
            for case in range(pairs):
                key = (ai * 4 + d) * 1000000 + case
                rng = _rng(seed, 2, key)
                config = sample_poisson(body, 1.0, True, _stream(seed, 2, key))
                x = body.sample_uniform(rng, 1)[0]
                s = float(rng.random())
                graph = spec.build(config)
                cost = _perturb(add_one_cost_fast(spec, config, graph, x, s).first_order, fault)
                bound = onng_radius(config, x, s, cover) ** alpha + onng_L_term(spec, config, x, s, graph)
                gap = abs(cost) - bound
                worst = max(worst, gap / max(bound, 1e-300))
                if gap > 1e-12 * max(1.0, bound):
                    violations += 1
            checks.append(Check(f"alpha={alpha}, d={d}: |D F| <= R^alpha + L", violations == 0,
                                {"pairs": pairs, "violations": violations, "max_rel_excess": worst}))
    return SuiteResult("dbyl", checks)


def suite_product(seed: int, configs: int = 100, fault: Optional[str] = None) -> SuiteResult:
    """D(FG) = (DF)G + F(DG) + (DF)(DG) for pairs of functionals on one configuration."""
    checks = []
    body = ConvexBody.box([0.0, 0.0], [10.0, 10.0])
    pairs = {
        "onng a=0.3 x onng a=0.5": (FunctionalSpec.power("onng", 0.3), FunctionalSpec.power("onng", 0.5), True),
        "gilbert a=1 x gilbert a=0": (
            FunctionalSpec.power("gilbert", 1.0, epsilon=1.2),
            FunctionalSpec.power("gilbert", 0.0, epsilon=1.2),
            False,
        ),
        "rst x knn": (
            FunctionalSpec.phi_weight("rst", "exp"),
            FunctionalSpec.phi_weight("knn", "inv_power", 1.0, k=3),
            False,
        ),
    }
    for pi, (label, (f_spec, g_spec, marked)) in enumerate(pairs.items()):
        worst = 0.0
        for case in range(configs):
            key = pi * 100000 + case
            rng = _rng(seed, 3, key)
            b = body if f_spec.family != "rst" else ConvexBody.box([-5.0, -5.0], [5.0, 5.0])
            config = sample_poisson(b, 1.0, marked, _stream(seed, 3, key))
            x = b.sample_uniform(rng, 1)[0]
            m = float(rng.random()) if marked else None
            F = evaluate(f_spec, f_spec.build(config))
            G = evaluate(g_spec, g_spec.build(config))
            bigger = add_point(config, x, m)
            lhs = evaluate(f_spec, f_spec.build(bigger)) * evaluate(g_spec, g_spec.build(bigger)) - F * G
            DF = _perturb(add_one_cost_fast(f_spec, config, None, x, m).first_order, fault)
            DG = add_one_cost_fast(g_spec, config, None, x, m).first_order
            rhs = DF * G + F * DG + DF * DG
            # cancellation in F'G' - FG limits accuracy to the size of the products
            scale = max(abs(lhs), 1e-3 * abs(F * G), 1e-300)
            worst = max(worst, abs(lhs - rhs) / scale)
        checks.append(Check(f"product rule: {label}", worst <= 1e-9, {"max_rel_err": worst, "configs": configs}))
    return SuiteResult("product", checks)


def suite_nonneg(seed: int, configs: int = 100, fault: Optional[str] = None) -> SuiteResult:
    checks = []
    for fi, family in enumerate(("knn", "rst")):
        for phi, a in (("inv_power", 0.5), ("exp", 1.0)):
            params = {"k": 4} if family == "knn" else {}
            spec = FunctionalSpec.phi_weight(family, phi, a, **params)
            body = ConvexBody.box([-6.0, -6.0], [6.0, 6.0])
            minimum = math.inf
            for case in range(configs):
                key = fi * 100000 + (phi == "exp") * 50000 + case
                rng = _rng(seed, 4, key)
                config = sample_poisson(body, 1.0, False, _stream(seed, 4, key))
                if config.n <= params.get("k", 0):
                    continue
                x = body.sample_uniform(rng, 1)[0]
                cost = _perturb(add_one_cost_fast(spec, config, None, x).first_order, fault)
                minimum = min(minimum, cost)
            checks.append(Check(f"{family} {phi}: D_x F >= 0", minimum >= 0.0, {"min_cost": minimum}))
    return SuiteResult("nonneg", checks)


def suite_mecke(seed: int, replicates: int = 2000, fault: Optional[str] = None) -> SuiteResult:
    body = ConvexBody.ball([0.0, 0.0], 1.0)
    checks = []
    for k, h in enumerate(MECKE_CATALOGUE):
        res = mecke_check(h, body, 5.0, replicates, seed + k)
        ok = abs(res.lhs - res.rhs) <= 3.0 * res.pooled_se
        checks.append(Check(f"mecke {h}", ok, res.to_dict()))
    res0 = mecke_check("nn_distance_capped", body, 0.0, 10, seed)
    checks.append(Check("mecke at intensity 0", res0.lhs == 0.0 and res0.rhs == 0.0, res0.to_dict()))
    return SuiteResult("mecke", checks)


def poincare_catalogue() -> Dict[str, tuple]:
    return {
        "count": ("count", ConvexBody.box([0.0, 0.0], [3.0, 3.0])),
        "onng a=0.3 d=1": (FunctionalSpec.power("onng", 0.3), ConvexBody.box([0.0], [30.0])),
        "gilbert a=1 d=2": (FunctionalSpec.power("gilbert", 1.0, epsilon=1.0), ConvexBody.box([0.0, 0.0], [5.0, 5.0])),
    }


def suite_poincare(seed: int, replicates: int = 1500, fault: Optional[str] = None) -> SuiteResult:
    checks = []
    for k, (label, (functional, body)) in enumerate(poincare_catalogue().items()):
        for p in (1.5, 2.0):
            res = poincare_check(functional, p, body, 1.0, replicates, seed + 10 * k + int(p * 2))
            ok = res.rhs - res.lhs >= -3.0 * res.pooled_se
            detail = res.to_dict()
            detail["p"] = p
            checks.append(Check(f"poincare {label}, p={p}", ok, detail))
    return SuiteResult("poincare", checks)


_RUNNERS: Dict[str, Callable[..., SuiteResult]] = {
    "oracle": suite_oracle,
    "dbyl": suite_dbyl,
    "product": suite_product,
    "nonneg": suite_nonneg,
    "mecke": suite_mecke,
    "poincare": suite_poincare,
}


def run_suites(names: Optional[Sequence[str]] = None, seed: int = 0, fault: Optional[str] = None,
               sizes: Optional[dict] = None) -> List[SuiteResult]:
    """Run the named suites (all by default); ``sizes`` overrides per-suite counts."""
    names = list(names) if names else list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ArgumentError(f"unknown suites {unknown}; choose from {SUITES}")
    if fault is not None and fault not in FAULTS:
        raise ArgumentError(f"unknown fault {fault!r}; choose from {FAULTS}")
    sizes = sizes or {}
    out = []
    for name in names:
        kwargs = {"fault": fault}
        if name in sizes:
            key = {"oracle": "configs", "dbyl": "pairs", "product": "configs", "nonneg": "configs",
                   "mecke": "replicates", "poincare": "replicates"}[name]
            kwargs[key] = int(sizes[name])
        out.append(_RUNNERS[name](seed, **kwargs))
    return out
