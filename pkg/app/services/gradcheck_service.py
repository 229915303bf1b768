"""
Suite de chequeo de gradientes en 64 bits

Cubre cada op diferenciable, las capas de capsulas, cada perdida y un modelo
completo diminuto (8x8, K=2, capsulas de 4 dimensiones). Cada caso se evalua
en varias pruebas con entradas aleatorias nuevas; el resultado del caso es el
peor error relativo observado.

Las salidas no escalares se reducen con una proyeccion aleatoria fija
sum(op(x) * R), asi cada coordenada de la salida participa.
"""

import logging
import time
from contextlib import ExitStack
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from app.autograd import ops
from app.autograd.gradcheck import GradCheckReport, grad_check_param
from app.autograd.tensor import BACKWARD_RULES, Tensor, no_grad, override_backward, precision
from app.core.errors import ConfigError, GradCheckFailure
from app.models.direct_capsnet import build
from app.models.schemas import LossWeights, ModelConfig
from app.nn.capsules import CapsuleSet, primary_capsules, route, squash
from app.nn.losses import AnchorBank, hr_anchor_loss, margin_loss, targeted_reconstruction_loss, total_loss

logger = logging.getLogger(__name__)

DEFAULT_TRIALS = 20
DEFAULT_TOL = 1e-4
DEFAULT_EPS = 1e-5

# Factor con el que el modo de error inyectado altera una regla
INJECTED_FACTOR = 1.1

Builder = Callable[[np.random.Generator], Tuple[Callable[[], Tensor], Sequence[Tuple[str, Tensor]]]]


@dataclass
class GradCase:
    name: str
    build: Builder
    max_coords: Optional[int] = None


class CaseResult(BaseModel):
    name: str
    trials: int
    max_rel_error: float
    worst_input: Optional[str] = None
    checked: int
    skipped_kinks: int
    passed: bool


class SuiteReport(BaseModel):
    tol: float
    eps: float
    trials: int
    seconds: float
    results: List[CaseResult]
    passed: bool
    worst_case: Optional[str] = None
    worst_error: float = 0.0
    injected_bug: Optional[str] = None


# =========================
# Ayudantes
# =========================
def _leaf(rng: np.random.Generator, shape, low: float = -1.0, high: float = 1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def _projected(fn: Callable[[], Tensor], rng: np.random.Generator) -> Callable[[], Tensor]:
    """Convierte fn (salida de cualquier forma) en un escalar sum(fn() * R)"""
    with no_grad():
        shape = fn().shape
    weights = Tensor(rng.normal(size=shape))
    return lambda: ops.sum(ops.mul(fn(), weights))


def _binary(op):
    def builder(rng):
        a, b = _leaf(rng, (3, 4)), _leaf(rng, (3, 4))
        return _projected(lambda: op(a, b), rng), [("a", a), ("b", b)]
    return builder


def _unary(op, shape=(3, 4), low=-1.0, high=1.0):
    def builder(rng):
        x = _leaf(rng, shape, low, high)
        return _projected(lambda: op(x), rng), [("x", x)]
    return builder


def _div(rng):
    a = _leaf(rng, (3, 4))
    sign = np.where(rng.random((3, 4)) < 0.5, -1.0, 1.0)
    b = Tensor(sign * rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    return _projected(lambda: ops.div(a, b), rng), [("a", a), ("b", b)]


def _add_bias(rng):
    x, bias = _leaf(rng, (2, 3, 4)), _leaf(rng, (3,))
    return _projected(lambda: ops.add_bias(x, bias, axis=1), rng), [("x", x), ("bias", bias)]


def _concat(rng):
    a, b = _leaf(rng, (2, 3)), _leaf(rng, (1, 3))
    return _projected(lambda: ops.concat([a, b], axis=0), rng), [("a", a), ("b", b)]


def _gather_rows(rng):
    x = _leaf(rng, (4, 3))
    rows = np.array([0, 2, 2, 3])
    return _projected(lambda: ops.gather_rows(x, rows), rng), [("x", x)]


def _matmul(rng):
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (4, 2))
    return _projected(lambda: ops.matmul(a, b), rng), [("a", a), ("b", b)]


def _einsum(rng):
    a, b = _leaf(rng, (2, 3, 4)), _leaf(rng, (2, 4, 5))
    return _projected(lambda: ops.einsum("bij,bje->bie", a, b), rng), [("a", a), ("b", b)]


def _conv2d(rng):
    x, w = _leaf(rng, (2, 2, 5, 5)), _leaf(rng, (3, 2, 3, 3))
    return _projected(lambda: ops.conv2d(x, w, stride=2, padding=1), rng), [("x", x), ("w", w)]


def _batch_norm_train(rng):
    x = _leaf(rng, (4, 3, 2, 2))
    gamma, beta = _leaf(rng, (3,), 0.5, 1.5), _leaf(rng, (3,))
    fn = lambda: ops.batch_norm_train(x, gamma, beta, 1e-5)[0]
    return _projected(fn, rng), [("x", x), ("gamma", gamma), ("beta", beta)]


def _batch_norm_eval(rng):
    x = _leaf(rng, (2, 3, 2, 2))
    gamma, beta = _leaf(rng, (3,), 0.5, 1.5), _leaf(rng, (3,))
    mean, var = rng.normal(size=3), rng.uniform(0.5, 2.0, size=3)
    fn = lambda: ops.batch_norm_eval(x, gamma, beta, mean, var, 1e-5)
    return _projected(fn, rng), [("x", x), ("gamma", gamma), ("beta", beta)]


def _primary_capsules(rng):
    x = _leaf(rng, (2, 8, 3, 3))
    return _projected(lambda: primary_capsules(x, 4).activities, rng), [("features", x)]


def _route(rng):
    u, W = _leaf(rng, (2, 6, 4)), _leaf(rng, (6, 3, 5, 4))
    fn = lambda: route(CapsuleSet(squash(u)), W, iterations=3, detach_agreement=False).activities
    return _projected(fn, rng), [("u", u), ("W", W)]


def _margin_loss(rng):
    lengths = _leaf(rng, (4, 5), 0.01, 0.99)
    classes = rng.integers(0, 5, size=4)
    return (lambda: margin_loss(lengths, classes)), [("lengths", lengths)]


def _anchor_bank(rng, k: int, dim: int) -> AnchorBank:
    bank = AnchorBank(k, dim)
    bank.anchors.data = rng.normal(size=(k, dim))
    return bank


def _hr_anchor_loss_mixed(rng):
    bank = _anchor_bank(rng, 3, 6)
    f = _leaf(rng, (4, 6))
    classes, flags = rng.integers(0, 3, size=4), np.array([1, 0, 1, 0])
    return (lambda: hr_anchor_loss(f, classes, flags, bank)), [("f", f)]


def _hr_anchor_loss_hr(rng):
    bank = _anchor_bank(rng, 3, 6)
    f = _leaf(rng, (4, 6))
    classes = rng.integers(0, 3, size=4)
    flags = np.ones(4, dtype=np.int64)
    return (lambda: hr_anchor_loss(f, classes, flags, bank)), [("f", f), ("anchors", bank.anchors)]


def _targeted_recon(rng):
    recon = _leaf(rng, (3, 1, 4, 4), 0.0, 1.0)
    target = rng.uniform(0.0, 1.0, size=(3, 1, 4, 4))
    return (lambda: targeted_reconstruction_loss(recon, target)), [("recon", recon)]


def _total_loss(rng):
    bank = _anchor_bank(rng, 3, 6)
    lengths = _leaf(rng, (4, 3), 0.01, 0.99)
    f = _leaf(rng, (4, 6))
    recon = _leaf(rng, (4, 1, 3, 3), 0.0, 1.0)
    target = rng.uniform(0.0, 1.0, size=(4, 1, 3, 3))
    classes, flags = rng.integers(0, 3, size=4), np.array([1, 0, 0, 1])
    weights = LossWeights(lambda1=0.5, lambda2=0.5)
    fn = lambda: total_loss(lengths, classes, f, flags, bank, recon, target, weights)
    return fn, [("lengths", lengths), ("f", f), ("recon", recon)]


def tiny_model_config() -> ModelConfig:
    """Modelo completo diminuto: 8x8 gris, K=2, capsulas de 4 dimensiones"""
    return ModelConfig(
        num_classes=2, hr_size=(8, 8), channels=1, conv_filters=[4], conv_kernel=3,
        conv_padding=1, primary_caps_types=2, caps_dim_primary=4, primary_kernel=3,
        primary_stride=2, caps_dim_class=4, recon_hidden=(8, 8), batch_size=4,
        detach_agreement=False,
    )


def _end_to_end(rng):
    config = tiny_model_config()
    model = build(config, int(rng.integers(0, 2**31 - 1)))
    x = rng.uniform(0.0, 1.0, size=(4, 1, 8, 8))
    hr = rng.uniform(0.0, 1.0, size=(4, 1, 8, 8))
    labels, flags = np.array([0, 1, 1, 0]), np.array([1, 0, 1, 0])
    # anclas no nulas para que la perdida de ancla tenga gradiente en f
    model.anchor_bank.anchors.data = rng.normal(size=model.anchor_bank.anchors.shape)
    weights = LossWeights(lambda1=0.5, lambda2=0.5)

    def fn():
        out = model(Tensor(x), target_class=labels)
        return total_loss(out.class_caps.lengths, labels, out.features, flags,
                          model.anchor_bank, out.recon, hr, weights)

    params = [(n, p) for n, p in model.named_parameters().items() if n != "anchor_bank.anchors"]
    return fn, params


def default_cases() -> List[GradCase]:
    return [
        GradCase("add", _binary(ops.add)),
        GradCase("sub", _binary(ops.sub)),
        GradCase("mul", _binary(ops.mul)),
        GradCase("div", _div),
        GradCase("scale", _unary(lambda x: ops.scale(x, 1.7))),
        GradCase("add_scalar", _unary(lambda x: ops.add_scalar(x, 0.3))),
        GradCase("add_bias", _add_bias),
        GradCase("relu", _unary(ops.relu)),
        GradCase("max0", _unary(ops.max0)),
        GradCase("sigmoid", _unary(ops.sigmoid, low=-3.0, high=3.0)),
        GradCase("sqrt", _unary(ops.sqrt, low=0.5, high=2.0)),
        GradCase("softmax", _unary(lambda x: ops.softmax(x, axis=1))),
        GradCase("squared_norm", _unary(lambda x: ops.squared_norm(x, axis=-1))),
        GradCase("l2_norm", _unary(lambda x: ops.l2_norm(x, axis=-1))),
        GradCase("sum", _unary(lambda x: ops.sum(x, axis=1), shape=(2, 3, 4))),
        GradCase("mean", _unary(lambda x: ops.mean(x, axis=1), shape=(2, 3, 4))),
        GradCase("reshape", _unary(lambda x: ops.reshape(x, (6, 4)), shape=(2, 3, 4))),
        GradCase("transpose", _unary(lambda x: ops.transpose(x, (2, 0, 1)), shape=(2, 3, 4))),
        GradCase("slice", _unary(lambda x: ops.slice(x, (slice(1, None), slice(None, None, 2))))),
        GradCase("concat", _concat),
        GradCase("gather_rows", _gather_rows),
        GradCase("matmul", _matmul),
        GradCase("einsum", _einsum),
        GradCase("conv2d", _conv2d),
        GradCase("batch_norm_train", _batch_norm_train),
        GradCase("batch_norm_eval", _batch_norm_eval),
        GradCase("squash", _unary(squash, shape=(2, 5, 4))),
        GradCase("primary_capsules", _primary_capsules),
        GradCase("route", _route),
        GradCase("margin_loss", _margin_loss),
        GradCase("hr_anchor_loss_mixed", _hr_anchor_loss_mixed),
        GradCase("hr_anchor_loss_hr", _hr_anchor_loss_hr),
        GradCase("targeted_reconstruction_loss", _targeted_recon),
        GradCase("total_loss", _total_loss),
        GradCase("end_to_end", _end_to_end, max_coords=6),
    ]


def _scaled_rule(name: str):
    original = BACKWARD_RULES[name]

    def broken(g, rec):
        return [None if gi is None else gi * INJECTED_FACTOR for gi in original(g, rec)]

    return broken


# =========================
# Suite
# =========================
def run_case(case: GradCase, trials: int, eps: float, tol: float, seed: int, index: int) -> CaseResult:
    worst, worst_input, checked, skipped = 0.0, None, 0, 0
    for trial in range(trials):
        rng = np.random.default_rng([seed, index, trial])
        fn, leaves = case.build(rng)
        for leaf_name, leaf in leaves:
            report: GradCheckReport = grad_check_param(
                fn, leaf, eps=eps, tol=tol, name=f"{case.name}.{leaf_name}",
                max_coords=case.max_coords, rng=rng,
            )
            checked += report.checked
            skipped += report.skipped_kinks
            if report.max_rel_error > worst or worst_input is None:
                worst = max(worst, report.max_rel_error)
                worst_input = f"{leaf_name} (prueba {trial}, coord {report.worst_index})"
    return CaseResult(name=case.name, trials=trials, max_rel_error=worst, worst_input=worst_input,
                      checked=checked, skipped_kinks=skipped, passed=worst <= tol)


def run_suite(
    tol: float = DEFAULT_TOL,
    eps: float = DEFAULT_EPS,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    only: Optional[Sequence[str]] = None,
    inject_bug: Optional[str] = None,
) -> SuiteReport:
    """
    Ejecuta la suite completa en float64

    Args:
        tol: tolerancia de error relativo
        only: nombres de casos a ejecutar (por defecto todos)
        inject_bug: nombre de una op cuya regla se altera (control negativo)
    """
    cases = default_cases()
    if only:
        unknown = set(only) - {c.name for c in cases}
        if unknown:
            raise ConfigError(f"Casos desconocidos: {sorted(unknown)}")
        cases = [c for c in cases if c.name in set(only)]
    if inject_bug is not None and inject_bug not in BACKWARD_RULES:
        raise ConfigError(f"Op sin regla registrada: {inject_bug}")

    start = time.perf_counter()
    results: List[CaseResult] = []
    with ExitStack() as stack:
        stack.enter_context(precision("float64"))
        if inject_bug is not None:
            stack.enter_context(override_backward(inject_bug, _scaled_rule(inject_bug)))
            logger.warning(f"[WARN] Regla de '{inject_bug}' alterada a proposito (x{INJECTED_FACTOR})")
        for index, case in enumerate(cases):
            result = run_case(case, trials, eps, tol, seed, index)
            tag = "[OK]" if result.passed else "[ERR]"
            logger.info(f"{tag} {case.name}: max_rel={result.max_rel_error:.3e} "
                        f"checked={result.checked} skipped={result.skipped_kinks}")
            results.append(result)

    worst = max(results, key=lambda r: r.max_rel_error) if results else None
    report = SuiteReport(
        tol=tol, eps=eps, trials=trials, seconds=time.perf_counter() - start, results=results,
        passed=all(r.passed for r in results),
        worst_case=worst.name if worst else None,
        worst_error=worst.max_rel_error if worst else 0.0,
        injected_bug=inject_bug,
    )
    logger.info(f"[STATS] gradcheck: {sum(r.passed for r in results)}/{len(results)} casos OK "
                f"en {report.seconds:.1f}s (peor: {report.worst_case} {report.worst_error:.3e})")
    return report


def check_suite(report: SuiteReport) -> None:
    """Lanza GradCheckFailure nombrando al peor caso si algo fallo"""
    if report.passed:
        return
    failed: Dict[str, CaseResult] = {r.name: r for r in report.results if not r.passed}
    worst = failed[report.worst_case] if report.worst_case in failed else next(iter(failed.values()))
    raise GradCheckFailure(
        f"{len(failed)} casos superan tol={report.tol:g}; peor: {worst.name} "
        f"max_rel={worst.max_rel_error:.3e} en {worst.worst_input}"
    )
