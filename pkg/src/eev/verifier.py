"""End-to-end verification: encode, solve, decode, validate, batch, bench.

Every counterexample that leaves this module has been re-validated through
exact inference; a decoded input that fails validation is a soundness bug and
raises immediately (with a dump of the offending system) rather than being
reported.
"""

from __future__ import annotations

import json
import math
import os
import statistics
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import backends, model as bnn
from .encoder import Encoder, pixel_interval
from .solver import Solver, SolverConfig

ROBUST = "ROBUST"
COUNTEREXAMPLE = "COUNTEREXAMPLE"
TIMEOUT = "TIMEOUT"


class SoundnessError(RuntimeError):
    """A decoded counterexample failed exact validation (internal bug)."""


class DifferentialError(RuntimeError):
    """Two backends produced different verdicts on the same query."""


class OracleGuardError(ValueError):
    """Brute-force enumeration would exceed the search-space guard."""


@dataclass
class Counterexample:
    input_q: np.ndarray
    predicted: int
    source_class: int

    def to_dict(self, eps: float) -> dict:
        return {
            "input_q": [int(v) for v in self.input_q],
            "eps": float(eps),
            "source_class": int(self.source_class),
            "predicted": int(self.predicted),
        }


@dataclass
class VerifyOutcome:
    status: str
    counterexample: Counterexample | None = None
    build_time: float = 0.0
    solve_time: float = 0.0
    solver_stats: dict = field(default_factory=dict)
    naturally_correct: bool = True


def _as_models(models) -> list:
    return [models] if isinstance(models, bnn.BnnModel) else list(models)


def attack_class(models, q, label: int, ensemble: bool) -> int | None:
    """Class realizing a successful attack at input q, or None.

    Single model: any class scoring strictly above the label (ties are not
    attacks); reported class is the exact argmax. Ensemble: the common strict
    argmax of all members when it differs from the label.
    """
    models = _as_models(models)
    if not ensemble:
        res = bnn.infer(models[0], q)
        return res.predicted if res.misclassifies(label) else None
    agreed = None
    for m in models:
        logits = bnn.infer(m, q).logits
        best = logits.index(max(logits))
        if any(v >= logits[best] for i, v in enumerate(logits) if i != best):
            return None  # no strict argmax: model rejects
        if agreed is None:
            agreed = best
        elif agreed != best:
            return None
    return agreed if agreed != label else None


def _dump_unsound(models, system, assignment, q) -> str:
    out = tempfile.mkdtemp(prefix="eev-unsound-")
    for i, m in enumerate(models):
        bnn.save_model(m, os.path.join(out, f"model{i}.json"))
    backends.write_native(system, os.path.join(out, "system.eevc"))
    with open(os.path.join(out, "assignment.json"), "w") as fh:
        json.dump({"decoded_input": [int(v) for v in q],
                   "assignment": [bool(b) for b in assignment]}, fh)
    return out


def verify_one(models, x0, label: int, eps: float,
               timeout: float | None = None,
               encoder: Encoder | None = None,
               solver_config: SolverConfig | None = None,
               backend: str = "native",
               ensemble: bool | None = None) -> VerifyOutcome:
    """Verify one image: ROBUST, COUNTEREXAMPLE (validated) or TIMEOUT."""
    models = _as_models(models)
    if ensemble is None:
        ensemble = len(models) > 1
    for m in models[1:]:
        if (m.input_shape != models[0].input_shape
                or float(m.quant_step) != float(models[0].quant_step)):
            raise bnn.ShapeError(
                "ensemble members must share input_shape and quant_step")
    if backend not in ("native", "cnf"):
        raise ValueError(f"unknown backend {backend!r}")
    encoder = encoder or Encoder()
    solver_config = solver_config or SolverConfig()

    q0 = bnn.quantize_input(models[0], x0)
    t0 = time.perf_counter()
    clean_attack = attack_class(models, q0, label, ensemble)
    if clean_attack is not None:
        return VerifyOutcome(
            status=COUNTEREXAMPLE,
            counterexample=Counterexample(q0, clean_attack, label),
            build_time=time.perf_counter() - t0, solve_time=0.0,
            naturally_correct=False)

    system = encoder.encode_query(models, x0, eps, label, ensemble=ensemble)
    if backend == "cnf":
        system = backends.cnf_lower(system)
    solver = Solver(solver_config)
    solver.new_vars(system.num_vars)
    ok = True
    for clause in system.all_clauses():
        ok = solver.add_clause(clause)
        if not ok:
            break
    if ok:
        for card in system.all_cards():
            if not solver.add_card(card.target, card.operands, card.bound):
                break
    build_time = time.perf_counter() - t0

    res = solver.solve(max_seconds=timeout)
    if res.status == "UNSAT":
        return VerifyOutcome(ROBUST, build_time=build_time,
                             solve_time=res.stats["solve_time"],
                             solver_stats=res.stats)
    if res.status == "UNKNOWN":
        return VerifyOutcome(TIMEOUT, build_time=build_time,
                             solve_time=res.stats["solve_time"],
                             solver_stats=res.stats)
    q = system.decode_input(res.model)
    predicted = attack_class(models, q, label, ensemble)
    in_ball = all(
        lo <= q[p] <= hi
        for p, (lo, hi) in enumerate(
            pixel_interval(x, eps, models[0].quant_step)
            for x in np.asarray(x0, dtype=np.float64).reshape(-1)))
    if predicted is None or not in_ball:
        dump = _dump_unsound(models, system, res.model, q)
        raise SoundnessError(
            f"decoded input fails exact validation (predicted={predicted}, "
            f"in_ball={in_ball}); dump written to {dump}")
    return VerifyOutcome(
        COUNTEREXAMPLE,
        counterexample=Counterexample(q, predicted, label),
        build_time=build_time, solve_time=res.stats["solve_time"],
        solver_stats=res.stats)


# --- brute-force oracle -------------------------------------------------------

def _strict_diff_masks(model, Z, label):
    """Boolean mask over grid rows: some class beats `label` strictly.

    Z: integer score sums per class, shape (rows, classes). Thresholds are
    exact: the float constants are compared via their rational values.
    """
    layer = model.layers[-1]
    aff = bnn.bn_to_affine(layer)
    scale = Fraction(float(model.quant_step)) if len(model.layers) == 1 \
        else Fraction(1)
    kk = Fraction(float(aff.k[0])) * scale
    rows = Z.shape[0]
    mask = np.zeros(rows, dtype=bool)
    for i in range(model.num_classes):
        if i == label:
            continue
        db = Fraction(float(aff.b[i])) - Fraction(float(aff.b[label]))
        diff = Z[:, i] - Z[:, label]
        if kk == 0:
            if db > 0:
                mask[:] = True
            continue
        beta = -db / kk
        if kk > 0:
            mask |= diff >= math.floor(beta) + 1
        else:
            mask |= diff <= math.ceil(beta) - 1
    return mask


def _strict_argmax_table(model, Z):
    """Per-row strict argmax class (or -1 when tied), exact thresholds."""
    layer = model.layers[-1]
    aff = bnn.bn_to_affine(layer)
    scale = Fraction(float(model.quant_step)) if len(model.layers) == 1 \
        else Fraction(1)
    kk = Fraction(float(aff.k[0])) * scale
    n = model.num_classes
    rows = Z.shape[0]
    out = np.full(rows, -1, dtype=np.int64)
    for i in range(n):
        beats_all = np.ones(rows, dtype=bool)
        for j in range(n):
            if i == j:
                continue
            db = Fraction(float(aff.b[i])) - Fraction(float(aff.b[j]))
            diff = Z[:, i] - Z[:, j]
            if kk == 0:
                beats = np.full(rows, db > 0)
            elif kk > 0:
                beats = diff >= math.floor(-db / kk) + 1
            else:
                beats = diff <= math.ceil(-db / kk) - 1
            beats_all &= beats
            if not beats_all.any():
                break
        out[beats_all] = i
    return out


def _batch_scores(model, Q):
    """Integer class-score sums for a batch of quantized inputs (exact)."""
    x = Q.astype(np.int64)
    for li, layer in enumerate(model.layers):
        mat = np.zeros((layer.out_size, layer.in_size), dtype=np.int64)
        for unit, taps in bnn.unit_taps(layer):
            for j, w in taps:
                mat[unit, j] += w
        z = x @ mat.T
        if layer.is_output:
            return z
        aff = bnn.bn_to_affine(layer)
        scale = Fraction(float(model.quant_step)) if li == 0 else Fraction(1)
        bits = np.zeros_like(z)
        for u in range(layer.out_size):
            ch = layer.bn_index(u)
            op, bound = bnn.act_bound(aff.k[ch], aff.b[ch], scale)
            if op == "ge":
                bits[:, u] = z[:, u] >= bound
            elif op == "le":
                bits[:, u] = z[:, u] <= bound
            else:
                bits[:, u] = 1 if bound else 0
        x = bits
    raise AssertionError("model had no output layer")


def brute_force_verify(models, x0, label: int, eps: float,
                       max_points: int = 1 << 20,
                       ensemble: bool | None = None) -> VerifyOutcome:
    """Enumerate the whole quantized perturbation ball; exact and independent
    of the encode/solve path. The first misclassified input (lexicographic in
    pixel order) wins."""
    models = _as_models(models)
    if ensemble is None:
        ensemble = len(models) > 1
    flat = np.asarray(x0, dtype=np.float64).reshape(-1)
    step = models[0].quant_step
    ranges = [pixel_interval(x, eps, step) for x in flat]
    sizes = [hi - lo + 1 for lo, hi in ranges]
    total = 1
    for s in sizes:
        total *= s
        if total > max_points:
            raise OracleGuardError(
                f"perturbation grid exceeds {max_points} points")
    t0 = time.perf_counter()
    axes = [np.arange(lo, hi + 1, dtype=np.int64) for lo, hi in ranges]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    Q = grid.reshape(total, len(flat))

    if not ensemble:
        Z = _batch_scores(models[0], Q)
        mask = _strict_diff_masks(models[0], Z, label)
    else:
        agreed = None
        for m in models:
            table = _strict_argmax_table(m, _batch_scores(m, Q))
            agreed = table if agreed is None else np.where(
                agreed == table, agreed, -1)
        mask = (agreed >= 0) & (agreed != label)
    elapsed = time.perf_counter() - t0
    hits = np.flatnonzero(mask)
    naturally_correct = attack_class(models, bnn.quantize_input(
        models[0], flat), label, ensemble) is None
    if hits.size == 0:
        return VerifyOutcome(ROBUST, solve_time=elapsed,
                             naturally_correct=naturally_correct)
    q = Q[hits[0]]
    predicted = attack_class(models, q, label, ensemble)
    assert predicted is not None, "vectorized oracle disagrees with infer()"
    return VerifyOutcome(
        COUNTEREXAMPLE, counterexample=Counterexample(q, predicted, label),
        solve_time=elapsed, naturally_correct=naturally_correct)


# --- batch runs -----------------------------------------------------------------

@dataclass
class BatchRow:
    index: int
    label: int
    status: str
    naturally_correct: bool
    predicted: int | None
    input_q: list | None
    build_time: float
    solve_time: float
    decisions: int
    conflicts: int
    error: str | None = None


@dataclass
class BatchReport:
    rows: list
    eps: float
    timeout: float | None
    seed: int
    external: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.rows)

    def aggregates(self) -> dict:
        n = max(1, self.n)
        robust = sum(r.status == ROBUST for r in self.rows)
        natural = sum(r.naturally_correct for r in self.rows)
        timeouts = sum(r.status == TIMEOUT for r in self.rows)
        cex = sum(r.status == COUNTEREXAMPLE for r in self.rows)
        solve = [r.solve_time for r in self.rows]
        build = [r.build_time for r in self.rows]
        return {
            "images": self.n,
            "verifiable_accuracy": robust / n,
            "natural_accuracy": natural / n,
            "timeout_rate": timeouts / n,
            "counterexample_rate": cex / n,
            "mean_solve_time": sum(solve) / n,
            "max_solve_time": max(solve, default=0.0),
            "mean_build_time": sum(build) / n,
        }

    def to_dict(self, include_timing: bool = True) -> dict:
        rows = []
        for r in self.rows:
            row = {
                "index": r.index,
                "label": r.label,
                "status": r.status,
                "naturally_correct": r.naturally_correct,
                "predicted": r.predicted,
                "input_q": r.input_q,
                "decisions": r.decisions,
                "conflicts": r.conflicts,
                "error": r.error,
            }
            if include_timing:
                row["build_time"] = r.build_time
                row["solve_time"] = r.solve_time
            rows.append(row)
        agg = self.aggregates()
        if not include_timing:
            agg = {k: v for k, v in agg.items() if "time" not in k}
        out = {
            "eps": self.eps,
            "timeout": self.timeout,
            "seed": self.seed,
            "aggregates": agg,
            "rows": rows,
        }
        if self.external:
            out["external"] = self.external
        return out

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=1,
                          sort_keys=True)

    def table(self) -> str:
        agg = self.aggregates()
        lines = [
            f"images              {agg['images']}",
            f"verifiable accuracy {agg['verifiable_accuracy']:.2%}",
            f"natural accuracy    {agg['natural_accuracy']:.2%}",
            f"timeout rate        {agg['timeout_rate']:.2%}",
            f"mean build time     {agg['mean_build_time']:.4f} s",
            f"mean solve time     {agg['mean_solve_time']:.4f} s",
            f"max solve time      {agg['max_solve_time']:.4f} s",
        ]
        for key, val in self.external.items():
            lines.append(f"{key:<19} {val}")
        return "\n".join(lines)


_WORKER_STATE: dict = {}


def _batch_init(models, eps, timeout, seed, ensemble):
    _WORKER_STATE["models"] = models
    _WORKER_STATE["encoder"] = Encoder()
    _WORKER_STATE["eps"] = eps
    _WORKER_STATE["timeout"] = timeout
    _WORKER_STATE["seed"] = seed
    _WORKER_STATE["ensemble"] = ensemble


def _batch_job(args):
    idx, x0, label = args
    st = _WORKER_STATE
    try:
        out = verify_one(st["models"], x0, int(label), st["eps"],
                         timeout=st["timeout"], encoder=st["encoder"],
                         solver_config=SolverConfig(seed=st["seed"]),
                         ensemble=st["ensemble"])
        cex = out.counterexample
        return BatchRow(
            index=idx, label=int(label), status=out.status,
            naturally_correct=out.naturally_correct,
            predicted=None if cex is None else int(cex.predicted),
            input_q=None if cex is None else [int(v) for v in cex.input_q],
            build_time=out.build_time, solve_time=out.solve_time,
            decisions=out.solver_stats.get("decisions", 0),
            conflicts=out.solver_stats.get("conflicts", 0))
    except SoundnessError:
        raise
    except Exception as exc:  # per-image errors recorded, batch continues
        return BatchRow(index=idx, label=int(label), status="ERROR",
                        naturally_correct=False, predicted=None, input_q=None,
                        build_time=0.0, solve_time=0.0, decisions=0,
                        conflicts=0, error=f"{type(exc).__name__}: {exc}")


def verify_batch(models, images, labels, eps: float,
                 timeout: float | None = None, parallelism: int = 1,
                 seed: int = 0, ensemble: bool | None = None) -> BatchReport:
    """Verify a dataset; deterministic aggregates given seed and timeout."""
    models = _as_models(models)
    if ensemble is None:
        ensemble = len(models) > 1
    images = np.asarray(images, dtype=np.float64)
    flat = images.reshape(len(images), -1)
    jobs = [(i, flat[i], int(labels[i])) for i in range(len(flat))]
    if parallelism <= 1:
        _batch_init(models, eps, timeout, seed, ensemble)
        rows = [_batch_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(
                max_workers=parallelism, initializer=_batch_init,
                initargs=(models, eps, timeout, seed, ensemble)) as pool:
            rows = list(pool.map(_batch_job, jobs))
    rows.sort(key=lambda r: r.index)
    return BatchReport(rows=rows, eps=float(eps), timeout=timeout, seed=seed)


# --- backend comparison ------------------------------------------------------------

@dataclass
class BenchReport:
    rows: list  # (index, status_native, t_native, status_cnf, t_cnf)
    timeout: float | None

    def summary(self) -> dict:
        out = {}
        for name, col in (("native", 2), ("cnf", 4)):
            ts = [r[col] for r in self.rows]
            out[name] = {
                "min": min(ts, default=0.0),
                "median": statistics.median(ts) if ts else 0.0,
                "mean": sum(ts) / len(ts) if ts else 0.0,
                "max": max(ts, default=0.0),
            }
        med_n = out["native"]["median"]
        out["median_speedup"] = (out["cnf"]["median"] / med_n
                                 if med_n > 0 else float("inf"))
        return out

    def agreement(self) -> bool:
        return all(r[1] == r[3] for r in self.rows
                   if TIMEOUT not in (r[1], r[3]))

    def table(self) -> str:
        s = self.summary()
        lines = ["backend   min      median   mean     max"]
        for name in ("native", "cnf"):
            b = s[name]
            lines.append(f"{name:<8} {b['min']:>8.4f} {b['median']:>8.4f} "
                         f"{b['mean']:>8.4f} {b['max']:>8.4f}")
        lines.append(f"median speedup: {s['median_speedup']:.1f}x")
        return "\n".join(lines)


def bench_compare(models, queries, timeout: float | None = None,
                  seed: int = 0) -> BenchReport:
    """Same queries through native vs CNF-lowered solving on one solver core.

    queries: list of (x0, label, eps). Verdict disagreement on a non-timeout
    pair is a differential bug and raises immediately.
    """
    rows = []
    encoder = Encoder()
    for idx, (x0, label, eps) in enumerate(queries):
        out_n = verify_one(models, x0, label, eps, timeout=timeout,
                           encoder=encoder,
                           solver_config=SolverConfig(seed=seed))
        out_c = verify_one(models, x0, label, eps, timeout=timeout,
                           encoder=encoder, backend="cnf",
                           solver_config=SolverConfig(seed=seed))
        if (TIMEOUT not in (out_n.status, out_c.status)
                and out_n.status != out_c.status):
            raise DifferentialError(
                f"query {idx}: native={out_n.status} cnf={out_c.status}")
        rows.append((idx, out_n.status, out_n.solve_time,
                     out_c.status, out_c.solve_time))
    return BenchReport(rows=rows, timeout=timeout)
