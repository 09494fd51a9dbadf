"""Lower a binarized network plus a robustness query to a constraint system.

The output mixes plain disjunctive clauses with reified cardinality
constraints `y <-> (sum of literals <= bound)`. Literals are DIMACS-style
signed ints; the module-level TRUE/FALSE singletons stand for constant
literals and are folded away before anything reaches the solver.

Bounds are computed in exact rational arithmetic from the stored floats, so
the encoding and exact inference agree on every decision threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import model as bnn
from .model import BnnModel, bn_to_affine, unit_taps


class _Const:
    """Constant literal; TRUE and FALSE are the only instances."""

    __slots__ = ("name",)

    def __init__(self, name):
        self.name = name

    def __repr__(self):
        return self.name


TRUE = _Const("TRUE")
FALSE = _Const("FALSE")


def neg(lit):
    """Negate a literal; an involution with neg(TRUE) == FALSE."""
    if lit is TRUE:
        return FALSE
    if lit is FALSE:
        return TRUE
    return -lit


def is_const(lit) -> bool:
    return lit is TRUE or lit is FALSE


@dataclass
class ReifiedCardinality:
    """target <-> (sum of operands <= bound).

    Operands form a multiset: repeated literals count with multiplicity.
    The bound may be negative or exceed the operand count only transiently;
    the encoder folds such constraints into constants before emitting them.
    """

    target: int
    operands: list
    bound: int

    def key(self):
        return (self.target, tuple(self.operands), self.bound)


@dataclass
class ThermometerBlock:
    """Unary encoding of one pixel: value = base + number of true bits.

    Bits are ordered t1 >= t2 >= ... by pairwise clauses, so every value in
    [base, base + len(bits)] has exactly one satisfying block assignment.
    """

    pixel: int
    base: int
    bits: list[int]

    @property
    def hi(self) -> int:
        return self.base + len(self.bits)


@dataclass
class ConstraintSystem:
    """Variables, clauses, cardinality constraints and the query metadata.

    Network-only constraints live in shared_clauses/shared_cards; those lists
    are owned by the per-model cache and are reused (same objects) across
    queries on the same model(s).
    """

    num_vars: int = 0
    clauses: list = field(default_factory=list)
    cards: list = field(default_factory=list)
    shared_clauses: list = field(default_factory=list)
    shared_cards: list = field(default_factory=list)
    input_blocks: list = field(default_factory=list)
    activation_var_map: dict = field(default_factory=dict)
    goal_lits: list = field(default_factory=list)
    from_cache: bool = False

    def all_clauses(self):
        yield from self.shared_clauses
        yield from self.clauses

    def all_cards(self):
        yield from self.shared_cards
        yield from self.cards

    @property
    def num_clauses(self) -> int:
        return len(self.shared_clauses) + len(self.clauses)

    @property
    def num_cards(self) -> int:
        return len(self.shared_cards) + len(self.cards)

    def decode_input(self, assignment) -> np.ndarray:
        """Map a satisfying assignment back to the integer grid input.

        `assignment` maps var -> bool (index 1..num_vars, e.g. a list with a
        dummy slot 0).
        """
        out = np.zeros(len(self.input_blocks), dtype=np.int64)
        for blk in self.input_blocks:
            out[blk.pixel] = blk.base + sum(
                1 for v in blk.bits if assignment[v])
        return out


class VarPool:
    """Monotone variable allocator."""

    def __init__(self, start: int = 0):
        self.count = start

    def new_var(self) -> int:
        self.count += 1
        return self.count

    def new_vars(self, n: int) -> list[int]:
        return [self.new_var() for _ in range(n)]


def normalize_ge(operands, bound):
    """Rewrite (sum operands >= bound) to <=-form: (sum of negations <= n-b)."""
    return [neg(o) for o in operands], len(operands) - bound


def _emit_unit(pool, clauses, cards, taps, kk: Fraction, b: Fraction,
               strict: bool, out_var=None):
    """Encode one unit `act = (kk * (sum_j w_j * value_j) + b {>=,>} 0)`.

    taps: list of ((base, bits), weight) with integer weight != 0; the value
    of an input group is base + (number of true bits). Returns the output
    literal (a var or TRUE/FALSE). When out_var is given the unit must use
    that variable: constant folds become unit clauses instead of constants.
    """
    ops = []
    base_total = 0
    b_sat = 0
    for (base, bits), w in taps:
        base_total += w * base
        if w > 0:
            ops.extend(bits * w)
        else:
            nbits = [neg(t) for t in bits]
            ops.extend(nbits * (-w))
            b_sat += w * len(bits)

    def finish(value):
        if out_var is None:
            return TRUE if value else FALSE
        clauses.append([out_var if value else -out_var])
        return out_var if value else -out_var

    if kk == 0:
        return finish(b > 0 if strict else b >= 0)
    beta = (-b) / kk - b_sat - base_total
    n = len(ops)
    if kk > 0:
        g = math.floor(beta) + 1 if strict else math.ceil(beta)
        if g <= 0:
            return finish(True)
        if g > n:
            return finish(False)
        ops, bound = normalize_ge(ops, g)
    else:
        f = math.ceil(beta) - 1 if strict else math.floor(beta)
        if f >= n:
            return finish(True)
        if f < 0:
            return finish(False)
        bound = f
    y = out_var if out_var is not None else pool.new_var()
    cards.append(ReifiedCardinality(target=y, operands=ops, bound=bound))
    return y


def encode_layer(pool, clauses, cards, layer, affine, groups,
                 k_scale: Fraction = Fraction(1), out_vars=None):
    """Encode one hidden layer; returns the list of output literals.

    groups: one (base, bits) pair per flat input position. Conv receptive
    fields are expanded here; padded positions simply contribute no taps.
    """
    out = []
    group_list = list(groups)
    for unit, taps in unit_taps(layer):
        ch = layer.bn_index(unit)
        kk = Fraction(float(affine.k[ch])) * k_scale
        b = Fraction(float(affine.b[ch]))
        unit_taps_g = [(group_list[j], w) for j, w in taps]
        ov = out_vars[unit] if out_vars is not None else None
        out.append(_emit_unit(pool, clauses, cards, unit_taps_g, kk, b,
                              strict=False, out_var=ov))
    return out


def encode_input_space(pool, clauses, x0, eps, model: BnnModel):
    """Per-pixel thermometer blocks covering the quantized perturbation ball.

    The allowed integer values for pixel p are the quantizations of
    [max(0, x0-eps), min(1, x0+eps)], computed exactly. Returns
    (blocks, groups) where groups feed the first layer.
    """
    step = Fraction(float(model.quant_step))
    e = Fraction(float(eps))
    flat = np.asarray(x0, dtype=np.float64).reshape(-1)
    if flat.size != model.input_size:
        raise bnn.ShapeError(
            f"query image has {flat.size} values, model expects "
            f"{model.input_size}")
    blocks = []
    groups = []
    for p, xv in enumerate(flat):
        x = Fraction(float(xv))
        lo = bnn.round_half_away(max(Fraction(0), x - e) / step)
        hi = bnn.round_half_away(min(Fraction(1), x + e) / step)
        bits = pool.new_vars(hi - lo)
        for i in range(len(bits)):
            for j in range(i + 1, len(bits)):
                clauses.append([bits[i], -bits[j]])
        blocks.append(ThermometerBlock(pixel=p, base=lo, bits=bits))
        groups.append((lo, bits))
    return blocks, groups


def pixel_interval(x0_value, eps, quant_step) -> tuple[int, int]:
    """Integer range [lo, hi] a single pixel may take; shared with the oracle."""
    step = Fraction(float(quant_step))
    e = Fraction(float(eps))
    x = Fraction(float(x0_value))
    lo = bnn.round_half_away(max(Fraction(0), x - e) / step)
    hi = bnn.round_half_away(min(Fraction(1), x + e) / step)
    return lo, hi


def _score_diff_lit(pool, clauses, cards, layer, affine, groups, k_scale,
                    cls_i, cls_j):
    """Literal for (score_i - score_j > 0) on an output layer.

    The weight row is the difference of the two class rows, with entries in
    {-2..2}; coefficient-2 taps insert the operand twice. Strictness over
    integer sums bumps an exactly-integral bound by one.
    """
    wmat = layer.weight_sign
    diff = wmat[cls_i].astype(np.int64) - wmat[cls_j].astype(np.int64)
    taps = [(groups[j], int(diff[j])) for j in np.flatnonzero(diff)]
    kk = Fraction(float(affine.k[0])) * k_scale
    b = Fraction(float(affine.b[cls_i])) - Fraction(float(affine.b[cls_j]))
    return _emit_unit(pool, clauses, cards, taps, kk, b, strict=True)


def encode_attack_goal(pool, clauses, cards, layer, affine, groups, k_scale,
                       target_class: int):
    """Untargeted attack goal: some class scores strictly above the target.

    Emits one reified constraint per rival class plus a single disjunctive
    goal clause. Returns the list of rival literals (constants folded).
    """
    n_cls = layer.weight_sign.shape[0]
    rivals = []
    for i in range(n_cls):
        if i == target_class:
            continue
        rivals.append(_score_diff_lit(pool, clauses, cards, layer, affine,
                                      groups, k_scale, i, target_class))
    if any(r is TRUE for r in rivals):
        return rivals  # goal trivially satisfiable; no clause needed
    clause = [r for r in rivals if r is not FALSE]
    clauses.append(clause)  # empty clause == unsatisfiable at encode time
    return rivals


def encode_ensemble_goal(pool, clauses, cards, per_model, target_class: int,
                         num_classes: int):
    """Attack goal for an ensemble that rejects unless all models agree.

    per_model: list of (layer, affine, groups, k_scale) for each member's
    output layer. For each class i != target, f_i <-> AND over models m and
    classes j != i of (score^m_i - score^m_j > 0); the goal is OR of f_i.
    """
    f_lits = []
    for i in range(num_classes):
        if i == target_class:
            continue
        conj = []
        for layer, affine, groups, k_scale in per_model:
            for j in range(num_classes):
                if j == i:
                    continue
                conj.append(_score_diff_lit(pool, clauses, cards, layer,
                                            affine, groups, k_scale, i, j))
        if any(r is FALSE for r in conj):
            f_lits.append(FALSE)
            continue
        conj = [r for r in conj if r is not TRUE]
        if not conj:
            f_lits.append(TRUE)
            continue
        f = pool.new_var()
        for r in conj:
            clauses.append([-f, r])
        clauses.append([f] + [neg(r) for r in conj])
        f_lits.append(f)
    if any(f is TRUE for f in f_lits):
        return f_lits
    clauses.append([f for f in f_lits if f is not FALSE])
    return f_lits


@dataclass
class _CachedModel:
    """Input-independent part of one model's encoding.

    Variables 1..num_vars are reserved for first-layer outputs and everything
    derived from them; deeper-layer constraints live in clauses/cards and are
    shared by reference across queries.
    """

    first_out_vars: list | None  # vars reserved for layer-0 outputs
    last_hidden: list | None     # literals feeding the output layer


@dataclass
class _CacheEntry:
    num_vars: int
    clauses: list
    cards: list
    models: list  # _CachedModel per ensemble member
    activation_var_map: dict


class Encoder:
    """Query encoder with a per-model constraint cache.

    The cache key is the tuple of model content hashes; a hit reuses the
    network-only clause/card lists by reference, so repeated queries on the
    same model(s) rebuild only the input blocks, the first layer and the goal.
    """

    def __init__(self):
        self._cache: dict = {}
        self.stats = {"cache_hits": 0, "cache_misses": 0}

    def _build_network(self, models) -> _CacheEntry:
        pool = VarPool(0)
        clauses: list = []
        cards: list = []
        cached_models = []
        act_map: dict = {}
        for mi, mdl in enumerate(models):
            if len(mdl.layers) == 1:
                cached_models.append(_CachedModel(None, None))
                continue
            first = mdl.layers[0]
            first_vars = pool.new_vars(first.out_size)
            for u, v in enumerate(first_vars):
                act_map[(mi, 0, u)] = v
            cur = [(0, [v]) for v in first_vars]
            for li in range(1, len(mdl.layers) - 1):
                layer = mdl.layers[li]
                outs = encode_layer(pool, clauses, cards, layer,
                                    bn_to_affine(layer), cur)
                for u, lit in enumerate(outs):
                    act_map[(mi, li, u)] = lit
                cur = [((1, []) if lit is TRUE else (0, []))
                       if is_const(lit) else (0, [lit]) for lit in outs]
            cached_models.append(_CachedModel(first_vars,
                                              [g for g in cur]))
        return _CacheEntry(num_vars=pool.count, clauses=clauses, cards=cards,
                           models=cached_models, activation_var_map=act_map)

    def encode_query(self, models, x0, eps, target_class: int,
                     use_cache: bool = True,
                     ensemble: bool | None = None) -> ConstraintSystem:
        """Encode a robustness query for one model or an ensemble.

        models: a BnnModel or a list of them (shared input space). The system
        is satisfiable iff some quantized input in the perturbation ball makes
        the attack goal true. With ensemble=None a list of two or more models
        gets the all-must-agree goal; pass ensemble=True to force that goal
        even for a single member (strict argmax agreement).
        """
        if isinstance(models, BnnModel):
            models = [models]
        if ensemble is None:
            ensemble = len(models) > 1
        step = models[0].quant_step
        shape = models[0].input_shape
        for m in models[1:]:
            if m.input_shape != shape or float(m.quant_step) != float(step):
                raise bnn.ShapeError(
                    "ensemble members must share input_shape and quant_step")
        key = tuple(bnn.content_hash(m) for m in models)
        entry = self._cache.get(key) if use_cache else None
        from_cache = entry is not None
        if entry is None:
            entry = self._build_network(models)
            if use_cache:
                self._cache[key] = entry
                self.stats["cache_misses"] += 1
        else:
            self.stats["cache_hits"] += 1

        pool = VarPool(entry.num_vars)
        sys = ConstraintSystem(shared_clauses=entry.clauses,
                               shared_cards=entry.cards,
                               from_cache=from_cache)
        sys.activation_var_map = entry.activation_var_map
        blocks, in_groups = encode_input_space(pool, sys.clauses, x0, eps,
                                               models[0])
        sys.input_blocks = blocks
        scale = Fraction(float(step))

        goal_inputs = []
        for mdl, cm in zip(models, entry.models):
            if cm.first_out_vars is None:
                goal_inputs.append((mdl.layers[-1], in_groups, scale))
                continue
            first = mdl.layers[0]
            encode_layer(pool, sys.clauses, sys.cards, first,
                         bn_to_affine(first), in_groups, k_scale=scale,
                         out_vars=cm.first_out_vars)
            goal_inputs.append((mdl.layers[-1], cm.last_hidden, Fraction(1)))

        if not ensemble:
            layer, groups, k_scale = goal_inputs[0]
            sys.goal_lits = encode_attack_goal(
                pool, sys.clauses, sys.cards, layer, bn_to_affine(layer),
                groups, k_scale, target_class)
        else:
            per_model = [(layer, bn_to_affine(layer), groups, k_scale)
                         for layer, groups, k_scale in goal_inputs]
            sys.goal_lits = encode_ensemble_goal(
                pool, sys.clauses, sys.cards, per_model, target_class,
                models[0].num_classes)
        sys.num_vars = pool.count
        return sys


def encode_query(models, x0, eps, target_class: int) -> ConstraintSystem:
    """One-shot convenience wrapper around Encoder (no cross-query cache)."""
    return Encoder().encode_query(models, x0, eps, target_class,
                                  use_cache=False)
