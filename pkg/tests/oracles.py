"""Independent semantic oracles used across the test suite.

Everything here evaluates constraints by brute force (truth-table style,
vectorized with numpy) and is deliberately ignorant of the solver's data
structures and propagation machinery.
"""

import itertools

import numpy as np


def lit_columns(nvars, assignments, lits):
    """Truth columns for a list of literals over a (rows, nvars) bool matrix."""
    cols = []
    for l in lits:
        col = assignments[:, abs(l) - 1]
        cols.append(col if l > 0 else ~col)
    return cols


def all_assignments(nvars):
    """(2**nvars, nvars) boolean matrix; row r is the binary expansion of r."""
    n = 1 << nvars
    rows = np.arange(n, dtype=np.uint64)
    return (rows[:, None] >> np.arange(nvars, dtype=np.uint64)) & 1 != 0


def satisfying_rows(nvars, clauses, cards):
    """Boolean mask of satisfying assignments of a mixed system."""
    assignments = all_assignments(nvars)
    ok = np.ones(len(assignments), dtype=bool)
    for clause in clauses:
        if not clause:
            return np.zeros(len(assignments), dtype=bool)
        acc = np.zeros(len(assignments), dtype=bool)
        for col in lit_columns(nvars, assignments, clause):
            acc |= col
        ok &= acc
    for card in cards:
        total = np.zeros(len(assignments), dtype=np.int64)
        for col in lit_columns(nvars, assignments, card.operands):
            total += col
        tcol = lit_columns(nvars, assignments, [card.target])[0]
        ok &= tcol == (total <= card.bound)
    return ok


def enumerate_verdict(nvars, clauses, cards):
    """'SAT' or 'UNSAT' by full enumeration (nvars kept small by callers)."""
    return "SAT" if satisfying_rows(nvars, clauses, cards).any() else "UNSAT"


def assignment_satisfies(clauses, cards, truth):
    """Check one complete assignment; truth maps var -> bool."""
    def val(l):
        return truth[abs(l)] if l > 0 else not truth[abs(l)]

    for clause in clauses:
        if not any(val(l) for l in clause):
            return False
    for card in cards:
        if val(card.target) != (sum(val(o) for o in card.operands)
                                <= card.bound):
            return False
    return True


def card_closure(nvars, target, operands, bound, partial):
    """Semantic closure of one reified cardinality constraint.

    partial maps var -> bool for assigned vars. Returns None if the partial
    assignment cannot be extended to satisfy the constraint, else the dict of
    var -> bool forced in every satisfying completion (including the partial
    assignment itself).
    """
    free = [v for v in range(1, nvars + 1) if v not in partial]
    always = None
    for bits in itertools.product((False, True), repeat=len(free)):
        truth = dict(partial)
        truth.update(zip(free, bits))
        total = sum(
            (truth[o] if o > 0 else not truth[-o]) for o in operands)
        tval = truth[target] if target > 0 else not truth[-target]
        if tval != (total <= bound):
            continue
        if always is None:
            always = dict(truth)
        else:
            for v in list(always):
                if always[v] != truth[v]:
                    del always[v]
    return always


def dpll_sat(clauses) -> bool:
    """Tiny independent DPLL satisfiability check (unit propagation + split).

    Used to project auxiliary variables out of CNF encodings; deliberately
    shares nothing with the package solver.
    """
    def simplify(cs, lit):
        out = []
        for c in cs:
            if lit in c:
                continue
            if -lit in c:
                nc = tuple(l for l in c if l != -lit)
                if not nc:
                    return None
                out.append(nc)
            else:
                out.append(c)
        return out

    def rec(cs):
        while True:
            units = [c[0] for c in cs if len(c) == 1]
            if not units:
                break
            for u in units:
                cs = simplify(cs, u)
                if cs is None:
                    return False
        if not cs:
            return True
        v = abs(cs[0][0])
        for lit in (v, -v):
            nxt = simplify(cs, lit)
            if nxt is not None and rec(nxt):
                return True
        return False

    cs = []
    for c in clauses:
        if not c:
            return False
        cs.append(tuple(c))
    return rec(cs)


def project_cnf_solutions(nvars_vis, clauses):
    """Solution set over vars 1..nvars_vis, projecting out higher vars."""
    sols = set()
    for bits in itertools.product((False, True), repeat=nvars_vis):
        fixed = [[(v + 1) if bits[v] else -(v + 1)]
                 for v in range(nvars_vis)]
        if dpll_sat(list(clauses) + fixed):
            sols.add(bits)
    return sols


def random_hard_system(rng, nvars=10):
    """Dense mixed instance that actually forces search and clause learning.

    Random 3-SAT at the hard ratio plus a couple of asserted tight
    cardinality constraints over subsets of the variables.
    """
    clauses = []
    for _ in range(int(4.0 * nvars)):
        vs = rng.choice(nvars, size=3, replace=False) + 1
        clauses.append([int(v) * (1 if rng.random() < 0.5 else -1)
                        for v in vs])
    cards = []
    for _ in range(2):
        width = int(rng.integers(4, min(7, nvars)))
        vs = rng.choice(nvars, size=width, replace=False) + 1
        ops = [int(v) * (1 if rng.random() < 0.5 else -1) for v in vs]
        bound = int(rng.integers(1, max(2, width // 2)))
        tv = int(rng.integers(1, nvars + 1))
        target = tv * (1 if rng.random() < 0.5 else -1)
        cards.append((target, ops, bound))
    return nvars, clauses, cards


def random_mixed_system(rng, max_vars=15, max_constraints=10, min_vars=3):
    """Random clauses + reified cardinality constraints for oracle testing."""
    nvars = int(rng.integers(min_vars, max_vars + 1))
    n_constraints = int(rng.integers(1, max_constraints + 1))
    clauses = []
    cards = []
    for _ in range(n_constraints):
        if rng.random() < 0.45:
            width = int(rng.integers(1, min(5, nvars) + 1))
            vs = rng.choice(nvars, size=width, replace=False) + 1
            clauses.append([int(v) * (1 if rng.random() < 0.5 else -1)
                            for v in vs])
        else:
            width = int(rng.integers(1, min(6, nvars) + 1))
            vs = rng.choice(nvars, size=width, replace=False) + 1
            ops = [int(v) * (1 if rng.random() < 0.5 else -1) for v in vs]
            if rng.random() < 0.25:  # duplicated operand, multiplicity 2
                ops.append(ops[int(rng.integers(0, len(ops)))])
            bound = int(rng.integers(0, len(ops) + 1))
            tv = int(rng.integers(1, nvars + 1))
            target = tv * (1 if rng.random() < 0.5 else -1)
            cards.append((target, ops, bound))
    return nvars, clauses, cards
