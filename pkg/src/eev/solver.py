"""CDCL solver with native propagation of reified cardinality constraints.

The search core is a conventional conflict-driven clause-learning solver:
two-watched-literal propagation over disjunctive clauses, first-UIP conflict
analysis, VSIDS branching, Luby restarts. On top of that, cardinality
constraints `target <-> (sum of operands <= bound)` are first-class: each
constraint keeps counters of currently-true and currently-false operands
(counting multiplicity), maintained incrementally through per-variable
notification lists, so propagation never rescans a constraint except when it
is about to imply literals.

Propagation rules for y <-> (sum l_i <= b) with n operands:

  target-inferring:  #true >= b+1              => y false
                     #false >= n-b             => y true
  operand-inferring: y true  and #true + m(o) > b      => o false
                     y false and #false + m(o) > n-b-1 => o true

where m(o) is the multiplicity of operand o. Reasons for such implications
are synthesized lazily during conflict analysis from the earliest-assigned
sufficient trigger set, and learned clauses are always plain disjunctions.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from random import Random

UNDEF, VTRUE, VFALSE = 0, 1, -1

# Reason tags for cardinality-driven implications.
R_TARGET_FALSE = 0  # too many true operands
R_TARGET_TRUE = 1   # too many false operands
R_OP_FALSE = 2      # target true, operand would overflow the bound
R_OP_TRUE = 3       # target false, operand needed to exceed the bound

_RULE_NAMES = {
    R_TARGET_FALSE: "target_infer_false",
    R_TARGET_TRUE: "target_infer_true",
    R_OP_FALSE: "operand_infer_false",
    R_OP_TRUE: "operand_infer_true",
}


class SolverError(Exception):
    """Internal inconsistency (model check failure, bad usage)."""


@dataclass
class SolverConfig:
    seed: int = 0
    random_polarity: bool = True
    phase_saving: bool = False
    var_decay: float = 0.95
    clause_decay: float = 0.999
    restart_base: int = 100  # Luby unit, in conflicts
    max_conflicts: int | None = None
    max_seconds: float | None = None

    # Wall-clock budget is polled every 2**12 conflicts.
    TIME_POLL_MASK = (1 << 12) - 1


@dataclass
class SolveResult:
    status: str  # "SAT" | "UNSAT" | "UNKNOWN"
    model: list | None  # index 1..nvars -> bool (slot 0 unused)
    stats: dict

    def __bool__(self):
        return self.status == "SAT"


class _Clause:
    __slots__ = ("lits", "learnt", "activity")

    def __init__(self, lits, learnt=False):
        self.lits = lits
        self.learnt = learnt
        self.activity = 0.0


class _Card:
    __slots__ = ("target", "ops", "bound", "n", "num_true", "num_false",
                 "mult", "distinct", "unassigned_mult")

    def __init__(self, target, ops, bound):
        self.target = target
        self.ops = ops
        self.bound = bound
        self.n = len(ops)
        self.num_true = 0
        self.num_false = 0
        self.mult = {}
        for o in ops:
            self.mult[o] = self.mult.get(o, 0) + 1
        self.distinct = list(self.mult.keys())
        # multiplicity -> count of distinct unassigned operands having it
        self.unassigned_mult = {}
        for o in self.distinct:
            m = self.mult[o]
            self.unassigned_mult[m] = self.unassigned_mult.get(m, 0) + 1

    def max_unassigned_mult(self) -> int:
        best = 0
        for m, cnt in self.unassigned_mult.items():
            if cnt > 0 and m > best:
                best = m
        return best

    def semantic_value(self, truth) -> bool:
        """Evaluate (sum ops <= bound) under a complete assignment."""
        total = sum(1 for o in self.ops if truth(o))
        return total <= self.bound


def _code(lit: int) -> int:
    return (lit << 1) if lit > 0 else ((-lit) << 1) | 1


class _VarHeap:
    """Indexed max-heap on variable activity with index tie-break."""

    def __init__(self, activity):
        self.activity = activity
        self.heap: list[int] = []
        self.pos: dict[int, int] = {}

    def _less(self, u, v) -> bool:
        # priority order: higher activity first, then lower index
        au, av = self.activity[u], self.activity[v]
        if au != av:
            return au > av
        return u < v

    def _sift_up(self, i):
        h = self.heap
        v = h[i]
        while i > 0:
            p = (i - 1) >> 1
            if self._less(v, h[p]):
                h[i] = h[p]
                self.pos[h[p]] = i
                i = p
            else:
                break
        h[i] = v
        self.pos[v] = i

    def _sift_down(self, i):
        h = self.heap
        n = len(h)
        v = h[i]
        while True:
            l = 2 * i + 1
            if l >= n:
                break
            r = l + 1
            c = r if r < n and self._less(h[r], h[l]) else l
            if self._less(h[c], v):
                h[i] = h[c]
                self.pos[h[c]] = i
                i = c
            else:
                break
        h[i] = v
        self.pos[v] = i

    def push(self, v):
        if v in self.pos:
            return
        self.heap.append(v)
        self._sift_up(len(self.heap) - 1)

    def pop(self):
        h = self.heap
        top = h[0]
        last = h.pop()
        del self.pos[top]
        if h:
            h[0] = last
            self.pos[last] = 0
            self._sift_down(0)
        return top

    def update(self, v):
        if v in self.pos:
            self._sift_up(self.pos[v])

    def __bool__(self):
        return bool(self.heap)


class Solver:
    """One single-threaded CDCL instance; seed fully determines a run."""

    def __init__(self, config: SolverConfig | None = None):
        self.config = config or SolverConfig()
        self.rng = Random(self.config.seed)
        self.nvars = 0
        self.ok = True
        self.assign = [UNDEF]
        self.level = [0]
        self.reason = [None]
        self.trail_pos = [0]
        self.phase = [False]
        self.activity = [0.0]
        self.trail: list[int] = []
        self.trail_lim: list[int] = []
        self.qhead = 0
        self.watches: list[list] = [[], []]
        self.card_occ: list[list] = [[]]
        self.clauses: list[_Clause] = []
        self.learnts: list[_Clause] = []
        self.cards: list[_Card] = []
        self.var_inc = 1.0
        self.cla_inc = 1.0
        self.heap = _VarHeap(self.activity)
        self._stats = {
            "decisions": 0,
            "propagations": 0,
            "conflicts": 0,
            "learned": 0,
            "restarts": 0,
            "card_propagations": 0,
            "target_infer_false": 0,
            "target_infer_true": 0,
            "operand_infer_false": 0,
            "operand_infer_true": 0,
            "card_scans": 0,
            "card_scan_implied": 0,
            "solve_time": 0.0,
        }
        self.debug_checks = False

    # -- construction -----------------------------------------------------

    def new_var(self) -> int:
        self.nvars += 1
        self.assign.append(UNDEF)
        self.level.append(0)
        self.reason.append(None)
        self.trail_pos.append(0)
        self.phase.append(False)
        self.activity.append(0.0)
        self.watches.append([])
        self.watches.append([])
        self.card_occ.append([])
        self.heap.push(self.nvars)
        return self.nvars

    def new_vars(self, n: int) -> None:
        for _ in range(n):
            self.new_var()

    def value(self, lit: int) -> int:
        v = self.assign[lit if lit > 0 else -lit]
        return v if lit > 0 else -v

    @property
    def decision_level(self) -> int:
        return len(self.trail_lim)

    def add_clause(self, lits) -> bool:
        """Add a disjunctive clause; returns False if the instance is now UNSAT."""
        if not self.ok:
            return False
        seen = {}
        out = []
        for l in lits:
            if not (isinstance(l, int) and l != 0 and abs(l) <= self.nvars):
                raise SolverError(f"bad literal {l!r} (allocate variables first)")
            if -l in seen:
                return True  # tautology
            if l in seen:
                continue
            if self.value(l) == VTRUE and self.level[abs(l)] == 0:
                return True
            if self.value(l) == VFALSE and self.level[abs(l)] == 0:
                continue
            seen[l] = True
            out.append(l)
        if not out:
            self.ok = False
            return False
        if len(out) == 1:
            if not self._enqueue(out[0], None):
                self.ok = False
                return False
            return self._toplevel_propagate()
        clause = _Clause(out)
        self.clauses.append(clause)
        self._attach(clause)
        return True

    def add_card(self, target: int, operands, bound: int) -> bool:
        """Add target <-> (sum operands <= bound); returns False on UNSAT."""
        if not self.ok:
            return False
        if not (isinstance(target, int) and target != 0
                and abs(target) <= self.nvars):
            raise SolverError(f"bad target literal {target!r}")
        ops = []
        counts = {}
        for l in operands:
            if not (isinstance(l, int) and l != 0 and abs(l) <= self.nvars):
                raise SolverError(f"bad operand literal {l!r}")
            counts[l] = counts.get(l, 0) + 1
        # fold l / -l pairs: they contribute exactly one to the sum
        folded = 0
        for l in list(counts):
            if l > 0 and -l in counts:
                k = min(counts[l], counts[-l])
                counts[l] -= k
                counts[-l] -= k
                folded += k
        bound -= folded
        for l, c in counts.items():
            ops.extend([l] * c)
        card = _Card(target, ops, bound)
        self.cards.append(card)
        occ_vars = {abs(target)}
        for o in card.distinct:
            occ_vars.add(abs(o))
        for v in occ_vars:
            pm = counts.get(v, 0)
            nm = counts.get(-v, 0)
            self.card_occ[v].append(
                (card, pm, nm, v == abs(target)))
        # account for whatever is already assigned at the top level
        for o in card.distinct:
            val = self.value(o)
            if val != UNDEF:
                m = card.mult[o]
                if val == VTRUE:
                    card.num_true += m
                else:
                    card.num_false += m
                card.unassigned_mult[m] -= 1
        confl = self._card_check(card)
        if confl is not None:
            self.ok = False
            return False
        return self._toplevel_propagate()

    def _toplevel_propagate(self) -> bool:
        if self.decision_level == 0:
            if self._propagate() is not None:
                self.ok = False
                return False
        return True

    def _attach(self, clause: _Clause):
        lits = clause.lits
        self.watches[_code(-lits[0])].append(clause)
        self.watches[_code(-lits[1])].append(clause)

    # -- assignment and propagation ---------------------------------------

    def _enqueue(self, lit: int, reason) -> bool:
        val = self.value(lit)
        if val == VTRUE:
            return True
        if val == VFALSE:
            return False
        v = lit if lit > 0 else -lit
        self.assign[v] = VTRUE if lit > 0 else VFALSE
        self.level[v] = self.decision_level
        self.reason[v] = reason
        self.trail_pos[v] = len(self.trail)
        self.trail.append(lit)
        # notify cardinality constraints so counters track the assignment
        val_true = lit > 0
        for card, pm, nm, _ in self.card_occ[v]:
            if pm or nm:
                if val_true:
                    card.num_true += pm
                    card.num_false += nm
                else:
                    card.num_true += nm
                    card.num_false += pm
                m = pm + nm
                card.unassigned_mult[m] -= 1
        return True

    def _unassign(self, lit: int):
        v = lit if lit > 0 else -lit
        if self.config.phase_saving:
            self.phase[v] = self.assign[v] == VTRUE
        val_true = self.assign[v] == VTRUE
        for card, pm, nm, _ in self.card_occ[v]:
            if pm or nm:
                if val_true:
                    card.num_true -= pm
                    card.num_false -= nm
                else:
                    card.num_true -= nm
                    card.num_false -= pm
                m = pm + nm
                card.unassigned_mult[m] += 1
        self.assign[v] = UNDEF
        self.reason[v] = None
        self.heap.push(v)

    def _propagate(self):
        """Propagate to fixpoint; returns conflicting lits or None.

        The returned list is a clause whose literals are all false under the
        current assignment (synthesized on the fly for cardinality conflicts).
        """
        while self.qhead < len(self.trail):
            p = self.trail[self.qhead]
            self.qhead += 1
            self._stats["propagations"] += 1
            confl = self._prop_clauses(p)
            if confl is not None:
                return confl
            v = p if p > 0 else -p
            for entry in self.card_occ[v]:
                confl = self._card_check(entry[0])
                if confl is not None:
                    return confl
        return None

    def _prop_clauses(self, p: int):
        code = _code(p)
        ws = self.watches[code]
        self.watches[code] = []
        kept = []
        value = self.value
        for ci, clause in enumerate(ws):
            lits = clause.lits
            if lits[0] == -p:
                lits[0], lits[1] = lits[1], lits[0]
            first = lits[0]
            if value(first) == VTRUE:
                kept.append(clause)
                continue
            moved = False
            for k in range(2, len(lits)):
                if value(lits[k]) != VFALSE:
                    lits[1], lits[k] = lits[k], lits[1]
                    self.watches[_code(-lits[1])].append(clause)
                    moved = True
                    break
            if moved:
                continue
            kept.append(clause)
            if value(first) == VFALSE:
                kept.extend(ws[ci + 1:])
                self.watches[code].extend(kept)
                return list(lits)
            self._enqueue(first, clause)
        self.watches[code].extend(kept)
        return None

    def _card_check(self, card: _Card):
        """Apply the four inference rules; returns conflict lits or None."""
        b = card.bound
        n = card.n
        tval = self.value(card.target)
        if card.num_true >= b + 1:
            if tval == VTRUE:
                return self._card_conflict_target(card)
            if tval == UNDEF:
                self._stats["card_propagations"] += 1
                self._stats["target_infer_false"] += 1
                self._enqueue(-card.target, (card, R_TARGET_FALSE))
                tval = VFALSE
        if card.num_false >= n - b:
            if tval == VFALSE:
                return self._card_conflict_target(card)
            if tval == UNDEF:
                self._stats["card_propagations"] += 1
                self._stats["target_infer_true"] += 1
                self._enqueue(card.target, (card, R_TARGET_TRUE))
                tval = VTRUE
        if tval == VTRUE:
            if card.num_true + card.max_unassigned_mult() > b:
                return self._card_scan(card, R_OP_FALSE)
        elif tval == VFALSE:
            if card.num_false + card.max_unassigned_mult() > n - b - 1:
                return self._card_scan(card, R_OP_TRUE)
        return None

    def _card_scan(self, card: _Card, rule: int):
        """Assign every operand forced by an operand-inferring rule.

        Only called when at least one unassigned operand is forced, so the
        number of scans is bounded by the number of implied literals.
        """
        self._stats["card_scans"] += 1
        implied = 0
        value = self.value
        limit = card.bound if rule == R_OP_FALSE else card.n - card.bound - 1
        count = card.num_true if rule == R_OP_FALSE else card.num_false
        for o in card.distinct:
            if value(o) != UNDEF:
                continue
            if count + card.mult[o] > limit:
                lit = -o if rule == R_OP_FALSE else o
                self._stats["card_propagations"] += 1
                self._stats[_RULE_NAMES[rule]] += 1
                implied += 1
                self._enqueue(lit, (card, rule))  # var unassigned: cannot fail
        self._stats["card_scan_implied"] += implied
        return None

    def _card_conflict_target(self, card: _Card):
        """Conflict clause when the target disagrees with the counters."""
        tval = self.value(card.target)
        if tval == VTRUE:
            lits = [-card.target]
            need = card.bound + 1
            want = VTRUE
        else:
            lits = [card.target]
            need = card.n - card.bound
            want = VFALSE
        lits.extend(self._trigger_lits(card, want, need, len(self.trail) + 1))
        return lits

    def _trigger_lits(self, card: _Card, want: int, need: int, pos_limit: int):
        """Earliest-assigned operands with the given value covering `need`.

        Returns their negations-as-false clause literals: for true operands
        the negated literal, for false operands the literal itself.
        """
        if need <= 0:
            return []
        found = []
        for o in card.distinct:
            if self.value(o) == want and self.trail_pos[abs(o)] < pos_limit:
                found.append((self.trail_pos[abs(o)], o))
        found.sort()
        out = []
        total = 0
        for _, o in found:
            out.append(-o if want == VTRUE else o)
            total += card.mult[o]
            if total >= need:
                return out
        raise SolverError("cardinality counters out of sync with trail")

    def _card_reason(self, lit: int, card: _Card, rule: int, pos_limit=None):
        """Synthesize the asserting reason clause for a card implication."""
        if pos_limit is None:
            pos_limit = self.trail_pos[abs(lit)]
        if rule == R_TARGET_FALSE:
            return [lit] + self._trigger_lits(card, VTRUE, card.bound + 1,
                                              pos_limit)
        if rule == R_TARGET_TRUE:
            return [lit] + self._trigger_lits(card, VFALSE,
                                              card.n - card.bound, pos_limit)
        if rule == R_OP_FALSE:
            o = -lit
            need = card.bound + 1 - card.mult[o]
            return [lit, -card.target] + self._trigger_lits(
                card, VTRUE, need, pos_limit)
        o = lit
        need = (card.n - card.bound) - card.mult[o]
        return [lit, card.target] + self._trigger_lits(
            card, VFALSE, need, pos_limit)

    def _reason_lits(self, p: int):
        """Reason clause lits for implied literal p, with p first."""
        r = self.reason[p if p > 0 else -p]
        if isinstance(r, _Clause):
            return r.lits
        card, rule = r
        return self._card_reason(p, card, rule)

    # -- conflict analysis --------------------------------------------------

    def _analyze(self, confl_lits):
        """First-UIP resolution; returns (learnt_lits, backjump_level)."""
        learnt = [0]
        seen = set()
        path = 0
        p = None
        idx = len(self.trail)
        cur_level = self.decision_level
        lits = confl_lits
        while True:
            start = 0 if p is None else 1
            for q in lits[start:]:
                v = q if q > 0 else -q
                if v not in seen and self.level[v] > 0:
                    seen.add(v)
                    self._bump_var(v)
                    if self.level[v] >= cur_level:
                        path += 1
                    else:
                        learnt.append(q)
            idx -= 1
            while (self.trail[idx] if self.trail[idx] > 0
                   else -self.trail[idx]) not in seen:
                idx -= 1
            p = self.trail[idx]
            path -= 1
            if path == 0:
                break
            r = self.reason[p if p > 0 else -p]
            if isinstance(r, _Clause) and r.learnt:
                self._bump_clause(r)
            lits = self._reason_lits(p)
        learnt[0] = -p
        if len(learnt) == 1:
            return learnt, 0
        # second-highest level; put one of its literals in watch position 1
        best = 1
        for i in range(2, len(learnt)):
            if self.level[abs(learnt[i])] > self.level[abs(learnt[best])]:
                best = i
        learnt[1], learnt[best] = learnt[best], learnt[1]
        return learnt, self.level[abs(learnt[1])]

    def _bump_var(self, v: int):
        self.activity[v] += self.var_inc
        if self.activity[v] > 1e100:
            for i in range(1, self.nvars + 1):
                self.activity[i] *= 1e-100
            self.var_inc *= 1e-100
        self.heap.update(v)

    def _bump_clause(self, clause: _Clause):
        clause.activity += self.cla_inc
        if clause.activity > 1e20:
            for c in self.learnts:
                c.activity *= 1e-20
            self.cla_inc *= 1e-20

    def _backjump(self, target_level: int):
        while self.decision_level > target_level:
            lim = self.trail_lim.pop()
            for i in range(len(self.trail) - 1, lim - 1, -1):
                self._unassign(self.trail[i])
            del self.trail[lim:]
        self.qhead = len(self.trail)

    def _decide(self) -> bool:
        while self.heap:
            v = self.heap.pop()
            if self.assign[v] == UNDEF:
                self._stats["decisions"] += 1
                self.trail_lim.append(len(self.trail))
                if self.config.phase_saving:
                    want = self.phase[v]
                elif self.config.random_polarity:
                    want = self.rng.random() < 0.5
                else:
                    want = False
                self._enqueue(v if want else -v, None)
                return True
        return False

    def _reduce_db(self):
        locked = set()
        for lit in self.trail:
            r = self.reason[abs(lit)]
            if isinstance(r, _Clause):
                locked.add(id(r))
        by_act = sorted(self.learnts, key=lambda c: c.activity)
        drop = set()
        for c in by_act[:len(by_act) // 2]:
            if id(c) not in locked and len(c.lits) > 2:
                drop.add(id(c))
        if not drop:
            return
        self.learnts = [c for c in self.learnts if id(c) not in drop]
        for code in range(len(self.watches)):
            self.watches[code] = [c for c in self.watches[code]
                                  if id(c) not in drop]

    # -- solving ------------------------------------------------------------

    @staticmethod
    def _luby(i: int) -> int:
        """i-th element (1-based) of the Luby sequence 1,1,2,1,1,2,4,..."""
        while True:
            k = i.bit_length()
            if i == (1 << k) - 1:
                return 1 << (k - 1)
            i -= (1 << (k - 1)) - 1

    def solve(self, max_conflicts: int | None = None,
              max_seconds: float | None = None) -> SolveResult:
        """Run the CDCL loop under the given budget.

        SAT models pass a full semantic check before being returned; UNKNOWN
        (budget exhausted) carries the statistics gathered so far.
        """
        t0 = time.perf_counter()
        cfg = self.config
        if max_conflicts is None:
            max_conflicts = cfg.max_conflicts
        if max_seconds is None:
            max_seconds = cfg.max_seconds

        def result(status, mdl=None):
            self._stats["solve_time"] += time.perf_counter() - t0
            return SolveResult(status, mdl, dict(self._stats))

        if max_seconds is not None and max_seconds <= 0:
            return result("UNKNOWN")
        if max_conflicts is not None and max_conflicts <= 0:
            return result("UNKNOWN")
        if not self.ok:
            return result("UNSAT")
        start_conflicts = self._stats["conflicts"]
        max_learnts = max(100, (len(self.clauses) + len(self.cards)) // 3)
        restart_no = 0
        budget = self._luby(restart_no + 1) * cfg.restart_base
        conflict_c = 0
        deadline = (t0 + max_seconds) if max_seconds is not None else None
        while True:
            if deadline is not None and time.perf_counter() > deadline:
                return result("UNKNOWN")
            confl = self._propagate()
            if confl is not None:
                self._stats["conflicts"] += 1
                conflict_c += 1
                if self.decision_level == 0:
                    return result("UNSAT")
                learnt, bt = self._analyze(confl)
                self._backjump(bt)
                if len(learnt) == 1:
                    if not self._enqueue(learnt[0], None):
                        return result("UNSAT")
                else:
                    clause = _Clause(learnt, learnt=True)
                    self.learnts.append(clause)
                    self._stats["learned"] += 1
                    self._attach(clause)
                    self._bump_clause(clause)
                    if self.debug_checks:
                        assert self.value(learnt[0]) == UNDEF and all(
                            self.value(l) == VFALSE for l in learnt[1:]), \
                            "learned clause not asserting at backjump level"
                    self._enqueue(learnt[0], clause)
                self.var_inc /= cfg.var_decay
                self.cla_inc /= cfg.clause_decay
                total_conflicts = self._stats["conflicts"] - start_conflicts
                if max_conflicts is not None and total_conflicts >= max_conflicts:
                    return result("UNKNOWN")
                if (max_seconds is not None
                        and total_conflicts & SolverConfig.TIME_POLL_MASK == 0
                        and time.perf_counter() - t0 > max_seconds):
                    return result("UNKNOWN")
            else:
                if self.debug_checks:
                    self.check_counters()
                if conflict_c >= budget:
                    self._stats["restarts"] += 1
                    restart_no += 1
                    budget = self._luby(restart_no + 1) * cfg.restart_base
                    conflict_c = 0
                    self._backjump(0)
                    continue
                if len(self.learnts) - len(self.trail) >= max_learnts:
                    self._reduce_db()
                    max_learnts = int(max_learnts * 1.1) + 1
                if not self._decide():
                    mdl = [False] * (self.nvars + 1)
                    for v in range(1, self.nvars + 1):
                        mdl[v] = self.assign[v] == VTRUE
                    self._check_model(mdl)
                    return result("SAT", mdl)

    def _check_model(self, mdl):
        """O(total size) semantic pass over every constraint before UNSAT/SAT."""
        def truth(lit):
            return mdl[lit] if lit > 0 else not mdl[-lit]

        for clause in self.clauses:
            if not any(truth(l) for l in clause.lits):
                raise SolverError(f"model violates clause {clause.lits}")
        for card in self.cards:
            if truth(card.target) != card.semantic_value(truth):
                raise SolverError(
                    f"model violates cardinality constraint "
                    f"{card.target} <-> sum <= {card.bound}")

    def check_counters(self):
        """Debug invariant: incremental counters match a from-scratch recount."""
        for card in self.cards:
            nt = sum(card.mult[o] for o in card.distinct
                     if self.value(o) == VTRUE)
            nf = sum(card.mult[o] for o in card.distinct
                     if self.value(o) == VFALSE)
            if nt != card.num_true or nf != card.num_false:
                raise SolverError(
                    f"counter drift: stored ({card.num_true},{card.num_false})"
                    f" recomputed ({nt},{nf})")
            um = {}
            for o in card.distinct:
                if self.value(o) == UNDEF:
                    m = card.mult[o]
                    um[m] = um.get(m, 0) + 1
            stored = {m: c for m, c in card.unassigned_mult.items() if c}
            if stored != um:
                raise SolverError("unassigned-multiplicity drift")

    def stats(self) -> dict:
        return dict(self._stats)


def from_system(system, config: SolverConfig | None = None) -> Solver:
    """Build a solver from anything exposing num_vars / all_clauses / all_cards."""
    s = Solver(config)
    s.new_vars(system.num_vars)
    for clause in system.all_clauses():
        if not s.add_clause(clause):
            break
    if s.ok:
        for card in system.all_cards():
            if not s.add_card(card.target, card.operands, card.bound):
                break
    return s
