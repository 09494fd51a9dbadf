"""Alternative encodings and interchange formats.

Three views of the same constraint system: the native mixed format solved
directly, a pure-CNF lowering via reified sequential counters, and a
pseudo-Boolean rendering (two linear constraints per reified cardinality
constraint). File formats: native ".eevc", DIMACS ".cnf", OPB ".opb"; the
grammars are documented in docs/formats.md.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .encoder import FALSE, TRUE, ConstraintSystem, ReifiedCardinality, \
    VarPool, neg


class FormatError(ValueError):
    """Parse failure; message carries the 1-based line number."""


@dataclass
class CnfSystem:
    """Plain CNF plus provenance for auxiliary variables.

    aux_provenance maps each auxiliary variable to the index of the
    cardinality constraint (in the source system's emission order) whose
    lowering introduced it.
    """

    num_vars: int = 0
    clauses: list = field(default_factory=list)
    aux_provenance: dict = field(default_factory=dict)
    input_blocks: list = field(default_factory=list)

    def all_clauses(self):
        return iter(self.clauses)

    def all_cards(self):
        return iter(())

    def decode_input(self, assignment):
        return ConstraintSystem.decode_input(self, assignment)

    @property
    def num_clauses(self):
        return len(self.clauses)


def _clause(clauses, lits):
    """Append a clause, folding constant literals; drop satisfied clauses."""
    out = []
    for l in lits:
        if l is TRUE:
            return
        if l is FALSE:
            continue
        out.append(l)
    clauses.append(out)


def seqcnt_encode(card: ReifiedCardinality, pool: VarPool,
                  clauses: list) -> list:
    """Lower one reified cardinality constraint to CNF; returns aux vars.

    Unary counter registers s[i][j] ("at least j of the first i operands are
    true") are chained over the operands; the target is tied to the overflow
    register s[n][b+1] in both directions, so the target is fully defined.
    Constant registers are folded, keeping the auxiliary count at most
    n*(bound+1).
    """
    ops = list(card.operands)
    n = len(ops)
    b = card.bound
    y = card.target
    if b < 0:
        _clause(clauses, [neg(y)])
        return []
    if b >= n:
        _clause(clauses, [y])
        return []
    aux = []
    width = b + 1
    # row[j-1] holds s[i][j] as a literal or constant
    row = [FALSE] * width
    for i, lit in enumerate(ops):
        new_row = list(row)
        for j in range(min(i + 1, width), 0, -1):
            carry = TRUE if j == 1 else row[j - 2]
            keep = row[j - 1]
            # s_new = keep OR (carry AND lit)
            if keep is TRUE or carry is FALSE:
                new_row[j - 1] = keep
                continue
            if keep is FALSE and carry is TRUE:
                new_row[j - 1] = lit
                continue
            s = pool.new_var()
            aux.append(s)
            # keep -> s ; (carry and lit) -> s
            _clause(clauses, [neg(keep), s])
            _clause(clauses, [neg(carry), neg(lit), s])
            # s -> keep or carry ; s -> keep or lit
            _clause(clauses, [-s, keep, carry])
            _clause(clauses, [-s, keep, lit])
            new_row[j - 1] = s
        row = new_row
    overflow = row[width - 1]  # at least b+1 operands true
    # y <-> not overflow
    _clause(clauses, [neg(y), neg(overflow)])
    _clause(clauses, [y, overflow])
    assert len(aux) <= n * (b + 1), "sequential counter blow-up"
    return aux


def cnf_lower(system) -> CnfSystem:
    """Replace every cardinality constraint by its sequential-counters CNF."""
    pool = VarPool(system.num_vars)
    out = CnfSystem(input_blocks=list(getattr(system, "input_blocks", [])))
    out.clauses.extend(list(c) for c in system.all_clauses())
    for idx, card in enumerate(system.all_cards()):
        for v in seqcnt_encode(card, pool, out.clauses):
            out.aux_provenance[v] = idx
    out.num_vars = pool.count
    return out


@dataclass
class PbConstraint:
    """Linear pseudo-Boolean constraint: sum of coef*literal >= rhs."""

    terms: list  # (coef, lit) pairs
    rhs: int

    def normalized(self):
        """Variable-only form: coefficients on positive variables.

        Rewrites coef*(-x) as -coef*x with an rhs shift, merging duplicate
        variables; this is the shape the OPB writer emits.
        """
        acc: dict[int, int] = {}
        rhs = self.rhs
        for coef, lit in self.terms:
            if lit > 0:
                acc[lit] = acc.get(lit, 0) + coef
            else:
                acc[-lit] = acc.get(-lit, 0) - coef
                rhs -= coef
        terms = [(c, v) for v, c in sorted(acc.items()) if c != 0]
        return terms, rhs


def pb_export(card: ReifiedCardinality) -> tuple[PbConstraint, PbConstraint]:
    """Two linear pseudo-Boolean constraints equivalent to the reified card.

    The canonical <=-form is first flipped to y <-> (sum of negated operands
    >= n - bound); the pair then encodes the two implication directions:

        sum l_i + b*(not y) >= b          (sum < b forces y false)
        (n-b+1)*y - 1 >= sum l_i - b      (sum >= b forces y true)
    """
    ops = [neg(o) for o in card.operands]
    n = len(ops)
    b = n - card.bound
    y = card.target
    c1 = PbConstraint(terms=[(1, o) for o in ops] + [(b, neg(y))], rhs=b)
    c2 = PbConstraint(terms=[(n - b + 1, y)] + [(-1, o) for o in ops],
                      rhs=1 - b)
    return c1, c2


# --- file formats -----------------------------------------------------------

NATIVE_HEADER = "p cnf+card"
_RESERVED_KEYWORDS = {"cardnet"}  # cardinality-networks encoding, not implemented


def write_native(system, path) -> None:
    """Line-oriented mixed format: clause lines and cardinality lines."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{NATIVE_HEADER} {system.num_vars}\n")
        for clause in system.all_clauses():
            fh.write(" ".join(["c", *(str(l) for l in clause), "0"]) + "\n")
        for card in system.all_cards():
            fh.write(" ".join(["k", str(card.target), "<=", str(card.bound),
                               *(str(l) for l in card.operands), "0"]) + "\n")


def read_native(path) -> ConstraintSystem:
    sys_ = ConstraintSystem()
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    if not lines:
        raise FormatError(f"{path}:1: empty file")
    head = lines[0].split()
    if head[:2] != ["p", "cnf+card"] or len(head) != 3:
        raise FormatError(f"{path}:1: expected '{NATIVE_HEADER} VARS' header")
    try:
        sys_.num_vars = int(head[2])
    except ValueError as exc:
        raise FormatError(f"{path}:1: bad variable count {head[2]!r}") from exc

    def parse_lits(tokens, lineno, what):
        if not tokens or tokens[-1] != "0":
            raise FormatError(f"{path}:{lineno}: {what} must end with 0")
        try:
            lits = [int(t) for t in tokens[:-1]]
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: bad literal in {what}") from exc
        if any(l == 0 or abs(l) > sys_.num_vars for l in lits):
            raise FormatError(f"{path}:{lineno}: literal out of range")
        return lits

    for no, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens or tokens[0] == "#":
            continue
        tag = tokens[0]
        if tag in _RESERVED_KEYWORDS:
            raise FormatError(
                f"{path}:{no}: keyword {tag!r} is reserved and not implemented")
        if tag == "c":
            sys_.clauses.append(parse_lits(tokens[1:], no, "clause"))
        elif tag == "k":
            if len(tokens) < 5 or tokens[2] not in ("<=", ">="):
                raise FormatError(
                    f"{path}:{no}: cardinality line must be "
                    f"'k TARGET <= BOUND lits... 0'")
            try:
                target = int(tokens[1])
                bound = int(tokens[3])
            except ValueError as exc:
                raise FormatError(f"{path}:{no}: bad target or bound") from exc
            if target == 0 or abs(target) > sys_.num_vars:
                raise FormatError(f"{path}:{no}: target out of range")
            ops = parse_lits(tokens[4:], no, "cardinality constraint")
            if tokens[2] == ">=":
                ops = [-o for o in ops]
                bound = len(ops) - bound
            sys_.cards.append(ReifiedCardinality(target, ops, bound))
        else:
            raise FormatError(f"{path}:{no}: unknown line tag {tag!r}")
    return sys_


def write_dimacs(cnf: CnfSystem, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"p cnf {cnf.num_vars} {len(cnf.clauses)}\n")
        for clause in cnf.clauses:
            fh.write(" ".join([*(str(l) for l in clause), "0"]) + "\n")


def write_opb(system, path) -> None:
    """Pseudo-Boolean OPB: clauses as sum >= 1, cards via pb_export."""
    constraints = []
    for clause in system.all_clauses():
        constraints.append(PbConstraint(terms=[(1, l) for l in clause],
                                        rhs=1))
    for card in system.all_cards():
        constraints.extend(pb_export(card))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"* #variable= {system.num_vars} "
                 f"#constraint= {len(constraints)}\n")
        for pb in constraints:
            terms, rhs = pb.normalized()
            parts = [f"{c:+d} x{v}" for c, v in terms]
            fh.write(" ".join(parts) + f" >= {rhs} ;\n")


def systems_equal(a, b) -> bool:
    """Structural equality on (num_vars, clauses, cards)."""
    return (a.num_vars == b.num_vars
            and list(a.all_clauses()) == list(b.all_clauses())
            and [c.key() for c in a.all_cards()]
            == [c.key() for c in b.all_cards()])
