"""Character decomposition table: parsing, validation, statistics and plans.

Table rows are tab separated with eight columns::

    id  hanzi  U+XXXX  radicals  layout  comp1  comp2  comp3

Nested components are written as s-expressions, e.g. ``(NL01 女 某)``.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

__all__ = [
    "Layout",
    "Nested",
    "ComponentRef",
    "DecompEntry",
    "TableParseError",
    "ValidationReport",
    "Violation",
    "LayoutStats",
    "PlanStep",
    "StepRef",
    "CompositionPlan",
    "parse_layout",
    "parse_component",
    "parse_table",
    "read_table",
    "serialize_table",
    "validate",
    "layout_stats",
    "component_frequency",
    "coverage_curve",
    "expand_nested",
    "leaves",
]

LAYOUT_KINDS = ("NL00", "NL01", "NL02", "NL03", "NL04", "NL05")
UNANNOTATED = "TBD"

_ARITY = {"NL00": 0, "NL01": 2, "NL02": 2, "NL03": 2, "NL04": 3, "NL05": 3}
# three-component layouts are composed pairwise with these layouts
PAIRED_LAYOUT = {"NL04": "NL01", "NL05": "NL02"}

_LAYOUT_RE = re.compile(r"^(NL0[0-5])(?:-([0-7]))?$")
_CODEPOINT_RE = re.compile(r"^U\+([0-9A-Fa-f]{4,6})$")


class TableParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Layout:
    kind: str
    variation: Optional[int] = None

    def __post_init__(self):
        if self.kind == UNANNOTATED:
            return
        if self.kind not in LAYOUT_KINDS:
            raise ValueError(f"unknown layout kind {self.kind!r}")
        if (self.kind == "NL03") != (self.variation is not None):
            if self.kind == "NL03":
                raise ValueError("NL03 requires a variation 0..7")
            raise ValueError(f"{self.kind} takes no variation")
        if self.variation is not None and not 0 <= self.variation <= 7:
            raise ValueError(f"variation {self.variation} outside 0..7")

    @property
    def arity(self) -> int:
        return _ARITY.get(self.kind, -1)

    @property
    def annotated(self) -> bool:
        return self.kind != UNANNOTATED

    def __str__(self) -> str:
        if self.variation is None:
            return self.kind
        return f"{self.kind}-{self.variation}"


def parse_layout(tag: str) -> Layout:
    tag = tag.strip()
    if tag == UNANNOTATED:
        return Layout(UNANNOTATED)
    m = _LAYOUT_RE.match(tag)
    if not m:
        raise ValueError(f"unknown layout tag {tag!r}")
    kind, var = m.group(1), m.group(2)
    if kind == "NL03" and var is None:
        raise ValueError("NL03 needs a variation suffix, e.g. NL03-2")
    if kind != "NL03" and var is not None:
        raise ValueError(f"layout {kind} takes no variation suffix")
    return Layout(kind, int(var) if var is not None else None)


@dataclass(frozen=True)
class Nested:
    """An inline composition used as a single component."""

    layout: Layout
    parts: Tuple["ComponentRef", ...]

    def __str__(self) -> str:
        return "(" + " ".join([str(self.layout)] + [str(p) for p in self.parts]) + ")"


ComponentRef = Union[str, Nested]


@dataclass(frozen=True)
class DecompEntry:
    id: int
    hanzi: str
    codepoint: int
    layout: Layout
    components: Tuple[ComponentRef, ...] = ()
    radicals: Tuple[str, ...] = ()
    line: int = 0

    @property
    def nested(self) -> bool:
        return any(isinstance(c, Nested) for c in self.components)


def leaves(ref: Union[ComponentRef, DecompEntry, Sequence[ComponentRef]]) -> Iterator[str]:
    """Yield leaf characters left to right."""
    if isinstance(ref, DecompEntry):
        ref = ref.components
    if isinstance(ref, str):
        yield ref
    elif isinstance(ref, Nested):
        for p in ref.parts:
            yield from leaves(p)
    else:
        for p in ref:
            yield from leaves(p)


# ---------------------------------------------------------------------------
# parsing


def _tokenize(text: str) -> List[str]:
    out: List[str] = []
    buf = ""
    for ch in text:
        if ch in "()" or ch.isspace():
            if buf:
                out.append(buf)
                buf = ""
            if ch in "()":
                out.append(ch)
        else:
            buf += ch
    if buf:
        out.append(buf)
    return out


def parse_component(cell: str) -> ComponentRef:
    """Parse one component cell: a single character or an s-expression."""
    cell = cell.strip()
    if not cell:
        raise ValueError("empty component")
    if not cell.startswith("("):
        if cell.count("(") or cell.count(")"):
            raise ValueError(f"unbalanced parentheses in {cell!r}")
        if len(cell) != 1:
            raise ValueError(f"component {cell!r} is not a single character")
        return cell
    if cell.count("(") != cell.count(")"):
        raise ValueError(f"unbalanced parentheses in {cell!r}")
    tokens = _tokenize(cell)
    pos = 0

    def expr() -> ComponentRef:
        nonlocal pos
        if pos >= len(tokens):
            raise ValueError(f"unbalanced parentheses in {cell!r}")
        tok = tokens[pos]
        pos += 1
        if tok == ")":
            raise ValueError(f"unbalanced parentheses in {cell!r}")
        if tok != "(":
            if len(tok) != 1:
                raise ValueError(f"component {tok!r} is not a single character")
            return tok
        if pos >= len(tokens):
            raise ValueError(f"unbalanced parentheses in {cell!r}")
        layout = parse_layout(tokens[pos])
        pos += 1
        parts = []
        while pos < len(tokens) and tokens[pos] != ")":
            parts.append(expr())
        if pos >= len(tokens):
            raise ValueError(f"unbalanced parentheses in {cell!r}")
        pos += 1
        if layout.kind in ("NL00", UNANNOTATED):
            raise ValueError(f"{layout} cannot appear nested")
        if len(parts) != layout.arity:
            raise ValueError(f"{layout} expects {layout.arity} components, got {len(parts)}")
        return Nested(layout, tuple(parts))

    ref = expr()
    if pos != len(tokens):
        raise ValueError(f"unbalanced parentheses in {cell!r}")
    return ref


def _parse_line(lineno: int, line: str) -> DecompEntry:
    cols = line.split("\t")
    if len(cols) > 8:
        if any(c.strip() for c in cols[8:]):
            raise TableParseError(lineno, f"expected 8 columns, got {len(cols)}")
        cols = cols[:8]
    cols += [""] * (8 - len(cols))
    id_s, hanzi, cp_s, rad_s, lay_s = (c.strip() for c in cols[:5])
    try:
        ident = int(id_s)
    except ValueError:
        raise TableParseError(lineno, f"bad id {id_s!r}") from None
    m = _CODEPOINT_RE.match(cp_s)
    if not m:
        raise TableParseError(lineno, f"malformed codepoint {cp_s!r}")
    codepoint = int(m.group(1), 16)
    if codepoint > 0x10FFFF:
        raise TableParseError(lineno, f"malformed codepoint {cp_s!r}")
    try:
        layout = parse_layout(lay_s)
    except ValueError as exc:
        raise TableParseError(lineno, str(exc)) from None
    cells = [c.strip() for c in cols[5:8]]
    while cells and not cells[-1]:
        cells.pop()
    try:
        comps = tuple(parse_component(c) for c in cells)
    except ValueError as exc:
        raise TableParseError(lineno, str(exc)) from None
    if layout.annotated and len(comps) != layout.arity:
        raise TableParseError(
            lineno, f"{layout} expects {layout.arity} components, got {len(comps)}"
        )
    radicals = tuple(r for r in rad_s.split() if r) if " " in rad_s else tuple(rad_s)
    return DecompEntry(ident, hanzi, codepoint, layout, comps, radicals, lineno)


def parse_table(text: str) -> List[DecompEntry]:
    """Parse table text into entries, in file order.

    Blank lines and lines starting with ``#`` are skipped.  Errors carry
    the 1-based line number.
    """
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        entries.append(_parse_line(lineno, line))
    return entries


def read_table(path) -> List[DecompEntry]:
    with open(path, encoding="utf-8") as fh:
        return parse_table(fh.read())


def serialize_table(entries: Iterable[DecompEntry]) -> str:
    lines = []
    for e in entries:
        comps = [str(c) for c in e.components] + [""] * (3 - len(e.components))
        lines.append(
            "\t".join(
                [str(e.id), e.hanzi, f"U+{e.codepoint:04X}", "".join(e.radicals), str(e.layout)]
                + comps
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    entry_id: int
    line: int
    kind: str
    message: str


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)
    external: List[str] = field(default_factory=list)
    unannotated: List[int] = field(default_factory=list)

    def __bool__(self) -> bool:
        # truthy when something is wrong
        return bool(self.violations)

    @property
    def ok(self) -> bool:
        return not self.violations

    def by_entry(self) -> Dict[int, List[Violation]]:
        out: Dict[int, List[Violation]] = {}
        for v in self.violations:
            out.setdefault(v.entry_id, []).append(v)
        return out

    def to_text(self) -> str:
        lines = [f"{v.kind}\tid={v.entry_id}\tline={v.line}\t{v.message}" for v in self.violations]
        lines += [f"external\t{c}\tU+{ord(c):04X}" for c in self.external]
        lines += [f"unannotated\tid={i}" for i in self.unannotated]
        return "\n".join(lines) + ("\n" if lines else "")

    def to_json(self) -> str:
        return json.dumps(
            {
                "ok": self.ok,
                "violations": [v.__dict__ for v in self.violations],
                "external": self.external,
                "unannotated": self.unannotated,
            },
            ensure_ascii=False,
            indent=2,
        )


def _check_ref(ref: ComponentRef) -> List[str]:
    problems = []
    if isinstance(ref, str):
        if len(ref) != 1:
            problems.append(f"component {ref!r} is not a single character")
        return problems
    lay = ref.layout
    if lay.kind in ("NL00", UNANNOTATED):
        problems.append(f"{lay} cannot appear nested")
    elif len(ref.parts) != lay.arity:
        problems.append(f"nested {lay} has {len(ref.parts)} components, expects {lay.arity}")
    for p in ref.parts:
        problems.extend(_check_ref(p))
    return problems


def validate(entries: Sequence[DecompEntry]) -> ValidationReport:
    """Check every entry invariant; violations are returned, never raised."""
    report = ValidationReport()
    first_line: Dict[int, DecompEntry] = {}
    known = {e.hanzi for e in entries}
    external = set()
    for e in entries:
        def bad(kind, msg, e=e):
            report.violations.append(Violation(e.id, e.line, kind, msg))

        if e.id <= 0:
            bad("id", f"id {e.id} is not positive")
        if e.id in first_line:
            other = first_line[e.id]
            bad("duplicate-id", f"id {e.id} also used on line {other.line}")
            report.violations.append(
                Violation(other.id, other.line, "duplicate-id", f"id {e.id} also used on line {e.line}")
            )
        else:
            first_line[e.id] = e
        if len(e.hanzi) != 1 or ord(e.hanzi) != e.codepoint:
            bad("codepoint", f"U+{e.codepoint:04X} does not match {e.hanzi!r}")
        if not e.layout.annotated:
            report.unannotated.append(e.id)
            continue
        if len(e.components) != e.layout.arity:
            bad("arity", f"{e.layout} has {len(e.components)} components, expects {e.layout.arity}")
        for c in e.components:
            for msg in _check_ref(c):
                bad("nested", msg)
        for leaf in leaves(e):
            if leaf not in known:
                external.add(leaf)
    report.external = sorted(external, key=ord)
    return report


# ---------------------------------------------------------------------------
# statistics


@dataclass
class LayoutStats:
    layouts: Counter
    variations: Counter
    nested: Counter
    unannotated: int = 0

    @property
    def total(self) -> int:
        return sum(self.layouts.values()) + self.unannotated


def layout_stats(entries: Sequence[DecompEntry]) -> LayoutStats:
    layouts: Counter = Counter()
    variations: Counter = Counter()
    nested: Counter = Counter()
    tbd = 0
    for e in entries:
        if not e.layout.annotated:
            tbd += 1
            continue
        layouts[e.layout.kind] += 1
        if e.layout.variation is not None:
            variations[e.layout.variation] += 1
        if e.nested:
            nested[e.layout.kind] += 1
    return LayoutStats(layouts, variations, nested, tbd)


def component_frequency(entries: Sequence[DecompEntry]) -> List[Tuple[str, int]]:
    """Rank components by the number of characters using them.

    Each entry counts at most once per distinct leaf component; ties are
    broken by ascending codepoint.
    """
    counts: Counter = Counter()
    for e in entries:
        if e.layout.annotated:
            counts.update(set(leaves(e)))
    return sorted(counts.items(), key=lambda kv: (-kv[1], ord(kv[0])))


def coverage_curve(entries: Sequence[DecompEntry], recursive: bool = False) -> List[Tuple[int, int]]:
    """Number of composable characters using the top-n components.

    Without recursion a character is composable when all of its top-level
    components are plain leaves in the pool.  With recursion, composed
    characters join the pool and nested components count as available
    once their own parts are, iterated to a fixed point.
    """
    ranked = [c for c, _ in component_frequency(entries)]
    targets = [e for e in entries if e.layout.annotated and e.layout.kind != "NL00"]
    curve = [(0, 0)]
    if not recursive:
        # rank at which every top-level leaf is available
        need = Counter()
        rank = {c: i + 1 for i, c in enumerate(ranked)}
        for e in targets:
            if any(isinstance(c, Nested) for c in e.components):
                continue
            need[max(rank[c] for c in e.components)] += 1
        total = 0
        for n in range(1, len(ranked) + 1):
            total += need[n]
            curve.append((n, total))
        return curve

    pool = set()
    done = set()

    def available(ref: ComponentRef) -> bool:
        if isinstance(ref, str):
            return ref in pool
        return all(available(p) for p in ref.parts)

    for n, comp in enumerate(ranked, start=1):
        pool.add(comp)
        changed = True
        while changed:
            changed = False
            for i, e in enumerate(targets):
                if i in done:
                    continue
                if all(available(c) for c in e.components):
                    done.add(i)
                    if e.hanzi not in pool:
                        pool.add(e.hanzi)
                    changed = True
        curve.append((n, len(done)))
    return curve


# ---------------------------------------------------------------------------
# composition plans


@dataclass(frozen=True)
class StepRef:
    """Reference to the output of an earlier plan step."""

    index: int

    def __str__(self) -> str:
        return f"#{self.index}"


Operand = Union[str, StepRef]


@dataclass(frozen=True)
class PlanStep:
    layout: Layout
    operands: Tuple[Operand, ...]
    source_layout: Optional[Layout] = None

    def __str__(self) -> str:
        return f"({self.layout} " + " ".join(str(o) for o in self.operands) + ")"


@dataclass(frozen=True)
class CompositionPlan:
    target: str
    steps: Tuple[PlanStep, ...]

    @property
    def layouts(self) -> List[Layout]:
        return [s.layout for s in self.steps]

    def leaf_order(self) -> List[str]:
        """Leaf characters in the order they first enter the plan."""
        out = []
        for s in self.steps:
            out.extend(o for o in s.operands if isinstance(o, str))
        return out


def expand_nested(entry: DecompEntry) -> CompositionPlan:
    """Post-order pairwise plan for composing ``entry``.

    Three-component layouts become two steps with their paired layout:
    ``(c1, c2) -> m`` followed by ``(m, c3)``.
    """
    if not entry.layout.annotated or entry.layout.kind == "NL00":
        raise ValueError(f"cannot plan a composition for layout {entry.layout}")
    steps: List[PlanStep] = []

    def emit(layout: Layout, operands: Sequence[ComponentRef]) -> StepRef:
        ops = [o if isinstance(o, str) else emit(o.layout, o.parts) for o in operands]
        if layout.arity == 3:
            paired = Layout(PAIRED_LAYOUT[layout.kind])
            steps.append(PlanStep(paired, (ops[0], ops[1]), layout))
            mid = StepRef(len(steps) - 1)
            steps.append(PlanStep(paired, (mid, ops[2]), layout))
        else:
            steps.append(PlanStep(layout, tuple(ops)))
        return StepRef(len(steps) - 1)

    emit(entry.layout, entry.components)
    return CompositionPlan(entry.hanzi, tuple(steps))
