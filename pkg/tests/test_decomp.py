from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glyphsmith.decomp import (
    Layout,
    Nested,
    StepRef,
    TableParseError,
    component_frequency,
    coverage_curve,
    expand_nested,
    layout_stats,
    leaves,
    parse_layout,
    parse_table,
    serialize_table,
    validate,
)


def row(*cells):
    return "\t".join(str(c) for c in cells)


def entry_line(i, ch, layout, *comps, radicals=""):
    comps = list(comps) + [""] * (3 - len(comps))
    return row(i, ch, f"U+{ord(ch):04X}", radicals, layout, *comps)


def test_left_right_row():
    (e,) = parse_table("1\t媒\tU+5A92\t女\tNL01\t女\t某\t")
    assert e.id == 1 and e.hanzi == "媒" and e.codepoint == 0x5A92
    assert e.layout == Layout("NL01")
    assert e.components == ("女", "某")
    assert e.radicals == ("女",)


def test_isolated_row_has_no_components():
    (e,) = parse_table("2\t一\tU+4E00\t\tNL00\t\t\t")
    assert e.layout.kind == "NL00" and e.components == ()


def test_nested_component_tree():
    (e,) = parse_table("3\tX\tU+0058\t\tNL02\t(NL01 A B)\tC\t")
    first = e.components[0]
    assert isinstance(first, Nested)
    assert first.layout == Layout("NL01") and first.parts == ("A", "B")
    assert e.nested


def test_enclosure_variation_tag():
    assert parse_layout("NL03-5") == Layout("NL03", 5)
    assert str(Layout("NL03", 5)) == "NL03-5"
    with pytest.raises(ValueError):
        parse_layout("NL03")
    with pytest.raises(ValueError):
        parse_layout("NL01-2")


@pytest.mark.parametrize(
    "line, needle",
    [
        ("1\t媒\tU+ZZ\t\tNL01\t女\t某\t", "codepoint"),
        ("1\t媒\tU+5A92\t\tNL09\t女\t某\t", "layout"),
        ("1\t媒\tU+5A92\t\tNL04\t女\t某\t", "component"),
        ("1\tX\tU+0058\t\tNL02\t(NL01 A B\tC\t", "parenthes"),
    ],
)
def test_parse_errors_carry_line_numbers(line, needle):
    text = entry_line(7, "一", "NL00") + "\n" + line
    with pytest.raises(TableParseError) as err:
        parse_table(text)
    assert err.value.line == 2
    assert needle in str(err.value).lower()


def test_duplicate_id_names_both_lines():
    entries = parse_table(entry_line(1, "好", "NL01", "女", "子") + "\n" + entry_line(1, "林", "NL01", "木", "木"))
    report = validate(entries)
    dup = [v for v in report.violations if v.kind == "duplicate-id"]
    assert sorted(v.line for v in dup) == [1, 2]


def test_three_component_layout_with_two_components_is_reported():
    from glyphsmith.decomp import DecompEntry

    e = DecompEntry(1, "树", ord("树"), Layout("NL04"), ("木", "寸"), line=1)
    assert [v.kind for v in validate([e]).violations] == ["arity"]


def test_consistent_table_validates_clean():
    text = "\n".join(
        [entry_line(1, "木", "NL00"), entry_line(2, "林", "NL01", "木", "木"), entry_line(3, "森", "NL02", "木", "林")]
    )
    report = validate(parse_table(text))
    assert report.ok and report.external == []


def test_unannotated_rows_are_flagged_and_left_out_of_stats():
    text = entry_line(1, "林", "NL01", "木", "木") + "\n" + entry_line(2, "龘", "TBD")
    entries = parse_table(text)
    assert validate(entries).unannotated == [2]
    stats = layout_stats(entries)
    assert dict(stats.layouts) == {"NL01": 1} and stats.unannotated == 1
    assert component_frequency(entries) == [("木", 1)]


def test_layout_stats_examples():
    entries = parse_table(
        "\n".join(
            [
                entry_line(1, "好", "NL01", "女", "子"),
                entry_line(2, "林", "NL01", "木", "木"),
                entry_line(3, "吕", "NL02", "口", "口"),
                entry_line(4, "边", "NL03-5", "辶", "力"),
                entry_line(5, "品", "NL02", "口", "(NL01 口 口)"),
            ]
        )
    )
    stats = layout_stats(entries)
    assert dict(stats.layouts) == {"NL01": 2, "NL02": 2, "NL03": 1}
    assert dict(stats.variations) == {5: 1}
    assert dict(stats.nested) == {"NL02": 1}
    assert stats.total == len(entries)


def test_component_frequency_counts_each_character_once():
    entries = parse_table(
        "\n".join([entry_line(1, "X", "NL01", "A", "B"), entry_line(2, "Y", "NL01", "A", "C")])
    )
    assert component_frequency(entries) == [("A", 2), ("B", 1), ("C", 1)]
    nested = parse_table(entry_line(1, "Z", "NL02", "(NL01 A B)", "C"))
    assert component_frequency(nested) == [("A", 1), ("B", 1), ("C", 1)]
    repeat = parse_table(entry_line(1, "林", "NL01", "木", "木"))
    assert component_frequency(repeat) == [("木", 1)]


def test_coverage_curve_hand_enumeration():
    entries = parse_table(
        "\n".join(
            [
                entry_line(1, "X", "NL01", "A", "B"),
                entry_line(2, "Y", "NL01", "A", "A"),
                entry_line(3, "Z", "NL02", "(NL01 A B)", "A"),
            ]
        )
    )
    flat = dict(coverage_curve(entries))
    deep = dict(coverage_curve(entries, recursive=True))
    assert flat[0] == 0 and deep[0] == 0
    assert flat[2] == 2
    assert deep[2] == 3


def test_plan_for_single_step():
    (e,) = parse_table(entry_line(1, "媒", "NL01", "女", "某"))
    plan = expand_nested(e)
    assert len(plan.steps) == 1
    assert plan.steps[0].operands == ("女", "某")


def test_plan_for_left_middle_right():
    (e,) = parse_table(entry_line(1, "树", "NL04", "木", "又", "寸"))
    steps = expand_nested(e).steps
    assert [str(s.layout) for s in steps] == ["NL01", "NL01"]
    assert steps[0].operands == ("木", "又")
    assert steps[1].operands == (StepRef(0), "寸")


def test_plan_for_top_middle_bottom_uses_top_bottom_steps():
    (e,) = parse_table(entry_line(1, "意", "NL05", "立", "日", "心"))
    assert [str(s.layout) for s in expand_nested(e).steps] == ["NL02", "NL02"]


def test_plan_is_post_order():
    (e,) = parse_table(entry_line(3, "X", "NL02", "(NL01 A B)", "C"))
    steps = expand_nested(e).steps
    assert [str(s.layout) for s in steps] == ["NL01", "NL02"]
    assert steps[0].operands == ("A", "B")
    assert steps[1].operands == (StepRef(0), "C")


def test_isolated_entry_has_no_plan():
    (e,) = parse_table(entry_line(1, "一", "NL00"))
    with pytest.raises(ValueError):
        expand_nested(e)


# -- random tables -----------------------------------------------------------

LEAVES = "ABCDEFGH"
PAIR_LAYOUTS = ["NL01", "NL02", "NL03-0", "NL03-4", "NL03-7"]


@st.composite
def component_refs(draw, depth=2):
    if depth == 0 or draw(st.booleans()):
        return draw(st.sampled_from(LEAVES))
    if draw(st.booleans()):
        kind = draw(st.sampled_from(PAIR_LAYOUTS))
        parts = [draw(component_refs(depth=depth - 1)) for _ in range(2)]
    else:
        kind = draw(st.sampled_from(["NL04", "NL05"]))
        parts = [draw(component_refs(depth=depth - 1)) for _ in range(3)]
    return Nested(parse_layout(kind), tuple(parts))


@st.composite
def tables(draw, max_rows=12):
    n = draw(st.integers(1, max_rows))
    lines = []
    for i in range(n):
        ch = chr(0x4E00 + i)
        if draw(st.integers(0, 5)) == 0:
            lines.append(entry_line(i + 1, ch, "NL00"))
            continue
        if draw(st.booleans()):
            layout, arity = draw(st.sampled_from(PAIR_LAYOUTS)), 2
        else:
            layout, arity = draw(st.sampled_from(["NL04", "NL05"])), 3
        comps = [str(draw(component_refs())) for _ in range(arity)]
        lines.append(entry_line(i + 1, ch, layout, *comps))
    return "\n".join(lines)


def _nodes(ref):
    if isinstance(ref, str):
        return 0, 0
    two = 1 if ref.layout.arity == 2 else 0
    three = 1 - two
    for p in ref.parts:
        a, b = _nodes(p)
        two, three = two + a, three + b
    return two, three


@settings(max_examples=60, deadline=None)
@given(tables())
def test_parse_serialize_parse_is_stable(text):
    once = parse_table(text)
    again = parse_table(serialize_table(once))
    assert [(e.id, e.hanzi, e.layout, e.components) for e in once] == [
        (e.id, e.hanzi, e.layout, e.components) for e in again
    ]
    assert serialize_table(again) == serialize_table(once)


@settings(max_examples=60, deadline=None)
@given(tables())
def test_flat_coverage_never_exceeds_recursive(text):
    entries = parse_table(text)
    flat, deep = coverage_curve(entries), coverage_curve(entries, recursive=True)
    assert [n for n, _ in flat] == [n for n, _ in deep]
    assert all(a <= b for (_, a), (_, b) in zip(flat, deep))
    counts = [c for _, c in deep]
    assert counts == sorted(counts)


@settings(max_examples=60, deadline=None)
@given(tables())
def test_plan_step_count_matches_tree(text):
    for e in parse_table(text):
        if e.layout.kind == "NL00":
            continue
        two, three = _nodes(Nested(e.layout, e.components))
        assert len(expand_nested(e).steps) == two + 2 * three


@settings(max_examples=60, deadline=None)
@given(tables())
def test_frequency_matches_naive_recount(text):
    entries = parse_table(text)
    naive = Counter()
    for e in entries:
        for c in set(leaves(e)):
            naive[c] += 1
    got = component_frequency(entries)
    assert dict(got) == dict(naive)
    keys = [(-n, ord(c)) for c, n in got]
    assert keys == sorted(keys)
