"""Text renderings for the CLI: trace waterfalls, critical paths and tables.

Everything here is a pure function of its input, so the same tree or table
always renders to the same bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

from ..collector.tree import Anomaly, SpanNode, TraceTree
from ..model import format_float

BAR_WIDTH = 40

ANOMALY_NOTES = {
    Anomaly.ORPHANED_SPANS: "spans with missing parents hang under a synthetic root",
    Anomaly.CHILD_LONGER_THAN_PARENT: "child outlasts its parent; timing left as reported",
    Anomaly.CLOCK_ADJUSTED: "start moved to repair clock skew",
    Anomaly.DUPLICATE_SPAN_ID: "repeated span ids were discarded",
}
_ANOMALY_ORDER = list(Anomaly)


def format_us_as_ms(us: int) -> str:
    """Exact fixed-point milliseconds: 56557 -> ``56.557``."""
    sign = "-" if us < 0 else ""
    q, r = divmod(abs(us), 1000)
    return f"{sign}{q}.{r:03d}"


def _cell(offset: int, total: int) -> int:
    """offset/total scaled to BAR_WIDTH cells, rounded half up."""
    offset = min(max(offset, 0), total)
    return (2 * offset * BAR_WIDTH + total) // (2 * total)


def bar(start: int, duration: int, total: int) -> str:
    if total <= 0:
        return "#" * BAR_WIDTH
    a = _cell(start, total)
    b = _cell(start + duration, total)
    if b <= a:  # always show at least one cell
        a, b = (a, a + 1) if a < BAR_WIDTH else (BAR_WIDTH - 1, BAR_WIDTH)
    return "." * a + "#" * (b - a) + "." * (BAR_WIDTH - b)


def waterfall(tree: TraceTree) -> str:
    root = tree.root
    rows = list(tree.walk())
    present = set(tree.anomalies)
    for n, _ in rows:
        present |= n.flags
    numbers = {a: i for i, a in enumerate((a for a in _ANOMALY_ORDER if a in present), 1)}

    labels = [f"{'  ' * depth}{n.service} {n.operation}" for n, depth in rows]
    width = max([len("SPAN")] + [len(label) for label in labels])
    out = [
        f"trace {tree.trace_id.hex}  spans {tree.span_count}  duration {format_us_as_ms(root.duration)} ms",
        f"{'SPAN':<{width}}  {'START(ms)':>10}  {'DUR(ms)':>10}  {'TIMELINE':<{BAR_WIDTH + 2}}  STATUS",
    ]
    for (n, _), label in zip(rows, labels):
        offset = n.start - root.start
        status = "ERR" if n.is_error else ("--" if n.synthetic else "OK")
        marks = "".join(f" [{numbers[a]}]" for a in _ANOMALY_ORDER if a in n.flags)
        out.append(
            f"{label:<{width}}  {format_us_as_ms(offset):>10}  {format_us_as_ms(n.duration):>10}"
            f"  |{bar(offset, n.duration, root.duration)}|  {status}{marks}"
        )
    if numbers:
        out.append("")
        out += [f"[{i}] {a.value}: {ANOMALY_NOTES[a]}" for a, i in numbers.items()]
    if tree.unattached_logs:
        out.append(f"note: {tree.unattached_logs} log record(s) referenced unknown spans")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# critical path


@dataclass(frozen=True)
class PathStep:
    node: SpanNode
    depth: int
    start: int  # clamped to the parent
    end: int
    self_time: int

    @property
    def total_time(self) -> int:
        return self.end - self.start


def _pick_key(item: tuple[SpanNode, int, int]) -> tuple:
    node, start, end = item
    sid = node.span_id.value if node.span_id is not None else -1
    return (end, -start, -sid)


def critical_path(tree: TraceTree) -> list[PathStep]:
    """Spans that bound the trace's end-to-end latency, with self-times.

    Walking back from a span's end, repeatedly take the child (clamped to the
    span) with the latest end at or before the cursor -- ties go to the
    earlier start, then the lower span id -- and move the cursor to its
    start; the time no chosen child covers is the span's self-time. The
    result is in pre-order with siblings chronological, and the self-times
    add up to the root duration.
    """
    steps: list[PathStep] = []

    def visit(node: SpanNode, depth: int, lo: int, hi: int) -> None:
        kids = []
        for c in node.children:
            s, e = max(c.start, lo), min(c.end, hi)
            if e > s:
                kids.append((c, s, e))
        cursor, chosen = hi, []
        while True:
            cands = [k for k in kids if k[2] <= cursor]
            if not cands:
                break
            pick = max(cands, key=_pick_key)
            chosen.append(pick)
            cursor = pick[1]
        covered = sum(e - s for _, s, e in chosen)
        steps.append(PathStep(node, depth, lo, hi, (hi - lo) - covered))
        for c, s, e in reversed(chosen):
            visit(c, depth + 1, s, e)

    root = tree.root
    visit(root, 0, root.start, root.end)
    return steps


# --------------------------------------------------------------------------
# tables


def format_cell(v: Any, fmt: str) -> str:
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format_float(v) if fmt == "tsv" else f"{v:.3f}"
    return str(v)


def render_table(columns: Sequence[str], rows: Sequence[Sequence[Any]], fmt: str = "plain") -> str:
    """``tsv``: header plus tab-separated rows, floats in shortest
    round-trip form. ``plain``: aligned columns, numbers right-aligned with
    three decimals."""
    cells = [[format_cell(v, fmt) for v in row] for row in rows]
    if fmt == "tsv":
        return "".join("\t".join(r) + "\n" for r in [list(columns), *cells])
    numeric = [
        bool(rows) and all(isinstance(r[i], (int, float)) or r[i] is None for r in rows) for i in range(len(columns))
    ]
    widths = [max([len(c)] + [len(r[i]) for r in cells]) for i, c in enumerate(columns)]

    def line(values: Sequence[str]) -> str:
        parts = [v.rjust(w) if num else v.ljust(w) for v, w, num in zip(values, widths, numeric)]
        return "  ".join(parts).rstrip()

    return "".join(line(r) + "\n" for r in [list(columns), *cells])


def critical_path_table(steps: Sequence[PathStep]) -> tuple[tuple[str, ...], list[tuple]]:
    columns = ("span", "service", "operation", "self_us", "total_us")
    rows = [
        (
            "  " * s.depth + (s.node.span_id.hex if s.node.span_id is not None else "-"),
            s.node.service,
            s.node.operation,
            s.self_time,
            s.total_time,
        )
        for s in steps
    ]
    return columns, rows
