from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from spanforge.context import MalformedContext, TraceContext, extract, inject, new_root_context
from spanforge.model import IdSource
from strategies import span_ids, trace_ids


def test_head_decision_is_carried():
    assert new_root_context(IdSource(1), True).sampled is True
    assert new_root_context(IdSource(1), False).sampled is False


def test_distinct_seeds_distinct_ids():
    assert new_root_context(IdSource(1), True).trace_id != new_root_context(IdSource(2), True).trace_id


def test_seed_7_golden_ids():
    ids = IdSource(7)
    a, b = new_root_context(ids, True), new_root_context(ids, True)
    assert (a.trace_id.hex, a.parent_span_id.hex) == ("6513270e269e0d37f2a74de452e6b438", "0c5c7fd0a6a3a450")
    assert (b.trace_id.hex, b.parent_span_id.hex) == ("1818e811892f902bd23f0824128b2f33", "9531985d5d9dc9f8")


def test_inject_writes_three_keys_and_keeps_others():
    ctx = new_root_context(IdSource(3), False)
    carrier = {"auth": "token"}
    inject(ctx, carrier)
    assert carrier["sampled"] == "0"
    assert carrier["auth"] == "token"
    assert set(carrier) == {"auth", "trace-id", "parent-span-id", "sampled"}
    assert len(carrier["trace-id"]) == 32 and len(carrier["parent-span-id"]) == 16


def test_absent_and_partial():
    assert extract({}) is None
    assert extract({"auth": "x"}) is None
    ctx = new_root_context(IdSource(3), True)
    carrier: dict[str, str] = {}
    inject(ctx, carrier)
    del carrier["sampled"]
    with pytest.raises(MalformedContext):
        extract(carrier)


@pytest.mark.parametrize(
    "field,value", [("trace-id", "xyz"), ("trace-id", "0" * 32), ("parent-span-id", "123"), ("sampled", "yes")]
)
def test_unparsable_values(field, value):
    carrier: dict[str, str] = {}
    inject(new_root_context(IdSource(3), True), carrier)
    carrier[field] = value
    with pytest.raises(MalformedContext):
        extract(carrier)


@given(trace_ids, span_ids, st.booleans())
def test_inject_extract_round_trip(tid, sid, sampled):
    ctx = TraceContext(tid, sid, sampled)
    carrier: dict[str, str] = {}
    inject(ctx, carrier)
    assert extract(carrier) == ctx


@given(trace_ids, span_ids, st.booleans(), st.lists(span_ids, max_size=10))
def test_child_contexts_keep_trace_and_sampling(tid, sid, sampled, chain):
    ctx = TraceContext(tid, sid, sampled)
    for s in chain:
        ctx = ctx.child(s)
        assert ctx.trace_id == tid and ctx.sampled == sampled
