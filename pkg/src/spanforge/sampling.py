"""Head, tail and hybrid trace sampling.

Every decision is a pure function of the policy and the trace, so reruns over
the same corpus retain exactly the same traces. Both head and tail random
choices hash the trace id with 64-bit FNV-1a over its 16 big-endian bytes and
compare ``hash / 2**64`` with the configured rate; the tail baseline XORs a
salt into the id first so it does not simply repeat the head decision.
"""

from __future__ import annotations

import configparser
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Union

from .model import TraceId

if TYPE_CHECKING:
    from .collector.tree import TraceTree

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

DEFAULT_SALT = 0x9E3779B97F4A7C15F39CC0605CEDC834
BASELINE_REASON = "baseline"


def fnv1a64(data: bytes) -> int:
    h = FNV64_OFFSET
    for b in data:
        h = ((h ^ b) * FNV64_PRIME) & _MASK64
    return h


def normalize(h: int) -> float:
    return h / 2**64


def _check_rate(p: float, what: str) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{what} must be in [0, 1], got {p}")
    return p


# --------------------------------------------------------------------------
# tail rules


@dataclass(frozen=True)
class AnyError:
    name = "any_error"

    def matches(self, tree: TraceTree) -> bool:
        return tree.has_error


@dataclass(frozen=True)
class RootDurationOver:
    threshold_us: int
    operation: str | None = None
    name = "root_duration_over"

    def __post_init__(self) -> None:
        if self.threshold_us <= 0:
            raise ValueError("duration threshold must be positive")

    def matches(self, tree: TraceTree) -> bool:
        if self.operation is not None and tree.root.operation != self.operation:
            return False
        return tree.duration > self.threshold_us


@dataclass(frozen=True)
class TagEquals:
    key: str
    value: str
    name = "tag_equals"

    def matches(self, tree: TraceTree) -> bool:
        return any(s.tags.get(self.key) == self.value for s in tree.spans())


Predicate = Union[AnyError, RootDurationOver, TagEquals]


class Action(str, Enum):
    KEEP = "keep"
    DROP = "drop"


@dataclass(frozen=True)
class TailRule:
    predicate: Predicate
    action: Action = Action.KEEP
    name: str | None = None

    @property
    def reason(self) -> str:
        return self.name or self.predicate.name


@dataclass
class SamplingPolicy:
    head_rates: dict[str, float] = field(default_factory=dict)
    default_rate: float = 1.0
    tail_rules: tuple[TailRule, ...] = ()
    baseline_keep: float = 1.0
    salt: int = DEFAULT_SALT

    def __post_init__(self) -> None:
        self.default_rate = _check_rate(self.default_rate, "default head rate")
        self.baseline_keep = _check_rate(self.baseline_keep, "baseline_keep")
        self.head_rates = {s: _check_rate(r, f"head rate for {s}") for s, r in self.head_rates.items()}
        self.tail_rules = tuple(self.tail_rules)

    def rate(self, service: str) -> float:
        return self.head_rates.get(service, self.default_rate)

    @classmethod
    def keep_all(cls) -> SamplingPolicy:
        return cls()

    @classmethod
    def default(cls) -> SamplingPolicy:
        """Keep errors and traces slower than 1 s, plus 10% of the rest."""
        return cls(
            tail_rules=(TailRule(AnyError()), TailRule(RootDurationOver(1_000_000))),
            baseline_keep=0.1,
        )

    # policy file: INI with [head] service = rate and [tail] rule.N lines

    @classmethod
    def parse(cls, text: str) -> SamplingPolicy:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str  # keep service names verbatim
        cp.read_string(text)
        head = dict(cp["head"]) if cp.has_section("head") else {}
        default_rate = float(head.pop("default", 1.0))
        rates = {svc: float(r) for svc, r in head.items()}
        tail = cp["tail"] if cp.has_section("tail") else {}
        rule_keys = sorted((k for k in tail if k.startswith("rule.")), key=lambda k: int(k[5:]))
        rules = tuple(_parse_rule(tail[k]) for k in rule_keys)
        kw = {}
        if "salt" in tail:
            kw["salt"] = int(tail["salt"], 16)
        return cls(rates, default_rate, rules, float(tail.get("baseline_keep", 1.0)), **kw)

    @classmethod
    def load(cls, path: str | Path) -> SamplingPolicy:
        return cls.parse(Path(path).read_text())

    def to_text(self) -> str:
        lines = ["[head]", f"default = {self.default_rate!r}"]
        lines += [f"{svc} = {r!r}" for svc, r in sorted(self.head_rates.items())]
        lines += ["", "[tail]", f"baseline_keep = {self.baseline_keep!r}", f"salt = {self.salt:032x}"]
        for i, rule in enumerate(self.tail_rules, 1):
            lines.append(f"rule.{i} = {_format_rule(rule)}")
        return "\n".join(lines) + "\n"


def _parse_rule(text: str) -> TailRule:
    parts = text.split()
    if len(parts) < 2 or parts[-1] not in ("keep", "drop"):
        raise ValueError(f"rule must end in keep or drop: {text!r}")
    kind, args, action = parts[0], parts[1:-1], Action(parts[-1])
    if kind == "any_error" and not args:
        return TailRule(AnyError(), action)
    if kind == "root_duration_over" and len(args) in (1, 2):
        return TailRule(RootDurationOver(int(args[0]), args[1] if len(args) == 2 else None), action)
    if kind == "tag_equals" and len(args) == 2:
        return TailRule(TagEquals(args[0], args[1]), action)
    raise ValueError(f"unknown rule {text!r}")


def _format_rule(rule: TailRule) -> str:
    p = rule.predicate
    if isinstance(p, AnyError):
        args = []
    elif isinstance(p, RootDurationOver):
        args = [str(p.threshold_us)] + ([p.operation] if p.operation else [])
    else:
        args = [p.key, p.value]
    return " ".join([p.name, *args, rule.action.value])


# --------------------------------------------------------------------------
# decisions


def head_decide(policy: SamplingPolicy, ingress_service: str, trace_id: TraceId) -> bool:
    return normalize(fnv1a64(trace_id.to_bytes())) < policy.rate(ingress_service)


def baseline_hash(trace_id: TraceId, salt: int) -> int:
    return fnv1a64((trace_id.value ^ salt).to_bytes(16, "big"))


def tail_decide(policy: SamplingPolicy, tree: TraceTree) -> tuple[Action, str]:
    for rule in policy.tail_rules:
        if rule.predicate.matches(tree):
            return rule.action, rule.reason
    keep = normalize(baseline_hash(tree.trace_id, policy.salt)) < policy.baseline_keep
    return (Action.KEEP if keep else Action.DROP), BASELINE_REASON


@dataclass
class SamplingStats:
    evaluated: int = 0
    kept_by_reason: Counter = field(default_factory=Counter)
    dropped: int = 0

    @property
    def kept(self) -> int:
        return sum(self.kept_by_reason.values())

    def record(self, action: Action, reason: str) -> None:
        self.evaluated += 1
        if action is Action.KEEP:
            self.kept_by_reason[reason] += 1
        else:
            self.dropped += 1


def apply(policy: SamplingPolicy, trees: Iterable[TraceTree], stats: SamplingStats | None = None) -> tuple[list[TraceTree], SamplingStats]:
    stats = stats if stats is not None else SamplingStats()
    kept = []
    for tree in trees:
        action, reason = tail_decide(policy, tree)
        stats.record(action, reason)
        if action is Action.KEEP:
            kept.append(tree)
    return kept, stats


def export_stats(stats: SamplingStats, registry, previous: Mapping[str, int] | None = None) -> None:
    """Publish ``sampler_kept_total{reason}`` and ``sampler_dropped_total``.

    ``previous`` holds the counts already published, so repeated exports add
    only the difference.
    """
    previous = previous or {}
    kept = registry.counter("sampler_kept_total")
    for reason, n in sorted(stats.kept_by_reason.items()):
        kept.add(n - previous.get(reason, 0), {"reason": reason})
    registry.counter("sampler_dropped_total").add(stats.dropped - previous.get("__dropped", 0))
