"""Local trust state held by one entity.

A :class:`TrustStore` keeps the contextual arcs an entity holds as trustor
and evolves them from experience reports (exponential moving average) and
referee penalties.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, Optional, Tuple

EntityId = str

DEFAULT_ALPHA = 0.3
DEFAULT_REFEREE_PENALTY = 0.5


class TrustError(Exception):
    """Base class for trust-state errors."""


class InvalidValue(TrustError, ValueError):
    pass


class OwnerMismatch(TrustError):
    pass


def check_value(value: float, what: str = "trust value") -> float:
    """Return ``value`` as a float, rejecting anything outside [0, 1]."""
    v = float(value)
    if not 0.0 <= v <= 1.0:  # also rejects NaN
        raise InvalidValue(f"{what} must be in [0, 1], got {value!r}")
    return v


class ContextTag(enum.Enum):
    IDENTITY_PROVISION = "IdentityProvision"
    SELF_ASSERTION_RESPONSIBILITY = "SelfAssertionResponsibility"
    MAKE_GOOD_ASSERTIONS = "MakeGoodAssertions"
    MAINTAIN_PRIVACY = "MaintainPrivacy"
    GOOD_INTENTIONS = "GoodIntentions"
    CUSTOM = "Custom"


@dataclass(frozen=True, order=True)
class TrustContext:
    """Scope in which a rating is meaningful.

    ``label`` is only set for custom contexts. ``referral`` marks the derived
    meta-context ``Referral(target)``; referral contexts never nest.
    """

    tag: ContextTag = field(compare=False)
    label: str = field(default="", compare=False)
    referral: bool = False
    _key: str = field(init=False, repr=False, compare=True)
    _text: str = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.tag is ContextTag.CUSTOM:
            if not self.label or any(c.isspace() or c in "()" for c in self.label):
                raise ValueError(f"bad custom context label {self.label!r}")
        elif self.label:
            raise ValueError("only custom contexts carry a label")
        object.__setattr__(self, "_key", self.base_name)
        # sort keys call str() constantly; render once
        object.__setattr__(self, "_text",
                           f"Referral({self._key})" if self.referral else self._key)

    @property
    def base_name(self) -> str:
        if self.tag is ContextTag.CUSTOM:
            return f"Custom:{self.label}"
        return self.tag.value

    @property
    def target(self) -> "TrustContext":
        """The non-referral context this one is about."""
        return replace(self, referral=False) if self.referral else self

    def referral_context(self) -> "TrustContext":
        if self.referral:
            raise ValueError("Referral(Referral(...)) is not a valid context")
        return replace(self, referral=True)

    def __str__(self) -> str:
        return self._text

    @classmethod
    def parse(cls, text: str) -> "TrustContext":
        if text.startswith("Referral(") and text.endswith(")"):
            inner = cls.parse(text[len("Referral("):-1])
            return inner.referral_context()
        if text.startswith("Custom:"):
            return cls(ContextTag.CUSTOM, text[len("Custom:"):])
        try:
            tag = ContextTag(text)
        except ValueError:
            raise ValueError(f"unknown trust context {text!r}") from None
        if tag is ContextTag.CUSTOM:
            raise ValueError("custom contexts are written Custom:<label>")
        return cls(tag)


IDENTITY_PROVISION = TrustContext(ContextTag.IDENTITY_PROVISION)
SELF_ASSERTION_RESPONSIBILITY = TrustContext(ContextTag.SELF_ASSERTION_RESPONSIBILITY)
MAKE_GOOD_ASSERTIONS = TrustContext(ContextTag.MAKE_GOOD_ASSERTIONS)
MAINTAIN_PRIVACY = TrustContext(ContextTag.MAINTAIN_PRIVACY)
GOOD_INTENTIONS = TrustContext(ContextTag.GOOD_INTENTIONS)


class ArcKind(enum.Enum):
    PERFORMANCE = "performance"
    REFERRAL = "referral"


@dataclass(frozen=True)
class TrustArc:
    """A directed trust edge.

    ``context`` is always the non-referral target context. A referral arc
    lives in the meta-context ``Referral(context)``, see :attr:`full_context`.
    """

    trustor: EntityId
    trustee: EntityId
    context: TrustContext
    kind: ArcKind
    value: float
    updated_at: int = 0

    def __post_init__(self) -> None:
        if not self.trustor or not self.trustee:
            raise ValueError("entity ids must be non-empty")
        if self.trustor == self.trustee:
            raise ValueError(f"self-arc on {self.trustor!r}")
        if self.context.referral:
            raise ValueError("arc context must be the target context, not Referral(...)")
        object.__setattr__(self, "value", check_value(self.value))

    @property
    def key(self) -> Tuple[EntityId, EntityId, TrustContext, ArcKind]:
        return (self.trustor, self.trustee, self.context, self.kind)

    @property
    def full_context(self) -> TrustContext:
        if self.kind is ArcKind.REFERRAL:
            return self.context.referral_context()
        return self.context

    def with_value(self, value: float, at: Optional[int] = None) -> "TrustArc":
        return replace(self, value=value, updated_at=self.updated_at if at is None else at)


@dataclass(frozen=True)
class ExperienceReport:
    trustee: EntityId
    context: TrustContext
    outcome: float
    source_operation: Optional[str] = None
    at: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "outcome", check_value(self.outcome, "outcome"))


class PenaltyStatus(enum.Enum):
    APPLIED = "applied"
    NO_REFERRAL_ARC = "no_referral_arc"


_StoreKey = Tuple[EntityId, TrustContext, ArcKind]


class TrustStore:
    """Arcs held by ``owner`` as trustor, plus their update parameters.

    Single-writer: callers serialize mutation; reads may be concurrent.
    """

    def __init__(self, owner: EntityId, alpha: float = DEFAULT_ALPHA,
                 referee_penalty: float = DEFAULT_REFEREE_PENALTY) -> None:
        if not owner:
            raise ValueError("owner must be non-empty")
        if not 0.0 < alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {alpha}")
        if not 0.0 < referee_penalty <= 1.0:
            raise ValueError(f"referee_penalty must be in (0, 1], got {referee_penalty}")
        self.owner = owner
        self.alpha = alpha
        self.referee_penalty = referee_penalty
        self._arcs: Dict[_StoreKey, TrustArc] = {}

    def __len__(self) -> int:
        return len(self._arcs)

    def __iter__(self) -> Iterator[TrustArc]:
        return iter(self.arcs())

    def arcs(self) -> list:
        """All arcs in deterministic (trustee, context, kind) order."""
        return [self._arcs[k] for k in sorted(self._arcs, key=_sort_key)]

    def record_arc(self, arc: TrustArc, at: Optional[int] = None) -> "TrustStore":
        if arc.trustor != self.owner:
            raise OwnerMismatch(f"arc trustor {arc.trustor!r} is not store owner {self.owner!r}")
        check_value(arc.value)
        if at is not None:
            arc = arc.with_value(arc.value, at)
        self._arcs[(arc.trustee, arc.context, arc.kind)] = arc
        return self

    def get_arc(self, trustee: EntityId, context: TrustContext,
                kind: ArcKind) -> Optional[TrustArc]:
        return self._arcs.get((trustee, context.target, kind))

    def direct_rating(self, trustee: EntityId, context: TrustContext,
                      kind: ArcKind = ArcKind.PERFORMANCE) -> Optional[float]:
        arc = self.get_arc(trustee, context, kind)
        return None if arc is None else arc.value

    def apply_experience(self, report: ExperienceReport) -> float:
        """Fold an experience report into the performance arc; returns the new value."""
        outcome = check_value(report.outcome, "outcome")
        old = self.direct_rating(report.trustee, report.context, ArcKind.PERFORMANCE)
        if old is None:
            new = outcome
        else:
            new = (1.0 - self.alpha) * old + self.alpha * outcome
        new = min(1.0, max(0.0, new))
        self.record_arc(TrustArc(self.owner, report.trustee, report.context.target,
                                 ArcKind.PERFORMANCE, new, report.at))
        return new

    def penalize_referee(self, referee: EntityId, target_context: TrustContext,
                         at: Optional[int] = None) -> PenaltyStatus:
        arc = self.get_arc(referee, target_context, ArcKind.REFERRAL)
        if arc is None:
            return PenaltyStatus.NO_REFERRAL_ARC
        new = min(1.0, max(0.0, arc.value * (1.0 - self.referee_penalty)))
        self._arcs[(referee, arc.context, ArcKind.REFERRAL)] = arc.with_value(new, at)
        return PenaltyStatus.APPLIED

    def copy(self) -> "TrustStore":
        other = TrustStore(self.owner, self.alpha, self.referee_penalty)
        other._arcs = dict(self._arcs)
        return other


def _sort_key(key: _StoreKey):
    trustee, context, kind = key
    return (trustee, str(context), kind.value)
