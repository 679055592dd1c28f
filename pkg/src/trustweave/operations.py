"""Identity operations: declarative protocol specs run as state machines.

An :class:`OperationSpec` is an ordered list of steps. Control passes with
each message: the initiator (sender of the first message) holds control at
the start and every later step is performed by whichever role received the
most recent message. Messages between roles bound to the same entity are
internal and never touch the network.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .identity import (Credential, IdentityAssertion, VerificationError, authenticate_local,
                       create_assertion, verify_assertion, IdentityError)
from .messages import OperationMessage, PayloadKind
from .trust_core import (EntityId, GOOD_INTENTIONS, IDENTITY_PROVISION, MAINTAIN_PRIVACY,
                         MAKE_GOOD_ASSERTIONS, SELF_ASSERTION_RESPONSIBILITY, TrustContext,
                         check_value)
from .trust_network import Basis, TrustRating

DEFAULT_MAX_TICKS = 1000
FAILURE_CODE = "authn_failed"


class Role(enum.Enum):
    USER = "User"
    USER_IDP = "UserIdP"
    SP = "SP"
    SP_IDP = "SPIdP"


class RelationshipId(enum.Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"
    E = "E"
    F = "F"
    G = "G"
    H = "H"

    @property
    def trustor_role(self) -> Role:
        return _RELATIONSHIPS[self][0]

    @property
    def trustee_role(self) -> Role:
        return _RELATIONSHIPS[self][1]

    @property
    def context(self) -> TrustContext:
        return _RELATIONSHIPS[self][2]


_RELATIONSHIPS = {
    RelationshipId.A: (Role.USER, Role.USER_IDP, IDENTITY_PROVISION),
    RelationshipId.B: (Role.USER_IDP, Role.USER, SELF_ASSERTION_RESPONSIBILITY),
    RelationshipId.C: (Role.SP_IDP, Role.USER_IDP, MAKE_GOOD_ASSERTIONS),
    RelationshipId.D: (Role.USER_IDP, Role.SP_IDP, MAINTAIN_PRIVACY),
    RelationshipId.E: (Role.USER, Role.SP, MAINTAIN_PRIVACY),
    RelationshipId.F: (Role.SP, Role.USER, GOOD_INTENTIONS),
    # G and H mirror A and B between the SP and its IdP
    RelationshipId.G: (Role.SP, Role.SP_IDP, IDENTITY_PROVISION),
    RelationshipId.H: (Role.SP_IDP, Role.SP, SELF_ASSERTION_RESPONSIBILITY),
}


class ActionKind(enum.Enum):
    AUTHENTICATE = "authenticate"
    ISSUE_ASSERTION = "issue_assertion"
    VERIFY_ASSERTION = "verify_assertion"


@dataclass(frozen=True)
class Message:
    sender: Role
    receiver: Role
    payload_kind: PayloadKind
    connection: Optional[int] = None


@dataclass(frozen=True)
class TrustCheck:
    checker: Role
    subject: Role
    relationship: RelationshipId
    threshold: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "threshold", check_value(self.threshold, "threshold"))


@dataclass(frozen=True)
class LocalAction:
    """A step performed inside one role.

    ``peer`` is the audience for ISSUE_ASSERTION; the other kinds ignore it.
    AUTHENTICATE and ISSUE_ASSERTION act on the spec's ``subject`` role.
    """

    role: Role
    action: ActionKind
    peer: Optional[Role] = None


Step = Union[Message, TrustCheck, LocalAction]


def step_actor(step: Step) -> Role:
    if isinstance(step, Message):
        return step.sender
    if isinstance(step, TrustCheck):
        return step.checker
    return step.role


@dataclass(frozen=True)
class OperationSpec:
    name: str
    roles: frozenset
    steps: Tuple[Step, ...]
    attributes: Tuple[str, ...] = ()
    subject: Role = Role.USER


class SpecErrorCode(enum.Enum):
    EMPTY = "Empty"
    UNBOUND_ROLE = "UnboundRole"
    RELATIONSHIP_ROLE_MISMATCH = "RelationshipRoleMismatch"
    DISCONNECTED = "Disconnected"
    SELF_MESSAGE = "SelfMessage"
    MISSING_PEER = "MissingPeer"


@dataclass(frozen=True)
class SpecError:
    code: SpecErrorCode
    step: Optional[int]
    message: str


def validate_spec(spec: OperationSpec) -> List[SpecError]:
    """All invariant violations of ``spec``; an empty list means valid."""
    errors: List[SpecError] = []
    if not spec.steps:
        return [SpecError(SpecErrorCode.EMPTY, None, "operation has no steps")]
    if spec.subject not in spec.roles:
        errors.append(SpecError(SpecErrorCode.UNBOUND_ROLE, None,
                                f"subject role {spec.subject.value} not declared"))
    holder: Optional[Role] = None
    for i, step in enumerate(spec.steps):
        used = [step_actor(step)]
        if isinstance(step, Message):
            used.append(step.receiver)
        elif isinstance(step, TrustCheck):
            used.append(step.subject)
        elif step.peer is not None:
            used.append(step.peer)
        missing = [r.value for r in used if r not in spec.roles]
        if missing:
            errors.append(SpecError(SpecErrorCode.UNBOUND_ROLE, i,
                                    f"step {i} uses undeclared role(s) {', '.join(missing)}"))
        if isinstance(step, TrustCheck):
            rel = step.relationship
            if (step.checker, step.subject) != (rel.trustor_role, rel.trustee_role):
                errors.append(SpecError(
                    SpecErrorCode.RELATIONSHIP_ROLE_MISMATCH, i,
                    f"relationship {rel.value} is {rel.trustor_role.value}->"
                    f"{rel.trustee_role.value}, step checks "
                    f"{step.checker.value}->{step.subject.value}"))
        if isinstance(step, Message) and step.sender == step.receiver:
            errors.append(SpecError(SpecErrorCode.SELF_MESSAGE, i,
                                    f"step {i} sends from {step.sender.value} to itself"))
        if (isinstance(step, LocalAction) and step.action is ActionKind.ISSUE_ASSERTION
                and step.peer is None):
            errors.append(SpecError(SpecErrorCode.MISSING_PEER, i,
                                    f"step {i} issues an assertion with no audience"))
        actor = step_actor(step)
        if holder is None:
            holder = actor
        elif actor != holder:
            errors.append(SpecError(SpecErrorCode.DISCONNECTED, i,
                                    f"step {i} acts at {actor.value} but control is at "
                                    f"{holder.value}"))
        if isinstance(step, Message):
            holder = step.receiver
    return errors


# -- instances ---------------------------------------------------------------

class StatusKind(enum.Enum):
    RUNNING = "Running"
    SUCCEEDED = "Succeeded"
    TERMINATED_AT_TRUST_CHECK = "TerminatedAtTrustCheck"
    FAILED = "Failed"


class FailureReason(enum.Enum):
    PROTOCOL_VIOLATION = "ProtocolViolation"
    TIMEOUT = "Timeout"
    AUTHENTICATION_FAILED = "AuthenticationFailed"
    ASSERTION_REJECTED = "AssertionRejected"
    ISSUE_FAILED = "IssueFailed"
    NO_ASSERTION = "NoAssertion"


@dataclass(frozen=True)
class OperationStatus:
    kind: StatusKind
    relationship: Optional[RelationshipId] = None
    reason: Optional[FailureReason] = None
    detail: str = ""

    @property
    def terminal(self) -> bool:
        return self.kind is not StatusKind.RUNNING

    def __str__(self) -> str:
        if self.kind is StatusKind.TERMINATED_AT_TRUST_CHECK:
            return f"{self.kind.value}({self.relationship.value})"
        if self.kind is StatusKind.FAILED:
            return f"{self.kind.value}({self.reason.value})"
        return self.kind.value


RUNNING = OperationStatus(StatusKind.RUNNING)


class UnboundRole(ValueError):
    pass


class InvalidSpec(ValueError):
    def __init__(self, errors: Sequence[SpecError]) -> None:
        self.errors = list(errors)
        super().__init__("; ".join(e.message for e in self.errors))


@dataclass(frozen=True)
class TranscriptEntry:
    tick: int
    event: str
    step: int
    fields: Tuple[Tuple[str, str], ...]

    def get(self, key: str) -> Optional[str]:
        for k, v in self.fields:
            if k == key:
                return v
        return None

    def render(self) -> str:
        body = " ".join(f"{k}={v}" for k, v in self.fields)
        return f"{self.event} tick={self.tick} step={self.step} {body}".rstrip()


@dataclass
class OperationInstance:
    id: str
    spec: OperationSpec
    bindings: Dict[Role, EntityId]
    nonce: bytes
    cursor: int = 0
    status: OperationStatus = RUNNING
    transcript: List[TranscriptEntry] = field(default_factory=list)
    started_at: int = 0
    max_ticks: int = DEFAULT_MAX_TICKS
    presented: Optional[Credential] = None
    authenticated: bool = False
    issued: Optional[IdentityAssertion] = None
    received: Optional[bytes] = None
    verified: Optional[IdentityAssertion] = None
    ratings: Dict[RelationshipId, TrustRating] = field(default_factory=dict)
    route: List[EntityId] = field(default_factory=list)
    failure_route: List[EntityId] = field(default_factory=list)
    failure_delivered: bool = False
    awaiting_check: bool = False

    def entity(self, role: Role) -> EntityId:
        return self.bindings[role]

    @property
    def initiator(self) -> EntityId:
        return self.bindings[step_actor(self.spec.steps[0])]


@dataclass(frozen=True)
class OperationOutcome:
    instance_id: str
    status: OperationStatus
    assertion: Optional[IdentityAssertion]
    transcript: Tuple[TranscriptEntry, ...]
    ratings: Mapping[RelationshipId, TrustRating]
    failure_delivered: bool = False

    def messages(self) -> List[TranscriptEntry]:
        return [e for e in self.transcript if e.event == "message"]

    def connections(self) -> List[int]:
        return [int(e.get("conn")) for e in self.messages() if e.get("conn") not in (None, "-")]

    def render(self) -> str:
        return "".join(e.render() + "\n" for e in self.transcript)


def instantiate(spec: OperationSpec, bindings: Mapping[Role, EntityId],
                instance_id: str = "op-1", nonce: Optional[bytes] = None,
                now: int = 0, max_ticks: int = DEFAULT_MAX_TICKS) -> OperationInstance:
    errors = validate_spec(spec)
    if errors:
        raise InvalidSpec(errors)
    missing = sorted(r.value for r in spec.roles if not bindings.get(r))
    if missing:
        raise UnboundRole(f"unbound role(s): {', '.join(missing)}")
    if nonce is None:
        nonce = hashlib.sha256(f"nonce:{instance_id}".encode()).digest()[:16]
    inst = OperationInstance(instance_id, spec, {r: bindings[r] for r in spec.roles},
                             nonce, started_at=now, max_ticks=max_ticks)
    inst.route.append(inst.initiator)
    return inst


def _loop_erase(route: Sequence[EntityId]) -> List[EntityId]:
    out: List[EntityId] = []
    for ent in route:
        if ent in out:
            del out[out.index(ent) + 1:]
        else:
            out.append(ent)
    return out


class CheckDue:
    """Event: a trust check's referral gathering has finished."""


# -- engine ------------------------------------------------------------------

class OperationEngine:
    """Drives operation instances over a simulated network.

    The network must offer ``send``, ``schedule``, ``now``, ``entity(id)``,
    ``manager(id)`` and ``keys``. With ``gather_before_check`` set, every
    trust check first crawls for referrals from the checker's neighbours.
    """

    def __init__(self, network, gather_before_check: bool = True) -> None:
        self.network = network
        self.gather_before_check = gather_before_check
        self.instances: Dict[str, OperationInstance] = {}
        self._seq = 0

    def new_instance(self, spec: OperationSpec, bindings: Mapping[Role, EntityId],
                     max_ticks: int = DEFAULT_MAX_TICKS) -> OperationInstance:
        self._seq += 1
        instance_id = f"op-{self._seq}"
        nonce = self.network.rng.randbytes(16)
        inst = instantiate(spec, bindings, instance_id, nonce, self.network.now, max_ticks)
        for ent in inst.bindings.values():
            if ent not in self.network.nodes:
                raise UnboundRole(f"entity {ent!r} is not on the network")
        return inst

    def start(self, inst: OperationInstance) -> None:
        self.instances[inst.id] = inst
        self._advance(inst)

    def run_to_completion(self, inst: OperationInstance) -> OperationOutcome:
        if inst.id not in self.instances:
            self.start(inst)
        self.network.run_until_quiet()
        if not inst.status.terminal:
            self._set_status(inst, OperationStatus(StatusKind.FAILED,
                                                   reason=FailureReason.TIMEOUT))
        return self.outcome(inst)

    def outcome(self, inst: OperationInstance) -> OperationOutcome:
        return OperationOutcome(inst.id, inst.status, inst.verified, tuple(inst.transcript),
                                dict(inst.ratings), inst.failure_delivered)

    # transcript -------------------------------------------------------------

    def _note(self, inst: OperationInstance, event: str, **fields: str) -> None:
        inst.transcript.append(TranscriptEntry(self.network.now, event, inst.cursor,
                                               tuple(fields.items())))

    def _set_status(self, inst: OperationInstance, status: OperationStatus) -> None:
        if inst.status.terminal:
            return
        inst.status = status
        self._note(inst, "status", status=str(status), **({"detail": status.detail}
                                                           if status.detail else {}))

    # stepping ---------------------------------------------------------------

    def step(self, inst: OperationInstance, event) -> OperationInstance:
        """Apply one event (a delivered envelope or :class:`CheckDue`)."""
        if inst.status.terminal:
            return inst
        if self.network.now - inst.started_at > inst.max_ticks:
            self._set_status(inst, OperationStatus(StatusKind.FAILED,
                                                   reason=FailureReason.TIMEOUT))
            return inst
        if isinstance(event, CheckDue):
            if inst.awaiting_check:
                inst.awaiting_check = False
                self._finish_check(inst, inst.spec.steps[inst.cursor])
                self._advance(inst)
            return inst
        self._deliver(inst, event)
        return inst

    def deliver(self, envelope) -> None:
        """Network entry point for :class:`OperationMessage` envelopes."""
        msg: OperationMessage = envelope.payload
        inst = self.instances.get(msg.instance_id)
        if inst is None:
            self.network.note("orphan", envelope)
            return
        if msg.payload_kind is PayloadKind.FAILURE:
            self._forward_failure(inst, envelope)
            return
        self.step(inst, envelope)

    def _deliver(self, inst: OperationInstance, envelope) -> None:
        msg: OperationMessage = envelope.payload
        spec_step = inst.spec.steps[inst.cursor] if inst.cursor < len(inst.spec.steps) else None
        ok = (isinstance(spec_step, Message) and not inst.awaiting_check
              and msg.step == inst.cursor
              and msg.payload_kind is spec_step.payload_kind
              and envelope.sender == inst.entity(spec_step.sender)
              and envelope.receiver == inst.entity(spec_step.receiver))
        if not ok:
            self._note(inst, "violation", sender=envelope.sender, kind=msg.payload_kind.value,
                       msg_step=str(msg.step))
            self._set_status(inst, OperationStatus(
                StatusKind.FAILED, reason=FailureReason.PROTOCOL_VIOLATION,
                detail=f"unexpected {msg.payload_kind.value} at step {inst.cursor}"))
            return
        self._record_message(inst, spec_step, msg)
        if msg.secret is not None:
            inst.presented = Credential(msg.secret)
        if msg.assertion is not None:
            inst.received = msg.assertion
        inst.route.append(envelope.receiver)
        inst.cursor += 1
        self._advance(inst)

    def _record_message(self, inst: OperationInstance, step: Message,
                        msg: OperationMessage) -> None:
        fields = dict(conn="-" if step.connection is None else str(step.connection),
                      kind=step.payload_kind.value,
                      from_role=step.sender.value, to_role=step.receiver.value,
                      sender=inst.entity(step.sender), receiver=inst.entity(step.receiver))
        if msg.attributes:
            fields["attrs"] = ",".join(msg.attributes)
        if msg.secret is not None:
            fields["credential"] = "<redacted>"
        self._note(inst, "message", **fields)

    def _advance(self, inst: OperationInstance) -> None:
        steps = inst.spec.steps
        while not inst.status.terminal and not inst.awaiting_check:
            if inst.cursor >= len(steps):
                self._complete(inst)
                return
            spec_step = steps[inst.cursor]
            if isinstance(spec_step, Message):
                if inst.entity(spec_step.sender) == inst.entity(spec_step.receiver):
                    # co-located roles: internal hand-off, nothing on the wire
                    inst.cursor += 1
                    continue
                self._send(inst, spec_step)
                return
            if isinstance(spec_step, TrustCheck):
                self._begin_check(inst, spec_step)
                continue
            self._act(inst, spec_step)
            if not inst.status.terminal:
                inst.cursor += 1

    def _send(self, inst: OperationInstance, step: Message) -> None:
        kind = step.payload_kind
        sender = inst.entity(step.sender)
        receiver = inst.entity(step.receiver)
        attrs: Tuple[str, ...] = ()
        assertion = secret = None
        if kind in (PayloadKind.SERVICE_REQUEST, PayloadKind.AUTHN_REQUEST,
                    PayloadKind.ATTRIBUTE_QUERY):
            attrs = tuple(inst.spec.attributes)
        elif kind is PayloadKind.CREDENTIAL:
            cred = self.network.entity(sender).wallet.get(receiver)
            secret = cred.secret if cred is not None else b""
        elif kind in (PayloadKind.AUTHN_RESPONSE, PayloadKind.ATTRIBUTE_RESPONSE):
            if inst.issued is not None:
                assertion = inst.issued.to_bytes()
        elif kind is PayloadKind.VERIFIED_RESULT and inst.verified is not None:
            attrs = tuple(k for k, _ in inst.verified.attributes)
        msg = OperationMessage(inst.id, inst.cursor, kind, step.connection, attrs,
                               assertion, secret)
        self.network.send(sender, receiver, msg, instance_id=inst.id)

    # trust checks -----------------------------------------------------------

    def _begin_check(self, inst: OperationInstance, check: TrustCheck) -> None:
        checker = inst.entity(check.checker)
        subject = inst.entity(check.subject)
        if checker == subject:
            self._note(inst, "check", rel=check.relationship.value, checker=checker,
                       subject=subject, value="-", basis="internal",
                       threshold=repr(check.threshold), result="pass")
            inst.cursor += 1
            return
        if self.gather_before_check:
            manager = self.network.manager(checker)
            inst.awaiting_check = True
            hops = max(manager.max_depth - 1, 0)
            manager.start_gather(self.network, subject, check.relationship.context, hops,
                                 on_done=lambda _refs, i=inst: self.step(i, CheckDue()))
            return
        self._finish_check(inst, check)

    def _finish_check(self, inst: OperationInstance, check: TrustCheck) -> None:
        checker = inst.entity(check.checker)
        subject = inst.entity(check.subject)
        rating = self.network.manager(checker).evaluate_trust(subject,
                                                              check.relationship.context)
        inst.ratings[check.relationship] = rating
        passed = rating.passes(check.threshold)
        self._note(inst, "check", rel=check.relationship.value, checker=checker,
                   subject=subject, value=repr(rating.value), basis=rating.basis.value,
                   threshold=repr(check.threshold), result="pass" if passed else "fail")
        if passed:
            inst.cursor += 1
            return
        self._set_status(inst, OperationStatus(StatusKind.TERMINATED_AT_TRUST_CHECK,
                                               relationship=check.relationship))
        self._start_failure(inst, checker)

    # local actions ----------------------------------------------------------

    def _act(self, inst: OperationInstance, action: LocalAction) -> None:
        actor = self.network.entity(inst.entity(action.role))
        subject = inst.entity(inst.spec.subject)
        now = self.network.now
        if action.action is ActionKind.AUTHENTICATE:
            ok = authenticate_local(actor, subject, inst.presented)
            inst.authenticated = ok
            self._note(inst, "action", action=action.action.value, actor=actor.id,
                       result="ok" if ok else "fail")
            if not ok:
                self._fail(inst, FailureReason.AUTHENTICATION_FAILED, actor.id)
        elif action.action is ActionKind.ISSUE_ASSERTION:
            try:
                inst.issued = create_assertion(actor, subject, inst.entity(action.peer),
                                               inst.spec.attributes, inst.nonce, now)
            except IdentityError as exc:
                self._note(inst, "action", action=action.action.value, actor=actor.id,
                           result="fail")
                self._fail(inst, FailureReason.ISSUE_FAILED, actor.id, str(exc))
                return
            self._note(inst, "action", action=action.action.value, actor=actor.id,
                       audience=inst.issued.audience, result="ok")
        else:
            # co-located issuer and verifier hand the assertion over internally
            raw = inst.received if inst.received is not None else (
                inst.issued.to_bytes() if inst.issued is not None else None)
            try:
                if raw is None:
                    raise VerificationError("no assertion received")
                assertion = IdentityAssertion.from_bytes(raw)
                verify_assertion(assertion, actor.id, self.network.keys, now,
                                 actor.replay_cache)
            except VerificationError as exc:
                self._note(inst, "action", action=action.action.value, actor=actor.id,
                           result="fail", code=exc.code)
                self._fail(inst, FailureReason.ASSERTION_REJECTED, actor.id, exc.code)
                return
            inst.verified = assertion
            self._note(inst, "action", action=action.action.value, actor=actor.id,
                       issuer=assertion.issuer, result="ok")

    def _fail(self, inst: OperationInstance, reason: FailureReason, at: EntityId,
              detail: str = "") -> None:
        self._set_status(inst, OperationStatus(StatusKind.FAILED, reason=reason, detail=detail))
        self._start_failure(inst, at)

    def _complete(self, inst: OperationInstance) -> None:
        if inst.verified is None:
            self._set_status(inst, OperationStatus(StatusKind.FAILED,
                                                   reason=FailureReason.NO_ASSERTION))
        else:
            self._set_status(inst, OperationStatus(StatusKind.SUCCEEDED))

    # failure responses ------------------------------------------------------

    def _start_failure(self, inst: OperationInstance, at: EntityId) -> None:
        """Send an opaque failure back along the request route to the initiator."""
        route = _loop_erase(inst.route)
        if at in route:
            route = route[:route.index(at) + 1]
        back = list(reversed(route))
        inst.failure_route = back
        if len(back) < 2:
            inst.failure_delivered = True
            return
        self._send_failure(inst, back[0], back[1])

    def _send_failure(self, inst: OperationInstance, sender: EntityId,
                      receiver: EntityId) -> None:
        msg = OperationMessage(inst.id, inst.cursor, PayloadKind.FAILURE,
                               failure_code=FAILURE_CODE)
        self.network.send(sender, receiver, msg, instance_id=inst.id)

    def _forward_failure(self, inst: OperationInstance, envelope) -> None:
        back = inst.failure_route
        here = envelope.receiver
        if here not in back or back.index(here) == 0:
            self.network.note("orphan", envelope)
            return
        self._note(inst, "failure", sender=envelope.sender, receiver=here,
                   code=envelope.payload.failure_code or FAILURE_CODE)
        idx = back.index(here)
        if idx == len(back) - 1:
            inst.failure_delivered = True
            return
        self._send_failure(inst, here, back[idx + 1])
