"""Security gateways (admission), visibility gateways (signed reads), and
the client-side response comparator.

Admission never touches the chain: a rejected transaction simply never
reaches a pending pool.  Read queries authenticate with a single-use
challenge signature, get access-checked against the visibility rules, and
come back signed under the gateway validator's registered view key so a
client can later prove what it was told.

Fault injection is first-class: a gateway can be configured to corrupt its
answers or to censor submissions, which is exactly what the discrepancy
machinery has to catch.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from fractions import Fraction

from . import errors as err
from .engine import verify_evidence
from .errors import CodecError, QueryError, TxError
from .keys import KeyPair, get_scheme
from .ledger import LedgerState, LogEntry, encode_value, get_balance, get_history
from .codec import Reader, Writer
from .monetary import claimable_amount, supply_view
from .payloads import (
    Claimable,
    DiscrepancyEvent,
    GatewayDirectory,
    ManagementLog,
    OwnBalance,
    OwnHistory,
    Query,
    Role,
    SignedQueryResponse,
    SupplyView,
    Transaction,
    ValidationServerAddress,
    challenge_message,
    decode_transaction,
    encode_query,
)

# fault profile flags
FAULT_CORRUPT_RESULTS = "corrupt_results"
FAULT_CENSOR_ALL = "censor_all"
FAULT_CENSOR_DISCREPANCY = "censor_discrepancy"
FAULT_OFFLINE = "offline"

KNOWN_FAULTS = {
    FAULT_CORRUPT_RESULTS,
    FAULT_CENSOR_ALL,
    FAULT_CENSOR_DISCREPANCY,
    FAULT_OFFLINE,
}


@dataclass
class TokenBucket:
    tokens: Fraction
    last_tick: int

    def take(self, tick: int, capacity: int, refill: Fraction) -> bool:
        """Refill by elapsed ticks (capped), then try to consume one token."""
        elapsed = max(0, tick - self.last_tick)
        self.tokens = min(Fraction(capacity), self.tokens + refill * elapsed)
        self.last_tick = max(self.last_tick, tick)
        if self.tokens < 1:
            return False
        self.tokens -= 1
        return True


@dataclass
class Admitted:
    tx: Transaction


@dataclass
class Rejected:
    reason: str


@dataclass
class Censored:
    """Silently dropped by a faulty gateway; not a protocol rejection."""


class SecurityGateway:
    """Per-validator admission front end with a token-bucket rate limiter."""

    def __init__(self, validator: bytes, faults: set[str] | None = None):
        self.validator = validator
        # shared by reference so a sim can toggle faults mid-run
        self.faults = faults if faults is not None else set()
        self.pool: dict[bytes, Transaction] = {}
        self._buckets: dict[bytes, TokenBucket] = {}

    def rate_check(self, state: LedgerState, sender: bytes, tick: int) -> bool:
        capacity = state.policy_int("rate.capacity", 10)
        refill = Fraction(state.policy_int("rate.refill", 1))
        whitelist = state.policy_bytes("rate.whitelist")
        whitelisted = sender in {
            whitelist[i : i + 32] for i in range(0, len(whitelist), 32)
        }
        if whitelisted:
            return True
        bucket = self._buckets.get(sender)
        if bucket is None:
            bucket = self._buckets[sender] = TokenBucket(Fraction(capacity), tick)
        return bucket.take(tick, capacity, refill)

    def admit(self, state: LedgerState, raw_tx: bytes, tick: int) -> Admitted | Rejected | Censored:
        """Parse, authenticate, and rate-check one submission."""
        try:
            tx = decode_transaction(raw_tx)
        except CodecError:
            return Rejected(err.MALFORMED)
        if FAULT_CENSOR_ALL in self.faults:
            return Censored()
        if FAULT_CENSOR_DISCREPANCY in self.faults and isinstance(tx.payload, DiscrepancyEvent):
            return Censored()
        sender = state.accounts.get(tx.sender)
        if sender is None:
            return Rejected(err.UNKNOWN_SENDER)
        if not sender.roles:
            return Rejected(err.NO_ROLE)
        if not get_scheme(state.scheme).verify(sender.public_key, tx.signing_bytes(), tx.signature):
            return Rejected(err.BAD_SIGNATURE)
        if not self.rate_check(state, tx.sender, tick):
            return Rejected(err.THROTTLED)
        self.pool[tx.tx_id] = tx
        return Admitted(tx)

    def drop_included(self, tx_ids: set[bytes]) -> None:
        for tx_id in tx_ids:
            self.pool.pop(tx_id, None)

    def pending(self) -> list[Transaction]:
        return list(self.pool.values())


@dataclass(frozen=True)
class QueryRequest:
    requester: bytes
    challenge: bytes
    challenge_signature: bytes
    query: Query


def sign_request(
    requester: KeyPair, challenge: bytes, query: Query, account: bytes | None = None
) -> QueryRequest:
    """Client helper: prove key possession over (challenge, query echo).

    ``account`` overrides the derived id for accounts whose key rotated.
    """
    echo = encode_query(query)
    sig = requester.sign(challenge_message(challenge, echo))
    return QueryRequest(account if account is not None else requester.account_id, challenge, sig, query)


def authorize_query(state: LedgerState, requester: bytes, query: Query) -> None:
    """Visibility matrix; raises QueryError when access is denied.

    Own-account data goes only to the owner, management data to anyone,
    validation server addresses only to validator accounts.
    """
    if isinstance(query, (OwnBalance, OwnHistory, Claimable)):
        if query.account != requester:
            raise QueryError(err.NOT_OWNER)
    elif isinstance(query, ValidationServerAddress):
        acct = state.accounts.get(requester)
        if acct is None or Role.VALIDATOR not in acct.roles:
            raise QueryError(err.NOT_VALIDATOR)
    # ManagementLog, SupplyView, GatewayDirectory: public


def _encode_entries(entries: list[LogEntry]) -> bytes:
    w = Writer()
    w.count(len(entries))
    for e in entries:
        w.bytes_(e.tx_id)
        w.u64(e.height)
        w.text(e.kind)
        w.boolean(e.ok)
        w.text(e.error or "")
        w.count(len(e.data))
        for key in sorted(e.data):
            w.text(key)
            encode_value(w, e.data[key])
    return w.getvalue()


def compute_result(state: LedgerState, query: Query) -> bytes:
    """Canonical encoding of the honest answer for a query."""
    w = Writer()
    if isinstance(query, OwnBalance):
        w.u64(get_balance(state, query.account))
    elif isinstance(query, OwnHistory):
        return _encode_entries(get_history(state, query.account))
    elif isinstance(query, Claimable):
        w.u64(claimable_amount(state, query.account))
    elif isinstance(query, ManagementLog):
        return _encode_entries(state.management_log(query.start_height, query.end_height))
    elif isinstance(query, SupplyView):
        view = supply_view(state)
        w.u64(view["minted"])
        w.u64(view["burned"])
        w.count(len(view["rules"]))
        for rid, total in sorted(view["rules"].items()):
            w.u64(rid)
            w.u64(total)
    elif isinstance(query, GatewayDirectory):
        w.count(len(state.validator_registry))
        for aid in sorted(state.validator_registry):
            rec = state.validator_registry[aid]
            w.bytes_(rec.account)
            w.count(len(rec.security_gateways))
            for a in rec.security_gateways:
                w.text(a)
            w.count(len(rec.visibility_gateways))
            for a in rec.visibility_gateways:
                w.text(a)
            w.bytes_(rec.view_key)
            w.text(rec.contact)
    elif isinstance(query, ValidationServerAddress):
        rec = state.validator_registry.get(query.validator)
        if rec is None:
            raise QueryError(err.UNKNOWN_ACCOUNT)
        w.text(rec.validation_server)
    else:
        raise QueryError(err.MALFORMED)
    return w.getvalue()


class VisibilityGateway:
    """Per-validator read front end answering from the latest snapshot."""

    def __init__(self, validator: bytes, view_signer: KeyPair, faults: set[str] | None = None):
        self.validator = validator
        self.view_signer = view_signer
        self.faults = faults if faults is not None else set()
        self._challenge_counter = 0
        self._open_challenges: set[bytes] = set()

    def issue_challenge(self) -> bytes:
        self._challenge_counter += 1
        challenge = hashlib.sha256(
            b"chal:" + self.validator + self._challenge_counter.to_bytes(8, "big")
        ).digest()
        self._open_challenges.add(challenge)
        return challenge

    def _corrupt(self, query: Query, result: bytes) -> bytes:
        # deterministic lie: inflate numeric answers, clobber the rest
        if isinstance(query, (OwnBalance, Claimable)):
            w = Writer()
            w.u64(Reader(result).u64() + 100)
            return w.getvalue()
        return result + b"\x00"

    def answer(self, state: LedgerState, request: QueryRequest) -> SignedQueryResponse:
        """Authenticate, authorize, answer, and sign under the view key."""
        if request.challenge not in self._open_challenges:
            raise QueryError(err.BAD_CHALLENGE, "challenge not issued or already used")
        requester = state.accounts.get(request.requester)
        echo = encode_query(request.query)
        if requester is None or not get_scheme(state.scheme).verify(
            requester.public_key, challenge_message(request.challenge, echo), request.challenge_signature
        ):
            raise QueryError(err.BAD_CHALLENGE)
        self._open_challenges.discard(request.challenge)
        authorize_query(state, request.requester, request.query)
        result = compute_result(state, request.query)
        if FAULT_CORRUPT_RESULTS in self.faults:
            result = self._corrupt(request.query, result)
        unsigned = SignedQueryResponse(self.validator, echo, result, state.height, b"")
        signature = self.view_signer.sign(unsigned.signing_bytes())
        return SignedQueryResponse(self.validator, echo, result, state.height, signature)


def verify_response(state: LedgerState, response: SignedQueryResponse) -> bool:
    """Check a response signature against the registered view key."""
    record = state.validator_registry.get(response.validator)
    if record is None:
        return False
    return get_scheme(state.scheme).verify(
        record.view_key, response.signing_bytes(), response.signature
    )


def compare_responses(
    state: LedgerState,
    responses: list[SignedQueryResponse],
    head: int,
    delay_window: int | None = None,
) -> DiscrepancyEvent | None:
    """Cross-check gateway answers; None means consistent.

    Responses with invalid signatures are discarded.  Responses newer than
    ``head - delay window`` are excluded from comparison: fresh data may
    legitimately still differ between gateways.  Any surviving pair with the
    same query echo but different results is self-verifying evidence.
    """
    delay = state.policy_int("gateway.delay_blocks", 3) if delay_window is None else delay_window
    valid = [r for r in responses if verify_response(state, r)]
    if len({r.validator for r in valid}) < 2:
        raise QueryError(err.INSUFFICIENT_RESPONSES)
    comparable = sorted(
        (r for r in valid if r.as_of_height <= head - delay),
        key=lambda r: (r.validator, r.result),
    )
    for i, first in enumerate(comparable):
        for second in comparable[i + 1 :]:
            if (
                first.validator != second.validator
                and first.echo == second.echo
                and first.result != second.result
            ):
                return DiscrepancyEvent(first, second)
    return None


def file_discrepancy(
    state: LedgerState,
    evidence: DiscrepancyEvent,
    submitter: KeyPair,
    nonce: int,
    sender: bytes | None = None,
) -> Transaction:
    """Wrap verified evidence into a signed event transaction."""
    reason = verify_evidence(state, evidence)
    if reason is not None:
        raise TxError(err.INVALID_EVIDENCE, reason)
    sender_id = sender if sender is not None else submitter.account_id
    tx = Transaction(sender_id, nonce, evidence)
    signature = submitter.sign(tx.signing_bytes())
    return Transaction(sender_id, nonce, evidence, signature)
