"""Account/balance state machine and its on-ledger containers.

All mutation is funneled through a single logical writer (the block apply
path in :mod:`rolechain.engine`); reads act on snapshots produced by
:meth:`LedgerState.clone`.  Handlers validate every precondition before
touching state, so a raised :class:`TxError` always leaves the state
untouched.

Balances are non-negative integers in minor currency units; there is no
fractional arithmetic anywhere in the ledger.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field
from enum import Enum

from . import errors as err
from .codec import Writer
from .errors import TxError
from .keys import derive_account_id, get_scheme
from .payloads import (
    Guardians,
    InterestMode,
    Permanence,
    ProviderOnly,
    ProviderPlusSecurity,
    RecoveryPolicy,
    Role,
    ValidatorRecord,
    rotation_message,
)


class Authority(Enum):
    # normal sender-authorized execution
    USER = 1
    # execution of an action approved by a passed proposal
    SYSTEM = 2


@dataclass
class Account:
    account_id: bytes
    public_key: bytes
    roles: set[Role] = field(default_factory=set)
    balance: int = 0
    frozen: bool = False
    recovery: RecoveryPolicy = field(default_factory=ProviderOnly)
    nonce: int = 0
    provider: bytes | None = None


@dataclass
class Policy:
    key: str
    value: int | bytes
    permanence: Permanence
    expiry_height: int | None
    set_by: bytes
    set_at: int


def is_mutable(policy: Policy, height: int) -> bool:
    """Whether the stored policy may be overwritten at ``height``.

    Timed policies act as permanent strictly before their expiry height and
    as temporary from the expiry height on (boundary inclusive-mutable).
    """
    if policy.permanence is Permanence.PERMANENT:
        return False
    if policy.permanence is Permanence.TEMPORARY:
        return True
    return height >= (policy.expiry_height or 0)


class ProposalStatus(Enum):
    OPEN = "open"
    PASSED = "passed"
    FAILED = "failed"
    EXPIRED = "expired"


@dataclass
class Proposal:
    proposal_id: int
    action: object  # a Payload executed with system authority on passage
    proposer: bytes
    electorate: Role
    created_at: int
    expires_at: int
    yes: set[bytes] = field(default_factory=set)
    no: set[bytes] = field(default_factory=set)
    status: ProposalStatus = ProposalStatus.OPEN
    execution_error: str | None = None


@dataclass
class InterestRule:
    rule_id: int
    rate_num: int
    rate_den: int
    period_blocks: int
    start_height: int
    mode: InterestMode
    scope: frozenset[bytes] | None  # None = every user-role account
    active: bool = True
    last_accrued_period: int = 0
    created_total: int = 0


@dataclass
class AllowanceLedger:
    """Per-account, per-rule record of accrued-but-unclaimed periods."""

    last_claimed_period: int = 0
    accrued: list[tuple[int, int]] = field(default_factory=list)

    def unclaimed_total(self) -> int:
        return sum(a for p, a in self.accrued if p > self.last_claimed_period)


@dataclass
class SupplyCounters:
    minted: int = 0
    burned: int = 0

    @property
    def circulating(self) -> int:
        return self.minted - self.burned


@dataclass
class LogEntry:
    """One applied (or on-chain failed) transaction, summarized.

    ``management`` entries form the public log; other entries are visible
    only to their participants.
    """

    tx_id: bytes
    height: int
    kind: str
    sender: bytes | None
    ok: bool
    error: str | None
    management: bool
    participants: tuple[bytes, ...]
    data: dict
    reversed_by: bytes | None = None


@dataclass
class Applied:
    """Handler result: who was involved and what to record."""

    participants: tuple[bytes, ...]
    data: dict


@dataclass
class LedgerState:
    scheme: str = "mock"
    accounts: dict[bytes, Account] = field(default_factory=dict)
    policies: dict[str, Policy] = field(default_factory=dict)
    proposals: dict[int, Proposal] = field(default_factory=dict)
    next_proposal_id: int = 1
    interest_rules: dict[int, InterestRule] = field(default_factory=dict)
    next_rule_id: int = 1
    allowances: dict[bytes, dict[int, AllowanceLedger]] = field(default_factory=dict)
    supply: SupplyCounters = field(default_factory=SupplyCounters)
    tx_log: list[LogEntry] = field(default_factory=list)
    tx_index: dict[bytes, int] = field(default_factory=dict)
    height: int = 0
    validator_registry: dict[bytes, ValidatorRecord] = field(default_factory=dict)

    # -- access helpers --------------------------------------------------

    def account(self, account_id: bytes) -> Account:
        acct = self.accounts.get(account_id)
        if acct is None:
            raise TxError(err.UNKNOWN_ACCOUNT)
        return acct

    def holders(self, role: Role) -> list[bytes]:
        return sorted(a.account_id for a in self.accounts.values() if role in a.roles)

    def validators(self) -> list[bytes]:
        """Validator account ids in canonical (ascending) rotation order."""
        return self.holders(Role.VALIDATOR)

    def policy_int(self, key: str, default: int = 0) -> int:
        policy = self.policies.get(key)
        if policy is None or not isinstance(policy.value, int):
            return default
        return policy.value

    def policy_bytes(self, key: str, default: bytes = b"") -> bytes:
        policy = self.policies.get(key)
        if policy is None or not isinstance(policy.value, bytes):
            return default
        return policy.value

    def log(self, entry: LogEntry) -> None:
        self.tx_index[entry.tx_id] = len(self.tx_log)
        self.tx_log.append(entry)

    def management_log(self, start: int = 0, end: int | None = None) -> list[LogEntry]:
        """Successful management entries within [start, end] heights."""
        last = self.height if end is None else end
        return [
            e
            for e in self.tx_log
            if e.management and e.ok and start <= e.height <= last
        ]

    # -- conservation ------------------------------------------------------

    def total_balances(self) -> int:
        return sum(a.balance for a in self.accounts.values())

    def total_unclaimed(self) -> int:
        return sum(
            led.unclaimed_total()
            for per_rule in self.allowances.values()
            for led in per_rule.values()
        )

    def conservation_holds(self) -> bool:
        return self.total_balances() + self.total_unclaimed() == self.supply.circulating

    # -- snapshots and digests ----------------------------------------------

    def clone(self) -> LedgerState:
        return copy.deepcopy(self)

    def digest(self) -> bytes:
        """SHA-256 over a canonical encoding of the entire state."""
        w = Writer()
        w.text(self.scheme)
        w.u64(self.height)
        w.u64(self.supply.minted)
        w.u64(self.supply.burned)
        w.count(len(self.accounts))
        for aid in sorted(self.accounts):
            a = self.accounts[aid]
            w.bytes_(a.account_id)
            w.bytes_(a.public_key)
            w.count(len(a.roles))
            for role in sorted(a.roles, key=lambda r: r.value):
                w.u8(role.value)
            w.u64(a.balance)
            w.boolean(a.frozen)
            w.u64(a.nonce)
            w.optional_bytes(a.provider)
            _encode_recovery_digest(w, a.recovery)
        w.count(len(self.policies))
        for key in sorted(self.policies):
            p = self.policies[key]
            w.text(p.key)
            encode_value(w, p.value)
            w.u8(p.permanence.value)
            w.u64(p.expiry_height or 0)
            w.bytes_(p.set_by)
            w.u64(p.set_at)
        w.count(len(self.proposals))
        for pid in sorted(self.proposals):
            prop = self.proposals[pid]
            w.u64(prop.proposal_id)
            w.u8(prop.electorate.value)
            w.bytes_(prop.proposer)
            w.u64(prop.created_at)
            w.u64(prop.expires_at)
            w.text(prop.status.value)
            w.text(prop.execution_error or "")
            for votes in (prop.yes, prop.no):
                w.count(len(votes))
                for v in sorted(votes):
                    w.bytes_(v)
        w.count(len(self.interest_rules))
        for rid in sorted(self.interest_rules):
            rule = self.interest_rules[rid]
            w.u64(rule.rule_id)
            w.u64(rule.rate_num)
            w.u64(rule.rate_den)
            w.u64(rule.period_blocks)
            w.u64(rule.start_height)
            w.u8(rule.mode.value)
            if rule.scope is None:
                w.boolean(False)
            else:
                w.boolean(True)
                w.count(len(rule.scope))
                for aid in sorted(rule.scope):
                    w.bytes_(aid)
            w.boolean(rule.active)
            w.u64(rule.last_accrued_period)
            w.u64(rule.created_total)
        w.count(len(self.allowances))
        for aid in sorted(self.allowances):
            w.bytes_(aid)
            per_rule = self.allowances[aid]
            w.count(len(per_rule))
            for rid in sorted(per_rule):
                led = per_rule[rid]
                w.u64(rid)
                w.u64(led.last_claimed_period)
                w.count(len(led.accrued))
                for period, amount in led.accrued:
                    w.u64(period)
                    w.u64(amount)
        w.count(len(self.validator_registry))
        for aid in sorted(self.validator_registry):
            self.validator_registry[aid].encode(w)
        w.count(len(self.tx_log))
        for entry in self.tx_log:
            w.bytes_(entry.tx_id)
            w.u64(entry.height)
            w.text(entry.kind)
            w.optional_bytes(entry.sender)
            w.boolean(entry.ok)
            w.text(entry.error or "")
            w.boolean(entry.management)
            w.count(len(entry.participants))
            for p in entry.participants:
                w.bytes_(p)
            w.count(len(entry.data))
            for key in sorted(entry.data):
                w.text(key)
                encode_value(w, entry.data[key])
            w.optional_bytes(entry.reversed_by)
        return hashlib.sha256(w.getvalue()).digest()


def encode_value(w: Writer, value) -> None:
    if isinstance(value, bool):
        w.u8(3)
        w.boolean(value)
    elif isinstance(value, int):
        w.u8(1)
        w.u64(value)
    elif isinstance(value, bytes):
        w.u8(2)
        w.bytes_(value)
    elif isinstance(value, str):
        w.u8(4)
        w.text(value)
    else:
        raise TypeError(f"unsupported log value type {type(value).__name__}")


def _encode_recovery_digest(w: Writer, recovery: RecoveryPolicy) -> None:
    w.u8(recovery.TAG)
    if isinstance(recovery, Guardians):
        w.count(len(recovery.guardians))
        for g in sorted(recovery.guardians):
            w.bytes_(g)
        w.u64(recovery.threshold)


# --- security feature gate -----------------------------------------------------

def security_gate(state: LedgerState, actor: bytes, feature: str, authority: Authority) -> None:
    """Shared precondition for freeze / confiscate / reverse actions."""
    if authority is not Authority.SYSTEM:
        acct = state.accounts.get(actor)
        if acct is None or Role.SYSTEM_SECURITY not in acct.roles:
            raise TxError(err.NOT_SECURITY_ROLE)
    if state.policy_int(f"security.{feature}.enabled", 1) == 0:
        raise TxError(err.FEATURE_DISABLED)
    if authority is not Authority.SYSTEM and state.policy_int(f"security.{feature}.requires_vote", 0):
        raise TxError(err.VOTE_REQUIRED)


# --- core operations -------------------------------------------------------------

def transfer(state: LedgerState, source: bytes, to: bytes, amount: int) -> Applied:
    sender = state.accounts.get(source)
    if sender is None or Role.USER not in sender.roles:
        raise TxError(err.NO_ROLE, "sender lacks the user role")
    recipient = state.accounts.get(to)
    if recipient is None or Role.USER not in recipient.roles:
        raise TxError(err.RECIPIENT_NOT_AUTHORIZED)
    if sender.frozen:
        raise TxError(err.SENDER_FROZEN)
    if amount < 1:
        raise TxError(err.ZERO_AMOUNT)
    if sender.balance < amount:
        raise TxError(err.INSUFFICIENT_FUNDS)
    sender.balance -= amount
    recipient.balance += amount
    return Applied((source, to), {"from": source, "to": to, "amount": amount})


def set_frozen(
    state: LedgerState,
    actor: bytes,
    target: bytes,
    frozen: bool,
    authority: Authority = Authority.USER,
) -> Applied:
    security_gate(state, actor, "freeze", authority)
    acct = state.account(target)
    acct.frozen = frozen
    return Applied((actor, target), {"target": target, "frozen": frozen})


def confiscate(
    state: LedgerState,
    actor: bytes,
    source: bytes,
    to: bytes,
    amount: int,
    authority: Authority = Authority.USER,
) -> Applied:
    security_gate(state, actor, "confiscate", authority)
    escrow = state.policy_bytes("security.escrow")
    if to != escrow:
        # moving seized funds anywhere but the escrow needs a passed vote,
        # and the recipient must be an authorized user
        if authority is not Authority.SYSTEM:
            raise TxError(err.VOTE_REQUIRED, "non-escrow destination requires a vote")
        recipient = state.accounts.get(to)
        if recipient is None or Role.USER not in recipient.roles:
            raise TxError(err.RECIPIENT_NOT_AUTHORIZED)
    holder = state.account(source)
    if holder.balance < amount:
        raise TxError(err.INSUFFICIENT_FUNDS)
    recipient = state.account(to)
    holder.balance -= amount
    recipient.balance += amount
    return Applied(
        (actor, source, to),
        {"from": source, "to": to, "amount": amount},
    )


def reverse_transaction(
    state: LedgerState,
    actor: bytes,
    target_tx: bytes,
    reversal_tx_id: bytes,
    authority: Authority = Authority.USER,
) -> Applied:
    security_gate(state, actor, "reverse", authority)
    idx = state.tx_index.get(target_tx)
    if idx is None:
        raise TxError(err.NOT_A_TRANSFER, "no such transaction")
    entry = state.tx_log[idx]
    if entry.kind != "transfer" or not entry.ok:
        raise TxError(err.NOT_A_TRANSFER)
    if entry.reversed_by is not None:
        raise TxError(err.ALREADY_REVERSED)
    original_from: bytes = entry.data["from"]
    original_to: bytes = entry.data["to"]
    amount: int = entry.data["amount"]
    recipient = state.account(original_to)
    if recipient.balance < amount:
        raise TxError(err.INSUFFICIENT_RECIPIENT_FUNDS)
    sender = state.account(original_from)
    recipient.balance -= amount
    sender.balance += amount
    entry.reversed_by = reversal_tx_id
    return Applied(
        (actor, original_from, original_to),
        {
            "reversed_tx": target_tx,
            "from": original_to,
            "to": original_from,
            "amount": amount,
        },
    )


def rotate_key(
    state: LedgerState,
    target: bytes,
    new_key: bytes,
    approvals: tuple[tuple[bytes, bytes], ...],
) -> Applied:
    """Swap the target account's public key after recovery approval.

    Approval signatures are checked under each approver's *current* key;
    which approvers suffice depends on the account's recovery policy.
    """
    acct = state.account(target)
    scheme = get_scheme(state.scheme)
    try:
        derive_account_id(new_key)
    except Exception:
        raise TxError("InvalidKey", "malformed replacement key") from None
    message = rotation_message(target, new_key)

    recovery = acct.recovery
    if isinstance(recovery, Guardians):
        eligible = set(recovery.guardians)
    elif isinstance(recovery, ProviderPlusSecurity):
        eligible = set(state.holders(Role.SYSTEM_SECURITY))
        if acct.provider is not None:
            eligible.add(acct.provider)
    else:
        eligible = {acct.provider} if acct.provider is not None else set()

    valid: set[bytes] = set()
    for approver_id, sig in approvals:
        if approver_id not in eligible:
            raise TxError(err.APPROVER_NOT_ELIGIBLE)
        approver = state.accounts.get(approver_id)
        if approver is None:
            raise TxError(err.APPROVER_NOT_ELIGIBLE)
        if scheme.verify(approver.public_key, message, sig):
            valid.add(approver_id)

    if isinstance(recovery, Guardians):
        satisfied = len(valid) >= recovery.threshold
    elif isinstance(recovery, ProviderPlusSecurity):
        security = set(state.holders(Role.SYSTEM_SECURITY))
        satisfied = acct.provider in valid and bool(valid & security)
    else:
        satisfied = acct.provider is not None and acct.provider in valid
    if not satisfied:
        raise TxError(err.INSUFFICIENT_APPROVALS)

    acct.public_key = new_key
    # key material stays out of the public record
    return Applied((target,), {"target": target})


def register_endpoints(state: LedgerState, actor: bytes, record: ValidatorRecord) -> Applied:
    """Publish or replace a validator's gateway endpoints and view key."""
    acct = state.accounts.get(actor)
    if acct is None or Role.VALIDATOR not in acct.roles:
        raise TxError(err.NOT_VALIDATOR)
    if record.account != actor:
        raise TxError(err.MALFORMED_RECORD, "record must describe the sender")
    if not record.contact:
        raise TxError(err.MALFORMED_RECORD, "contact must be non-empty")
    if len(record.view_key) != len(acct.public_key) or record.view_key == acct.public_key:
        raise TxError(err.MALFORMED_RECORD, "view key must differ from the account key")
    if not (record.security_gateways and record.visibility_gateways):
        raise TxError(err.MALFORMED_RECORD, "gateway address lists must be non-empty")
    state.validator_registry[actor] = record
    return Applied(
        (actor,),
        {
            "security_gateways": ",".join(record.security_gateways),
            "visibility_gateways": ",".join(record.visibility_gateways),
            "contact": record.contact,
        },
    )


# --- views ------------------------------------------------------------------------

def get_balance(state: LedgerState, account: bytes) -> int:
    return state.account(account).balance


def get_history(state: LedgerState, account: bytes) -> list[LogEntry]:
    state.account(account)
    return [e for e in state.tx_log if account in e.participants]
