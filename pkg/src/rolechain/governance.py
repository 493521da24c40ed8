"""Policies, role assignment rules, bootstrapping, and on-chain voting.

Role authority matrix:

  - platform managers set policy and grant/revoke the manager-tier roles
    (account provider, system security, currency manager, platform manager);
  - account providers grant/revoke the user role, with a key-possession proof
    on grant;
  - the validator role changes only through ``bootstrap_set_validators``
    during the bootstrap window or a passed validator-electorate proposal
    afterwards.

Votes pass on a strict majority of the *current* electorate: membership is
re-evaluated at finalize time, so votes from accounts that lost the role in
the meantime are discarded.
"""

from __future__ import annotations

from collections.abc import Callable

from . import errors as err
from .errors import TxError
from .keys import derive_account_id, get_scheme
from .ledger import (
    Account,
    Applied,
    Authority,
    LedgerState,
    Policy,
    Proposal,
    ProposalStatus,
    is_mutable,
)
from .payloads import (
    PAYLOAD_KINDS,
    AssignRole,
    Burn,
    Confiscate,
    Guardians,
    Mint,
    Payload,
    Permanence,
    ProviderOnly,
    RecoveryPolicy,
    Reverse,
    RevokeRole,
    Role,
    SetFrozen,
    SetInterestRule,
    SetPolicy,
    possession_message,
)

# roles a platform manager may grant or revoke directly
MANAGER_ASSIGNABLE = {
    Role.ACCOUNT_PROVIDER,
    Role.SYSTEM_SECURITY,
    Role.CURRENCY_MANAGER,
    Role.PLATFORM_MANAGER,
}

# which electorate votes on which action, and that the action is voteable at all
VOTEABLE_ACTIONS: dict[type, Role] = {
    AssignRole: Role.VALIDATOR,  # only for the validator role; checked below
    RevokeRole: Role.VALIDATOR,
    SetFrozen: Role.SYSTEM_SECURITY,
    Confiscate: Role.SYSTEM_SECURITY,
    Reverse: Role.SYSTEM_SECURITY,
    Mint: Role.CURRENCY_MANAGER,
    Burn: Role.CURRENCY_MANAGER,
    SetInterestRule: Role.CURRENCY_MANAGER,
    SetPolicy: Role.PLATFORM_MANAGER,
}


def set_policy(
    state: LedgerState,
    actor: bytes,
    key: str,
    value: int | bytes,
    permanence: Permanence,
    expiry_height: int | None = None,
    authority: Authority = Authority.USER,
) -> Applied:
    if authority is not Authority.SYSTEM:
        acct = state.accounts.get(actor)
        if acct is None or Role.PLATFORM_MANAGER not in acct.roles:
            raise TxError(err.NOT_PLATFORM_MANAGER)
        # with more than one platform manager, policy changes go to a vote
        if len(state.holders(Role.PLATFORM_MANAGER)) > 1:
            raise TxError(err.VOTE_REQUIRED, "multiple platform managers")
    existing = state.policies.get(key)
    if existing is not None and not is_mutable(existing, state.height):
        raise TxError(err.POLICY_IMMUTABLE)
    state.policies[key] = Policy(
        key=key,
        value=value,
        permanence=permanence,
        expiry_height=expiry_height if permanence is Permanence.TIMED_EXPIRATION else None,
        set_by=actor,
        set_at=state.height,
    )
    data: dict = {"key": key, "value": value, "permanence": permanence.name.lower()}
    if permanence is Permanence.TIMED_EXPIRATION:
        data["expiry_height"] = expiry_height or 0
    return Applied((actor,), data)


def validate_recovery(recovery: RecoveryPolicy, account_id: bytes) -> None:
    """Structural checks on a recovery choice at account creation."""
    if isinstance(recovery, Guardians):
        if not 1 <= recovery.threshold <= len(recovery.guardians):
            raise TxError(
                "InvalidRecoveryPolicy",
                "guardian threshold must be between 1 and the number of guardians",
            )
        if account_id in recovery.guardians:
            raise TxError("InvalidRecoveryPolicy", "an account cannot guard itself")


def _ensure_account(
    state: LedgerState,
    target: bytes,
    target_key: bytes | None,
    provider: bytes | None,
    recovery: RecoveryPolicy | None,
) -> Account:
    acct = state.accounts.get(target)
    if acct is not None:
        return acct
    if target_key is None:
        raise TxError(err.UNKNOWN_ACCOUNT, "new account needs its public key")
    if derive_account_id(target_key) != target:
        raise TxError(err.UNKNOWN_ACCOUNT, "target id does not match the key")
    if recovery is not None:
        validate_recovery(recovery, target)
    acct = Account(
        account_id=target,
        public_key=target_key,
        recovery=recovery if recovery is not None else ProviderOnly(),
        provider=provider,
    )
    state.accounts[target] = acct
    return acct


def assign_role(
    state: LedgerState,
    actor: bytes,
    payload: AssignRole,
    authority: Authority = Authority.USER,
) -> Applied:
    role = payload.role
    if authority is Authority.SYSTEM:
        acct = _ensure_account(state, payload.target, payload.target_key, None, payload.recovery)
        acct.roles.add(role)
        return Applied((actor, payload.target), {"target": payload.target, "role": role.name.lower()})

    actor_acct = state.accounts.get(actor)
    actor_roles = actor_acct.roles if actor_acct else set()
    if role is Role.VALIDATOR:
        raise TxError(err.VALIDATOR_ROLE_LOCKED)
    if role is Role.USER:
        if Role.ACCOUNT_PROVIDER not in actor_roles:
            raise TxError(err.NOT_AUTHORIZED_FOR_ROLE)
        acct = _ensure_account(state, payload.target, payload.target_key, actor, payload.recovery)
        if payload.possession_sig is None:
            raise TxError(err.MISSING_POSSESSION_PROOF)
        message = possession_message(actor, acct.public_key)
        if not get_scheme(state.scheme).verify(acct.public_key, message, payload.possession_sig):
            raise TxError(err.MISSING_POSSESSION_PROOF, "possession signature invalid")
        acct.roles.add(role)
    else:
        if Role.PLATFORM_MANAGER not in actor_roles or role not in MANAGER_ASSIGNABLE:
            raise TxError(err.NOT_AUTHORIZED_FOR_ROLE)
        acct = _ensure_account(state, payload.target, payload.target_key, None, payload.recovery)
        acct.roles.add(role)
    return Applied((actor, payload.target), {"target": payload.target, "role": role.name.lower()})


def revoke_role(
    state: LedgerState,
    actor: bytes,
    target: bytes,
    role: Role,
    authority: Authority = Authority.USER,
) -> Applied:
    if authority is not Authority.SYSTEM:
        actor_acct = state.accounts.get(actor)
        actor_roles = actor_acct.roles if actor_acct else set()
        if role is Role.VALIDATOR:
            raise TxError(err.VALIDATOR_ROLE_LOCKED)
        if role is Role.USER:
            if Role.ACCOUNT_PROVIDER not in actor_roles:
                raise TxError(err.NOT_AUTHORIZED_FOR_ROLE)
        elif Role.PLATFORM_MANAGER not in actor_roles or role not in MANAGER_ASSIGNABLE:
            raise TxError(err.NOT_AUTHORIZED_FOR_ROLE)
    acct = state.account(target)
    if role not in acct.roles:
        raise TxError(err.ROLE_ABSENT)
    acct.roles.discard(role)
    return Applied((actor, target), {"target": target, "role": role.name.lower()})


def bootstrap_set_validators(
    state: LedgerState, actor: bytes, validators: frozenset[bytes]
) -> Applied:
    acct = state.accounts.get(actor)
    if acct is None or Role.PLATFORM_MANAGER not in acct.roles:
        raise TxError(err.NOT_PLATFORM_MANAGER)
    window = state.policy_int("bootstrap.window_blocks", 10)
    if state.height > window:
        raise TxError(err.BOOTSTRAP_OVER)
    if not validators:
        raise TxError(err.EMPTY_VALIDATOR_SET)
    for v in validators:
        state.account(v)  # all listed accounts must exist
    for existing in state.validators():
        if existing not in validators:
            state.accounts[existing].roles.discard(Role.VALIDATOR)
    for v in validators:
        state.accounts[v].roles.add(Role.VALIDATOR)
    return Applied(
        (actor, *sorted(validators)),
        {"count": len(validators)},
    )


# --- proposals and voting -----------------------------------------------------

def _required_electorate(action: Payload) -> Role:
    electorate = VOTEABLE_ACTIONS.get(type(action))
    if electorate is None:
        raise TxError(err.ACTION_NOT_VOTEABLE)
    if isinstance(action, (AssignRole, RevokeRole)) and action.role is not Role.VALIDATOR:
        # non-validator role changes are direct manager actions, not votes
        raise TxError(err.ACTION_NOT_VOTEABLE)
    return electorate


def create_proposal(
    state: LedgerState, proposer: bytes, action: Payload, electorate: Role
) -> tuple[Applied, int]:
    required = _required_electorate(action)
    if electorate is not required:
        raise TxError(err.ACTION_NOT_VOTEABLE, f"electorate must be {required.name}")
    acct = state.accounts.get(proposer)
    if acct is None or electorate not in acct.roles:
        raise TxError(err.NOT_ELIGIBLE_PROPOSER)
    window = state.policy_int("vote.window_blocks", 10)
    pid = state.next_proposal_id
    state.next_proposal_id += 1
    state.proposals[pid] = Proposal(
        proposal_id=pid,
        action=action,
        proposer=proposer,
        electorate=electorate,
        created_at=state.height,
        expires_at=state.height + window,
    )
    return (
        Applied(
            (proposer,),
            {
                "proposal_id": pid,
                "electorate": electorate.name.lower(),
                "action": PAYLOAD_KINDS[type(action)],
            },
        ),
        pid,
    )


def cast_vote(state: LedgerState, voter: bytes, proposal_id: int, approve: bool) -> Applied:
    prop = state.proposals.get(proposal_id)
    if prop is None:
        raise TxError(err.UNKNOWN_PROPOSAL)
    if prop.status is not ProposalStatus.OPEN or state.height > prop.expires_at:
        raise TxError(err.PROPOSAL_CLOSED)
    acct = state.accounts.get(voter)
    if acct is None or prop.electorate not in acct.roles:
        raise TxError(err.NOT_IN_ELECTORATE)
    if voter in prop.yes or voter in prop.no:
        raise TxError(err.ALREADY_VOTED)
    (prop.yes if approve else prop.no).add(voter)
    return Applied(
        (voter,),
        {"proposal_id": proposal_id, "vote": "yes" if approve else "no"},
    )


def _pass_threshold(state: LedgerState, electorate_size: int) -> int:
    """Smallest yes-count that passes: strictly above the threshold percent."""
    percent = state.policy_int("vote.threshold_percent", 51)
    return electorate_size * percent // 100 + 1


def tally(state: LedgerState, prop: Proposal) -> tuple[int, int, int, int]:
    """(valid yes, valid no, electorate size, yes-count needed to pass)."""
    members = set(state.holders(prop.electorate))
    yes = len(prop.yes & members)
    no = len(prop.no & members)
    n = len(members)
    return yes, no, n, _pass_threshold(state, n)


def decide_outcome(yes: int, no: int, n: int, needed: int, expired: bool) -> ProposalStatus | None:
    """Pure decision rule; None while the proposal must stay open.

    Passes once yes reaches the threshold, fails once yes can no longer
    reach it (so ties in an even electorate fail), expires if the window
    closed without either.
    """
    if yes >= needed:
        return ProposalStatus.PASSED
    if no > n - needed:
        return ProposalStatus.FAILED
    if expired:
        return ProposalStatus.EXPIRED
    return None


def finalize_proposal(
    state: LedgerState,
    proposal_id: int,
    execute: Callable[[Proposal], str | None],
) -> Applied:
    """Resolve an open proposal once its outcome is decided.

    Passes early on a strict majority of yes votes, fails early once passage
    is impossible, and expires otherwise when the window closes.  A passed
    action executes immediately with system authority; if the action itself
    now fails, the proposal still finalizes as passed and the receipt keeps
    the execution error.
    """
    prop = state.proposals.get(proposal_id)
    if prop is None:
        raise TxError(err.UNKNOWN_PROPOSAL)
    if prop.status is not ProposalStatus.OPEN:
        raise TxError(err.ALREADY_FINAL)
    yes, no, n, needed = tally(state, prop)
    outcome = decide_outcome(yes, no, n, needed, state.height > prop.expires_at)
    if outcome is None:
        raise TxError(err.PROPOSAL_NOT_DECIDABLE)
    prop.status = outcome

    if prop.status is ProposalStatus.PASSED:
        prop.execution_error = execute(prop)
    data = {
        "proposal_id": proposal_id,
        "status": prop.status.value,
        "yes": yes,
        "no": no,
        "electorate_size": n,
    }
    if prop.execution_error:
        data["execution_error"] = prop.execution_error
    return Applied((prop.proposer,), data)


def expired_open_proposals(state: LedgerState) -> list[int]:
    return sorted(
        pid
        for pid, prop in state.proposals.items()
        if prop.status is ProposalStatus.OPEN and state.height > prop.expires_at
    )
