"""Money supply control: mint/burn, fiat conversion, and periodic creation.

Periodic creation rules accrue at block heights ``start + k * period``.
Push rules credit balances directly; pull rules record a claimable amount
per period and count it toward minted supply immediately, so the ledger
conservation equation stays a plain equality:

    sum(balances) + sum(unclaimed accruals) == minted - burned

Accrual uses floor division on the balance at the boundary.  Unclaimed
amounts are not part of the accrual base (recorded amounts never change),
and frozen accounts neither accrue nor claim while frozen: their periods
are recorded as zero so period indices stay dense.
"""

from __future__ import annotations

from . import errors as err
from .errors import TxError
from .ledger import AllowanceLedger, Applied, Authority, InterestRule, LedgerState
from .payloads import FiatDirection, InterestMode, Role, SetInterestRule


def _currency_gate(state: LedgerState, actor: bytes, policy_key: str, authority: Authority) -> None:
    if authority is Authority.SYSTEM:
        return
    if state.policy_int(policy_key, 1):
        raise TxError(err.VOTE_REQUIRED)
    acct = state.accounts.get(actor)
    if acct is None or Role.CURRENCY_MANAGER not in acct.roles:
        raise TxError(err.NOT_CURRENCY_MANAGER)


def _reject_all_users_overlap(state: LedgerState, except_id: int | None = None) -> None:
    for other in state.interest_rules.values():
        if other.active and other.scope is None and other.rule_id != except_id:
            raise TxError(err.OVERLAPPING_RULE)


def mint(
    state: LedgerState,
    actor: bytes,
    to: bytes,
    amount: int,
    authority: Authority = Authority.USER,
) -> Applied:
    _currency_gate(state, actor, "mint.requires_vote", authority)
    acct = state.account(to)
    acct.balance += amount
    state.supply.minted += amount
    return Applied((actor, to), {"to": to, "amount": amount})


def burn(
    state: LedgerState,
    actor: bytes,
    source: bytes,
    amount: int,
    authority: Authority = Authority.USER,
) -> Applied:
    _currency_gate(state, actor, "mint.requires_vote", authority)
    acct = state.account(source)
    if acct.balance < amount:
        raise TxError(err.INSUFFICIENT_FUNDS)
    acct.balance -= amount
    state.supply.burned += amount
    return Applied((actor, source), {"from": source, "amount": amount})


def convert_fiat(
    state: LedgerState,
    institution: bytes,
    user: bytes,
    direction: FiatDirection,
    amount: int,
) -> Applied:
    """Mint on fiat received off-chain; burn on fiat paid out off-chain."""
    inst = state.accounts.get(institution)
    if inst is None or not ({Role.ACCOUNT_PROVIDER, Role.CURRENCY_MANAGER} & inst.roles):
        raise TxError(err.NOT_AUTHORIZED_CONVERTER)
    acct = state.account(user)
    if Role.USER not in acct.roles:
        raise TxError(err.NOT_AUTHORIZED_CONVERTER, "target lacks the user role")
    if direction is FiatDirection.IN:
        acct.balance += amount
        state.supply.minted += amount
    else:
        if acct.frozen:
            raise TxError(err.USER_FROZEN)
        if acct.balance < amount:
            raise TxError(err.INSUFFICIENT_FUNDS)
        acct.balance -= amount
        state.supply.burned += amount
    return Applied(
        (institution, user),
        {"user": user, "direction": direction.name.lower(), "amount": amount},
    )


def set_interest_rule(
    state: LedgerState,
    actor: bytes,
    payload: SetInterestRule,
    authority: Authority = Authority.USER,
) -> Applied:
    _currency_gate(state, actor, "interest.requires_vote", authority)
    if payload.rule_id is not None:
        rule = state.interest_rules.get(payload.rule_id)
        if rule is None:
            raise TxError(err.RULE_INACTIVE, "no such rule")
        if payload.active and rule.scope is None:
            _reject_all_users_overlap(state, except_id=rule.rule_id)
        rule.active = payload.active
        return Applied((actor,), {"rule_id": rule.rule_id, "active": payload.active})

    if payload.start_height < state.height:
        raise TxError(err.START_IN_PAST)
    if payload.rate_den <= 0 or payload.period_blocks <= 0:
        raise TxError(err.START_IN_PAST, "malformed rule parameters")
    if payload.scope is None:
        _reject_all_users_overlap(state)
    rule_id = state.next_rule_id
    state.next_rule_id += 1
    state.interest_rules[rule_id] = InterestRule(
        rule_id=rule_id,
        rate_num=payload.rate_num,
        rate_den=payload.rate_den,
        period_blocks=payload.period_blocks,
        start_height=payload.start_height,
        mode=payload.mode,
        scope=payload.scope,
        active=payload.active,
    )
    return Applied(
        (actor,),
        {
            "rule_id": rule_id,
            "rate": f"{payload.rate_num}/{payload.rate_den}",
            "period_blocks": payload.period_blocks,
            "start_height": payload.start_height,
            "mode": payload.mode.name.lower(),
            "scope": "all_users" if payload.scope is None else len(payload.scope),
        },
    )


def _rule_members(state: LedgerState, rule: InterestRule) -> list[bytes]:
    if rule.scope is None:
        return state.holders(Role.USER)
    return sorted(rule.scope)


def accrue_period(state: LedgerState, rule_id: int, period_index: int) -> list[tuple[bytes, int]]:
    """Create one period's funds for every in-scope account.

    Returns (account, amount) pairs for logging.  Must be invoked exactly
    once per boundary, in period order; the rule tracks the last index.
    """
    rule = state.interest_rules.get(rule_id)
    if rule is None or not rule.active:
        raise TxError(err.RULE_INACTIVE)
    if period_index <= rule.last_accrued_period:
        raise TxError(err.ALREADY_ACCRUED)
    credited: list[tuple[bytes, int]] = []
    for account_id in _rule_members(state, rule):
        acct = state.accounts.get(account_id)
        if acct is None or Role.USER not in acct.roles:
            continue
        amount = 0 if acct.frozen else rule.rate_num * acct.balance // rule.rate_den
        if rule.mode is InterestMode.PUSH:
            if amount:
                acct.balance += amount
                state.supply.minted += amount
                rule.created_total += amount
                credited.append((account_id, amount))
        else:
            ledger = state.allowances.setdefault(account_id, {}).setdefault(
                rule_id, AllowanceLedger()
            )
            ledger.accrued.append((period_index, amount))
            state.supply.minted += amount
            rule.created_total += amount
            credited.append((account_id, amount))
    rule.last_accrued_period = period_index
    return credited


def boundaries_at(state: LedgerState, height: int) -> list[tuple[int, int]]:
    """(rule_id, period_index) pairs whose boundary lands on ``height``."""
    hits: list[tuple[int, int]] = []
    for rule_id in sorted(state.interest_rules):
        rule = state.interest_rules[rule_id]
        if not rule.active or height <= rule.start_height:
            continue
        offset = height - rule.start_height
        if offset % rule.period_blocks == 0:
            hits.append((rule_id, offset // rule.period_blocks))
    return hits


def claim_allowance(
    state: LedgerState, account: bytes, rule_id: int, up_to_period: int
) -> Applied:
    """Withdraw all unclaimed periods up to and including ``up_to_period``."""
    acct = state.account(account)
    if Role.USER not in acct.roles:
        raise TxError(err.NO_ROLE)
    if acct.frozen:
        raise TxError(err.FROZEN)
    rule = state.interest_rules.get(rule_id)
    if rule is None:
        raise TxError(err.RULE_INACTIVE, "no such rule")
    in_scope = rule.scope is None or account in rule.scope
    if not in_scope:
        raise TxError(err.NOTHING_TO_CLAIM, "account not in rule scope")
    if up_to_period > rule.last_accrued_period:
        raise TxError(err.PERIOD_NOT_YET_ACCRUED)
    ledger = state.allowances.get(account, {}).get(rule_id)
    if ledger is None or up_to_period <= ledger.last_claimed_period:
        raise TxError(err.NOTHING_TO_CLAIM)
    total = sum(
        amount
        for period, amount in ledger.accrued
        if ledger.last_claimed_period < period <= up_to_period
    )
    ledger.last_claimed_period = up_to_period
    acct.balance += total
    return Applied(
        (account,),
        {"rule_id": rule_id, "up_to_period": up_to_period, "amount": total},
    )


def claimable_amount(state: LedgerState, account: bytes) -> int:
    """Total unclaimed accruals across every rule, for the account owner."""
    state.account(account)
    per_rule = state.allowances.get(account, {})
    return sum(led.unclaimed_total() for led in per_rule.values())


def supply_view(state: LedgerState) -> dict:
    """Public supply counters plus per-rule created totals."""
    return {
        "minted": state.supply.minted,
        "burned": state.supply.burned,
        "circulating": state.supply.circulating,
        "rules": {
            rid: state.interest_rules[rid].created_total
            for rid in sorted(state.interest_rules)
        },
    }
