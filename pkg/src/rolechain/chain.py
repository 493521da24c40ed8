"""Blocks, round-robin publication with diversity spacing, and chain replay.

Publication order is a strict rotation over the validator set (ascending
account id), relaxed in two ways: a validator marked offline is skipped,
and no validator may publish again within ``floor(diversity * n)`` blocks
(``consensus.diversity`` policy, percent, default 50).

A block is validated entirely against its parent state, so validator-set
changes carried by a block take effect at the next height.  Replaying the
same block sequence onto the same genesis always reproduces bit-identical
state digests.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from . import engine
from .codec import Reader, Writer
from .errors import (
    CodecError,
    InternalInvariantViolation,
    InvalidBlock,
    TxError,
)
from . import errors as err
from .keys import KeyPair, get_scheme
from .ledger import Account, LedgerState, Policy
from .payloads import (
    Guardians,
    Permanence,
    ProviderOnly,
    ProviderPlusSecurity,
    RecoveryPolicy,
    Role,
    Transaction,
    ValidatorRecord,
    ZERO_ID,
    decode_transaction,
)

ZERO_HASH = bytes(32)
DUMP_MAGIC = b"RCHN"
DUMP_VERSION = 1


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    publisher: bytes
    tick: int
    txs: tuple[Transaction, ...]
    signature: bytes = b""

    def signing_bytes(self) -> bytes:
        return block_signing_bytes(self.height, self.prev_hash, self.publisher, self.tick, self.txs)

    def encode(self) -> bytes:
        w = Writer()
        w.raw(self.signing_bytes())
        w.bytes_(self.signature)
        return w.getvalue()

    def digest(self) -> bytes:
        return hashlib.sha256(self.encode()).digest()


def block_signing_bytes(
    height: int, prev_hash: bytes, publisher: bytes, tick: int, txs: tuple[Transaction, ...]
) -> bytes:
    w = Writer()
    w.raw(b"blk:")
    w.u64(height)
    w.bytes_(prev_hash)
    w.bytes_(publisher)
    w.u64(tick)
    w.count(len(txs))
    for tx in txs:
        w.bytes_(tx.encode())
    return w.getvalue()


def decode_block(data: bytes) -> Block:
    r = Reader(data)
    if r.fixed(4) != b"blk:":
        raise CodecError("missing block prefix")
    height = r.u64()
    prev_hash = r.bytes_()
    publisher = r.bytes_()
    tick = r.u64()
    txs = tuple(decode_transaction(r.bytes_()) for _ in range(r.count()))
    signature = r.bytes_()
    r.require_end()
    return Block(height, prev_hash, publisher, tick, txs, signature)


def genesis_block() -> Block:
    return Block(0, ZERO_HASH, ZERO_ID, 0, ())


@dataclass
class Chain:
    blocks: list[Block] = field(default_factory=lambda: [genesis_block()])

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    @property
    def head_hash(self) -> bytes:
        return self.head.digest()

    @property
    def height(self) -> int:
        return self.head.height

    def recent_publishers(self, limit: int) -> list[bytes]:
        """Publishers of the most recent blocks, newest first (genesis excluded)."""
        out: list[bytes] = []
        for block in reversed(self.blocks):
            if block.height == 0 or len(out) >= limit:
                break
            out.append(block.publisher)
        return out


def spacing_window(validator_count: int, diversity_percent: int) -> int:
    return validator_count * diversity_percent // 100


def expected_publisher(
    height: int,
    validators: list[bytes],
    recent: list[bytes],
    diversity_percent: int = 50,
    inactive: frozenset[bytes] = frozenset(),
) -> bytes:
    """Who publishes ``height``: rotation slot, then cyclic skip.

    Skips validators that are offline or still inside the diversity spacing
    window (they appear among the publishers of the last ``floor(d*n)``
    blocks).  ``recent`` is newest-first.
    """
    n = len(validators)
    if n == 0:
        raise TxError(err.NO_ELIGIBLE_PUBLISHER, "empty validator set")
    blocked = set(recent[: spacing_window(n, diversity_percent)])
    start = height % n
    for i in range(n):
        candidate = validators[(start + i) % n]
        if candidate in inactive or candidate in blocked:
            continue
        return candidate
    raise TxError(err.NO_ELIGIBLE_PUBLISHER)


def build_block(
    signer: KeyPair,
    publisher: bytes,
    parent: Block,
    pending: list[Transaction],
    tick: int,
    state: LedgerState,
    recent: list[bytes],
    inactive: frozenset[bytes] = frozenset(),
) -> Block:
    expected = expected_publisher(
        parent.height + 1,
        state.validators(),
        recent,
        state.policy_int("consensus.diversity", 50),
        inactive,
    )
    if publisher != expected:
        raise TxError(err.WRONG_PUBLISHER)
    cap = state.policy_int("consensus.max_txs_per_block", 1000)
    txs = tuple(pending[:cap])
    height = parent.height + 1
    prev_hash = parent.digest()
    signature = signer.sign(block_signing_bytes(height, prev_hash, publisher, tick, txs))
    return Block(height, prev_hash, publisher, tick, txs, signature)


def validate_block(
    block: Block,
    state: LedgerState,
    chain: Chain,
    inactive: frozenset[bytes] | None = frozenset(),
) -> list[str]:
    """Total check of one candidate block against the parent state.

    Returns violations as data; an empty list means acceptable.  Passing
    ``inactive=None`` relaxes the rotation check to membership plus spacing
    only, which is what a replayer with no liveness knowledge can verify.
    """
    violations: list[str] = []
    parent = chain.head
    if block.height != parent.height + 1:
        violations.append("HeightGap")
    if block.prev_hash != parent.digest():
        violations.append("HashMismatch")
    scheme = get_scheme(state.scheme)
    publisher_acct = state.accounts.get(block.publisher)
    if publisher_acct is None or Role.VALIDATOR not in publisher_acct.roles:
        violations.append("NotAValidator")
    else:
        validators = state.validators()
        diversity = state.policy_int("consensus.diversity", 50)
        recent = chain.recent_publishers(len(validators))
        if inactive is None:
            if block.publisher in set(recent[: spacing_window(len(validators), diversity)]):
                violations.append("SpacingViolation")
        else:
            try:
                expected = expected_publisher(block.height, validators, recent, diversity, inactive)
                if block.publisher != expected:
                    violations.append("WrongPublisher")
            except TxError:
                violations.append("NoEligiblePublisher")
        if not scheme.verify(publisher_acct.public_key, block.signing_bytes(), block.signature):
            violations.append("BadBlockSignature")
    for i, tx in enumerate(block.txs):
        sender = state.accounts.get(tx.sender)
        if sender is None or not scheme.verify(sender.public_key, tx.signing_bytes(), tx.signature):
            violations.append(f"MalformedTx:{i}")
    return violations


def append_block(
    chain: Chain,
    state: LedgerState,
    block: Block,
    inactive: frozenset[bytes] | None = frozenset(),
) -> list[engine.Receipt]:
    """Validate, apply, and fire boundary work; fatal if conservation breaks."""
    violations = validate_block(block, state, chain, inactive)
    if violations:
        raise InvalidBlock(violations)
    state.height = block.height
    receipts = [engine.apply_transaction(state, tx) for tx in block.txs]
    engine.run_accruals(state)
    receipts.extend(engine.finalize_expired_proposals(state))
    if not state.conservation_holds():
        raise InternalInvariantViolation(
            f"conservation broken at height {block.height}: "
            f"balances={state.total_balances()} unclaimed={state.total_unclaimed()} "
            f"supply={state.supply.circulating}"
        )
    chain.blocks.append(block)
    return receipts


# --- genesis documents and chain dumps --------------------------------------------

def _recovery_to_doc(recovery: RecoveryPolicy) -> dict:
    if isinstance(recovery, Guardians):
        return {
            "kind": "guardians",
            "guardians": sorted(g.hex() for g in recovery.guardians),
            "threshold": recovery.threshold,
        }
    if isinstance(recovery, ProviderPlusSecurity):
        return {"kind": "provider_plus_security"}
    return {"kind": "provider_only"}


def _recovery_from_doc(doc: dict) -> RecoveryPolicy:
    kind = doc["kind"]
    if kind == "guardians":
        return Guardians(frozenset(bytes.fromhex(g) for g in doc["guardians"]), doc["threshold"])
    if kind == "provider_plus_security":
        return ProviderPlusSecurity()
    return ProviderOnly()


def genesis_doc(state: LedgerState, names: dict[str, bytes] | None = None) -> dict:
    """JSON-safe snapshot of a height-0 state, enough to replay from."""
    doc: dict = {
        "scheme": state.scheme,
        "accounts": [],
        "policies": [],
        "registry": [],
        "names": {name: aid.hex() for name, aid in sorted((names or {}).items())},
    }
    for aid in sorted(state.accounts):
        a = state.accounts[aid]
        doc["accounts"].append(
            {
                "id": a.account_id.hex(),
                "key": a.public_key.hex(),
                "roles": sorted(r.name.lower() for r in a.roles),
                "balance": a.balance,
                "frozen": a.frozen,
                "provider": a.provider.hex() if a.provider else None,
                "recovery": _recovery_to_doc(a.recovery),
            }
        )
    for key in sorted(state.policies):
        p = state.policies[key]
        doc["policies"].append(
            {
                "key": p.key,
                "type": "int" if isinstance(p.value, int) else "bytes",
                "value": p.value if isinstance(p.value, int) else p.value.hex(),
                "permanence": p.permanence.name.lower(),
                "expiry_height": p.expiry_height,
            }
        )
    for aid in sorted(state.validator_registry):
        rec = state.validator_registry[aid]
        doc["registry"].append(
            {
                "account": rec.account.hex(),
                "security_gateways": list(rec.security_gateways),
                "visibility_gateways": list(rec.visibility_gateways),
                "validation_server": rec.validation_server,
                "view_key": rec.view_key.hex(),
                "contact": rec.contact,
            }
        )
    return doc


def state_from_doc(doc: dict) -> LedgerState:
    state = LedgerState(scheme=doc["scheme"])
    for p in doc["policies"]:
        value: int | bytes = p["value"] if p["type"] == "int" else bytes.fromhex(p["value"])
        state.policies[p["key"]] = Policy(
            p["key"],
            value,
            Permanence[p["permanence"].upper()],
            p["expiry_height"],
            ZERO_ID,
            0,
        )
    for a in doc["accounts"]:
        acct = Account(
            account_id=bytes.fromhex(a["id"]),
            public_key=bytes.fromhex(a["key"]),
            roles={Role[r.upper()] for r in a["roles"]},
            balance=a["balance"],
            frozen=a["frozen"],
            recovery=_recovery_from_doc(a["recovery"]),
            provider=bytes.fromhex(a["provider"]) if a["provider"] else None,
        )
        state.accounts[acct.account_id] = acct
        state.supply.minted += acct.balance
    for r in doc["registry"]:
        rec = ValidatorRecord(
            account=bytes.fromhex(r["account"]),
            security_gateways=tuple(r["security_gateways"]),
            visibility_gateways=tuple(r["visibility_gateways"]),
            validation_server=r["validation_server"],
            view_key=bytes.fromhex(r["view_key"]),
            contact=r["contact"],
        )
        state.validator_registry[rec.account] = rec
    return state


def export_chain(chain: Chain, doc: dict) -> bytes:
    """Length-prefixed binary dump: genesis document, its digest, blocks.

    Blocks carry their own integrity (signatures and hash links); the
    genesis document is not signed by anyone, so the dump pins its digest.
    """
    w = Writer()
    w.raw(DUMP_MAGIC)
    w.u8(DUMP_VERSION)
    encoded_doc = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    w.bytes_(encoded_doc)
    w.bytes_(hashlib.sha256(encoded_doc).digest())
    w.count(len(chain.blocks) - 1)
    for block in chain.blocks[1:]:
        w.bytes_(block.encode())
    return w.getvalue()


def import_chain(data: bytes) -> tuple[dict, list[Block]]:
    r = Reader(data)
    if r.fixed(4) != DUMP_MAGIC:
        raise CodecError("not a chain dump")
    if r.u8() != DUMP_VERSION:
        raise CodecError("unsupported dump version")
    encoded_doc = r.bytes_()
    if r.bytes_() != hashlib.sha256(encoded_doc).digest():
        raise CodecError("genesis document digest mismatch")
    try:
        doc = json.loads(encoded_doc.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CodecError(f"corrupt genesis document: {exc}") from exc
    blocks = [decode_block(r.bytes_()) for _ in range(r.count())]
    r.require_end()
    return doc, blocks


def replay(doc: dict, blocks: list[Block]) -> tuple[Chain, LedgerState]:
    """Rebuild state from a dump, re-validating every block and invariant."""
    state = state_from_doc(doc)
    if not state.conservation_holds():
        raise InternalInvariantViolation("genesis state does not conserve supply")
    chain = Chain()
    for block in blocks:
        append_block(chain, state, block, inactive=None)
    return chain, state


def verify_dump(data: bytes) -> tuple[Chain, LedgerState]:
    doc, blocks = import_chain(data)
    return replay(doc, blocks)


def format_chain(chain: Chain, height: int | None = None) -> str:
    """Human-readable dump of one block or the whole chain."""
    lines: list[str] = []
    for block in chain.blocks:
        if height is not None and block.height != height:
            continue
        lines.append(
            f"block height={block.height} tick={block.tick} "
            f"publisher={block.publisher.hex()[:16]} txs={len(block.txs)} "
            f"hash={block.digest().hex()[:16]} prev={block.prev_hash.hex()[:16]}"
        )
        for tx in block.txs:
            kind = type(tx.payload).__name__
            lines.append(
                f"  tx {tx.tx_id.hex()[:16]} sender={tx.sender.hex()[:16]} "
                f"nonce={tx.nonce} {kind}"
            )
    return "\n".join(lines)
