"""Permissioned hash-chained ledgers validated by proof of authority.

Block hashing follows a fixed 416-bit preimage::

    identity (32) | prev_hash (256) | tx_count (32) | nonce (32) | zero padding (64)

hashed with SHA-1 to a 160-bit digest. Entries travel in the block body and
are bound to the header through ``tx_count`` and the nonce, which is the
first 32 bits of a SHA-256 accumulator over the entry hashes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, fields
from datetime import date
from typing import Any, Callable, ClassVar, Container, Iterable, Iterator

from .errors import EmptyBlock, NotEmpowered, ParseError, WrongLedger

IDENTITY_BITS = 32
PREV_HASH_BITS = 256
TX_COUNT_BITS = 32
NONCE_BITS = 32
PADDING_BITS = 64
DIGEST_BITS = 160

TRUST = "trust"
TRADING = "trading"


def header_bits() -> int:
    return IDENTITY_BITS + PREV_HASH_BITS + TX_COUNT_BITS


def hash_input_bits() -> int:
    return header_bits() + NONCE_BITS + PADDING_BITS


def digest_bits() -> int:
    return DIGEST_BITS


def consensus_message_bits() -> int:
    """Bits a validator broadcasts per block: its identity plus the block digest."""
    return IDENTITY_BITS + DIGEST_BITS


GENESIS_PREV = bytes(PREV_HASH_BITS // 8)


@dataclass(frozen=True)
class BlockHeader:
    identity: int
    prev_hash: bytes = GENESIS_PREV
    tx_count: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.identity < 2**32:
            raise ValueError("identity must fit in 32 bits")
        if len(self.prev_hash) != PREV_HASH_BITS // 8:
            raise ValueError("prev_hash must be 256 bits")
        if not 0 <= self.tx_count < 2**32:
            raise ValueError("tx_count must fit in 32 bits")

    def pack(self) -> bytes:
        return struct.pack(">I", self.identity) + self.prev_hash + struct.pack(">I", self.tx_count)


def hash_block(
    header: BlockHeader, nonce: int, hasher: Callable[[bytes], Any] = hashlib.sha1
) -> bytes:
    if not 0 <= nonce < 2**32:
        raise ValueError("nonce must fit in 32 bits")
    preimage = header.pack() + struct.pack(">I", nonce) + bytes(PADDING_BITS // 8)
    assert len(preimage) * 8 == hash_input_bits()
    return hasher(preimage).digest()


def widen_digest(digest: bytes) -> bytes:
    """Left-pad a digest to the 256-bit prev_hash field."""
    return digest.rjust(PREV_HASH_BITS // 8, b"\0")


# -- canonical serialization ------------------------------------------------


def encode_value(value: Any) -> bytes:
    """Canonical bytes: type tag, big-endian ints, length-prefixed strings."""
    if isinstance(value, bool):
        return b"B" + (b"\x01" if value else b"\x00")
    if isinstance(value, int):
        return b"I" + struct.pack(">q", value)
    if isinstance(value, float):
        return b"F" + struct.pack(">d", value)
    if isinstance(value, date):
        value = value.isoformat()
    if isinstance(value, (tuple, list)):
        return b"L" + struct.pack(">I", len(value)) + b"".join(encode_value(v) for v in value)
    if isinstance(value, str):
        raw = value.encode("utf-8")
        return b"S" + struct.pack(">I", len(raw)) + raw
    raise TypeError(f"cannot serialize {type(value).__name__}")


_ENTRY_TYPES: dict[str, type[LedgerEntry]] = {}


@dataclass(frozen=True)
class LedgerEntry:
    kind: ClassVar[str] = ""
    ledger: ClassVar[str] = ""

    def __init_subclass__(cls, **kw: Any) -> None:
        super().__init_subclass__(**kw)
        if cls.kind:
            _ENTRY_TYPES[cls.kind] = cls

    def serialize(self) -> bytes:
        return encode_value(self.kind) + b"".join(encode_value(getattr(self, f.name)) for f in fields(self))

    @property
    def entry_hash(self) -> bytes:
        return hashlib.sha256(self.serialize()).digest()

    def parties(self) -> frozenset[int]:
        return frozenset()

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, date):
                v = v.isoformat()
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        out["entry_hash"] = self.entry_hash.hex()
        return out

    @staticmethod
    def from_json(obj: dict[str, Any]) -> LedgerEntry:
        cls = _ENTRY_TYPES.get(obj.get("kind", ""))
        if cls is None:
            raise ParseError(f"unknown entry kind {obj.get('kind')!r}")
        kwargs = {}
        for f in fields(cls):
            v = obj[f.name]
            if f.type in ("date",):
                v = date.fromisoformat(v)
            elif isinstance(v, list):
                v = tuple(v)
            kwargs[f.name] = v
        entry = cls(**kwargs)
        if "entry_hash" in obj and obj["entry_hash"] != entry.entry_hash.hex():
            raise ParseError(f"entry hash mismatch for {entry!r}")
        return entry


@dataclass(frozen=True)
class NodeJoined(LedgerEntry):
    kind: ClassVar[str] = "NodeJoined"
    ledger: ClassVar[str] = TRUST
    node: int
    key_id: str
    introducer: int
    on: date

    def parties(self) -> frozenset[int]:
        return frozenset((self.node, self.introducer))


@dataclass(frozen=True)
class TrustEstablished(LedgerEntry):
    kind: ClassVar[str] = "TrustEstablished"
    ledger: ClassVar[str] = TRUST
    a: int
    b: int
    on: date

    def parties(self) -> frozenset[int]:
        return frozenset((self.a, self.b))


@dataclass(frozen=True)
class TrustRevoked(LedgerEntry):
    """Revocation of ``node``; ``severed`` lists the partners whose edges were cut."""

    kind: ClassVar[str] = "TrustRevoked"
    ledger: ClassVar[str] = TRUST
    node: int
    reason: str
    on: date
    severed: tuple[int, ...] = ()

    def parties(self) -> frozenset[int]:
        return frozenset((self.node, *self.severed))


@dataclass(frozen=True)
class OrderPlaced(LedgerEntry):
    kind: ClassVar[str] = "OrderPlaced"
    ledger: ClassVar[str] = TRADING
    order_id: int
    side: str
    kw: float
    green: bool
    neighborhood: int
    starting_price: float
    originator: int
    signer_key_id: str
    signature: str

    def parties(self) -> frozenset[int]:
        return frozenset((self.originator,))


@dataclass(frozen=True)
class OrderCancelled(LedgerEntry):
    kind: ClassVar[str] = "OrderCancelled"
    ledger: ClassVar[str] = TRADING
    order_id: int
    originator: int
    reason: str

    def parties(self) -> frozenset[int]:
        return frozenset((self.originator,))


@dataclass(frozen=True)
class TradeSettled(LedgerEntry):
    kind: ClassVar[str] = "TradeSettled"
    ledger: ClassVar[str] = TRADING
    cycle: int
    buy_order_id: int
    sell_order_id: int
    kw: float
    unit_price: float
    buyer: int
    seller: int
    buyer_energy: float
    buyer_balance: float
    seller_energy: float
    seller_balance: float

    def parties(self) -> frozenset[int]:
        return frozenset((self.buyer, self.seller))


# -- blocks and views ------------------------------------------------------------


def entries_nonce(entries: Iterable[LedgerEntry]) -> int:
    acc = hashlib.sha256()
    for e in entries:
        acc.update(e.entry_hash)
    return int.from_bytes(acc.digest()[:4], "big")


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    nonce: int
    entries: tuple[LedgerEntry, ...]
    digest: bytes

    @classmethod
    def seal(cls, identity: int, prev_digest: bytes | None, entries: tuple[LedgerEntry, ...]) -> Block:
        prev = GENESIS_PREV if prev_digest is None else widen_digest(prev_digest)
        header = BlockHeader(identity=identity, prev_hash=prev, tx_count=len(entries))
        nonce = entries_nonce(entries)
        return cls(header, nonce, entries, hash_block(header, nonce))


@dataclass(frozen=True)
class AuditReport:
    valid: bool
    first_bad_block: int | None = None
    reason: str = ""


@dataclass
class LedgerView:
    """A full (validator) or partial (one node's) copy of a ledger."""

    kind: str = TRUST
    scope: str | int = "full"
    blocks: list[Block] = field(default_factory=list)
    partial_entries: list[LedgerEntry] = field(default_factory=list)
    listeners: list[Callable[[Block], None]] = field(default_factory=list, repr=False)

    @property
    def is_full(self) -> bool:
        return self.scope == "full"

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def head_digest(self) -> bytes | None:
        return self.blocks[-1].digest if self.blocks else None

    def entries(self) -> Iterator[LedgerEntry]:
        if not self.is_full:
            yield from self.partial_entries
            return
        for b in self.blocks:
            yield from b.entries

    def append_block(
        self, entries: Iterable[LedgerEntry], validator: int, authorities: Container[int]
    ) -> Block:
        """Seal ``entries`` into a new block signed off by ``validator``."""
        if not self.is_full:
            raise ValueError("blocks can only be appended to a full ledger view")
        if validator not in authorities:
            raise NotEmpowered(f"node {validator} is not an empowered validator")
        entries = tuple(entries)
        if not entries:
            raise EmptyBlock("a block needs at least one entry")
        for e in entries:
            if e.ledger != self.kind:
                raise WrongLedger(f"{e.kind} does not belong on the {self.kind} ledger")
        block = Block.seal(validator, self.head_digest, entries)
        self.blocks.append(block)
        for cb in self.listeners:
            cb(block)
        return block

    def audit(self) -> AuditReport:
        return audit_chain(self)

    def dump_jsonl(self) -> str:
        lines = []
        for i, b in enumerate(self.blocks):
            lines.append(
                json.dumps(
                    {
                        "block": i,
                        "identity": b.header.identity,
                        "prev_hash": b.header.prev_hash.hex(),
                        "tx_count": b.header.tx_count,
                        "nonce": b.nonce,
                        "digest": b.digest.hex(),
                    },
                    sort_keys=True,
                )
            )
            lines.extend(json.dumps(e.to_json(), sort_keys=True) for e in b.entries)
        return "".join(line + "\n" for line in lines)

    @classmethod
    def load_jsonl(cls, text: str, kind: str = TRUST) -> LedgerView:
        view = cls(kind=kind)
        pending: dict[str, Any] | None = None
        entries: list[LedgerEntry] = []

        def flush() -> None:
            if pending is None:
                return
            header = BlockHeader(
                pending["identity"], bytes.fromhex(pending["prev_hash"]), pending["tx_count"]
            )
            view.blocks.append(
                Block(header, pending["nonce"], tuple(entries), bytes.fromhex(pending["digest"]))
            )

        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            if "block" in obj:
                flush()
                pending, entries = obj, []
            else:
                if pending is None:
                    raise ParseError(f"line {lineno}: entry before first block marker")
                entries.append(LedgerEntry.from_json(obj))
        flush()
        return view


def audit_chain(view: LedgerView) -> AuditReport:
    """Recompute every digest and link; name the first block that fails."""
    prev: bytes | None = None
    for i, b in enumerate(view.blocks):
        expected_prev = GENESIS_PREV if prev is None else widen_digest(prev)
        if b.header.prev_hash != expected_prev:
            return AuditReport(False, i, "prev_hash does not match predecessor digest")
        if b.header.tx_count != len(b.entries):
            return AuditReport(False, i, "tx_count does not match entry count")
        if b.nonce != entries_nonce(b.entries):
            return AuditReport(False, i, "entries do not match the sealed accumulator")
        if hash_block(b.header, b.nonce) != b.digest:
            return AuditReport(False, i, "digest does not recompute")
        prev = b.digest
    return AuditReport(True)


def append_block(
    view: LedgerView, entries: Iterable[LedgerEntry], validator: int, authorities: Container[int]
) -> LedgerView:
    view.append_block(entries, validator, authorities)
    return view


def replicate_partial(full: LedgerView, node: int) -> LedgerView:
    """The slice of a trust ledger a simple node keeps: entries naming it as a party."""
    if not full.is_full:
        raise ValueError("replicate_partial needs a full view")
    return LedgerView(
        kind=full.kind,
        scope=node,
        partial_entries=[e for e in full.entries() if node in e.parties()],
    )
