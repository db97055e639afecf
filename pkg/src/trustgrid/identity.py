"""Key pairs, endorsement signatures and the PGP-style certificate text format.

A certificate renders as::

    Pk 2048R/678455A3 2022-02-07 [expires: 2023-06-07]
    uid Node A <nodea@example.org>
    sig 962789D1 2023-02-07 Node A <nodea@example.org>
    sig F4B7287C 2023-02-07 Empowered <emp@example.org>

Signatures cover only the first two lines (the certificate body), so adding
or removing an endorsement never invalidates the others.
"""

from __future__ import annotations

import functools
import hashlib
import re
from dataclasses import dataclass, field, replace
from datetime import date
from typing import Mapping, Protocol

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import AlreadySigned, CertificateRevoked, InvalidValidityWindow, ParseError

KEY_TAG = "2048R"


class SignatureScheme(Protocol):
    name: str

    def keygen(self, seed: int) -> tuple[bytes, bytes]: ...

    def sign(self, secret_key: bytes, message: bytes) -> bytes: ...

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool: ...


def _seed_bytes(seed: int) -> bytes:
    return hashlib.sha256(b"trustgrid-key-seed" + seed.to_bytes(16, "big", signed=True)).digest()


@functools.lru_cache(maxsize=4096)
def _ed_private(secret_key: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(secret_key)


@functools.lru_cache(maxsize=4096)
def _ed_public(public_key: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(public_key)


class Ed25519Scheme:
    """Real asymmetric signatures; deterministic from the seed."""

    name = "ed25519"

    def keygen(self, seed: int) -> tuple[bytes, bytes]:
        sk = _ed_private(_seed_bytes(seed))
        pk = sk.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return pk, _seed_bytes(seed)

    def sign(self, secret_key: bytes, message: bytes) -> bytes:
        return _ed_private(secret_key).sign(message)

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        try:
            _ed_public(public_key).verify(signature, message)
        except (InvalidSignature, ValueError):
            return False
        return True


class DigestScheme:
    """Keyed-digest test double. Anyone holding the public key can forge; tests only."""

    name = "digest"

    def keygen(self, seed: int) -> tuple[bytes, bytes]:
        secret = _seed_bytes(seed)
        public = hashlib.sha256(b"pk" + secret).digest()
        return public, secret

    def sign(self, secret_key: bytes, message: bytes) -> bytes:
        public = hashlib.sha256(b"pk" + secret_key).digest()
        return hashlib.sha256(public + message).digest()

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        return hashlib.sha256(public_key + message).digest() == signature


SCHEMES: dict[str, SignatureScheme] = {"ed25519": Ed25519Scheme(), "digest": DigestScheme()}
DEFAULT_SCHEME: SignatureScheme = SCHEMES["ed25519"]


def get_scheme(name: str) -> SignatureScheme:
    try:
        return SCHEMES[name]
    except KeyError:
        raise ValueError(f"unknown signature scheme {name!r}") from None


def key_id_for(public_key: bytes) -> str:
    return hashlib.sha1(public_key).hexdigest()[:8].upper()


@dataclass(frozen=True)
class KeyPair:
    key_id: str
    public_key: bytes
    secret_key: bytes = field(repr=False)
    scheme: str = "ed25519"


def generate_keypair(seed: int, scheme: SignatureScheme | str = DEFAULT_SCHEME) -> KeyPair:
    if isinstance(scheme, str):
        scheme = get_scheme(scheme)
    pk, sk = scheme.keygen(seed)
    return KeyPair(key_id=key_id_for(pk), public_key=pk, secret_key=sk, scheme=scheme.name)


def sign_bytes(keypair: KeyPair, message: bytes) -> bytes:
    return get_scheme(keypair.scheme).sign(keypair.secret_key, message)


@dataclass(frozen=True)
class Signature:
    signer_key_id: str
    date: date
    signer_uid: str
    # Not part of the text rendering, so excluded from equality.
    sig_bytes: bytes = field(default=b"", compare=False, repr=False)

    def render(self) -> str:
        return f"sig {self.signer_key_id} {self.date.isoformat()} {self.signer_uid}"


@dataclass(frozen=True)
class Certificate:
    key_id: str
    created: date
    expires: date
    owner_uid: str
    signatures: tuple[Signature, ...] = ()
    revoked: bool = False

    def body(self) -> bytes:
        """Bytes covered by every signature: the key header and uid lines."""
        return (self._header_line() + "\n" + self._uid_line()).encode("utf-8")

    def _header_line(self) -> str:
        return (
            f"Pk {KEY_TAG}/{self.key_id} {self.created.isoformat()} "
            f"[expires: {self.expires.isoformat()}]"
        )

    def _uid_line(self) -> str:
        return f"uid {self.owner_uid}"

    def signer_ids(self) -> list[str]:
        return [s.signer_key_id for s in self.signatures]

    def has_signer(self, key_id: str) -> bool:
        return any(s.signer_key_id == key_id for s in self.signatures)

    def endorsements(self) -> tuple[Signature, ...]:
        """Signatures other than the owner's self-signature."""
        return tuple(s for s in self.signatures if s.signer_key_id != self.key_id)

    def is_expired(self, today: date) -> bool:
        return today >= self.expires

    def without_signer(self, key_id: str) -> Certificate:
        return replace(
            self, signatures=tuple(s for s in self.signatures if s.signer_key_id != key_id)
        )


def self_sign(owner: KeyPair, uid: str, created: date, expires: date) -> Certificate:
    if expires <= created:
        raise InvalidValidityWindow(f"expiry {expires} is not after creation {created}")
    cert = Certificate(key_id=owner.key_id, created=created, expires=expires, owner_uid=uid)
    sig = Signature(owner.key_id, created, uid, sign_bytes(owner, cert.body()))
    return replace(cert, signatures=(sig,))


def sign_certificate(cert: Certificate, signer: KeyPair, signer_uid: str, on: date) -> Certificate:
    """Append an endorsement by ``signer``; earlier signatures are untouched."""
    if cert.revoked:
        raise CertificateRevoked(f"certificate {cert.key_id} is revoked")
    if cert.has_signer(signer.key_id):
        raise AlreadySigned(f"{signer.key_id} already signed {cert.key_id}")
    sig = Signature(signer.key_id, on, signer_uid, sign_bytes(signer, cert.body()))
    return replace(cert, signatures=cert.signatures + (sig,))


@dataclass(frozen=True)
class SignatureCheck:
    signer_key_id: str
    status: str  # "valid" | "invalid" | "unknown-signer"


@dataclass(frozen=True)
class VerificationReport:
    checks: tuple[SignatureCheck, ...]
    expired: bool
    revoked: bool

    @property
    def valid(self) -> bool:
        return (
            bool(self.checks)
            and all(c.status == "valid" for c in self.checks)
            and not self.expired
            and not self.revoked
        )

    def count(self, status: str) -> int:
        return sum(1 for c in self.checks if c.status == status)


def verify_signature(
    cert: Certificate, sig: Signature, registry: Mapping[str, bytes], scheme: SignatureScheme
) -> str:
    public = registry.get(sig.signer_key_id)
    if public is None:
        return "unknown-signer"
    return "valid" if scheme.verify(public, cert.body(), sig.sig_bytes) else "invalid"


def verify_certificate(
    cert: Certificate,
    registry: Mapping[str, bytes],
    today: date | None = None,
    scheme: SignatureScheme | str = DEFAULT_SCHEME,
) -> VerificationReport:
    """Check every signature against ``registry`` (key id -> public key).

    Invalidity is reported, never raised. ``today`` defaults to the system date.
    """
    if isinstance(scheme, str):
        scheme = get_scheme(scheme)
    today = today or date.today()
    checks = tuple(
        SignatureCheck(s.signer_key_id, verify_signature(cert, s, registry, scheme))
        for s in cert.signatures
    )
    return VerificationReport(checks=checks, expired=cert.is_expired(today), revoked=cert.revoked)


def render_certificate(cert: Certificate) -> str:
    lines = [cert._header_line(), cert._uid_line()]
    lines.extend(s.render() for s in cert.signatures)
    return "\n".join(lines)


_HEADER_RE = re.compile(
    r"^Pk (?P<tag>\w+)/(?P<kid>[0-9A-Za-z]{8}) (?P<created>\d{4}-\d{2}-\d{2}) "
    r"\[expires: (?P<expires>\d{4}-\d{2}-\d{2})\]$"
)
_SIG_RE = re.compile(r"^sig (?P<kid>[0-9A-Za-z]{8}) (?P<date>\d{4}-\d{2}-\d{2}) (?P<uid>.+)$")


def parse_certificate(text: str) -> Certificate:
    """Inverse of :func:`render_certificate`. Signature bytes are not carried in text."""
    lines = text.split("\n")
    if len(lines) < 2:
        raise ParseError("certificate needs at least a Pk and a uid line")
    m = _HEADER_RE.match(lines[0])
    if not m or m["tag"] != KEY_TAG:
        raise ParseError(f"bad key header: {lines[0]!r}")
    if not lines[1].startswith("uid "):
        raise ParseError(f"bad uid line: {lines[1]!r}")
    sigs = []
    for line in lines[2:]:
        sm = _SIG_RE.match(line)
        if not sm:
            raise ParseError(f"bad signature line: {line!r}")
        sigs.append(Signature(sm["kid"], date.fromisoformat(sm["date"]), sm["uid"]))
    return Certificate(
        key_id=m["kid"],
        created=date.fromisoformat(m["created"]),
        expires=date.fromisoformat(m["expires"]),
        owner_uid=lines[1][4:],
        signatures=tuple(sigs),
    )
