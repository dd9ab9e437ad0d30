"""Signature and aggregate-signature primitives.

The default scheme is a transparent mock: a signature is the pair
``(signer public key, sha256(message))`` and an aggregate is the set union
of its parts. It is deterministic, which is what protocol testing needs; a
real pairing-based scheme can replace it behind the same functions.

Honest code only signs with keys it owns. The mock does not stop a caller
from building a ``Signature`` by hand for somebody else's key; the adversary
module is written so that it never does.
"""

from __future__ import annotations

import hashlib
from collections.abc import Iterable, Sequence
from dataclasses import dataclass


class CryptoError(ValueError):
    pass


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class KeyPair:
    replica_id: int
    public_key: bytes
    private_key: bytes


@dataclass(frozen=True)
class Signature:
    signer: bytes
    payload_digest: bytes


@dataclass(frozen=True)
class AggregateSignature:
    # sorted by public key, at most one part per key
    parts: tuple[tuple[bytes, bytes], ...]

    def signers(self) -> tuple[bytes, ...]:
        return tuple(pk for pk, _ in self.parts)


def keygen(replica_id: int) -> KeyPair:
    """Deterministic key pair for ``replica_id``.

    Simulation replicas are numbered from 0 (as in the protocol figures), so
    any non-negative id is accepted.
    """
    if replica_id < 0:
        raise CryptoError(f"replica id must be non-negative, got {replica_id}")
    tag = replica_id.to_bytes(8, "big")
    private_key = digest(b"chonkybft/mock/sk/" + tag)
    public_key = digest(b"chonkybft/mock/pk/" + private_key)
    return KeyPair(replica_id, public_key, private_key)


def _public_key_of(private_key: bytes) -> bytes:
    return digest(b"chonkybft/mock/pk/" + private_key)


def sign(private_key: bytes, message: bytes) -> Signature:
    return Signature(_public_key_of(private_key), digest(message))


def verify(sig: Signature, message: bytes, public_key: bytes) -> bool:
    return sig.signer == public_key and sig.payload_digest == digest(message)


def aggregate(signatures: Iterable[Signature]) -> AggregateSignature:
    parts: dict[bytes, bytes] = {}
    for sig in signatures:
        if sig.signer in parts:
            raise CryptoError("duplicate signer in aggregate")
        parts[sig.signer] = sig.payload_digest
    if not parts:
        raise CryptoError("cannot aggregate an empty set of signatures")
    return AggregateSignature(tuple(sorted(parts.items())))


def aggregate_verify(
    public_keys: Sequence[bytes],
    messages: Sequence[bytes],
    agg: AggregateSignature,
) -> bool:
    """True iff every (key, message) pair is covered by a part of ``agg``.

    Messages may differ per key, so the same call serves commit QCs (one
    repeated vote) and timeout QCs (one vote per signer).
    """
    if len(public_keys) != len(messages):
        raise CryptoError(
            f"{len(public_keys)} public keys but {len(messages)} messages"
        )
    parts = dict(agg.parts)
    if len(parts) != len(public_keys):
        return False
    digests: dict[bytes, bytes] = {}
    for pk, msg in zip(public_keys, messages):
        d = digests.get(msg)
        if d is None:
            d = digests[msg] = digest(msg)
        if parts.get(pk) != d:
            return False
    return True
