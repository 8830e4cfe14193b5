"""Simulation-grade cryptography for committee-backed payment channels.

Four building blocks live here:

* an additively homomorphic one-way "lock" function realized as discrete
  exponentiation in a cyclic group (a toy 23-element group for readable
  tests, a 256-bit safe-prime group as the default),
* signature tags that bind a signer id to a digest and verify through a
  keystore acting as the simulation's trust root,
* quorum certificates: 2f+1 distinct valid signatures over one digest,
* layered routing packets with constant wire size, one encryption layer
  per hop, and authenticated decryption that fails atomically.

Interfaces are shaped so real primitives could be swapped in; none of this
is cryptographically hard at simulation scale and nothing here should be
reused outside the simulator.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass
from typing import Iterable, Sequence

# ---------------------------------------------------------------------------
# canonical encoding
# ---------------------------------------------------------------------------

def enc_bytes(raw: bytes) -> bytes:
    """Length-prefixed byte record: u32 big-endian length, then the bytes."""
    if len(raw) > 0xFFFFFFFF:
        raise ValueError("record too long")
    return len(raw).to_bytes(4, "big") + raw


def enc_int(value: int) -> bytes:
    """Non-negative integer as a length-prefixed minimal big-endian record."""
    if value < 0:
        raise ValueError("negative integers are not encodable")
    return enc_bytes(value.to_bytes(max(1, (value.bit_length() + 7) // 8), "big"))


def enc_str(text: str) -> bytes:
    return enc_bytes(text.encode("utf-8"))


def _enc_field(field) -> bytes:
    if isinstance(field, bytes):
        return enc_bytes(field)
    if isinstance(field, bool):
        return enc_int(int(field))
    if isinstance(field, int):
        return enc_int(field)
    if isinstance(field, str):
        return enc_str(field)
    if field is None:
        return b"\xff\xff\xff\xff"
    raise TypeError(f"unencodable field type: {type(field)!r}")


def payload_digest(*fields, hash_factory=hashlib.sha256) -> str:
    """Hex digest over the canonical serialization of the given fields."""
    h = hash_factory()
    for field in fields:
        h.update(_enc_field(field))
    return h.hexdigest()


# ---------------------------------------------------------------------------
# lock function
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CyclicGroup:
    """Multiplicative group parameters: generator of a known-order subgroup."""

    name: str
    modulus: int
    generator: int
    order: int

    def element_bytes(self, element: int) -> bytes:
        return enc_int(element)


# Tiny group for hand-checkable tests: 5 is a primitive root mod 23.
TOY_GROUP = CyclicGroup(name="toy23", modulus=23, generator=5, order=22)

# Fixed 256-bit safe prime p = 2q + 1; generator 4 = 2^2 has prime order q.
_P = 0xC90B639F703332B68D1B778385E87961B7CEB41BC078BE25076BF32C166EC2AB
DEFAULT_GROUP = CyclicGroup(name="safe256", modulus=_P, generator=4, order=(_P - 1) // 2)

GROUPS = {g.name: g for g in (TOY_GROUP, DEFAULT_GROUP)}


@dataclass(frozen=True)
class LockCondition:
    """Public image of a secret scalar: generator ** scalar mod modulus."""

    image: int
    group: CyclicGroup


def lock_apply(group: CyclicGroup, scalar: int) -> LockCondition:
    """One-way map from a scalar to its public lock condition.

    Scalars are normalized modulo the group order, so apply(x) == apply(x + ord).
    """
    return LockCondition(image=pow(group.generator, scalar % group.order, group.modulus),
                         group=group)


def lock_combine(a: LockCondition, b: LockCondition) -> LockCondition:
    """Homomorphic combination: apply(x) * apply(y) == apply(x + y)."""
    if a.group != b.group:
        raise ValueError("lock conditions from different groups cannot combine")
    return LockCondition(image=(a.image * b.image) % a.group.modulus, group=a.group)


def lock_verify(condition: LockCondition, witness: int) -> bool:
    """True iff the witness scalar opens the lock condition."""
    return lock_apply(condition.group, witness) == condition


def scalar_add(group: CyclicGroup, a: int, b: int) -> int:
    return (a + b) % group.order


def scalar_sub(group: CyclicGroup, a: int, b: int) -> int:
    return (a - b) % group.order


# ---------------------------------------------------------------------------
# signatures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Signature:
    signer: str
    digest: str
    tag: str


@dataclass(frozen=True)
class KeyPair:
    signer: str
    secret: bytes

    def sign(self, digest: str) -> Signature:
        tag = hmac.new(self.secret, digest.encode(), hashlib.sha256).hexdigest()
        return Signature(signer=self.signer, digest=digest, tag=tag)


class Keystore:
    """Issues per-signer keys and verifies tags; the simulation trust root.

    Actors hold only their own KeyPair, so a byzantine behavior script can
    sign arbitrary digests with its own identity but cannot mint another
    signer's tag. Verification recomputes the tag from the stored secret.
    """

    def __init__(self, seed) -> None:
        self._seed = str(seed)
        self._keys: dict[str, KeyPair] = {}

    def keypair(self, signer: str) -> KeyPair:
        if signer not in self._keys:
            secret = hashlib.sha256(f"key/{self._seed}/{signer}".encode()).digest()
            self._keys[signer] = KeyPair(signer=signer, secret=secret)
        return self._keys[signer]

    def verify(self, sig: Signature) -> bool:
        if sig.signer not in self._keys:
            return False
        expected = self._keys[sig.signer].sign(sig.digest).tag
        return hmac.compare_digest(expected, sig.tag)


# ---------------------------------------------------------------------------
# quorum certificates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuorumCertificate:
    """2f+1 distinct valid member signatures over one digest for one slot."""

    committee: str
    slot: str
    digest: str
    signatures: tuple[Signature, ...]


def assemble_certificate(committee: str, slot: str, digest: str,
                         signatures: Iterable[Signature], f: int,
                         roster: Sequence[str], keystore: Keystore) -> QuorumCertificate:
    """Build a certificate, or raise ValueError if the quorum is not there.

    Counted signatures must be valid, carry the target digest, and come from
    2f+1 distinct roster members.
    """
    roster_set = set(roster)
    seen: dict[str, Signature] = {}
    for sig in signatures:
        if sig.digest != digest:
            raise ValueError(f"signature digest mismatch from {sig.signer}")
        if sig.signer not in roster_set:
            raise ValueError(f"signer {sig.signer} not in committee roster")
        if sig.signer in seen:
            raise ValueError(f"duplicate signer {sig.signer}")
        if not keystore.verify(sig):
            raise ValueError(f"invalid signature from {sig.signer}")
        seen[sig.signer] = sig
    quorum = 2 * f + 1
    if len(seen) < quorum:
        raise ValueError(f"quorum not met: {len(seen)} < {quorum}")
    ordered = tuple(seen[s] for s in sorted(seen))
    return QuorumCertificate(committee=committee, slot=slot, digest=digest,
                             signatures=ordered)


def verify_certificate(cert: QuorumCertificate, f: int, roster: Sequence[str],
                       keystore: Keystore) -> bool:
    try:
        assemble_certificate(cert.committee, cert.slot, cert.digest,
                             cert.signatures, f, roster, keystore)
    except ValueError:
        return False
    return True


# ---------------------------------------------------------------------------
# layered routing packets
# ---------------------------------------------------------------------------

class OnionError(Exception):
    """Raised when a packet fails authentication or cannot be parsed."""


@dataclass(frozen=True)
class HopPayload:
    """Per-hop routing record.

    next_party is None at the terminal hop; image_in/image_out are lock
    images for the incoming and outgoing conditional payments; link_secret
    is the per-hop scalar that relates them. Terminal payloads carry only
    the incoming image, the amount, and the timelock.
    """

    next_party: str | None
    amount: int
    image_in: int | None
    image_out: int | None
    link_secret: int | None
    timelock: int

    def to_bytes(self) -> bytes:
        return b"".join(_enc_field(f) for f in (
            self.next_party, self.amount, self.image_in,
            self.image_out, self.link_secret, self.timelock))


_NONE_MARK = b"\xff\xff\xff\xff"


def _read_field(buf: bytes, pos: int):
    if buf[pos:pos + 4] == _NONE_MARK:
        return None, pos + 4
    if pos + 4 > len(buf):
        raise OnionError("truncated field")
    length = int.from_bytes(buf[pos:pos + 4], "big")
    end = pos + 4 + length
    if end > len(buf):
        raise OnionError("truncated field body")
    return buf[pos + 4:end], end


def _payload_from_bytes(buf: bytes) -> tuple[HopPayload, int]:
    fields = []
    pos = 0
    for _ in range(6):
        raw, pos = _read_field(buf, pos)
        fields.append(raw)
    next_party = fields[0].decode("utf-8") if fields[0] is not None else None
    as_int = lambda raw: int.from_bytes(raw, "big") if raw is not None else None
    payload = HopPayload(next_party=next_party, amount=as_int(fields[1]),
                         image_in=as_int(fields[2]), image_out=as_int(fields[3]),
                         link_secret=as_int(fields[4]), timelock=as_int(fields[5]))
    return payload, pos


DEFAULT_WIRE_SIZE = 8192
_NONCE_LEN = 8
_MAC_LEN = 16


def onion_key(material) -> bytes:
    """Derive a per-hop symmetric key from arbitrary key material."""
    return hashlib.sha256(f"onion/{material}".encode()).digest()


def _keystream(key: bytes, nonce: bytes, length: int) -> bytes:
    out = bytearray()
    counter = 0
    while len(out) < length:
        out += hashlib.sha256(key + nonce + counter.to_bytes(8, "big")).digest()
        counter += 1
    return bytes(out[:length])


def _seal(key: bytes, nonce: bytes, plaintext: bytes) -> bytes:
    ct = bytes(a ^ b for a, b in zip(plaintext, _keystream(key, nonce, len(plaintext))))
    mac = hmac.new(key, nonce + ct, hashlib.sha256).digest()[:_MAC_LEN]
    return nonce + mac + enc_bytes(ct)


def _open(key: bytes, core: bytes) -> bytes:
    if len(core) < _NONCE_LEN + _MAC_LEN + 4:
        raise OnionError("packet core too short")
    nonce = core[:_NONCE_LEN]
    mac = core[_NONCE_LEN:_NONCE_LEN + _MAC_LEN]
    ct, end = _read_field(core, _NONCE_LEN + _MAC_LEN)
    if ct is None or end != len(core):
        raise OnionError("malformed packet core")
    expected = hmac.new(key, nonce + ct, hashlib.sha256).digest()[:_MAC_LEN]
    if not hmac.compare_digest(mac, expected):
        raise OnionError("authentication failed")
    return bytes(a ^ b for a, b in zip(ct, _keystream(key, nonce, len(ct))))


@dataclass(frozen=True)
class OnionPacket:
    """One sealed layer plus everything nested beneath it.

    The variable-length core shrinks as layers peel; to_wire() pads every
    packet to the same fixed size so hop position is not visible from
    serialized length.
    """

    core: bytes
    wire_size: int = DEFAULT_WIRE_SIZE

    def to_wire(self) -> bytes:
        framed = enc_bytes(self.core)
        if len(framed) > self.wire_size:
            raise ValueError("packet exceeds wire size")
        return framed + b"\x00" * (self.wire_size - len(framed))


def build_onion(payloads: Sequence[HopPayload], hop_keys: Sequence[bytes],
                wire_size: int = DEFAULT_WIRE_SIZE) -> OnionPacket:
    """Wrap payloads innermost-first, one encryption layer per hop key."""
    if len(payloads) != len(hop_keys) or not payloads:
        raise ValueError("need one key per payload")
    core = b""
    for payload, key in zip(reversed(payloads), reversed(hop_keys)):
        nonce = hashlib.sha256(b"nonce" + key + core + payload.to_bytes()).digest()[:_NONCE_LEN]
        plaintext = payload.to_bytes() + enc_bytes(core)
        core = _seal(key, nonce, plaintext)
    packet = OnionPacket(core=core, wire_size=wire_size)
    packet.to_wire()  # validates the size budget up front
    return packet


def peel_onion(packet: OnionPacket, key: bytes) -> tuple[HopPayload, OnionPacket | None]:
    """Strip one layer; returns the hop payload and the inner packet, if any."""
    plaintext = _open(key, packet.core)
    payload, pos = _payload_from_bytes(plaintext)
    inner, end = _read_field(plaintext, pos)
    if inner is None or end != len(plaintext):
        raise OnionError("malformed layer body")
    if inner == b"":
        return payload, None
    return payload, OnionPacket(core=inner, wire_size=packet.wire_size)
