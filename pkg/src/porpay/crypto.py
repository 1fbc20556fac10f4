"""Primitive contracts shared by every module: keyed PRF, hash commitments,
and fixed-size authenticated cipher units.

Every value that crosses the ledger (a challenge key, a file block, a path
digest, a leaf index) is packed into a unit of one session-wide size before
encryption. Real payloads, dummy proofs, and uniformly sampled padding are
therefore indistinguishable by length, which is the property the padding
scheme relies on.

Unit wire format: nonce || ciphertext || tag. The plaintext inside is a
2-byte big-endian length prefix, the value, and zero fill up to the session
capacity.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .hashing import digest

PSI_BITS = 128  # PRF key size
IOTA_BITS = 128  # PRF output size
LAMBDA_BITS = 128  # commitment randomness size
PRF_COUNTER_LEN = 8  # eta = 64-bit PRF input

SYM_KEY_LEN = 16
NONCE_LEN = 12
TAG_LEN = 16
_LEN_PREFIX = 2


class BadRandomnessLength(ValueError):
    """Commitment randomness must be exactly LAMBDA_BITS/8 bytes."""


class DecryptFailure(Exception):
    """Unit failed authentication or carried an undecodable payload.

    During dispute resolution this is the signal that distinguishes a
    garbage ciphertext (dummy or tampered unit) from a well-formed but
    invalid proof.
    """


def prf(key: bytes, counter: int, out_len: int = IOTA_BITS // 8) -> bytes:
    """Keyed hash of (key || 8-byte big-endian counter); deterministic."""
    return digest(key + counter.to_bytes(PRF_COUNTER_LEN, "big"), out_len)


@dataclass(frozen=True)
class Opening:
    """Commitment opening: the statement bytes and the randomness used."""

    statement: bytes
    randomness: bytes


def commit(statement: bytes, randomness: bytes) -> bytes:
    """Commit to ``statement`` as H(statement || randomness)."""
    if len(randomness) != LAMBDA_BITS // 8:
        raise BadRandomnessLength(
            f"randomness must be {LAMBDA_BITS // 8} bytes, got {len(randomness)}"
        )
    return digest(statement + randomness)


def commit_verify(commitment: bytes, opening: Opening) -> bool:
    try:
        return commit(opening.statement, opening.randomness) == commitment
    except BadRandomnessLength:
        return False


def gen_commit_randomness(rng: random.Random) -> bytes:
    return rng.randbytes(LAMBDA_BITS // 8)


def gen_sym_key(rng: random.Random) -> bytes:
    return rng.randbytes(SYM_KEY_LEN)


@dataclass(frozen=True)
class UnitFormat:
    """Geometry of one session's cipher units.

    ``value_capacity`` is the largest value the unit payload can carry; all
    units of a session share it, so all units have the same wire length.
    """

    value_capacity: int

    @property
    def payload_len(self) -> int:
        return _LEN_PREFIX + self.value_capacity

    @property
    def unit_len(self) -> int:
        return NONCE_LEN + self.payload_len + TAG_LEN


def enc_unit(key: bytes, value: bytes, fmt: UnitFormat, rng: random.Random) -> bytes:
    """Encrypt ``value`` into one fixed-length unit under a fresh nonce."""
    if len(value) > fmt.value_capacity:
        raise ValueError(
            f"value of {len(value)} bytes exceeds unit capacity {fmt.value_capacity}"
        )
    payload = (
        len(value).to_bytes(_LEN_PREFIX, "big")
        + value
        + bytes(fmt.value_capacity - len(value))
    )
    nonce = rng.randbytes(NONCE_LEN)
    return nonce + AESGCM(key).encrypt(nonce, payload, None)


def dec_unit(key: bytes, unit: bytes, fmt: UnitFormat) -> bytes:
    """Authenticate and decrypt one unit, returning the packed value.

    Raises DecryptFailure on a wrong key, any tampering, a wrong unit
    length, or a length prefix that exceeds the capacity.
    """
    if len(unit) != fmt.unit_len:
        raise DecryptFailure(f"unit length {len(unit)} != {fmt.unit_len}")
    try:
        payload = AESGCM(key).decrypt(unit[:NONCE_LEN], unit[NONCE_LEN:], None)
    except InvalidTag as exc:
        raise DecryptFailure("unit failed authentication") from exc
    n = int.from_bytes(payload[:_LEN_PREFIX], "big")
    if n > fmt.value_capacity:
        raise DecryptFailure("payload length prefix exceeds unit capacity")
    return payload[_LEN_PREFIX : _LEN_PREFIX + n]


def sample_unit(fmt: UnitFormat, rng: random.Random) -> bytes:
    """Uniformly random bytes of exactly the unit wire length."""
    return rng.randbytes(fmt.unit_len)
