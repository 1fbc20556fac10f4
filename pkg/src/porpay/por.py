"""Merkle-audit proof of retrievability over an index-tagged encoded file.

The client encodes its file, splits it into fixed payloads, suffixes each
payload with its 1-based index, and publishes the Merkle root. A challenge
is just a PRF key; both sides expand it to the same list of block indices,
the prover answers with (block, path) pairs, and the verifier reports either
acceptance or the position of the first failing pair. That failing position
is what makes third-party dispute checking cheap: re-checking one pair
settles the dispute.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field
from typing import Protocol, Sequence, Union

from . import merkle
from .crypto import PSI_BITS, prf

INDEX_LEN = 4
DEFAULT_PHI = 460
DEFAULT_BLOCK_PAYLOAD_LEN = 16


class EmptyFile(ValueError):
    """Setup was given an empty file."""


class ParamMismatch(ValueError):
    """Encoded file does not match the public parameters."""


class Codec(Protocol):
    """Pluggable erasure-style pre-encoding applied before block splitting."""

    name: str

    def encode(self, data: bytes) -> bytes: ...

    def decode(self, data: bytes) -> bytes: ...


class IdentityCodec:
    name = "identity"

    def encode(self, data: bytes) -> bytes:
        return data

    def decode(self, data: bytes) -> bytes:
        return data


class XorParityCodec:
    """Appends one XOR-parity chunk after every group of four data chunks.

    Demonstrates the encoding hook; decode drops the parity chunks and does
    not strip the zero fill added to a short final chunk.
    """

    name = "xor-parity"

    def __init__(self, chunk_len: int = DEFAULT_BLOCK_PAYLOAD_LEN, group: int = 4):
        if chunk_len < 1 or group < 1:
            raise ValueError("chunk_len and group must be positive")
        self.chunk_len = chunk_len
        self.group = group

    def _chunks(self, data: bytes) -> list[bytes]:
        out = []
        for i in range(0, len(data), self.chunk_len):
            chunk = data[i : i + self.chunk_len]
            out.append(chunk.ljust(self.chunk_len, b"\x00"))
        return out

    def encode(self, data: bytes) -> bytes:
        pieces: list[bytes] = []
        chunks = self._chunks(data)
        for start in range(0, len(chunks), self.group):
            block = chunks[start : start + self.group]
            parity = bytes(self.chunk_len)
            for chunk in block:
                parity = bytes(a ^ b for a, b in zip(parity, chunk))
            pieces.extend(block)
            pieces.append(parity)
        return b"".join(pieces)

    def decode(self, data: bytes) -> bytes:
        chunks = self._chunks(data)
        kept: list[bytes] = []
        for start in range(0, len(chunks), self.group + 1):
            block = chunks[start : start + self.group + 1]
            kept.extend(block[:-1])  # each group ends with its parity chunk
        return b"".join(kept)


CODECS = {"identity": IdentityCodec, "xor-parity": XorParityCodec}


@dataclass(frozen=True)
class PrfSpec:
    """Bit lengths describing the challenge PRF (key, input, output)."""

    psi: int = 128
    eta: int = 64
    iota: int = 128


@dataclass(frozen=True)
class PublicParams:
    sigma: bytes
    phi: int
    m: int
    zeta: PrfSpec = field(default_factory=PrfSpec)

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError("block count must be at least 1")
        if not 1 <= self.phi <= self.m:
            raise ValueError(f"challenge count {self.phi} not in [1, {self.m}]")

    def to_json(self) -> dict:
        return {
            "sigma": self.sigma.hex(),
            "phi": self.phi,
            "m": self.m,
            "zeta": {"psi": self.zeta.psi, "eta": self.zeta.eta, "iota": self.zeta.iota},
        }


@dataclass(frozen=True)
class EncodedFile:
    """Ordered blocks of (payload || 4-byte big-endian index), indices 1..m."""

    blocks: tuple[bytes, ...]
    block_payload_len: int

    @property
    def m(self) -> int:
        return len(self.blocks)

    @property
    def block_len(self) -> int:
        return self.block_payload_len + INDEX_LEN


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    failing_index: int | None = None  # 1-based position in the proof vector

    def __post_init__(self) -> None:
        if self.accepted == (self.failing_index is not None):
            raise ValueError("failing_index must be present exactly when rejected")


@dataclass(frozen=True)
class ProofEntry:
    block: bytes
    path: merkle.MerklePath


ProofVector = tuple[ProofEntry, ...]
Query = Union[bytes, Sequence[int]]


def setup(
    file: bytes,
    block_payload_len: int = DEFAULT_BLOCK_PAYLOAD_LEN,
    phi: int = DEFAULT_PHI,
    codec: Codec | None = None,
) -> tuple[EncodedFile, PublicParams]:
    """Encode ``file`` into indexed blocks and publish the Merkle root.

    The final payload is zero-padded to the payload length. ``phi`` must not
    exceed the resulting block count.
    """
    if not file:
        raise EmptyFile("cannot set up a proof of retrievability over an empty file")
    coded = codec.encode(file) if codec is not None else file
    blocks = []
    for i in range(0, len(coded), block_payload_len):
        payload = coded[i : i + block_payload_len].ljust(block_payload_len, b"\x00")
        blocks.append(payload + (len(blocks) + 1).to_bytes(INDEX_LEN, "big"))
    encoded = EncodedFile(tuple(blocks), block_payload_len)
    _, root = merkle.gen_tree(encoded.blocks)
    return encoded, PublicParams(sigma=root, phi=phi, m=encoded.m)


def gen_query(rng: random.Random) -> bytes:
    """Fresh uniformly random PRF key; one per billing cycle."""
    return rng.randbytes(PSI_BITS // 8)


def derive_indices(key: bytes, phi: int, m: int) -> list[int]:
    """Expand a challenge key into phi block indices, each in [1, m].

    The full PRF output is read as a big-endian integer before the modulus,
    keeping the bias below m / 2**iota. Repeats are kept: every occurrence
    gets its own proof entry.
    """
    if phi < 1 or m < 1:
        raise ValueError("phi and m must be positive")
    return [
        (int.from_bytes(prf(key, i), "big") % m) + 1 for i in range(1, phi + 1)
    ]


def prove(
    encoded: EncodedFile,
    key: bytes,
    pp: PublicParams,
    tree: merkle.MerkleTree | None = None,
) -> ProofVector:
    """Answer the challenge key with one (block, path) pair per index.

    A prover that keeps the tree from setup can pass it in to skip
    rebuilding it every cycle.
    """
    if encoded.m != pp.m:
        raise ParamMismatch(f"encoded file has {encoded.m} blocks, pp says {pp.m}")
    if tree is None:
        tree, _ = merkle.gen_tree(encoded.blocks)
    elif tree.m != pp.m:
        raise ParamMismatch("supplied tree does not match pp")
    entries = []
    for q in derive_indices(key, pp.phi, pp.m):
        entries.append(ProofEntry(encoded.blocks[q - 1], merkle.prove(tree, q)))
    return tuple(entries)


def verify(pi: ProofVector, query: Query, pp: PublicParams) -> Verdict:
    """Check a proof vector, reporting the first failing position on reject.

    ``query`` is either the challenge key (the vector must then hold phi
    entries) or an explicit index list; a single-entry vector with a single
    explicit index is the proof-of-misbehaviour path.
    """
    if isinstance(query, (bytes, bytearray)):
        expected = derive_indices(bytes(query), pp.phi, pp.m)
    else:
        expected = [int(q) for q in query]
        if not expected:
            raise ValueError("explicit query must contain at least one index")
    if len(pi) != len(expected):
        return Verdict(False, min(len(pi) + 1, len(expected)))

    # pass 1: every block must carry the index it was challenged for
    for i, (entry, q) in enumerate(zip(pi, expected), start=1):
        if len(entry.block) <= INDEX_LEN:
            return Verdict(False, i)
        if int.from_bytes(entry.block[-INDEX_LEN:], "big") != q:
            return Verdict(False, i)

    # pass 2: every path must open the root for that same block
    for i, entry in enumerate(pi, start=1):
        if entry.path.leaf_block != entry.block:
            return Verdict(False, i)
        if not merkle.verify(entry.path, pp.sigma):
            return Verdict(False, i)
    return Verdict(True, None)


_FILE_HEADER = struct.Struct(">II")  # m, block_payload_len


def dump_encoded_file(encoded: EncodedFile) -> bytes:
    """Flat binary form: (m, block_payload_len) header then the blocks."""
    return _FILE_HEADER.pack(encoded.m, encoded.block_payload_len) + b"".join(
        encoded.blocks
    )


def save_encoded_file(encoded: EncodedFile, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_encoded_file(encoded))


def read_encoded_file(path) -> EncodedFile:
    with open(path, "rb") as fh:
        return load_encoded_file(fh.read())


def load_encoded_file(data: bytes) -> EncodedFile:
    if len(data) < _FILE_HEADER.size:
        raise ValueError("truncated encoded-file header")
    m, payload_len = _FILE_HEADER.unpack_from(data)
    block_len = payload_len + INDEX_LEN
    body = data[_FILE_HEADER.size :]
    if len(body) != m * block_len:
        raise ValueError("encoded-file body does not match header")
    blocks = tuple(body[i : i + block_len] for i in range(0, len(body), block_len))
    return EncodedFile(blocks, payload_len)
