"""Binary Merkle tree over equal-length file blocks.

Leaves are the raw blocks themselves: level 1 holds the hashes of adjacent
block pairs, every higher level hashes pairs of the level below, and the
single remaining digest is the root. Block lists whose length is not a power
of two are padded with all-zero blocks; proof indices always refer to the
original list.

A membership proof carries the block, its sibling block, and one digest per
upper level. Verification re-derives left/right placement from the bits of
the leaf position, so paths carry no direction flags.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .hashing import HASH_LEN, digest


class EmptyInput(ValueError):
    """Tree construction was given no blocks."""


class UnequalBlockLength(ValueError):
    """All blocks in one tree must have the same byte length."""


class IndexOutOfRange(IndexError):
    """Proof requested for a leaf index outside [1, m]."""


def padded_leaf_count(m: int) -> int:
    """Smallest power of two >= m, floored at 2 so every leaf has a sibling."""
    return max(2, 1 << (m - 1).bit_length())


@dataclass(frozen=True)
class MerkleTree:
    """Tree over ``leaf_blocks``; ``levels[0]`` pairs blocks, ``levels[-1]`` is the root."""

    leaf_blocks: tuple[bytes, ...]
    levels: tuple[tuple[bytes, ...], ...]
    height: int

    @property
    def m(self) -> int:
        return len(self.leaf_blocks)

    @property
    def root(self) -> bytes:
        return self.levels[-1][0]


@dataclass(frozen=True)
class MerklePath:
    """Membership proof for one leaf; ``sibling_digests`` run from level 1 upward."""

    leaf_block: bytes
    sibling_block: bytes
    sibling_digests: tuple[bytes, ...]
    leaf_index: int  # 1-based position in the original block list

    def to_bytes(self) -> bytes:
        return (
            struct.pack(">I", self.leaf_index)
            + self.leaf_block
            + self.sibling_block
            + b"".join(self.sibling_digests)
        )

    @classmethod
    def from_bytes(cls, data: bytes, block_len: int) -> "MerklePath":
        if len(data) < 4 + 2 * block_len:
            raise ValueError("path too short for declared block length")
        (leaf_index,) = struct.unpack(">I", data[:4])
        leaf = data[4 : 4 + block_len]
        sibling = data[4 + block_len : 4 + 2 * block_len]
        rest = data[4 + 2 * block_len :]
        if len(rest) % HASH_LEN != 0:
            raise ValueError("trailing digest bytes not a multiple of the hash length")
        digests = tuple(rest[i : i + HASH_LEN] for i in range(0, len(rest), HASH_LEN))
        return cls(leaf, sibling, digests, leaf_index)


def gen_tree(blocks) -> tuple[MerkleTree, bytes]:
    """Build the tree over ``blocks`` and return it with its root digest."""
    blocks = tuple(blocks)
    if not blocks:
        raise EmptyInput("cannot build a tree over zero blocks")
    block_len = len(blocks[0])
    if any(len(b) != block_len for b in blocks):
        raise UnequalBlockLength("blocks differ in length")

    n = padded_leaf_count(len(blocks))
    leaves = blocks + (bytes(block_len),) * (n - len(blocks))
    level = tuple(digest(leaves[i] + leaves[i + 1]) for i in range(0, n, 2))
    levels = [level]
    while len(level) > 1:
        level = tuple(digest(level[i] + level[i + 1]) for i in range(0, len(level), 2))
        levels.append(level)
    return MerkleTree(blocks, tuple(levels), n.bit_length() - 1), levels[-1][0]


def prove(tree: MerkleTree, index: int) -> MerklePath:
    """Produce the membership proof for the 1-based ``index``-th block."""
    if not 1 <= index <= tree.m:
        raise IndexOutOfRange(f"index {index} not in [1, {tree.m}]")

    block_len = len(tree.leaf_blocks[0])
    pos = index - 1
    sibling_pos = pos ^ 1
    sibling = (
        tree.leaf_blocks[sibling_pos]
        if sibling_pos < tree.m
        else bytes(block_len)
    )
    # one sibling digest per level from 1 to height-1
    digests = tuple(
        tree.levels[k - 1][(pos >> k) ^ 1] for k in range(1, tree.height)
    )
    return MerklePath(tree.leaf_blocks[pos], sibling, digests, index)


def verify(path: MerklePath, root: bytes) -> bool:
    """Recompute the root from the path; 1-for-match, 0 otherwise. Never raises."""
    if path.leaf_index < 1:
        return False
    pos = path.leaf_index - 1
    if pos & 1 == 0:
        node = digest(path.leaf_block + path.sibling_block)
    else:
        node = digest(path.sibling_block + path.leaf_block)
    pos >>= 1
    for sibling in path.sibling_digests:
        node = digest(node + sibling) if pos & 1 == 0 else digest(sibling + node)
        pos >>= 1
    return node == root
