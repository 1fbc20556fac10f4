"""Recurring retrievability-audit payments over a simulated ledger.

Building blocks (Merkle trees, a keyed PRF, hash commitments, fixed-size
authenticated cipher units), a retrievability audit with first-failure
reporting, ledger-recorded statement agreement, an escrow contract with a
logical clock, the recurring-payment protocol in arbiter and arbiter-free
variants, and a declarative scenario runner.
"""

from . import crypto, hashing, ledger, merkle, por, protocol, sap, scenario

__version__ = "0.1.0"

__all__ = [
    "crypto",
    "hashing",
    "ledger",
    "merkle",
    "por",
    "protocol",
    "sap",
    "scenario",
    "__version__",
]
