"""AST linearization: bracketed structure-based traversal (SBT) and its
simplified pre-order form (Sim_SBT).

Both traversals emit node labels only; lexemes travel in the code-token
stream. Under that convention ``len(sbt(t)) == 4 * len(sim_sbt(t))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .java.parser import AstNode


class LengthMismatch(ValueError):
    pass


def sbt(root: AstNode) -> list[str]:
    """``SBT(n) = ( label SBT(c1) ... SBT(ck) ) label``."""
    out: list[str] = []
    # iterative to survive deeply nested expressions
    stack: list[tuple[AstNode, bool]] = [(root, False)]
    while stack:
        node, closing = stack.pop()
        if closing:
            out.extend((")", node.label))
            continue
        out.extend(("(", node.label))
        stack.append((node, True))
        stack.extend((child, False) for child in reversed(node.children))
    return out


def sim_sbt(root: AstNode) -> list[str]:
    """Pre-order list of node labels."""
    return [node.label for node in root.walk()]


@dataclass(frozen=True)
class CompressionStats:
    mean_sbt: float
    mean_sim_sbt: float
    mean_code: float


def compression_stats(asts: Sequence[AstNode], code_seqs: Sequence[Sequence[str]]) -> CompressionStats:
    """Mean SBT, Sim_SBT and code-sequence lengths over parallel lists.

    Raises:
        LengthMismatch: If the lists differ in length.
        ValueError: If they are empty.
    """
    if len(asts) != len(code_seqs):
        raise LengthMismatch(f"{len(asts)} trees but {len(code_seqs)} code sequences")
    if not asts:
        raise ValueError("compression_stats needs at least one example")
    n = len(asts)
    return CompressionStats(
        mean_sbt=sum(len(sbt(t)) for t in asts) / n,
        mean_sim_sbt=sum(len(sim_sbt(t)) for t in asts) / n,
        mean_code=sum(len(c) for c in code_seqs) / n,
    )
