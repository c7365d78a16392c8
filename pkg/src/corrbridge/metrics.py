"""Exact-match accuracy and evaluation reports."""

from __future__ import annotations

import time
import unicodedata


def _norm(s):
    # Indic scripts admit multiple codepoint compositions of the same string
    return unicodedata.normalize("NFC", s)


def compute_accuracy(hypotheses, references):
    """Fraction of exact string matches after NFC normalization.

    Each reference entry is either a single string or an iterable of valid
    alternatives; matching any alternative counts.
    """
    if len(hypotheses) != len(references):
        raise ValueError(
            f"hypothesis/reference length mismatch: {len(hypotheses)} vs {len(references)}")
    if not hypotheses:
        raise ValueError("need at least one example")
    correct = 0
    for hyp, ref in zip(hypotheses, references):
        alts = [ref] if isinstance(ref, str) else list(ref)
        h = _norm(hyp)
        if any(h == _norm(a) for a in alts):
            correct += 1
    return correct / len(hypotheses)


def group_references(pairs):
    """Collapse (source, reference) rows into (source, [references]) items.

    Grouping preserves first-appearance order; duplicate sources contribute
    alternative references (the multi-reference evaluation rule).
    """
    order = []
    refs = {}
    for src, ref in pairs:
        if src not in refs:
            refs[src] = []
            order.append(src)
        refs[src].append(ref)
    return [(src, refs[src]) for src in order]


def build_eval_report(sources, hypotheses, references, config_echo, seed,
                      build_id, started_at, flags=None):
    """Assemble the machine-readable evaluation report."""
    acc = compute_accuracy(hypotheses, references)
    examples = []
    for i, (src, hyp, ref) in enumerate(zip(sources, hypotheses, references)):
        row = {
            "index": i,
            "source": src,
            "hypothesis": hyp,
            "references": [ref] if isinstance(ref, str) else list(ref),
            "correct": compute_accuracy([hyp], [ref]) == 1.0,
        }
        if flags and flags[i]:
            row["flags"] = flags[i]
        examples.append(row)
    return {
        "accuracy": acc,
        "example_count": len(examples),
        "examples": examples,
        "config": config_echo,
        "seed": seed,
        "build_id": build_id,
        "wall_clock_seconds": round(time.time() - started_at, 3),
    }


def accuracy_grid_table(cells):
    """Plain-text src x tgt accuracy grid.

    ``cells`` maps (src, tgt) -> accuracy in [0, 1]; rendered in percent.
    """
    sources = sorted({s for s, _ in cells})
    targets = sorted({t for _, t in cells})
    width = max([len("src\\tgt")] + [len(x) for x in sources + targets]) + 2
    lines = ["".join(["src\\tgt".ljust(width)] + [t.ljust(width) for t in targets])]
    for s in sources:
        row = [s.ljust(width)]
        for t in targets:
            val = cells.get((s, t))
            row.append(("-" if val is None else f"{100 * val:.1f}").ljust(width))
        lines.append("".join(row))
    return "\n".join(line.rstrip() for line in lines)
