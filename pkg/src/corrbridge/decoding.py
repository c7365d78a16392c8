"""Greedy and beam-search decoding from a fixed encoder representation.

Hypotheses are scored by the sum of floored log-probabilities (no length
normalization). PAD and BOS can never be emitted. Ties are broken toward the
lexicographically smaller token sequence so results are reproducible.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .networks import BOS, EOS, PAD


def _log_probs(decoder, prev_id, h):
    logits, h_new = decoder.step(np.array([prev_id]), h)
    probs = T.softmax(logits)
    lp = np.log(np.maximum(probs.data[0], T.LOG_FLOOR))
    lp[PAD] = -np.inf
    lp[BOS] = -np.inf
    return lp, h_new


def decode_greedy(decoder, rep, max_len):
    """Argmax decoding from BOS until EOS or ``max_len`` emitted tokens.

    Returns the generated ids excluding BOS/EOS.
    """
    h = rep
    prev = BOS
    out = []
    for _ in range(max_len):
        lp, h = _log_probs(decoder, prev, h)
        tok = int(np.argmax(lp))
        if tok == EOS:
            break
        out.append(tok)
        prev = tok
    return out


def decode_beam(decoder, rep, beam_width, max_len):
    """Length-bounded beam search; returns the best finished hypothesis.

    Finished hypotheses retire from the beam and compete at the end; if none
    finished within ``max_len``, the best running hypothesis wins.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    if beam_width == 1:
        return decode_greedy(decoder, rep, max_len)

    # (score, token tuple, prev token, hidden state)
    live = [(0.0, (), BOS, rep)]
    finished = []  # (score, tokens)
    for _ in range(max_len):
        candidates = []
        for score, toks, prev, h in live:
            lp, h_new = _log_probs(decoder, prev, h)
            order = np.argsort(-lp, kind="stable")[:beam_width + 2]
            for tok in order:
                tok = int(tok)
                if not np.isfinite(lp[tok]):
                    continue
                candidates.append((score + float(lp[tok]), toks + (tok,), tok, h_new))
        if not candidates:
            break
        candidates.sort(key=lambda c: (-c[0], c[1]))
        next_live = []
        for score, toks, tok, h_new in candidates:
            if tok == EOS:
                finished.append((score, toks[:-1]))
            else:
                next_live.append((score, toks, tok, h_new))
            if len(next_live) >= beam_width:
                break
        live = next_live
        if not live:
            break
    pool = finished + [(score, toks) for score, toks, _, _ in live]
    pool.sort(key=lambda c: (-c[0], c[1]))
    return list(pool[0][1])


def decode_greedy_batch(decoder, reps, max_len):
    """Greedy decoding of a whole batch of representations at once.

    Fast path for epoch-level validation; semantically the per-example
    argmax loop with PAD/BOS banned and EOS termination.
    """
    batch = reps.shape[0]
    h = reps
    prev = np.full(batch, BOS, dtype=np.intp)
    done = np.zeros(batch, dtype=bool)
    outputs = [[] for _ in range(batch)]
    for _ in range(max_len):
        logits, h = decoder.step(prev, h)
        masked = logits.data.copy()
        masked[:, PAD] = -np.inf
        masked[:, BOS] = -np.inf
        toks = np.argmax(masked, axis=1)
        for i in range(batch):
            if done[i]:
                continue
            if toks[i] == EOS:
                done[i] = True
            else:
                outputs[i].append(int(toks[i]))
        if done.all():
            break
        prev = np.where(done, PAD, toks)
    return outputs


def enumerate_best_sequence(decoder, rep, max_len, vocab_subset=None):
    """Exhaustive search oracle over all decodable sequences up to ``max_len``.

    Mirrors the beam scoring exactly: a sequence is either terminated by EOS
    (EOS log-prob included) or cut at the length cap (no EOS term). Intended
    for toy vocab/length only.
    """
    vocab = vocab_subset if vocab_subset is not None else [
        t for t in range(decoder.vocab_size) if t not in (PAD, BOS)]
    best = None  # (score, tokens)

    def consider(score, toks):
        nonlocal best
        if best is None or score > best[0] or (score == best[0] and tuple(toks) < tuple(best[1])):
            best = (score, list(toks))

    def expand(prefix, score, prev, h, depth):
        if depth == max_len:
            consider(score, prefix)
            return
        lp, h_new = _log_probs(decoder, prev, h)
        for tok in vocab:
            s = score + float(lp[tok])
            if tok == EOS:
                consider(s, prefix)
            else:
                expand(prefix + [tok], s, tok, h_new, depth + 1)

    expand([], 0.0, BOS, rep, 0)
    return best[1], best[0]
