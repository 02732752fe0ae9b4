"""Corpus-level BLEU-1..4, ROUGE-L and CIDEr over tokenized sentences.

All functions take ``hyps`` as a list of token lists and ``refs`` as a list
of reference lists (each a list of token lists), aligned by index.

* BLEU: clipped n-gram precision pooled over the corpus, brevity penalty
  with the closest reference length per hypothesis, no smoothing.
* ROUGE-L: LCS F-measure with beta = 1.2, best reference per example,
  averaged over the corpus.
* CIDEr: tf-idf vectors for n = 1..4 with document frequencies over the
  reference sets, mean cosine over references, averaged over n, times 10.
"""
from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

from .errors import UsageError

Tokens = Sequence[str]

REPORT_SCHEMA = {
    "type": "object",
    "required": ["bleu", "rouge_l", "cider", "n_examples", "per_example"],
    "properties": {
        "bleu": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}, "minItems": 4, "maxItems": 4},
        "rouge_l": {"type": "number", "minimum": 0, "maximum": 1},
        "cider": {"type": "number", "minimum": 0, "maximum": 10},
        "n_examples": {"type": "integer", "minimum": 0},
        "exact_match": {"type": "number", "minimum": 0, "maximum": 1},
        "per_example": {"type": "array", "items": {"type": "object"}},
    },
}


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _check(hyps, refs) -> None:
    if len(hyps) != len(refs):
        raise UsageError(f"{len(hyps)} hypotheses but {len(refs)} reference sets")
    for r in refs:
        if not r:
            raise UsageError("every example needs at least one reference")


def _bleu_stats(hyp: Tokens, refs: Sequence[Tokens], max_n: int):
    matches, totals = [], []
    for n in range(1, max_n + 1):
        h = ngrams(hyp, n)
        best = Counter()
        for r in refs:
            best |= ngrams(r, n)
        matches.append(sum(min(c, best[g]) for g, c in h.items()))
        totals.append(max(len(hyp) - n + 1, 0))
    ref_len = min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
    return matches, totals, len(hyp), ref_len


def _bleu_from_stats(matches, totals, hyp_len, ref_len, max_n):
    scores = []
    bp = 1.0 if hyp_len > ref_len else (math.exp(1.0 - ref_len / hyp_len) if hyp_len > 0 else 0.0)
    log_sum = 0.0
    for n in range(max_n):
        if matches[n] == 0 or totals[n] == 0:
            scores.extend([0.0] * (max_n - n))
            break
        log_sum += math.log(matches[n] / totals[n])
        scores.append(bp * math.exp(log_sum / (n + 1)))
    return scores


def bleu(hyps: Sequence[Tokens], refs: Sequence[Sequence[Tokens]], max_n: int = 4) -> list[float]:
    """Corpus BLEU-1..max_n."""
    _check(hyps, refs)
    matches, totals = [0] * max_n, [0] * max_n
    hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        m, t, hl, rl = _bleu_stats(h, r, max_n)
        matches = [a + b for a, b in zip(matches, m)]
        totals = [a + b for a, b in zip(totals, t)]
        hyp_len += hl
        ref_len += rl
    return _bleu_from_stats(matches, totals, hyp_len, ref_len, max_n)


def sentence_bleu(hyp: Tokens, refs: Sequence[Tokens], max_n: int = 4) -> list[float]:
    return _bleu_from_stats(*_bleu_stats(hyp, refs, max_n), max_n)


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_sentence(hyp: Tokens, refs: Sequence[Tokens], beta: float = 1.2) -> float:
    best = 0.0
    for r in refs:
        lcs = lcs_length(hyp, r)
        if lcs == 0:
            continue
        p, rec = lcs / len(hyp), lcs / len(r)
        best = max(best, (1 + beta**2) * p * rec / (rec + beta**2 * p))
    return best


def rouge_l(hyps: Sequence[Tokens], refs: Sequence[Sequence[Tokens]], beta: float = 1.2) -> float:
    _check(hyps, refs)
    if not hyps:
        return 0.0
    return sum(rouge_l_sentence(h, r, beta) for h, r in zip(hyps, refs)) / len(hyps)


def _tfidf(tokens: Tokens, n: int, df: Counter, log_n_docs: float):
    vec = {g: c * (log_n_docs - math.log(max(1.0, df[g]))) for g, c in ngrams(tokens, n).items()}
    norm = math.sqrt(sum(v * v for v in vec.values()))
    return vec, norm


def _cosine(a, na, b, nb) -> float:
    if na == 0.0 or nb == 0.0:
        return 0.0
    return sum(v * b.get(g, 0.0) for g, v in a.items()) / (na * nb)


def cider_scores(hyps: Sequence[Tokens], refs: Sequence[Sequence[Tokens]], max_n: int = 4) -> list[float]:
    """Per-example CIDEr; document frequencies come from the reference corpus."""
    _check(hyps, refs)
    if len(hyps) < 2:
        raise UsageError("CIDEr needs a corpus of at least 2 examples")
    dfs = []
    for n in range(1, max_n + 1):
        df = Counter()
        for rs in refs:
            df.update({g for r in rs for g in ngrams(r, n)})
        dfs.append(df)
    log_docs = math.log(float(len(refs)))
    out = []
    for h, rs in zip(hyps, refs):
        per_n = []
        for n in range(1, max_n + 1):
            hv, hn = _tfidf(h, n, dfs[n - 1], log_docs)
            sims = [_cosine(hv, hn, *_tfidf(r, n, dfs[n - 1], log_docs)) for r in rs]
            per_n.append(sum(sims) / len(sims))
        out.append(10.0 * sum(per_n) / max_n)
    return out


def cider(hyps: Sequence[Tokens], refs: Sequence[Sequence[Tokens]], max_n: int = 4) -> float:
    scores = cider_scores(hyps, refs, max_n)
    return sum(scores) / len(scores)


def exact_match(hyps: Sequence[Tokens], refs: Sequence[Sequence[Tokens]]) -> float:
    _check(hyps, refs)
    if not hyps:
        return 0.0
    return sum(any(list(h) == list(r) for r in rs) for h, rs in zip(hyps, refs)) / len(hyps)


def report(hyps: Sequence[Tokens], refs: Sequence[Sequence[Tokens]], ids: Sequence[str] | None = None) -> dict:
    """Corpus report in the JSON layout consumed by ``eval`` and ``ablate``."""
    _check(hyps, refs)
    ids = list(ids) if ids is not None else [str(i) for i in range(len(hyps))]
    ciders = cider_scores(hyps, refs) if len(hyps) >= 2 else [0.0] * len(hyps)
    per = []
    for i, (h, rs) in enumerate(zip(hyps, refs)):
        per.append(
            {
                "id": ids[i],
                "bleu": sentence_bleu(h, rs),
                "rouge_l": rouge_l_sentence(h, rs),
                "cider": ciders[i],
                "exact": any(list(h) == list(r) for r in rs),
            }
        )
    return {
        "bleu": bleu(hyps, refs),
        "rouge_l": rouge_l(hyps, refs),
        "cider": sum(ciders) / len(ciders) if ciders else 0.0,
        "exact_match": exact_match(hyps, refs),
        "n_examples": len(hyps),
        "per_example": per,
    }
