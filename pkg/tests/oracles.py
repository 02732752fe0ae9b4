"""Independent numpy/pure-python re-implementations used as test oracles.

Nothing here imports the package's ops: the oracles work on raw arrays and
token lists so that agreement is meaningful.
"""
import itertools
import math

import numpy as np

VISUAL = ("rgb", "flow")
TEXTUAL = ("caption", "summary")
ORDER = ("rgb", "flow", "caption", "summary", "audio")


def softmax(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


def gru(x, h, w_ih, w_hh, b):
    H = h.shape[0]
    gi, gh = w_ih @ x + b, w_hh @ h
    r = sigmoid(gi[:H] + gh[:H])
    u = sigmoid(gi[H : 2 * H] + gh[H : 2 * H])
    n = np.tanh(gi[2 * H :] + r * gh[2 * H :])
    return (1.0 - u) * h + u * n


def attend(X, qh, w_x, p_x, w_q, w_cross=None, cross=None):
    """Score each row, softmax over time, reweight rows, pool."""
    pre = np.stack([w_x @ X[t] + w_q @ qh for t in range(X.shape[0])])
    if w_cross is not None:
        pre = pre + w_cross @ cross
    s = np.array([p_x @ np.tanh(row) for row in pre])
    a = softmax(s)
    Xn = X * a[:, None]
    return Xn, a, Xn.sum(axis=0)


def unroll(seqs: dict, Q0, P: dict, steps: int, d_v: int, d_t: int):
    """Direct transcription of the multi-step reasoning loop.

    ``P`` maps parameter names (as exported by AttentionParams.tensors) to
    arrays.  Returns the final context and per-step attention weights.
    """
    streams = [s for s in ORDER if s in seqs]
    joint = any(s in VISUAL for s in streams) and any(s in TEXTUAL for s in streams)
    Q, V, T = Q0.copy(), np.zeros(d_v), np.zeros(d_t)
    X = {s: seqs[s].copy() for s in streams}
    z, history = None, []
    for _ in range(steps):
        alpha_q = softmax(P["p_Q"] * np.tanh(P["w_Q"] @ Q))
        qh = alpha_q * Q
        pooled, alphas = {}, {}
        for s in streams:
            if s in VISUAL:
                args = (P["w_q.visual"],) + ((P["w_T"], T) if joint else ())
            elif s in TEXTUAL:
                args = (P["w_q.textual"],) + ((P["w_V"], V) if joint else ())
            else:
                args = (P["w_q.mono"],)
            X[s], alphas[s], pooled[s] = attend(X[s], qh, P[f"{s}.w_x"], P[f"{s}.p_x"], *args)
        V = sum((pooled[s] for s in streams if s in VISUAL), np.zeros(d_v))
        T = sum((pooled[s] for s in streams if s in TEXTUAL), np.zeros(d_t))
        z = np.concatenate([pooled[s] for s in streams])
        Q = gru(z, qh, P["gru.w_ih"], P["gru.w_hh"], P["gru.b"])
        history.append({"alpha_q": alpha_q, "alphas": alphas, "V": V, "T": T, "Q": Q})
    return z, history


# -- metrics ---------------------------------------------------------------


def _grams(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def bleu(hyps, refs, max_n=4):
    """Corpus BLEU by explicit list counting."""
    num, den = [0] * max_n, [0] * max_n
    c = r = 0
    for h, rs in zip(hyps, refs):
        c += len(h)
        best = sorted(rs, key=lambda x: (abs(len(x) - len(h)), len(x)))[0]
        r += len(best)
        for n in range(1, max_n + 1):
            hg = _grams(h, n)
            den[n - 1] += len(hg)
            for g in set(hg):
                cap = max(_grams(x, n).count(g) for x in rs)
                num[n - 1] += min(hg.count(g), cap)
    if c == 0:
        return [0.0] * max_n
    bp = 1.0 if c > r else math.exp(1 - r / c)
    out = []
    for n in range(1, max_n + 1):
        ps = [num[k] / den[k] if den[k] else 0.0 for k in range(n)]
        out.append(0.0 if min(ps) == 0 else bp * math.exp(sum(math.log(p) for p in ps) / n))
    return out


def _is_subsequence(sub, seq):
    it = iter(seq)
    return all(tok in it for tok in sub)


def lcs_brute(a, b):
    """Longest common subsequence by enumerating subsequences of the shorter side."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for k in range(len(short), 0, -1):
        for idx in itertools.combinations(range(len(short)), k):
            if _is_subsequence([short[i] for i in idx], long_):
                return k
    return 0


def rouge_l(hyps, refs, beta=1.2):
    total = 0.0
    for h, rs in zip(hyps, refs):
        best = 0.0
        for r in rs:
            l = lcs_brute(h, r)
            if l:
                p, rec = l / len(h), l / len(r)
                best = max(best, ((1 + beta**2) * p * rec) / (rec + beta**2 * p))
        total += best
    return total / len(hyps)


def cider(hyps, refs, max_n=4):
    N = len(refs)
    score = np.zeros(len(hyps))
    for n in range(1, max_n + 1):
        vocab = sorted({g for rs in refs for r in rs for g in _grams(r, n)} | {g for h in hyps for g in _grams(h, n)})
        index = {g: i for i, g in enumerate(vocab)}
        df = np.zeros(len(vocab))
        for rs in refs:
            for g in {g for r in rs for g in _grams(r, n)}:
                df[index[g]] += 1
        idf = np.log(N) - np.log(np.maximum(df, 1.0))

        def vec(tokens):
            v = np.zeros(len(vocab))
            for g in _grams(tokens, n):
                v[index[g]] += 1
            return v * idf

        for i, (h, rs) in enumerate(zip(hyps, refs)):
            hv = vec(h)
            sims = []
            for r in rs:
                rv = vec(r)
                nh, nr = np.linalg.norm(hv), np.linalg.norm(rv)
                sims.append(0.0 if nh == 0 or nr == 0 else float(hv @ rv) / (nh * nr))
            score[i] += np.mean(sims) / max_n
    return float(10.0 * score.mean())


def random_corpus(rng, n_examples, max_refs=3, words=("a", "b", "c", "d", "e", "f"), max_len=8):
    def sent():
        return [str(w) for w in rng.choice(words, size=int(rng.integers(1, max_len + 1)))]

    hyps = [sent() for _ in range(n_examples)]
    refs = [[sent() for _ in range(int(rng.integers(1, max_refs + 1)))] for _ in range(n_examples)]
    return hyps, refs
