"""Plain-loop reference implementations of the caption metrics.

Deliberately written as direct transliterations of the formulas with dicts
and explicit loops, independent of the library code paths, to serve as
brute-force oracles in the tests.
"""

import math


def toks(s):
    # mirror of the pipeline tokenizer contract for plain ascii test data
    out = []
    word = ""
    for ch in s.lower():
        if ch.isalnum() or (ch == "'" and word and word[-1].isalnum()):
            word += ch
        else:
            if word:
                out.append(word.rstrip("'"))
            word = ""
    if word:
        out.append(word.rstrip("'"))
    return out


def ngram_counts(tokens, n):
    counts = {}
    for i in range(len(tokens) - n + 1):
        g = tuple(tokens[i : i + n])
        counts[g] = counts.get(g, 0) + 1
    return counts


def ref_bleu4(hypotheses, references):
    match = {1: 0, 2: 0, 3: 0, 4: 0}
    guess = {1: 0, 2: 0, 3: 0, 4: 0}
    c_total = 0
    r_total = 0
    for vid in hypotheses:
        hyp = toks(hypotheses[vid])
        refs = [toks(r) for r in references[vid]]
        c_total += len(hyp)
        best = None
        for r in refs:
            key = (abs(len(r) - len(hyp)), len(r))
            if best is None or key < best:
                best = key
        r_total += best[1]
        for n in (1, 2, 3, 4):
            hc = ngram_counts(hyp, n)
            maxc = {}
            for r in refs:
                for g, c in ngram_counts(r, n).items():
                    if c > maxc.get(g, 0):
                        maxc[g] = c
            for g, c in hc.items():
                match[n] += min(c, maxc.get(g, 0))
            guess[n] += max(0, len(hyp) - n + 1)
    logsum = 0.0
    for n in (1, 2, 3, 4):
        if guess[n] == 0 or match[n] == 0:
            return 0.0
        logsum += 0.25 * math.log(match[n] / guess[n])
    if c_total == 0:
        return 0.0
    bp = 1.0 if c_total > r_total else math.exp(1.0 - r_total / c_total)
    return bp * math.exp(logsum)


def _lcs(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[len(a)][len(b)]


def ref_rouge_l(hypotheses, references, beta=1.2):
    scores = {}
    for vid in hypotheses:
        hyp = toks(hypotheses[vid])
        best = 0.0
        for r in references[vid]:
            ref = toks(r)
            lcs = _lcs(hyp, ref)
            if lcs == 0:
                continue
            p = lcs / len(hyp)
            rec = lcs / len(ref)
            f = (1 + beta * beta) * p * rec / (rec + beta * beta * p)
            if f > best:
                best = f
        scores[vid] = best
    corpus = sum(scores.values()) / len(scores)
    return corpus, scores


def ref_cider_d(hypotheses, references, sigma=6.0):
    vids = sorted(hypotheses)
    doc_freq = {}
    for vid in vids:
        grams = set()
        for r in references[vid]:
            t = toks(r)
            for n in (1, 2, 3, 4):
                grams.update(ngram_counts(t, n).keys())
        for g in grams:
            doc_freq[g] = doc_freq.get(g, 0) + 1
    log_n = math.log(len(vids))

    def vec(tokens, n):
        out = {}
        for g, c in ngram_counts(tokens, n).items():
            df = doc_freq.get(g, 0)
            out[g] = c * (log_n - math.log(df if df > 1 else 1.0))
        return out

    scores = {}
    for vid in vids:
        hyp = toks(hypotheses[vid])
        acc = 0.0
        for r in references[vid]:
            ref = toks(r)
            pen = math.exp(-((len(hyp) - len(ref)) ** 2) / (2 * sigma * sigma))
            for n in (1, 2, 3, 4):
                hv = vec(hyp, n)
                rv = vec(ref, n)
                num = 0.0
                for g, w in hv.items():
                    if g in rv:
                        num += min(w, rv[g]) * rv[g]
                hn = math.sqrt(sum(x * x for x in hv.values()))
                rn = math.sqrt(sum(x * x for x in rv.values()))
                if hn > 0 and rn > 0:
                    acc += pen * num / (hn * rn)
        scores[vid] = 10.0 * acc / (4 * len(references[vid]))
    corpus = sum(scores.values()) / len(vids)
    return corpus, scores
