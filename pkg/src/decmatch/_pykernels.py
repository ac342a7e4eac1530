"""Pure-Python simulation kernels.

This is the reference fallback for ``_kernels.pyx``; both must consume the
random stream identically and emit identical event sequences.  Events are
tuples ``(proposer_side, proposer, receiver, accepted)`` with side 0 for a
food and 1 for a color.
"""
from __future__ import annotations

import math

from .rng import SplitMix64

TWO_RDA, DACC, RPS, RBR = 0, 1, 2, 3
UNIFORM, PROPORTIONAL, EXPONENTIAL = 0, 1, 2
NO_RANK = 1 << 30

BACKEND = "python"


def draw_index(rng: SplitMix64, gains, rule: int, lam: float) -> int:
    k = len(gains)
    if k == 1:
        return 0
    if rule == UNIFORM:
        return rng.below(k)
    if rule == PROPORTIONAL:
        weights = [float(g) for g in gains]
    else:
        gmax = max(gains)
        weights = [math.exp(lam * (g - gmax)) for g in gains]
    total = 0.0
    for w in weights:
        total += w
    u = rng.unit() * total
    acc = 0.0
    for i, w in enumerate(weights):
        acc += w
        if u < acc:
            return i
    return k - 1


def simulate(algo, rule, lam, seed, max_steps, pay_f, pay_c, food_lists, color_lists, food_rank, color_rank):
    """Run one dynamics from the empty matching.

    ``food_rank``/``color_rank`` are 1-based.  Returns ``(events, food_partner, capped)``.
    """
    rng = SplitMix64(seed)
    args = (rng, rule, lam, max_steps, pay_f, pay_c, food_lists, color_lists, food_rank, color_rank)
    if algo == TWO_RDA:
        return _two_rda(*args)
    if algo == DACC:
        return _dacc(*args)
    if algo == RPS:
        return _rps(*args)
    if algo == RBR:
        return _rbr(*args)
    raise ValueError(f"unknown algorithm code {algo}")


def _link(fp, cp, f, c):
    if fp[f] >= 0:
        cp[fp[f]] = -1
    if cp[c] >= 0:
        fp[cp[c]] = -1
    fp[f] = c
    cp[c] = f


def _rps(rng, rule, lam, max_steps, pay_f, pay_c, food_lists, color_lists, food_rank, color_rank):
    nf, nc = len(pay_f), len(pay_f[0])
    fp, cp = [-1] * nf, [-1] * nc
    events = []
    while True:
        uf = [pay_f[f][fp[f]] if fp[f] >= 0 else 0 for f in range(nf)]
        uc = [pay_c[cp[c]][c] if cp[c] >= 0 else 0 for c in range(nc)]
        cands, gains = [], []
        for f in range(nf):
            row_f, row_c, u = pay_f[f], pay_c[f], uf[f]
            for c in range(nc):
                gf = row_f[c] - u
                if gf > 0:
                    gc = row_c[c] - uc[c]
                    if gc > 0:
                        cands.append((f, c))
                        gains.append(gf + gc)
        if not cands:
            return events, fp, False
        if len(events) >= max_steps:
            return events, fp, True
        f, c = cands[draw_index(rng, gains, rule, lam)]
        _link(fp, cp, f, c)
        events.append((0, f, c, 1))


def _rbr(rng, rule, lam, max_steps, pay_f, pay_c, food_lists, color_lists, food_rank, color_rank):
    nf, nc = len(pay_f), len(pay_f[0])
    fp, cp = [-1] * nf, [-1] * nc
    events = []
    while True:
        uf = [pay_f[f][fp[f]] if fp[f] >= 0 else 0 for f in range(nf)]
        uc = [pay_c[cp[c]][c] if cp[c] >= 0 else 0 for c in range(nc)]
        cands, gains = [], []
        for f in range(nf):
            for c in food_lists[f]:
                if pay_f[f][c] <= uf[f]:
                    break
                if pay_c[f][c] > uc[c]:
                    cands.append((0, f, c))
                    gains.append(pay_f[f][c] - uf[f])
                    break
        for c in range(nc):
            for f in color_lists[c]:
                if pay_c[f][c] <= uc[c]:
                    break
                if pay_f[f][c] > uf[f]:
                    cands.append((1, c, f))
                    gains.append(pay_c[f][c] - uc[c])
                    break
        if not cands:
            return events, fp, False
        if len(events) >= max_steps:
            return events, fp, True
        side, a, b = cands[draw_index(rng, gains, rule, lam)]
        if side == 0:
            _link(fp, cp, a, b)
        else:
            _link(fp, cp, b, a)
        events.append((side, a, b, 1))


def _two_rda(rng, rule, lam, max_steps, pay_f, pay_c, food_lists, color_lists, food_rank, color_rank):
    nf, nc = len(pay_f), len(pay_f[0])
    fp, cp = [-1] * nf, [-1] * nc
    f_match, c_match = [NO_RANK] * nf, [NO_RANK] * nc
    f_offer, c_offer = [1] * nf, [1] * nc
    events = []
    while True:
        cands, gains = [], []
        for f in range(nf):
            r = f_offer[f]
            if r <= nc and f_match[f] > r:
                t = food_lists[f][r - 1]
                cands.append((0, f, t))
                gains.append(pay_f[f][t] - (pay_f[f][fp[f]] if fp[f] >= 0 else 0))
        for c in range(nc):
            r = c_offer[c]
            if r <= nf and c_match[c] > r:
                t = color_lists[c][r - 1]
                cands.append((1, c, t))
                gains.append(pay_c[t][c] - (pay_c[cp[c]][c] if cp[c] >= 0 else 0))
        if not cands:
            return events, fp, False
        if len(events) >= max_steps:
            return events, fp, True
        side, a, t = cands[draw_index(rng, gains, rule, lam)]
        if side == 0:
            accepted = color_rank[t][a] < c_match[t]
            if accepted:
                if fp[a] >= 0:
                    c_match[fp[a]] = NO_RANK
                if cp[t] >= 0:
                    f_match[cp[t]] = NO_RANK
                _link(fp, cp, a, t)
                f_match[a] = f_offer[a]
                c_match[t] = color_rank[t][a]
            f_offer[a] += 1
        else:
            accepted = food_rank[t][a] < f_match[t]
            if accepted:
                if cp[a] >= 0:
                    f_match[cp[a]] = NO_RANK
                if fp[t] >= 0:
                    c_match[fp[t]] = NO_RANK
                _link(fp, cp, t, a)
                c_match[a] = c_offer[a]
                f_match[t] = food_rank[t][a]
            c_offer[a] += 1
        events.append((side, a, t, 1 if accepted else 0))


def _lapse(fp, cp, f_excl, c_excl, food_rank, color_rank) -> bool:
    """Drop exclusions whose reason is gone: the excluder no longer holds
    someone it prefers to the excluded agent.  Returns whether any dropped.

    Only runs when nobody is eligible, so it never changes a run that would
    have stopped at a stable matching anyway.
    """
    dropped = False
    for f, row in enumerate(f_excl):
        for c, flag in enumerate(row):
            if flag and (cp[c] < 0 or color_rank[c][cp[c]] > color_rank[c][f]):
                row[c] = False
                dropped = True
    for c, row in enumerate(c_excl):
        for f, flag in enumerate(row):
            if flag and (fp[f] < 0 or food_rank[f][fp[f]] > food_rank[f][c]):
                row[f] = False
                dropped = True
    return dropped


def _dacc(rng, rule, lam, max_steps, pay_f, pay_c, food_lists, color_lists, food_rank, color_rank):
    nf, nc = len(pay_f), len(pay_f[0])
    fp, cp = [-1] * nf, [-1] * nc
    # f_excl[f][c]: c rejected or jilted f, so f skips c
    f_excl = [[False] * nc for _ in range(nf)]
    c_excl = [[False] * nf for _ in range(nc)]
    # side (0 food, 1 color) that proposed the current match of food f
    origin = [-1] * nf
    stack = []
    events = []

    def food_target(f):
        cur = fp[f]
        for c in food_lists[f]:
            if c == cur:
                return -1
            if not f_excl[f][c]:
                return c
        return -1

    def color_target(c):
        cur = cp[c]
        for f in color_lists[c]:
            if f == cur:
                return -1
            if not c_excl[c][f]:
                return f
        return -1

    while True:
        side = a = t = -1
        while stack:
            s, x = stack.pop()
            y = food_target(x) if s == 0 else color_target(x)
            if y >= 0:
                side, a, t = s, x, y
                break
        if side < 0:
            cands, gains = [], []
            for f in range(nf):
                y = food_target(f)
                if y >= 0:
                    cands.append((0, f, y))
                    gains.append(pay_f[f][y] - (pay_f[f][fp[f]] if fp[f] >= 0 else 0))
            for c in range(nc):
                y = color_target(c)
                if y >= 0:
                    cands.append((1, c, y))
                    gains.append(pay_c[y][c] - (pay_c[cp[c]][c] if cp[c] >= 0 else 0))
            if not cands:
                if _lapse(fp, cp, f_excl, c_excl, food_rank, color_rank):
                    continue
                return events, fp, False
            if len(events) >= max_steps:
                return events, fp, True
            side, a, t = cands[draw_index(rng, gains, rule, lam)]
        elif len(events) >= max_steps:
            return events, fp, True

        if side == 0:
            f, c = a, t
            accepted = cp[c] < 0 or color_rank[c][f] < color_rank[c][cp[c]]
        else:
            c, f = a, t
            accepted = fp[f] < 0 or food_rank[f][c] < food_rank[f][fp[f]]
        if not accepted:
            if side == 0:
                f_excl[f][c] = True
            else:
                c_excl[c][f] = True
            events.append((side, a, t, 0))
            continue

        old_c, old_f = fp[f], cp[c]
        if old_c >= 0:
            # f leaves old_c: old_c is jilted by f, deceived if f had proposed
            c_excl[old_c][f] = True
            cp[old_c] = -1
            if origin[f] == 0:
                stack.append((1, old_c))
        if old_f >= 0:
            f_excl[old_f][c] = True
            fp[old_f] = -1
            if origin[old_f] == 1:
                stack.append((0, old_f))
            origin[old_f] = -1
        fp[f], cp[c] = c, f
        origin[f] = side
        events.append((side, a, t, 1))


def cycle_profile(foods, colors):
    """Longest match-level cycle per start occurrence, with multiplicities.

    ``foods``/``colors`` give the pairs formed by accepted events in order.
    Returns a list of ``(length, count)`` for every start occurrence that
    closes at least one cycle; counts are exact Python integers.
    """
    T = len(foods)
    if T < 3:
        return []
    last = {}
    for t in range(T):
        last[(foods[t], colors[t])] = t
    nf = max(foods) + 1
    nc = max(colors) + 1
    out = []
    for t1 in range(T):
        f0, c0 = foods[t1], colors[t1]
        stop = last[(f0, c0)]
        if stop <= t1 + 1:
            continue
        # best[(f, c)] = (longest path length ending at a node of pair (f, c), count)
        best_len = [[0] * nc for _ in range(nf)]
        best_cnt = [[0] * nc for _ in range(nf)]
        best_len[f0][c0] = 1
        best_cnt[f0][c0] = 1
        top, total = 0, 0
        for t in range(t1 + 1, stop + 1):
            f, c = foods[t], colors[t]
            m, k = 0, 0
            row_l, row_n = best_len[f], best_cnt[f]
            for cc in range(nc):
                if cc != c:
                    v = row_l[cc]
                    if v > m:
                        m, k = v, row_n[cc]
                    elif v == m and v:
                        k += row_n[cc]
            for ff in range(nf):
                if ff != f:
                    v = best_len[ff][c]
                    if v > m:
                        m, k = v, best_cnt[ff][c]
                    elif v == m and v:
                        k += best_cnt[ff][c]
            if not m:
                continue
            if f == f0 and c == c0:
                if m + 1 > top:
                    top, total = m + 1, k
                elif m + 1 == top:
                    total += k
            elif m + 1 > row_l[c]:
                row_l[c], row_n[c] = m + 1, k
            elif m + 1 == row_l[c]:
                row_n[c] += k
        if total:
            out.append((top, total))
    return out
