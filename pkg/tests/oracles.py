"""Slow, loop-based reference implementations used as test oracles."""


def iou_ref(a, b):
    """IoU of (center, duration) intervals via explicit endpoints."""
    a_lo, a_hi = a[0] - a[1] / 2, a[0] + a[1] / 2
    b_lo, b_hi = b[0] - b[1] / 2, b[0] + b[1] / 2
    inter = min(a_hi, b_hi) - max(a_lo, b_lo)
    if inter <= 0:
        return 0.0
    return inter / (a[1] + b[1] - inter)


def match_ref(events, windows, threshold):
    """Window -> event assignment.

    ``events`` and ``windows`` are lists of (label, center, duration).
    Threshold pass: each window takes its best same-class event (lowest
    index on ties) if IoU >= threshold.  Forced pass: each event claims its
    best window (lowest index on ties) when IoU > 0; a window claimed by
    several events goes to the highest IoU, then the lowest event index.
    """
    assign = [-1] * len(windows)
    table = [[iou_ref(w[1:], e[1:]) if w[0] == e[0] else 0.0 for e in events] for w in windows]
    for j, row in enumerate(table):
        best, best_i = -1.0, -1
        for i, v in enumerate(row):
            if v > best:
                best, best_i = v, i
        if best_i >= 0 and best >= threshold:
            assign[j] = best_i
    claims = {}
    for i in range(len(events)):
        best, best_j = -1.0, -1
        for j in range(len(windows)):
            if table[j][i] > best:
                best, best_j = table[j][i], j
        if best > 0:
            claims.setdefault(best_j, []).append((best, i))
    for j, cs in claims.items():
        top = max(v for v, _ in cs)
        assign[j] = min(i for v, i in cs if v == top)
    return assign


def nms_ref(cands, threshold, nms_iou=0.5):
    """Greedy NMS on (prob, center, duration) tuples; returns kept indices in visiting order."""
    remaining = sorted((i for i, c in enumerate(cands) if c[0] > threshold), key=lambda i: (-cands[i][0], i))
    kept = []
    while remaining:
        anchor = remaining.pop(0)
        kept.append(anchor)
        remaining = [i for i in remaining if iou_ref(cands[anchor][1:], cands[i][1:]) < nms_iou]
    return kept


def hard_negatives_ref(p_neg, n_pos, ratio=3):
    """Indices of the ratio*n_pos smallest negative-class probabilities, ties to lower index."""
    n = min(ratio * n_pos, len(p_neg))
    return sorted(range(len(p_neg)), key=lambda i: (p_neg[i], i))[:n]


def greedy_score_match_ref(pred, truth, iou_eval):
    """Scoring match: pairs by descending IoU (ties: lower pred, then lower truth index)."""
    pairs = sorted(
        ((iou_ref(p, t), a, b) for a, p in enumerate(pred) for b, t in enumerate(truth)),
        key=lambda x: (-x[0], x[1], x[2]),
    )
    used_p, used_t, out = set(), set(), []
    for v, a, b in pairs:
        if v < iou_eval:
            break
        if a not in used_p and b not in used_t:
            used_p.add(a)
            used_t.add(b)
            out.append((a, b))
    return sorted(out)
