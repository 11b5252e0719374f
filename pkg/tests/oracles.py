"""Independent brute-force reference implementations used only by the tests.

These deliberately avoid the vectorized code paths in gra.metrics / gra.nn:
they are slow per-element loops whose correctness can be checked by eye.
"""

import numpy as np


def pairwise_auroc(scores, labels):
    """O(n^2) scan over all positive-negative pairs; ties count half."""
    scores = list(map(float, scores))
    labels = list(map(int, labels))
    wins = 0.0
    pairs = 0
    for sp, yp in zip(scores, labels):
        if yp != 1:
            continue
        for sn, yn in zip(scores, labels):
            if yn != 0:
                continue
            pairs += 1
            if sp > sn:
                wins += 1.0
            elif sp == sn:
                wins += 0.5
    return wins / pairs


def rank_walk_ap(scores, labels):
    """Average precision by walking ranks one tie group at a time.

    Every positive in a tie group is credited with the precision observed
    once the whole group has been admitted.
    """
    items = sorted(zip(scores, range(len(scores)), labels), key=lambda t: (-t[0], t[1]))
    n_pos = sum(1 for y in labels if y == 1)
    total = 0.0
    tp = 0
    seen = 0
    i = 0
    while i < len(items):
        j = i
        while j + 1 < len(items) and items[j + 1][0] == items[i][0]:
            j += 1
        group_pos = sum(1 for k in range(i, j + 1) if items[k][2] == 1)
        tp += group_pos
        seen += j - i + 1
        total += group_pos * (tp / seen)
        i = j + 1
    return total / n_pos


def loop_confusion(scores, labels, threshold):
    tp = fp = tn = fn = 0
    for s, y in zip(scores, labels):
        pred = s >= threshold
        if pred and y == 1:
            tp += 1
        elif pred and y == 0:
            fp += 1
        elif not pred and y == 1:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn


def conv1d_naive(x, kernel, bias, stride):
    """Triple-loop valid cross-correlation. x: (C, L), kernel: (F, C, K)."""
    c_in, length = x.shape
    f, c_k, k = kernel.shape
    assert c_in == c_k
    out_len = (length - k) // stride + 1
    out = np.zeros((f, out_len), dtype=np.float64)
    for fi in range(f):
        for o in range(out_len):
            acc = 0.0
            for ci in range(c_in):
                for ki in range(k):
                    acc += x[ci, o * stride + ki] * kernel[fi, ci, ki]
            out[fi, o] = acc + bias[fi]
    return out


def central_difference_gradients(objective, arrays, step=1e-5):
    """Central finite differences of a scalar objective w.r.t. each array entry."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = objective()
            flat[i] = orig - step
            f_minus = objective()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * step)
        grads.append(g)
    return grads
