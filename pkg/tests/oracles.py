"""Slow, literal reference implementations used only by the tests."""

import numpy as np

from convshare.tensorcore import forward_with_taps


def naive_conv2d(x, kernel, bias, stride=1, pad=0):
    c, h, w = x.shape
    o, _, kh, kw = kernel.shape
    xp = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=np.float32)
    xp[:, pad:pad + h, pad:pad + w] = x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((o, oh, ow), dtype=np.float32)
    for oc in range(o):
        for i in range(oh):
            for j in range(ow):
                s = 0.0
                for ci in range(c):
                    for ki in range(kh):
                        for kj in range(kw):
                            s += float(kernel[oc, ci, ki, kj]) * float(xp[ci, i * stride + ki, j * stride + kj])
                s += float(bias[oc])
                out[oc, i, j] = np.float32(s)
    return out


def naive_max_pool(x, k, stride):
    c, h, w = x.shape
    oh, ow = (h - k) // stride + 1, (w - k) // stride + 1
    out = np.zeros((c, oh, ow), dtype=np.float32)
    for ch in range(c):
        for i in range(oh):
            for j in range(ow):
                out[ch, i, j] = max(float(v) for v in x[ch, i * stride:i * stride + k, j * stride:j * stride + k].ravel())
    return out


def box_iou(a, b):
    ax1, ay1, bx1, by1 = a.x + a.w, a.y + a.h, b.x + b.w, b.y + b.h
    iw = min(ax1, bx1) - max(a.x, b.x)
    ih = min(ay1, by1) - max(a.y, b.y)
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    return inter / (a.w * a.h + b.w * b.h - inter)


def replay_greedy_match(dets, gts, tau):
    """Step through the greedy rule one detection at a time."""
    pending = list(range(len(dets)))
    free = list(range(len(gts)))
    pairs = []
    while pending:
        # highest confidence first; ties to smaller y, then smaller x, then list position
        best = pending[0]
        for d in pending[1:]:
            a, b = dets[d], dets[best]
            if (a.confidence > b.confidence
                    or (a.confidence == b.confidence and (a.y < b.y or (a.y == b.y and a.x < b.x)))):
                best = d
        pending.remove(best)
        choice, choice_iou = None, None
        for g in free:
            v = box_iou(dets[best], gts[g])
            if v >= tau and (choice is None or v > choice_iou):
                choice, choice_iou = g, v
        if choice is not None:
            free.remove(choice)
            pairs.append((best, choice))
    return pairs


def pairwise_r2(x, y):
    """Squared Pearson correlation of two flat vectors (0 for a constant vector)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    return float(np.corrcoef(x, y)[0, 1] ** 2)


def contrast_scores(maps, masks):
    """Mean inside minus mean outside per channel, averaged over frames with both regions."""
    n_ch = maps[0].shape[0]
    rows = []
    for f, m in zip(maps, masks):
        if m.any() and not m.all():
            rows.append([f[c][m].astype(np.float64).mean() - f[c][~m].astype(np.float64).mean()
                         for c in range(n_ch)])
    return np.mean(rows, axis=0) if rows else np.zeros(n_ch)


def exhaustive_plan_channels(net, frames, masks, i, ingest, predictor, k_n, k_prime):
    """Predictor channels by contrast and ingest targets by best pairwise R^2, computed directly."""
    outs = [forward_with_taps(net, img, {i, ingest, predictor}) for img in frames]
    s = net.stride(predictor)
    grid_masks = [m[s // 2::s, s // 2::s][:outs[0][predictor].shape[1], :outs[0][predictor].shape[2]]
                  for m in masks]
    scores = contrast_scores([o[predictor] for o in outs], grid_masks)
    pred_ch = sorted(range(len(scores)), key=lambda c: (-scores[c], c))[:k_n]
    # ingest and predictor layers share a grid on the toy net, so no resampling is needed
    assert outs[0][ingest].shape[1:] == outs[0][predictor].shape[1:]
    best = {}
    for c in range(outs[0][ingest].shape[0]):
        x = np.concatenate([o[ingest][c].ravel() for o in outs])
        best[c] = max(pairwise_r2(x, np.concatenate([o[predictor][p].ravel() for o in outs])) for p in pred_ch)
    return set(pred_ch), set(sorted(best, key=lambda c: (-best[c], c))[:k_prime])
