"""Independent reference implementations used as test oracles.

Everything here is deliberately written the slow, obvious way (nested
loops, explicit formulas) and must stay decoupled from the library's own
code paths: tests compare the two.
"""

import numpy as np


def conv2d_loop(x, weights, bias, stride=1, padding=0):
    """Six-nested-loop cross-correlation oracle."""
    n, in_c, h, w = x.shape
    out_c, _, kh, kw = weights.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, out_c, oh, ow))
    for img in range(n):
        for oc in range(out_c):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ic in range(in_c):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += (weights[oc, ic, ky, kx]
                                        * xp[img, ic, oy * stride + ky, ox * stride + kx])
                    out[img, oc, oy, ox] = acc + bias[oc]
    return out


def numerical_gradient(f, x, step=1e-5):
    """Central finite differences of scalar-valued f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def relative_error(analytic, numeric, floor=1e-4):
    """max |a - n| / max(|a|, |n|, floor) over all entries.

    The floor keeps central-difference roundoff noise (~1e-11 at step 1e-5)
    from registering as a huge relative error on exact-zero gradient entries;
    entries above the floor are held to the genuine relative tolerance.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


def span(index, extent, k):
    lo = int(np.floor(index * extent / k))
    hi = int(np.ceil((index + 1) * extent / k))
    return lo, hi


def psroi_pool_loop(maps, rois, k, channels_per_bin):
    """Per-pixel position-sensitive average pooling oracle.

    ``rois`` are (batch, x0, y0, w, h) integer tuples already inside the map;
    channel layout is bin-major: (i*k + j) * channels_per_bin + c.
    """
    out = np.zeros((len(rois), channels_per_bin, k, k))
    for r, (b, x0, y0, w, h) in enumerate(rois):
        for i in range(k):
            ylo, yhi = span(i, h, k)
            for j in range(k):
                xlo, xhi = span(j, w, k)
                for c in range(channels_per_bin):
                    ch = (i * k + j) * channels_per_bin + c
                    acc, n_px = 0.0, 0
                    for y in range(ylo, yhi):
                        for x in range(xlo, xhi):
                            acc += maps[b, ch, y0 + y, x0 + x]
                            n_px += 1
                    out[r, c, i, j] = acc / n_px
    return out


def iou_xywh(a, b):
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    iw = min(ax0 + aw, bx0 + bw) - max(ax0, bx0)
    ih = min(ay0 + ah, by0 + bh) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


def nms_quadratic(boxes, scores, threshold):
    """O(n^2) NMS reference; boxes are (x0, y0, w, h) rows. Returns kept indices."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    kept = []
    for i in order:
        if all(iou_xywh(boxes[i], boxes[j]) <= threshold for j in kept):
            kept.append(i)
    return kept


def ohem_prefix(losses, batch_size):
    """Stable descending sort prefix (ties by lower index)."""
    order = sorted(range(len(losses)), key=lambda i: (-losses[i], i))
    return order[:min(batch_size, len(losses))]


def ap_envelope(scored_flags, n_gt):
    """All-point interpolated AP from (score, is_tp) pairs.

    Independent formulation: walk every distinct recall level and integrate
    the running-maximum precision from the right.
    """
    if n_gt == 0:
        return 0.0
    ranked = sorted(range(len(scored_flags)), key=lambda i: (-scored_flags[i][0], i))
    tps = np.array([1.0 if scored_flags[i][1] else 0.0 for i in ranked])
    if len(tps) == 0:
        return 0.0
    ctp = np.cumsum(tps)
    cfp = np.cumsum(1.0 - tps)
    recalls = ctp / n_gt
    precisions = ctp / (ctp + cfp)
    ap = 0.0
    prev_recall = 0.0
    for level in sorted(set(recalls)):
        best = max(precisions[i] for i in range(len(recalls)) if recalls[i] >= level)
        ap += (level - prev_recall) * best
        prev_recall = level
    return ap
