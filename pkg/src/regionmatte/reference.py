"""Straight-line reference implementations used as test oracles.

Everything here is written with explicit Python loops over plain floats and
shares no code with the main implementation, so agreement between the two
is meaningful. None of it is fast.
"""

import math
from collections import deque


def attention(q, k, v, bias=None):
    """softmax(q k^T / sqrt(d) + bias) v for nested lists / 2-D arrays."""
    n, d = len(q), len(q[0])
    m = len(k)
    out = []
    for i in range(n):
        logits = []
        for j in range(m):
            s = 0.0
            for t in range(d):
                s += float(q[i][t]) * float(k[j][t])
            s /= math.sqrt(d)
            if bias is not None:
                s += float(bias[i][j]) if hasattr(bias[0], "__len__") else float(bias[j])
            logits.append(s)
        top = max(logits)
        ex = [math.exp(x - top) for x in logits]
        total = sum(ex)
        row = []
        for t in range(len(v[0])):
            acc = 0.0
            for j in range(m):
                acc += ex[j] / total * float(v[j][t])
            row.append(acc)
        out.append(row)
    return out


def pixel_unshuffle(t, p):
    """Index-permutation definition over an H x W x C nested array."""
    h, w, c = len(t), len(t[0]), len(t[0][0])
    out = [[[0.0] * (p * p * c) for _ in range(w // p)] for _ in range(h // p)]
    for y in range(h):
        for x in range(w):
            for ch in range(c):
                out[y // p][x // p][((y % p) * p + (x % p)) * c + ch] = t[y][x][ch]
    return out


def knn(coords, k):
    """Double loop over all pairs with (distance^2, row, col) ordering."""
    pts = [(int(r), int(c)) for r, c in coords]
    k = max(0, min(k, len(pts) - 1))
    result = []
    for i, (r0, c0) in enumerate(pts):
        cand = []
        for j, (r1, c1) in enumerate(pts):
            if i != j:
                cand.append(((r1 - r0) ** 2 + (c1 - c0) ** 2, r1, c1, j))
        cand.sort()
        result.append([j for _, _, _, j in cand[:k]])
    return result


def select_uncertain(trimap):
    h, w = len(trimap), len(trimap[0])
    out = []
    for r in range(h):
        for c in range(w):
            fg, bg, un = (float(x) for x in trimap[r][c])
            if un >= fg and un >= bg:
                out.append((r, c))
    return out


def crop(rgba, row, col, size=8):
    return [[list(rgba[8 * row + y][8 * col + x]) for x in range(size)] for y in range(size)]


def bce(pred, target, clamp=1e-7):
    total, count = 0.0, 0
    for p, t in zip(_flat(pred), _flat(target)):
        p = min(max(p, clamp), 1 - clamp)
        total += -(t * math.log(p) + (1 - t) * math.log(1 - p))
        count += 1
    return total / count


def focal(pred, target, clamp=1e-7):
    """pred, target: lists of 3-vectors (pixels)."""
    pixels_p = _pixels(pred)
    pixels_t = _pixels(target)
    counts = [0, 0, 0]
    for t in pixels_t:
        for i in range(3):
            counts[i] += t[i]
    inv = [c ** -0.5 if c > 0 else 0.0 for c in counts]
    norm = sum(inv)
    w = [x / norm for x in inv]
    total = 0.0
    for p, t in zip(pixels_p, pixels_t):
        for i in range(3):
            pi = t[i] * p[i] + (1 - t[i]) * (1 - p[i])
            total += -w[i] * (1 - pi) ** 2 * t[i] * math.log(max(p[i], clamp))
    return total / len(pixels_p)


def charbonnier_mean(a, b, eps):
    vals = [math.sqrt((x - y) ** 2 + eps * eps) for x, y in zip(_flat(a), _flat(b))]
    return sum(vals) / len(vals)


_TAPS = [1 / 16, 4 / 16, 6 / 16, 4 / 16, 1 / 16]


def _blur_down(img):
    h, w = len(img), len(img[0])
    out = []
    for y in range(0, h, 2):
        row = []
        for x in range(0, w, 2):
            acc = 0.0
            for dy in range(-2, 3):
                for dx in range(-2, 3):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w:
                        acc += _TAPS[dy + 2] * _TAPS[dx + 2] * img[yy][xx]
            row.append(acc)
        out.append(row)
    return out


def _bilinear(img, oh, ow):
    h, w = len(img), len(img[0])
    out = []
    for y in range(oh):
        sy = min(max((y + 0.5) * h / oh - 0.5, 0.0), h - 1)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        row = []
        for x in range(ow):
            sx = min(max((x + 0.5) * w / ow - 0.5, 0.0), w - 1)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            top = img[y0][x0] * (1 - fx) + img[y0][x1] * fx
            bot = img[y1][x0] * (1 - fx) + img[y1][x1] * fx
            row.append(top * (1 - fy) + bot * fy)
        out.append(row)
    return out


def bilinear_resize(img, oh, ow):
    return _bilinear([[float(v) for v in row] for row in img], oh, ow)


def laplacian_bands(img, levels=5):
    g = [[float(v) for v in row] for row in img]
    bands = []
    for _ in range(levels):
        down = _blur_down(g)
        up = _bilinear(down, len(g), len(g[0]))
        bands.append([[g[y][x] - up[y][x] for x in range(len(g[0]))] for y in range(len(g))])
        g = down
    return bands


def laplacian_loss(pred, gt, eps, levels=5):
    return sum(charbonnier_mean(bp, bg, eps)
               for bp, bg in zip(laplacian_bands(pred, levels), laplacian_bands(gt, levels)))


def composition_loss(pred, gt, fg, bg, eps):
    total, count = 0.0, 0
    for y in range(len(gt)):
        for x in range(len(gt[0])):
            for ch in range(3):
                f, b = float(fg[y][x][ch]), float(bg[y][x][ch])
                ct = gt[y][x] * f + (1 - gt[y][x]) * b
                cp = pred[y][x] * f + (1 - pred[y][x]) * b
                total += math.sqrt((ct - cp) ** 2 + eps * eps)
                count += 1
    return total / count


def sad(pred, gt, mask=None):
    total = 0.0
    for y in range(len(gt)):
        for x in range(len(gt[0])):
            if mask is None or mask[y][x]:
                total += abs(float(pred[y][x]) - float(gt[y][x]))
    return total


def _gauss_kernel(sigma, epsilon=1e-2):
    half = int(math.ceil(sigma * math.sqrt(-2 * math.log(math.sqrt(2 * math.pi) * sigma * epsilon))))
    size = 2 * half + 1
    k = [[0.0] * size for _ in range(size)]
    for i in range(size):
        for j in range(size):
            u, v = i - half, j - half
            gu = math.exp(-u * u / (2 * sigma * sigma)) / (sigma * math.sqrt(2 * math.pi))
            gv = math.exp(-v * v / (2 * sigma * sigma)) / (sigma * math.sqrt(2 * math.pi))
            k[i][j] = gu * (-v * gv / (sigma * sigma))
    norm = math.sqrt(sum(x * x for row in k for x in row))
    return [[x / norm for x in row] for row in k], half


def _convolve_nearest(img, kernel, half):
    h, w = len(img), len(img[0])
    out = [[0.0] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for i in range(2 * half + 1):
                for j in range(2 * half + 1):
                    # true convolution: kernel is flipped relative to the image offset
                    yy = min(max(y + half - i, 0), h - 1)
                    xx = min(max(x + half - j, 0), w - 1)
                    acc += kernel[i][j] * img[yy][xx]
            out[y][x] = acc
    return out


def grad(pred, gt, sigma=1.4, mask=None):
    k, half = _gauss_kernel(sigma)
    kt = [list(col) for col in zip(*k)]

    def mag(img):
        img = [[float(v) for v in row] for row in img]
        gx = _convolve_nearest(img, k, half)
        gy = _convolve_nearest(img, kt, half)
        return [[math.sqrt(gx[y][x] ** 2 + gy[y][x] ** 2) for x in range(len(img[0]))] for y in range(len(img))]

    mp, mg = mag(pred), mag(gt)
    total = 0.0
    for y in range(len(gt)):
        for x in range(len(gt[0])):
            if mask is None or mask[y][x]:
                total += (mp[y][x] - mg[y][x]) ** 2
    return total


def _largest_cc(binary):
    """4-connected flood fill; ties between equal sizes go to the first in raster order."""
    h, w = len(binary), len(binary[0])
    seen = [[False] * w for _ in range(h)]
    best = []
    for y in range(h):
        for x in range(w):
            if binary[y][x] and not seen[y][x]:
                comp = []
                queue = deque([(y, x)])
                seen[y][x] = True
                while queue:
                    cy, cx = queue.popleft()
                    comp.append((cy, cx))
                    for ny, nx in ((cy - 1, cx), (cy + 1, cx), (cy, cx - 1), (cy, cx + 1)):
                        if 0 <= ny < h and 0 <= nx < w and binary[ny][nx] and not seen[ny][nx]:
                            seen[ny][nx] = True
                            queue.append((ny, nx))
                if len(comp) > len(best):
                    best = comp
    return set(best)


def conn(pred, gt, step=0.1, mask=None):
    h, w = len(gt), len(gt[0])
    n = int(round(1 / step))
    level = [[-1.0] * w for _ in range(h)]
    for i in range(1, n + 1):
        t = i / n
        binary = [[float(pred[y][x]) >= t and float(gt[y][x]) >= t for x in range(w)] for y in range(h)]
        omega = _largest_cc(binary)
        for y in range(h):
            for x in range(w):
                if level[y][x] == -1 and (y, x) not in omega:
                    level[y][x] = (i - 1) / n
    total = 0.0
    for y in range(h):
        for x in range(w):
            lv = 1.0 if level[y][x] == -1 else level[y][x]
            dp = float(pred[y][x]) - lv
            dg = float(gt[y][x]) - lv
            phi_p = 1 - dp if dp >= 0.15 else 1.0
            phi_g = 1 - dg if dg >= 0.15 else 1.0
            if mask is None or mask[y][x]:
                total += abs(phi_p - phi_g)
    return total


def _flat(x):
    if hasattr(x, "tolist"):
        x = x.tolist()
    if isinstance(x, (list, tuple)):
        for item in x:
            yield from _flat(item)
    else:
        yield float(x)


def _pixels(x):
    vals = list(_flat(x))
    return [vals[i:i + 3] for i in range(0, len(vals), 3)]
