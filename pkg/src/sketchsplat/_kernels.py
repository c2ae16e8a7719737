"""Compiled per-tile compositing loops (forward and backward)."""
import math

from numba import njit


@njit(cache=True)
def composite_tile(
    ids, centers, conics, opacities, colors, pix, cutoff2, alpha_min, t_min, bg,
    store, alpha, trans, rgb, final,
):
    """Front-to-back blend of the K splats `ids` over P pixel centres.

    With `store` set, fills the dense (P, K) records in place; a splat that
    does not contribute to a pixel keeps alpha == 0 there.
    """
    k_count = ids.shape[0]
    for p in range(pix.shape[0]):
        px, py = pix[p, 0], pix[p, 1]
        t = 1.0
        r = 0.0
        g = 0.0
        b = 0.0
        if store:
            for k in range(k_count):
                alpha[p, k] = 0.0
                trans[p, k] = 0.0
        for k in range(k_count):
            i = ids[k]
            dx = px - centers[i, 0]
            dy = py - centers[i, 1]
            m = conics[i, 0, 0] * dx * dx + 2.0 * conics[i, 0, 1] * dx * dy + conics[i, 1, 1] * dy * dy
            if m > cutoff2:
                continue
            a = opacities[i] * math.exp(-0.5 * m)
            if a < alpha_min:
                continue
            nxt = t * (1.0 - a)
            if nxt < t_min:
                break
            if store:
                alpha[p, k] = a
                trans[p, k] = t
            w = a * t
            r += w * colors[i, 0]
            g += w * colors[i, 1]
            b += w * colors[i, 2]
            t = nxt
        rgb[p, 0] = r + t * bg[0]
        rgb[p, 1] = g + t * bg[1]
        rgb[p, 2] = b + t * bg[2]
        final[p] = t


@njit(cache=True)
def backward_tile(
    ids, centers, conics, opacities, colors, pix, bg, alpha, trans, d_pix,
    d_color, d_opacity, d_center, d_conic,
):
    """Accumulate per-splat gradients for one tile, back to front per pixel.

    The running `behind` colour is the normalised blend of everything after
    the current splat, which avoids dividing by (1 - alpha).
    """
    k_count = ids.shape[0]
    for p in range(d_pix.shape[0]):
        gr, gg, gb = d_pix[p, 0], d_pix[p, 1], d_pix[p, 2]
        br, bgc, bb = bg[0], bg[1], bg[2]
        px, py = pix[p, 0], pix[p, 1]
        for k in range(k_count - 1, -1, -1):
            a = alpha[p, k]
            if a <= 0.0:
                continue
            i = ids[k]
            t = trans[p, k]
            cr, cg, cb = colors[i, 0], colors[i, 1], colors[i, 2]
            w = a * t
            d_color[i, 0] += w * gr
            d_color[i, 1] += w * gg
            d_color[i, 2] += w * gb
            d_a = t * ((cr - br) * gr + (cg - bgc) * gg + (cb - bb) * gb)
            br = a * cr + (1.0 - a) * br
            bgc = a * cg + (1.0 - a) * bgc
            bb = a * cb + (1.0 - a) * bb

            d_opacity[i] += d_a * a / opacities[i]
            wg = d_a * a  # dL/dG * G
            dx = px - centers[i, 0]
            dy = py - centers[i, 1]
            d_center[i, 0] += wg * (conics[i, 0, 0] * dx + conics[i, 0, 1] * dy)
            d_center[i, 1] += wg * (conics[i, 1, 0] * dx + conics[i, 1, 1] * dy)
            d_conic[i, 0] += -0.5 * wg * dx * dx
            d_conic[i, 1] += -0.5 * wg * dx * dy
            d_conic[i, 2] += -0.5 * wg * dy * dy
