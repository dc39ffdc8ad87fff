import numpy as np
from numba import njit


@njit(cache=True)
def _cell_of(x, y, z, lo, cell, dims):
    ix = int((x - lo[0]) / cell)
    iy = int((y - lo[1]) / cell)
    iz = int((z - lo[2]) / cell)
    ix = min(max(ix, 0), dims[0] - 1)
    iy = min(max(iy, 0), dims[1] - 1)
    iz = min(max(iz, 0), dims[2] - 1)
    return ix, iy, iz


@njit(cache=True)
def rsa_add(cands, tol, target_volume, lo, cell, dims, head, nxt, centers, radii, state):
    """Random sequential addition of candidate spheres.

    ``cands`` rows are (x, y, z, r). ``state`` holds [n_accepted, volume]
    and is updated in place, as are the linked-cell arrays.
    Returns the number of candidates consumed.
    """
    n = int(state[0])
    volume = state[1]
    used = 0
    for k in range(cands.shape[0]):
        if volume >= target_volume or n >= radii.shape[0]:
            break
        used += 1
        x = cands[k, 0]
        y = cands[k, 1]
        z = cands[k, 2]
        r = cands[k, 3]
        ix, iy, iz = _cell_of(x, y, z, lo, cell, dims)
        ok = True
        for dx in range(-1, 2):
            jx = ix + dx
            if jx < 0 or jx >= dims[0]:
                continue
            for dy in range(-1, 2):
                jy = iy + dy
                if jy < 0 or jy >= dims[1]:
                    continue
                for dz in range(-1, 2):
                    jz = iz + dz
                    if jz < 0 or jz >= dims[2]:
                        continue
                    c = (jx * dims[1] + jy) * dims[2] + jz
                    g = head[c]
                    while g >= 0:
                        ddx = centers[g, 0] - x
                        ddy = centers[g, 1] - y
                        ddz = centers[g, 2] - z
                        lim = radii[g] + r - tol
                        if ddx * ddx + ddy * ddy + ddz * ddz < lim * lim:
                            ok = False
                            break
                        g = nxt[g]
                    if not ok:
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            centers[n, 0] = x
            centers[n, 1] = y
            centers[n, 2] = z
            radii[n] = r
            c = (ix * dims[1] + iy) * dims[2] + iz
            nxt[n] = head[c]
            head[c] = n
            n += 1
            volume += 4.0 / 3.0 * np.pi * r * r * r
    state[0] = n
    state[1] = volume
    return used


@njit(cache=True, nogil=True)
def splat_chords(u, v, r, weight, out):
    """Accumulate weight * 2*sqrt(r^2 - d^2) of discs onto ``out``.

    ``u``/``v`` are disc centres in fractional column/row pixel coordinates
    and ``r`` radii in pixels; rays sample pixel centres.
    """
    h, w = out.shape
    for g in range(u.shape[0]):
        rg = r[g]
        r2 = rg * rg
        c0 = max(int(np.ceil(u[g] - rg)), 0)
        c1 = min(int(np.floor(u[g] + rg)), w - 1)
        r0 = max(int(np.ceil(v[g] - rg)), 0)
        r1 = min(int(np.floor(v[g] + rg)), h - 1)
        for i in range(r0, r1 + 1):
            dv = i - v[g]
            for j in range(c0, c1 + 1):
                du = j - u[g]
                d2 = du * du + dv * dv
                if d2 < r2:
                    out[i, j] += weight[g] * 2.0 * np.sqrt(r2 - d2)
