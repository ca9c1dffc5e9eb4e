"""Pure-Python simulation kernel; same semantics and arithmetic order as the
compiled one, so both produce bit-identical sums."""

KIND_TABLE = 0
KIND_RANDOMIZED = 1
KIND_PERIODIC = 2
KIND_REACTIVE = 3
KIND_AOI = 4
KIND_AOII = 5


def run_chunk(state, u_src, u_ch, u_pol, qcum, ctab, kind, act, act_aoi, param, period, lam, p_s, n_cap,
              batch_sums, batch_len, t0, counters):
    """Advance the trajectory over one chunk of pre-drawn uniforms.

    ``state`` holds ``[x, xhat, aoce, x_prev, aoi, aoii]`` and is updated in
    place, as are ``batch_sums`` and ``counters`` (transmissions, error slots,
    overflow flag). Returns -1 if the AoCE outgrew the cost table, else 0.
    """
    x, xh, d, xp, aoi, aoii = (int(v) for v in state)
    M = qcum.shape[0]
    L = ctab.shape[2]
    nb = batch_sums.shape[0]
    qrows = qcum.tolist()
    ctl = ctab.tolist()
    actl = act.tolist()
    aoil = act_aoi.tolist()
    us = u_src.tolist()
    uc = u_ch.tolist()
    up = u_pol.tolist() if kind == KIND_RANDOMIZED else None
    sums = batch_sums.tolist()
    n_tx = int(counters[0])
    n_err = int(counters[1])
    flag = 0
    for t in range(len(us)):
        if d >= L:
            flag = -1
            break
        gt = t0 + t
        c = ctl[x][xh][d]
        if kind == KIND_TABLE:
            a = actl[x][xh][d if d < n_cap else n_cap]
        elif kind == KIND_RANDOMIZED:
            a = 1 if up[t] < param else 0
        elif kind == KIND_PERIODIC:
            a = 1 if (gt + 1) % period == 0 else 0
        elif kind == KIND_REACTIVE:
            a = 1 if x != xp else 0
        elif kind == KIND_AOI:
            a = aoil[aoi if aoi < n_cap else n_cap]
        else:
            a = actl[x][xh][aoii if aoii < n_cap else n_cap]
        if a:
            c += lam
            n_tx += 1
        if x != xh:
            n_err += 1
        b = gt // batch_len
        if b >= nb:
            b = nb - 1
        sums[b] += c

        u = us[t]
        row = qrows[x]
        x2 = M - 1
        for k in range(M):
            if u < row[k]:
                x2 = k
                break
        if a and uc[t] < p_s:
            xh2 = x
            aoi = 1
        else:
            xh2 = xh
            aoi += 1
        if x2 == xh2:
            d2 = 0
            aoii = 0
        else:
            aoii += 1
            d2 = d + 1 if (x2 == x and xh2 == xh) else 1
        xp = x
        x = x2
        xh = xh2
        d = d2
    state[:] = (x, xh, d, xp, aoi, aoii)
    batch_sums[:] = sums
    counters[0] = n_tx
    counters[1] = n_err
    if flag:
        counters[2] = 1
    return flag
