"""Compiled one-dimensional kernels.

These reproduce exactly the instructions of :class:`arwssm.lattice.InstructionField`
for plain fields (no overlay) and are used wherever the generic engine
would be too slow: density scans, threshold searches and exploration walks.

State codes follow :mod:`arwssm.lattice`: ``2 * count - sleeping``.
"""

import numba as nb
import numpy as np

from . import rng

U1 = np.uint64(1)
GOLD = np.uint64(rng.GOLDEN)
MUL1 = np.uint64(rng.MUL1)
MUL2 = np.uint64(rng.MUL2)
SH30 = np.uint64(30)
SH27 = np.uint64(27)
SH31 = np.uint64(31)
SH11 = np.uint64(11)
SH63 = np.uint64(63)
INV53 = rng.INV53

# relaxation outcomes
DONE = 0
CAPPED = 1
EXCEEDED = 2


@nb.njit(inline="always")
def mix64(z):
    z = (z ^ (z >> SH30)) * MUL1
    z = (z ^ (z >> SH27)) * MUL2
    return z ^ (z >> SH31)


@nb.njit(inline="always")
def unit(h):
    return np.float64(h >> SH11) * INV53


@nb.njit(inline="always")
def stream_base(seed, stream):
    return mix64(np.uint64(seed) + np.uint64(stream) * GOLD)


@nb.njit(inline="always")
def site_key(base, x):
    return mix64(base ^ np.uint64(np.int64(x)))


@nb.njit(inline="always")
def draw(key, j):
    return mix64(key + np.uint64(j) * GOLD)


@nb.njit(cache=True)
def site_keys(seed, stream, first, n):
    base = stream_base(seed, stream)
    keys = np.empty(n, np.uint64)
    for i in range(n):
        keys[i] = site_key(base, first + i)
    return keys


@nb.njit(inline="always")
def decode(u, cuts):
    """Instruction code from a unit draw: -1 for Sleep, else the jump index."""
    if u < cuts[0]:
        return -1
    k = 1
    while u >= cuts[k]:
        k += 1
    return k - 1


@nb.njit(cache=True)
def decode_block(key, first, count, cuts):
    """Codes of instructions ``first .. first+count-1`` of the stack with site key ``key``."""
    out = np.empty(count, np.int64)
    for i in range(count):
        out[i] = decode(unit(draw(key, first + i)), cuts)
    return out


@nb.njit(cache=True)
def poisson_particles(seed, first, n, ceiling):
    """Sites and thinning uniforms of a Poisson(ceiling) field on ``first..first+n-1``."""
    pbase = stream_base(seed, 2)
    tbase = stream_base(seed, 3)
    counts = np.zeros(n, np.int64)
    p0 = np.exp(-ceiling)
    for i in range(n):
        u = unit(draw(site_key(pbase, first + i), 1))
        p = p0
        cdf = p
        k = 0
        while u >= cdf and p > 0.0:
            k += 1
            p *= ceiling / k
            cdf += p
        counts[i] = k
    total = counts.sum()
    sites = np.empty(total, np.int64)
    us = np.empty(total, np.float64)
    q = 0
    for i in range(n):
        if counts[i]:
            tk = site_key(tbase, first + i)
            for m in range(1, counts[i] + 1):
                sites[q] = first + i
                us[q] = unit(draw(tk, m))
                q += 1
    return sites, us


@nb.njit(inline="always")
def _unstable(c, ssm):
    if ssm:
        return c >= 4
    return c >= 2 and (c & 1) == 0


@nb.njit(inline="always")
def _pending(c, ssm, instant):
    """Lower bound on the remaining topplings of a site holding code ``c``."""
    if ssm:
        return c // 4
    if c < 2 or (c & 1):
        return 0
    if instant:
        return c // 2 - 1
    return c // 2


@nb.njit(cache=True)
def relax(codes, half, keys, lo, hi, offs, cuts, ssm, instant, stack, sp,
          total, cap, origin, limit):
    """Topple unstable sites in ``[lo, hi)`` (array indices) until stable.

    ``stack[:sp]`` holds candidate sites.  Stops early with ``CAPPED`` when the
    half-toppling count would pass ``cap`` and with ``EXCEEDED`` as soon as the
    origin's final half-count is certain to exceed ``limit`` (``limit < 0``
    disables the check).  Returns ``(status, total, sp)``.
    """
    per = 2 if ssm else 1
    step = 1 if ssm else 2
    while sp > 0:
        sp -= 1
        i = stack[sp]
        c = codes[i]
        if not _unstable(c, ssm):
            continue
        key = keys[i]
        while _unstable(c, ssm):
            if limit >= 0 and i == origin and half[i] + 2 * _pending(c, ssm, instant) > limit:
                codes[i] = c
                stack[sp] = i
                return EXCEEDED, total, sp + 1
            if total + 2 > cap:
                codes[i] = c
                stack[sp] = i
                return CAPPED, total, sp + 1
            for _ in range(per):
                h = half[i]
                j = h + 1 if ssm else h // 2 + 1
                half[i] = h + step
                k = decode(unit(draw(key, j)), cuts)
                if k < 0:
                    if c == 2:
                        c = 1
                    continue
                t = i + offs[k]
                c -= 2
                if instant and c == 2:
                    c = 1
                d = codes[t]
                nd = d + 2 + (d & 1)
                if instant and nd == 2:
                    nd = 1
                codes[t] = nd
                if lo <= t < hi and not _unstable(d, ssm) and _unstable(nd, ssm):
                    stack[sp] = t
                    sp += 1
            total += 2
        codes[i] = c
    return DONE, total, sp


@nb.njit(cache=True)
def relax_binary(codes, half, keys, lo, hi, ssm, queue, head, tail, total, cap, origin, limit):
    """:func:`relax` for jump-only nearest-neighbour fields (SSM, or ARW at infinite rate).

    Such a field decodes a jump to the right exactly when the top bit of the
    draw is set, which allows a branch-free inner loop.  Unstable sites wait in
    the ring buffer ``queue[head:tail]`` (each at most once); serving them in
    FIFO order lets consecutive topplings overlap in the CPU, and the final
    state does not depend on the order.  Returns ``(status, total)``.
    """
    m = queue.shape[0]
    while head != tail:
        i = queue[head]
        head += 1
        if head == m:
            head = 0
        c = codes[i]
        key = keys[i]
        h = half[i]
        # SSM sends grains in pairs; instant-sleep ARW keeps one sleeper
        moves = 2 * (c // 4) if ssm else c // 2 - 1
        if limit >= 0 and i == origin and h + (moves if ssm else 2 * moves) > limit:
            return EXCEEDED, total
        if total + (moves if ssm else 2 * moves) > cap:
            return CAPPED, total
        for _ in range(moves):
            if ssm:
                h += 1
                t = i - 1 + 2 * np.int64(draw(key, h) >> SH63)
                d = codes[t]
                nd = d + 2
            else:
                t = i - 1 + 2 * np.int64(draw(key, h // 2 + 1) >> SH63)
                h += 2
                d = codes[t]
                nd = d + 2 + (d & 1)
                nd -= nd == 2
            codes[t] = nd
            queue[tail] = t
            # enqueue on the transition from stable to unstable
            tail += (nd >= 4) & (((d & 1) == 1) | (d < 4)) & (t >= lo) & (t < hi)
            if tail == m:
                tail = 0
        if ssm:
            codes[i] = c - 2 * moves
            total += moves
        else:
            codes[i] = 1
            total += 2 * moves
        half[i] = h
    return DONE, total


def is_binary(cuts, offs) -> bool:
    """True when a field decodes as a fair nearest-neighbour coin with no sleep."""
    return (len(offs) == 2 and offs[0] == -1 and offs[1] == 1
            and cuts[0] == 0.0 and cuts[1] == 0.5)


@nb.njit(cache=True)
def grow(codes, half, keys, lo, hi, offs, cuts, ssm, instant, binary, sites, values,
         grid, cap, origin, limit, snap_origin, snap_exit, snap_total, snap_status):
    """Add particles in increasing ``values`` order, restabilizing after each.

    Before the first particle whose value reaches ``grid[g]`` the state is
    recorded in the ``snap_*`` arrays (origin half-count, mass outside
    ``[lo, hi)``, total half-topplings, status).  With ``limit >= 0`` the run
    stops at the first particle after which the origin's half-count must
    exceed ``limit``; that particle's value is returned (``inf`` if none).
    """
    n = codes.shape[0]
    stack = np.empty(n + 2, np.int64)
    total = 0
    g = 0
    ng = grid.shape[0]
    status = DONE
    for p in range(sites.shape[0]):
        v = values[p]
        while g < ng and grid[g] <= v:
            _snapshot(codes, half, lo, hi, origin, total, status, g, snap_origin, snap_exit, snap_total, snap_status)
            g += 1
        s = sites[p]
        d = codes[s]
        nd = d + 2 + (d & 1)
        if instant and nd == 2:
            nd = 1
        codes[s] = nd
        sp = 0
        if lo <= s < hi and _unstable(nd, ssm):
            stack[0] = s
            sp = 1
        if binary:
            if sp:
                status, total = relax_binary(codes, half, keys, lo, hi, ssm, stack, 0, 1, total, cap,
                                             origin, limit)
        else:
            status, total, sp = relax(codes, half, keys, lo, hi, offs, cuts, ssm, instant,
                                      stack, sp, total, cap, origin, limit)
        if status == EXCEEDED:
            return v, total
        if status == CAPPED:
            break
    while g < ng:
        _snapshot(codes, half, lo, hi, origin, total, status, g, snap_origin, snap_exit, snap_total, snap_status)
        g += 1
    return np.inf, total


@nb.njit(inline="always")
def _snapshot(codes, half, lo, hi, origin, total, status, g, snap_origin, snap_exit, snap_total, snap_status):
    out = 0
    for i in range(lo):
        out += (codes[i] + 1) // 2
    for i in range(hi, codes.shape[0]):
        out += (codes[i] + 1) // 2
    snap_origin[g] = half[origin]
    snap_exit[g] = out
    snap_total[g] = total
    snap_status[g] = status


# ---------------------------------------------------------------- exploration walks

@nb.njit(inline="always")
def trace_hash(fp, y, j):
    """Running fingerprint of a sequence of consumed ``(site, index)`` pairs."""
    return mix64(fp ^ (np.uint64(np.int64(y)) * MUL1 + np.uint64(j)))


@nb.njit(cache=True)
def walk(used, fp_last, fp_prev, at_last, at_prev, first, base, pos, stop, steps, fp, cap, cuts,
         outward, last_out, record, out_site, out_idx, out_code):
    """Nearest-neighbour exploration walk from ``pos`` until it reaches ``stop``.

    ``used[y - first]`` counts instructions already explored at ``y``; the walk
    reads the next one at each step.  Before each read at ``y`` the running
    fingerprint and step count are stored in ``fp_last``/``at_last`` (the
    previous values move to ``fp_prev``/``at_prev``).  ``last_out`` tracks the
    site of the latest jump with code ``outward``.  With ``record`` the
    consumed entries are also written to the ``out_*`` buffers.

    Returns ``(pos, steps, fp, last_out, n, status)`` where ``n`` entries were
    written and status is 0 (stopped), 1 (buffer full), 2 (left the ledger
    window) or 3 (step cap).
    """
    n = 0
    m = out_site.shape[0]
    while pos != stop:
        if steps >= cap:
            return pos, steps, fp, last_out, n, 3
        if record and n >= m:
            return pos, steps, fp, last_out, n, 1
        i = pos - first
        if i < 0 or i >= used.shape[0]:
            return pos, steps, fp, last_out, n, 2
        j = used[i] + 1
        used[i] = j
        fp_prev[i] = fp_last[i]
        at_prev[i] = at_last[i]
        fp_last[i] = fp
        at_last[i] = steps
        k = decode(unit(draw(site_key(base, pos), j)), cuts)
        fp = trace_hash(fp, pos, j)
        if record:
            out_site[n] = pos
            out_idx[n] = j
            out_code[n] = k
            n += 1
        steps += 1
        if k == outward:
            last_out = pos
        if k == 0:
            pos -= 1
        elif k == 1:
            pos += 1
    return pos, steps, fp, last_out, n, 0


@nb.njit(inline="always")
def _code_at(base, y, j, cuts):
    return decode(unit(draw(site_key(base, y), j)), cuts)


@nb.njit(cache=True)
def increments(seed, count, start, cap, window, cuts, ssm, chain, q):
    """Barrier increments from exploration walks started ``start`` sites away.

    ``chain=False``: every sample uses a fresh field with barrier at 0.
    ``chain=True``: samples are consecutive increments of one construction;
    a diverged walk restarts the chain on a new field.  Tail events (no
    barrier within reach) are resolved by the exact conditional tail law,
    geometric with ratio ``q`` for ARW and ``(k+1)/2^k`` for SSM.
    Returns ``(samples, tails, diverged)``.
    """
    out = np.empty(count, np.int64)
    tails = 0
    diverged = 0
    size = window
    used = np.zeros(size, np.int64)
    got = 0
    field_no = 0
    fseed = np.uint64(0)
    base = np.uint64(0)
    barrier = 0
    fresh = True
    hiwater = 0
    while got < count:
        if fresh:
            fseed = mix64(np.uint64(seed) + np.uint64(field_no + 1) * GOLD)
            field_no += 1
            base = stream_base(fseed, 1)
            for i in range(min(hiwater + 2, size)):
                used[i] = 0
            hiwater = 0
            barrier = 0
            fresh = not chain
        x = barrier + start
        while x + 2 >= size and size < (1 << 28):
            grown = np.zeros(size * 2, np.int64)
            grown[:size] = used
            used = grown
            size *= 2
        before = used[barrier + 1:x].copy()
        pos = x
        steps = 0
        last_right = -1
        ok = True
        while pos != barrier:
            if steps >= cap or pos + 2 >= size:
                if chain and pos + 2 >= size and steps < cap and size < (1 << 28):
                    grown = np.zeros(size * 2, np.int64)
                    grown[:size] = used
                    used = grown
                    size *= 2
                    continue
                ok = False
                break
            j = used[pos] + 1
            used[pos] = j
            if pos > hiwater:
                hiwater = pos
            k = _code_at(base, pos, j, cuts)
            steps += 1
            if k == 0:
                pos -= 1
            elif k == 1:
                last_right = pos
                pos += 1
        if not ok:
            diverged += 1
            fresh = True
            continue
        y = -1
        if ssm:
            if last_right >= 0 and last_right + 1 <= x:
                y = last_right + 1 - barrier
        else:
            for z in range(barrier + 1, x):
                jz = used[z]
                if jz - 1 > before[z - barrier - 1] and _code_at(base, z, jz - 1, cuts) < 0:
                    y = z - barrier
                    break
        if y < 0:
            tails += 1
            u = unit(draw(site_key(stream_base(fseed, 5), barrier), 1))
            if ssm:
                y = start + 1
                ref = (start + 1) / 2.0 ** start
                while u < ((y + 1) / 2.0 ** y) / ref:
                    y += 1
            else:
                y = start
                while u < q ** (y - start + 1):
                    y += 1
        out[got] = y
        got += 1
        barrier += y
    return out, tails, diverged
