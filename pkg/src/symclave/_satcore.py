"""CDCL SAT search kernel over flat numpy clause arrays.

This is the hot loop of the whole analyzer: every branch feasibility
check, region classification and detector probe bit-blasts to CNF and
lands here.  The kernel is written against plain numpy arrays so the
same function body runs in two modes:

* compiled with numba ``@njit`` (default), or
* as plain interpreted Python over numpy scalars, selected by setting
  the environment variable ``SYMCLAVE_NO_JIT=1``.

Both paths execute the identical algorithm, so verdicts, models and
step counts are bit-for-bit the same; see ``benchmarks/bench_solver.py``
for the speed comparison.

Literal encoding: variable ``v`` (0-based) appears positively as
``2*v`` and negated as ``2*v + 1``.  Clauses of length >= 2 live in the
watched-literal database; unit clauses are enqueued at decision level 0.

Return status codes: 1 = SAT, 0 = UNSAT, 2 = budget exhausted.
"""

from __future__ import annotations

import os

import numpy as np

SAT = 1
UNSAT = 0
UNKNOWN = 2

#: Environment flag forcing the pure-Python fallback path.
NO_JIT_ENV = "SYMCLAVE_NO_JIT"


def _solve(lits, starts, n_clauses, n_vars, budget, assign_out):
    """Run CDCL on the clause database; see module docstring for layout.

    ``lits``/``starts`` must have spare capacity for learned clauses;
    when the capacity runs out the search gives up with UNKNOWN rather
    than reallocating.  ``assign_out`` (uint8, n_vars) receives the model
    on SAT.  Returns (status, steps_used).
    """
    cap_clauses = starts.shape[0] - 1
    cap_lits = lits.shape[0]

    assign = np.full(n_vars, -1, np.int8)
    level = np.zeros(n_vars, np.int32)
    reason = np.full(n_vars, -1, np.int64)
    trail = np.zeros(n_vars + 1, np.int32)
    trail_lim = np.zeros(n_vars + 2, np.int32)
    watch_head = np.full(2 * n_vars + 2, -1, np.int64)
    watch_next = np.full(2 * cap_clauses, -1, np.int64)
    activity = np.zeros(n_vars, np.float64)
    seen = np.zeros(n_vars, np.uint8)
    learnt = np.zeros(n_vars + 1, np.int32)

    trail_len = 0
    qhead = 0
    dl = 0
    var_inc = 1.0
    steps = 0
    n_cls = n_clauses
    conflicts_since_restart = 0
    restart_limit = 128

    # Install watches; enqueue unit input clauses at level 0.
    for c in range(n_clauses):
        s = starts[c]
        e = starts[c + 1]
        ln = e - s
        if ln == 0:
            return UNSAT, steps
        if ln == 1:
            l = lits[s]
            v = l >> 1
            want = 1 - (l & 1)
            if assign[v] == -1:
                assign[v] = want
                level[v] = 0
                reason[v] = -1
                trail[trail_len] = l
                trail_len += 1
            elif assign[v] != want:
                return UNSAT, steps
        else:
            node0 = 2 * c
            node1 = 2 * c + 1
            l0 = lits[s]
            l1 = lits[s + 1]
            watch_next[node0] = watch_head[l0]
            watch_head[l0] = node0
            watch_next[node1] = watch_head[l1]
            watch_head[l1] = node1

    while True:
        # ---- unit propagation ----
        confl = -1
        while qhead < trail_len:
            l = trail[qhead]
            qhead += 1
            steps += 1
            if steps > budget:
                return UNKNOWN, steps
            fl = l ^ 1
            node = watch_head[fl]
            prev = -1
            while node != -1:
                steps += 1
                nxt = watch_next[node]
                c = node >> 1
                slot = node & 1
                s = starts[c]
                e = starts[c + 1]
                my_pos = s + slot
                other = lits[s + (1 - slot)]
                ov = assign[other >> 1]
                other_val = -1 if ov == -1 else ov ^ (other & 1)
                if other_val == 1:
                    prev = node
                    node = nxt
                    continue
                found = -1
                for k in range(s + 2, e):
                    q = lits[k]
                    qv = assign[q >> 1]
                    if qv == -1 or (qv ^ (q & 1)) == 1:
                        found = k
                        break
                if found >= 0:
                    tmp = lits[my_pos]
                    lits[my_pos] = lits[found]
                    lits[found] = tmp
                    newlit = lits[my_pos]
                    if prev == -1:
                        watch_head[fl] = nxt
                    else:
                        watch_next[prev] = nxt
                    watch_next[node] = watch_head[newlit]
                    watch_head[newlit] = node
                    node = nxt
                    continue
                if other_val == 0:
                    confl = c
                    qhead = trail_len
                    break
                v = other >> 1
                assign[v] = 1 - (other & 1)
                level[v] = dl
                reason[v] = c
                trail[trail_len] = other
                trail_len += 1
                prev = node
                node = nxt
            if confl >= 0:
                break

        if confl >= 0:
            # ---- conflict analysis (first UIP) ----
            if dl == 0:
                return UNSAT, steps
            conflicts_since_restart += 1
            learnt_len = 1
            counter = 0
            p = -1
            idx = trail_len - 1
            c = confl
            while True:
                s = starts[c]
                e = starts[c + 1]
                for k in range(s, e):
                    q = lits[k]
                    v = q >> 1
                    if p != -1 and v == (p >> 1):
                        continue
                    if seen[v] == 0 and level[v] > 0:
                        seen[v] = 1
                        activity[v] += var_inc
                        if activity[v] > 1e100:
                            for j in range(n_vars):
                                activity[j] *= 1e-100
                            var_inc *= 1e-100
                        if level[v] == dl:
                            counter += 1
                        else:
                            learnt[learnt_len] = q
                            learnt_len += 1
                while seen[trail[idx] >> 1] == 0:
                    idx -= 1
                p = trail[idx]
                idx -= 1
                seen[p >> 1] = 0
                counter -= 1
                if counter == 0:
                    break
                c = reason[p >> 1]
            learnt[0] = p ^ 1
            var_inc *= 1.052631578947368  # 1/0.95 decay

            bj = 0
            swap_pos = 1
            for i in range(1, learnt_len):
                v = learnt[i] >> 1
                seen[v] = 0
                if level[v] > bj:
                    bj = level[v]
                    swap_pos = i

            # backtrack to bj
            target = trail_lim[bj + 1] if dl > bj else trail_len
            for i in range(trail_len - 1, target - 1, -1):
                assign[trail[i] >> 1] = -1
            trail_len = target
            qhead = trail_len
            dl = bj

            al = learnt[0]
            av = al >> 1
            if learnt_len == 1:
                assign[av] = 1 - (al & 1)
                level[av] = 0
                reason[av] = -1
                trail[trail_len] = al
                trail_len += 1
            else:
                # position 1 must hold the highest-level remaining literal
                tmp = learnt[1]
                learnt[1] = learnt[swap_pos]
                learnt[swap_pos] = tmp
                if n_cls >= cap_clauses or starts[n_cls] + learnt_len > cap_lits:
                    return UNKNOWN, steps
                s = starts[n_cls]
                for i in range(learnt_len):
                    lits[s + i] = learnt[i]
                starts[n_cls + 1] = s + learnt_len
                node0 = 2 * n_cls
                node1 = 2 * n_cls + 1
                watch_next[node0] = watch_head[learnt[0]]
                watch_head[learnt[0]] = node0
                watch_next[node1] = watch_head[learnt[1]]
                watch_head[learnt[1]] = node1
                assign[av] = 1 - (al & 1)
                level[av] = dl
                reason[av] = n_cls
                trail[trail_len] = al
                trail_len += 1
                n_cls += 1

            if conflicts_since_restart >= restart_limit:
                conflicts_since_restart = 0
                restart_limit += restart_limit // 2
                target = trail_lim[1] if dl > 0 else trail_len
                for i in range(trail_len - 1, target - 1, -1):
                    assign[trail[i] >> 1] = -1
                trail_len = target
                qhead = trail_len
                dl = 0
            continue

        # ---- decide ----
        best = -1
        best_act = -1.0
        for v in range(n_vars):
            if assign[v] == -1 and activity[v] > best_act:
                best = v
                best_act = activity[v]
        if best == -1:
            for v in range(n_vars):
                assign_out[v] = assign[v]
            return SAT, steps
        steps += 1
        if steps > budget:
            return UNKNOWN, steps
        dl += 1
        trail_lim[dl] = trail_len
        l = 2 * best + 1  # polarity: try False first
        assign[best] = 0
        level[best] = dl
        reason[best] = -1
        trail[trail_len] = l
        trail_len += 1


def _jit_enabled() -> bool:
    return os.environ.get(NO_JIT_ENV, "").strip().lower() not in ("1", "true", "yes")


solve_py = _solve

if _jit_enabled():
    try:
        from numba import njit

        solve_jit = njit(cache=True, nogil=True)(_solve)
        solve = solve_jit
        JIT_ACTIVE = True
    except ImportError:  # pragma: no cover - numba is a hard dep, belt and braces
        solve_jit = None
        solve = solve_py
        JIT_ACTIVE = False
else:
    solve_jit = None
    solve = solve_py
    JIT_ACTIVE = False
