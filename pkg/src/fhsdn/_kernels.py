"""Compiled hot paths for the per-slot scheduler."""

import numpy as np
from numba import njit


@njit(cache=True)
def _expected_inverse(qvg, ivals, iprobs, ilen, noise, power, gain):
    # E[ qvg / (noise + I + power*gain) ] over the discrete support
    acc = 0.0
    for k in range(ilen):
        acc += iprobs[k] * qvg / (noise + ivals[k] + power * gain)
    return acc


@njit(cache=True)
def _solve_power(qv, gain, ivals, iprobs, ilen, noise, gamma, rel_tol, max_iter):
    # Root of E[(qv*gain)/(noise + I + P*gain)] = gamma; caller guarantees the
    # value at P=0 exceeds gamma.  The left side is strictly decreasing.
    imin = ivals[0]
    for k in range(1, ilen):
        if ivals[k] < imin:
            imin = ivals[k]
    hi = qv / gamma - (noise + imin) / gain
    lo = 0.0
    mid = 0.5 * hi
    qvg = qv * gain
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        val = _expected_inverse(qvg, ivals, iprobs, ilen, noise, mid, gain)
        if abs(val - gamma) <= rel_tol * gamma:
            return mid
        if val > gamma:
            lo = mid
        else:
            hi = mid
    return mid


@njit(cache=True)
def waterfill_kernel(
    qv, gains, active, ivals, iprobs, ilens, noise, budget, rel_tol, max_iter
):
    """Continuous power allocation by water level bisection.

    qv: (M,) non-negative weights; gains: (M, S); active: (S,) 0/1 mask;
    ivals/iprobs: (M, S, K) padded discrete interference distributions with
    per-entry support sizes ilens.  Returns the (M, S) power map and the
    final water level.
    """
    num_mus, num_sc = gains.shape
    powers = np.zeros((num_mus, num_sc))
    weights = np.zeros((num_mus, num_sc))
    wmax = 0.0
    for m in range(num_mus):
        for s in range(num_sc):
            if active[s] == 0 or gains[m, s] <= 0.0 or qv[m] <= 0.0:
                continue
            w = _expected_inverse(
                qv[m] * gains[m, s], ivals[m, s], iprobs[m, s], ilens[m, s], noise, 0.0, 1.0
            )
            weights[m, s] = w
            if w > wmax:
                wmax = w
    if wmax <= 0.0:
        return powers, 0.0

    lo = 0.0
    hi = wmax
    gamma = 0.5 * wmax
    for _ in range(max_iter):
        gamma = 0.5 * (lo + hi)
        total = 0.0
        for m in range(num_mus):
            for s in range(num_sc):
                if weights[m, s] > gamma:
                    powers[m, s] = _solve_power(
                        qv[m],
                        gains[m, s],
                        ivals[m, s],
                        iprobs[m, s],
                        ilens[m, s],
                        noise,
                        gamma,
                        rel_tol,
                        max_iter,
                    )
                else:
                    powers[m, s] = 0.0
                total += powers[m, s]
        if abs(total - budget) <= rel_tol * budget:
            break
        if total > budget:
            lo = gamma
        else:
            hi = gamma

    total = powers.sum()
    if total > budget * (1.0 + rel_tol):
        # keep the conservative side of the bracket
        gamma = hi
        for m in range(num_mus):
            for s in range(num_sc):
                if weights[m, s] > gamma:
                    powers[m, s] = _solve_power(
                        qv[m],
                        gains[m, s],
                        ivals[m, s],
                        iprobs[m, s],
                        ilens[m, s],
                        noise,
                        gamma,
                        rel_tol,
                        max_iter,
                    )
                else:
                    powers[m, s] = 0.0
    return powers, gamma
