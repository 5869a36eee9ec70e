"""Hot loop for the latent-field update, jitted with numba.

The sweep performs one random-walk Metropolis pass over every site (t, s) in
scan order, consuming pre-generated standard normals and log-uniforms so all
randomness stays in the caller's numpy Generator.  U and the innovation
matrix E are updated in place; E row 0 holds the free initial innovation
under AR errors (zeros otherwise) and is never touched here.

The log-density delta for a site move is assembled from the only terms that
change: the Poisson term at (i, s), the diffuse anchor prior when i == 0,
and the Gaussian innovation terms.  Changing u_i(s) by d shifts E[i, s] by d
and E[i+1, r] by -H[i+1][r, s] d for the rows r whose stencil references
cell s; under AR(1) each innovation change propagates to at most two eta
terms (eta_k = E_k - phi E_{k-1}), all enumerated explicitly below.

Proposals that would push the log intensity past the exp overflow point are
rejected outright.
"""

import math

import numpy as np
from numba import njit

_EXP_MAX = 700.0


@njit(cache=True, nogil=True)
def u_sweep(U, E, H, colsup, colsup_n, counts, mask, logpop, anchor,
            anchor_var, phi, sigma2, scales, z, logu, accept):
    T, S = U.shape
    for i in range(T):
        for s in range(S):
            d = scales[i, s] * z[i, s]
            u0 = U[i, s]
            u1 = u0 + d
            zc = u1 + logpop[s]
            if zc > _EXP_MAX:
                continue
            dlp = 0.0
            if mask[i, s]:
                dlp += counts[i, s] * d - (math.exp(zc) - math.exp(u0 + logpop[s]))
            if i == 0:
                a = anchor[s]
                dlp += ((u0 - a) ** 2 - (u1 - a) ** 2) / (2.0 * anchor_var)
            q = 0.0
            if i >= 1:
                eo = E[i, s] - phi * E[i - 1, s]
                en = eo + d
                q += eo * eo - en * en
            if i + 1 < T:
                for k in range(colsup_n[s]):
                    r = colsup[s, k]
                    dE1 = -H[i + 1, r, s] * d
                    eo = E[i + 1, r] - phi * E[i, r]
                    dphi = phi * d if (r == s and i >= 1) else 0.0
                    en = eo + dE1 - dphi
                    q += eo * eo - en * en
                if phi != 0.0 and i + 2 < T:
                    for k in range(colsup_n[s]):
                        r = colsup[s, k]
                        dE1 = -H[i + 1, r, s] * d
                        eo = E[i + 2, r] - phi * E[i + 1, r]
                        en = eo - phi * dE1
                        q += eo * eo - en * en
            dlp += q / (2.0 * sigma2)
            if logu[i, s] < dlp:
                U[i, s] = u1
                if i >= 1:
                    E[i, s] += d
                if i + 1 < T:
                    for k in range(colsup_n[s]):
                        r = colsup[s, k]
                        E[i + 1, r] -= H[i + 1, r, s] * d
                accept[i, s] += 1
