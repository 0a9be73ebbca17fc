"""Reference numpy implementation of the per-block signal kernel.

One block is one BS on one of its subcarriers.  All large dimensions (BS
antennas, RIS elements) are contracted by the caller; the kernel works on:

    au, dau      (NU, P2)     UE steering vectors at the arrival angles, and d/dangle
    ph1, ph2     (P1,), (P2,) array gain times delay phasor per path
    g, h         (P1,), (P2,) complex path gains
    rate         scalar       phase rate of the delay phasor (rad/s)
    x1, dx1      (P1, M)      A_T^H W and dA_T^H W
    z, zd, zb    (B, P2, P1)  A_Rd^H diag(theta) A_R, with A_R or A_Rd differentiated
    d*           (P, K)       path-parameter gradients w.r.t. kappa

Returned arrays (leading batch axis B over the theta contractions):

    gamma (B, M, NU, P2)  coefficient of h_l in the received signal
    lam   (B, M, NU, P1)  coefficient of g_l
    xi    (B, M, NU, P2, K) d gamma / d kappa
    psi   (B, M, NU, P1, K) d lam / d kappa
"""

import numpy as np


def block_terms(au, dau, ph1, ph2, g, h, rate, x1, dx1, z, zd, zb,
                dtau1, daod_bs, daoa_ris, dtau2, daod_ris, daoa_ue, derivs=True):
    gp = g * ph1
    hp = h * ph2
    gx = gp[:, None] * x1  # (P1, M)
    v = z @ gx  # (B, P2, M)
    gamma = np.einsum("rp,p,bpm->bmrp", au, ph2, v)
    c = np.einsum("rq,q,bqp->brp", au, hp, z)  # (B, NU, P1)
    lam = np.einsum("brp,p,pm->bmrp", c, ph1, x1)
    if not derivs:
        return gamma, lam, None, None

    jr = -1j * rate
    vb = zb @ gx
    xi = np.einsum("bmrp,pk->bmrpk", gamma * jr, dtau2)
    xi += np.einsum("rp,p,bpm,pk->bmrpk", dau, ph2, v, daoa_ue)
    xi += np.einsum("rp,p,bpm,pk->bmrpk", au, ph2, vb, daod_ris)
    y = np.einsum("bql,lm,lk->bqmk", z * (gp * jr), x1, dtau1)
    y += np.einsum("bql,lm,lk->bqmk", zd * gp, x1, daoa_ris)
    y += np.einsum("bql,lm,lk->bqmk", z * gp, dx1, daod_bs)
    xi += np.einsum("rq,q,bqmk->bmrqk", au, ph2, y)

    cd = np.einsum("rq,q,bqp->brp", au, hp, zd)
    psi = np.einsum("bmrp,pk->bmrpk", lam * jr, dtau1)
    psi += np.einsum("brp,p,pm,pk->bmrpk", cd, ph1, x1, daoa_ris)
    psi += np.einsum("brp,p,pm,pk->bmrpk", c, ph1, dx1, daod_bs)
    dc = np.einsum("rq,q,bqp,qk->brpk", au, hp * jr, z, dtau2)
    dc += np.einsum("rq,q,bqp,qk->brpk", dau, hp, z, daoa_ue)
    dc += np.einsum("rq,q,bqp,qk->brpk", au, hp, zb, daod_ris)
    psi += np.einsum("brpk,p,pm->bmrpk", dc, ph1, x1)
    return gamma, lam, xi, psi
