"""Runge-Kutta stage coefficients for the stochastic schemes.

Two tableaus ship here: the classical four-stage fourth-order method (which
becomes the order-2 stochastic scheme) and the Hairer-Wanner twelve-stage
eighth-order method (order 4 stochastically) with its published companion
fifth-order weights serving as the embedded pair.  Coefficients are exact
decimal literals; ``ButcherTableau.validate`` re-derives the consistency
conditions rather than trusting transcription.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ButcherTableau", "RK4_TABLEAU", "DOP853_TABLEAU"]


@dataclass(frozen=True)
class ButcherTableau:
    """Explicit Runge-Kutta coefficients (lower-triangular stage matrix).

    ``b_emb`` when present is a second weight vector whose difference from
    ``b`` yields a local error estimate.
    """

    name: str
    a: np.ndarray  # (s, s), strictly lower triangular
    b: np.ndarray  # (s,)
    c: np.ndarray  # (s,)
    b_emb: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))
        if self.b_emb is not None:
            object.__setattr__(self, "b_emb", np.asarray(self.b_emb, dtype=float))

    @property
    def s(self) -> int:
        return self.b.shape[0]

    def validate(self, order: int = 4, tol: float = 1e-13) -> None:
        """Check shape, stage consistency, and quadrature order conditions.

        Verifies sum(b) == 1, c_i == sum_j a_ij, strict lower-triangularity,
        and the classical order conditions through ``order`` (at most 4 here:
        the eight conditions in b, c, a).  Raises ValueError on failure.
        """
        s = self.s
        if self.a.shape != (s, s) or self.c.shape != (s,):
            raise ValueError(f"{self.name}: inconsistent tableau shapes")
        if np.any(np.triu(self.a) != 0.0):
            raise ValueError(f"{self.name}: stage matrix must be strictly lower triangular")
        if abs(self.b.sum() - 1.0) > tol:
            raise ValueError(f"{self.name}: sum of weights is {self.b.sum()!r}, not 1")
        if np.max(np.abs(self.c - self.a.sum(axis=1))) > tol:
            raise ValueError(f"{self.name}: abscissae do not match stage row sums")
        if self.b_emb is not None:
            if self.b_emb.shape != (s,):
                raise ValueError(f"{self.name}: embedded weights have wrong shape")
            if abs(self.b_emb.sum() - 1.0) > tol:
                raise ValueError(f"{self.name}: embedded weights do not sum to 1")
        a, b, c = self.a, self.b, self.c
        conditions = {
            2: [(b @ c, 1 / 2)],
            3: [(b @ c**2, 1 / 3), (b @ (a @ c), 1 / 6)],
            4: [
                (b @ c**3, 1 / 4),
                (b @ (c * (a @ c)), 1 / 8),
                (b @ (a @ c**2), 1 / 12),
                (b @ (a @ (a @ c)), 1 / 24),
            ],
        }
        for p in range(2, min(order, 4) + 1):
            for lhs, rhs in conditions[p]:
                if abs(lhs - rhs) > tol:
                    raise ValueError(
                        f"{self.name}: order-{p} condition violated ({lhs!r} != {rhs!r})"
                    )


def _rk4() -> ButcherTableau:
    a = np.zeros((4, 4))
    a[1, 0] = 0.5
    a[2, 1] = 0.5
    a[3, 2] = 1.0
    b = np.array([1 / 6, 1 / 3, 1 / 3, 1 / 6])
    c = np.array([0.0, 0.5, 0.5, 1.0])
    return ButcherTableau("rk4", a, b, c)


def _dop853() -> ButcherTableau:
    # Twelve-stage eighth-order method of Hairer and Wanner (DOP853 core),
    # with the fifth-order companion weights as the embedded pair.
    s = 12
    a = np.zeros((s, s))
    a[1, 0] = 5.26001519587677318785587544488e-2

    a[2, 0] = 1.97250569845378994544595329183e-2
    a[2, 1] = 5.91751709536136983633785987549e-2

    a[3, 0] = 2.95875854768068491816892993775e-2
    a[3, 2] = 8.87627564304205475450678981324e-2

    a[4, 0] = 2.41365134159266685502369798665e-1
    a[4, 2] = -8.84549479328286085344864962717e-1
    a[4, 3] = 9.24834003261792003115737966543e-1

    a[5, 0] = 3.7037037037037037037037037037e-2
    a[5, 3] = 1.70828608729473871279604482173e-1
    a[5, 4] = 1.25467687566822425016691814123e-1

    a[6, 0] = 3.7109375e-2
    a[6, 3] = 1.70252211019544039314978060272e-1
    a[6, 4] = 6.02165389804559606850219397283e-2
    a[6, 5] = -1.7578125e-2

    a[7, 0] = 3.70920001185047927108779319836e-2
    a[7, 3] = 1.70383925712239993810214054705e-1
    a[7, 4] = 1.07262030446373284651809199168e-1
    a[7, 5] = -1.53194377486244017527936158236e-2
    a[7, 6] = 8.27378916381402288758473766002e-3

    a[8, 0] = 6.24110958716075717114429577812e-1
    a[8, 3] = -3.36089262944694129406857109825
    a[8, 4] = -8.68219346841726006818189891453e-1
    a[8, 5] = 2.75920996994467083049415600797e1
    a[8, 6] = 2.01540675504778934086186788979e1
    a[8, 7] = -4.34898841810699588477366255144e1

    a[9, 0] = 4.77662536438264365890433908527e-1
    a[9, 3] = -2.48811461997166764192642586468
    a[9, 4] = -5.90290826836842996371446475743e-1
    a[9, 5] = 2.12300514481811942347288949897e1
    a[9, 6] = 1.52792336328824235832596922938e1
    a[9, 7] = -3.32882109689848629194453265587e1
    a[9, 8] = -2.03312017085086261358222928593e-2

    a[10, 0] = -9.3714243008598732571704021658e-1
    a[10, 3] = 5.18637242884406370830023853209
    a[10, 4] = 1.09143734899672957818500254654
    a[10, 5] = -8.14978701074692612513997267357
    a[10, 6] = -1.85200656599969598641566180701e1
    a[10, 7] = 2.27394870993505042818970056734e1
    a[10, 8] = 2.49360555267965238987089396762
    a[10, 9] = -3.0467644718982195003823669022

    a[11, 0] = 2.27331014751653820792359768449
    a[11, 3] = -1.05344954667372501984066689879e1
    a[11, 4] = -2.00087205822486249909675718444
    a[11, 5] = -1.79589318631187989172765950534e1
    a[11, 6] = 2.79488845294199600508499808837e1
    a[11, 7] = -2.85899827713502369474065508674
    a[11, 8] = -8.87285693353062954433549289258
    a[11, 9] = 1.23605671757943030647266201528e1
    a[11, 10] = 6.43392746015763530355970484046e-1

    b = np.array([
        5.42937341165687622380535766363e-2,
        0.0,
        0.0,
        0.0,
        0.0,
        4.45031289275240888144113950566,
        1.89151789931450038304281599044,
        -5.8012039600105847814672114227,
        3.1116436695781989440891606237e-1,
        -1.52160949662516078556178806805e-1,
        2.01365400804030348374776537501e-1,
        4.47106157277725905176885569043e-2,
    ])

    c = np.array([
        0.0,
        0.526001519587677318785587544488e-01,
        0.789002279381515978178381316732e-01,
        0.118350341907227396726757197510,
        0.281649658092772603273242802490,
        0.333333333333333333333333333333,
        0.25,
        0.307692307692307692307692307692,
        0.651282051282051282051282051282,
        0.6,
        0.857142857142857142857142857142,
        1.0,
    ])

    # b - b_emb (the published fifth-order error weights).
    e5 = np.zeros(s)
    e5[0] = 0.1312004499419488073250102996e-1
    e5[5] = -0.1225156446376204440720569753e1
    e5[6] = -0.4957589496572501915214079952
    e5[7] = 0.1664377182454986536961530415e1
    e5[8] = -0.3503288487499736816886487290
    e5[9] = 0.3341791187130174790297318841
    e5[10] = 0.8192320648511571246570742613e-1
    e5[11] = -0.2235530786388629525884427845e-1

    return ButcherTableau("dop853", a, b, c, b_emb=b - e5)


RK4_TABLEAU = _rk4()
DOP853_TABLEAU = _dop853()
