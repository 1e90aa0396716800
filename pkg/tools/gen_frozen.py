"""Derive the frozen expected values used in the test suite.

Every closed-form constant asserted in tests/ is computed here from
first principles with mpmath at 50 digits — independently of the package
code — and pasted into the tests as a literal. Rerun to audit:

    python3 tools/gen_frozen.py
"""

import mpmath as mp

mp.mp.dps = 50


def show(label, value):
    print("%-38s %s" % (label, mp.nstr(value, 17)))


# collinear mobius addition at kappa=-1: (x+y)/(1+xy)
show("mobius_add 0.3,0.4 (1-D)", (mp.mpf("0.3") + mp.mpf("0.4"))
     / (1 + mp.mpf("0.3") * mp.mpf("0.4")))

# conformal factor 2/(1-c r^2)
show("lambda r=0.5 c=1", 2 / (1 - mp.mpf("0.25")))
show("lambda r=0.25 c=4", 2 / (1 - 4 * mp.mpf("0.0625")))

# origin log map: atanh
show("log0 0.5", mp.atanh(mp.mpf("0.5")))

# mobius scalar mul: tanh(t atanh r)
show("2 (x) 0.3", mp.tanh(2 * mp.atanh(mp.mpf("0.3"))))

# geodesic distance from origin: 2 atanh r
show("d(0,(0.5,0))", 2 * mp.atanh(mp.mpf("0.5")))

# hyperboloid -> ball: sinh1/(1+cosh1) = tanh(1/2)
show("L->D (cosh1,sinh1,0)", mp.sinh(1) / (1 + mp.cosh(1)))

# ball -> hyperboloid at (0.5,0): time (1+r^2)/(1-r^2), space 2x/(1-r^2)
show("D->L time", (1 + mp.mpf("0.25")) / (1 - mp.mpf("0.25")))
show("D->L space", 2 * mp.mpf("0.5") / (1 - mp.mpf("0.25")))

# degree-normalized Dirichlet energy of the single-edge pair
# h_i = origin, h_j = (0.5, 0), both degrees 1 (normalizer sqrt(2)):
#   hn_j = tanh(atanh(0.5)/sqrt(2)), energy = (1/2) * 2 * d(0, hn_j)^2
hn = mp.tanh(mp.atanh(mp.mpf("0.5")) / mp.sqrt(2))
show("dirichlet hn_j", hn)
show("dirichlet energy", (2 * mp.atanh(hn)) ** 2)

# uniform-logit cross entropy over 7 classes (cora)
show("ln 3", mp.log(3))
show("ln 7", mp.log(7))

# fermi-dirac probability at d^2 = r: 1/(e^0 + 1)
show("fd at d2=r", 1 / (mp.e ** 0 + 1))

# two-point gyromidpoint, 2-node graph, h = {x, -x}, x = (0.3, 0):
# adj_norm row = (1/2, 1/2); lambda_x = lambda_{-x} = 2/(1-0.09)
# numerator (1/2)(lam x + lam (-x)) = 0, so midpoint = origin
lam = 2 / (1 - mp.mpf("0.09"))
show("2-node midpoint num", (lam * mp.mpf("0.3") - lam * mp.mpf("0.3")) / 2)
