"""Randomized load balancing in heavy traffic.

Three numerical layers for the same system and a harness that compares them:

* :mod:`hydrobalance.des`: exact event-driven simulation of n servers fed by
  dedicated Poisson streams plus a JSQ(ell) load-balancing stream;
* :mod:`hydrobalance.pde`: the hydrodynamic limit in tail form, its closed-form
  stationary profile and macroscopic indices;
* :mod:`hydrobalance.mv`: reflected McKean-Vlasov particles.
"""

__version__ = "0.1.0"
