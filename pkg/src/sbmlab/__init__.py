"""Numerics for the local time of one-dimensional super-Brownian motion.

Modules: ``specfun`` (Airy and erfc-type special functions), ``stabledist``
(the spectrally positive 3/2-stable law), ``drift`` (drift fields and the
invariant law), ``sdeengine`` (SDE schemes), ``particles`` (branching
particle oracle), ``stats`` and ``cli``.
"""

__version__ = "0.1.0"
