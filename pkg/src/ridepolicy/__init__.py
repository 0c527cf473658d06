"""Synthetic ride-market simulator and policy-evaluation toolkit.

The package is organised around a planar ride economy: ``simkit`` generates
trip and demand logs with known injected effects, ``panel`` aggregates them
to driver-week and zone-week tables, ``causal`` estimates treatment effects
(staggered adoption, border contrasts, cross-year matching), ``matchfn``
fits hourly production functions, ``realloc`` evaluates counterfactual
supply reallocations, and ``ineq`` summarises earnings concentration.
"""

__version__ = "0.1.0"
