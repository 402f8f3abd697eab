"""Numerical toolkit for ultrahyperbolic Schrodinger flows.

Modules
-------
grid_core         periodic grids, fields, cutoff profiles
littlewood_paley  dyadic projections, paraproducts, X/Y-type norms, envelopes
hamilton_flow     bicharacteristic rays and nontrapping diagnostics
psdo              symbols, Kohn-Nirenberg quantization, operator-norm probes
renorm_symbols    the renormalization symbol O and the escape symbol q
solver            linear, paradifferential and quasilinear time stepping
acceptance        the acceptance criteria as callable checks
cli               scenario-driven command line runner
"""

__version__ = "0.1.0"
