"""SDEs driven by the sum of two dependent fractional Brownian motions.

The package builds, on a uniform grid: Riemann-Liouville fractional
operators, the Volterra kernels of fractional Brownian motion, a seeded
sampler for a dependent fBm pair sharing one Wiener path, the case-by-case
drift decompositions that make the pair-driven SDE weakly solvable, the
Girsanov reweighting that certifies the construction, and reproducible
verification suites over all of it.
"""

from .frac_ops import (
    ChainError,
    FracDerivative,
    FracIntegral,
    Grid,
    GridFunction,
    HolderRegularityWarning,
    OperatorChain,
    PowerWeight,
    apply_chain,
    power_rule_value,
    power_weight,
    riemann_liouville_derivative,
    riemann_liouville_integral,
)

__version__ = "0.1.0"
