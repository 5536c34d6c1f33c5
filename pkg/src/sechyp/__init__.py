"""sechyp: finite-time certificates for singular-flow hyperbolicity.

Evaluates partial, singular, sectional, asymptotically sectional,
multisingular and nonuniform sectional expansion conditions on concrete
vector-field and suspension models, and estimates the associated
physical-measure statistics (Lyapunov spectra, Birkhoff averages,
invariant densities, entropy inequalities).
"""

__version__ = "0.1.0"
