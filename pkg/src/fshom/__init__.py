"""fshom: numerical homogenization of discrete-time fast-slow systems.

The package simulates intermittent interval maps, lifts orbit observables
to cadlag level-2 rough paths, solves the associated forward (Ito-type)
rough differential equations, estimates the drift and diffusion
coefficients of the limiting SDE, and statistically certifies the weak
convergence of the slow dynamics to that diffusion.

Layout:

    maps       intermittent map family, orbits, Birkhoff averages
    fastslow   the slow recursion and its grid-path representation
    roughpath  level-2 rough paths on the grid, p-variation, metrics
    rde        rough/Young integration and the forward RDE solver
    coeffs     limiting coefficients, PSD square root, Euler-Maruyama
    stats      KS distances, moment scaling, mean/covariance checks
    besov      continuous interpolants and Besov embedding checks
    cli        declarative experiment runner
"""

__version__ = "0.1.0"
