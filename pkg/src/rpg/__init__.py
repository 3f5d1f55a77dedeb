"""Rank-one Riemannian metric regularization for gradient-based optimization.

The package trains a small "metric network" that maps a policy parameter
vector to a rank-one metric field G = I + u u^T over parameter space, drives
the divergence of the metric-regularized gradient field toward zero, and
exposes geodesic-direction parameter updates — all verified against
brute-force differential-geometry oracles and exercised on in-repo toy
control problems.

Import layout:

    rpg.errors      the exception taxonomy
    rpg.linalg      dense oracles (inverse, det, SVD, matrix exponential)
    rpg.rng         counter-addressed deterministic random streams
    rpg.tape        reverse-mode autodiff over array-valued graphs
    rpg.fourier     truncated cosine/sine bases, scaling and rotation maps
    rpg.metric      the rank-one metric: det, inverse-apply, bilinear form
    rpg.fields      field evaluators and probe settings
    rpg.divergence  exact/estimated divergence, Hessian trace, ratio
    rpg.geodesic    geodesic update direction + Christoffel/ODE oracles
    rpg.metricnet   the metric network and its inner training loop
    rpg.envs        toy environments (LQR, point-mass, landscapes)
    rpg.policy      policies, REINFORCE estimator, replay buffer
    rpg.training    the outer training loop (baseline / J / T variants)
    rpg.runconfig   run-configuration parsing/validation
    rpg.reporting   CSV/JSON logs and SVG charts
    rpg.suites      the self-check suites behind `rpg verify`
    rpg.cli         `rpg verify | train | report`
"""

__version__ = "0.1.0"
