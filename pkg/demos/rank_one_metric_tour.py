"""Tour of the rank-one metric toolbox against its dense oracles.

The metric at a point is G = I + u u^T for a learned factor u, so every
operation the optimizer needs has a closed form:

    G^-1 x  = x - u (u.x) / (1 + u.u)      (Sherman-Morrison)
    det G   = 1 + u.u                      (matrix determinant lemma)
    x^T G y = x.y + (u.x)(u.y)

This script builds a handful of random points, runs the O(n) identities
next to dense numpy linear algebra, and then shows the band-limited
rotation trick: rotating a vector in frequency space shifts the phase of
the retained band and leaves the complement untouched.

Run:  python3 demos/rank_one_metric_tour.py
"""

import numpy as np

from rpg.fourier import build_fourier_pair, dense_rotation, rotate
from rpg.metric import (MetricPoint, bilinear_form, inverse_apply,
                        metric_det, metric_matrix)
from rpg.rng import RngStream


def closed_forms_vs_dense(rng, n=12, trials=5):
    print(f"closed forms vs dense linear algebra  (n={n}, {trials} trials)")
    print(f"{'trial':>5} {'inverse err':>12} {'det err':>12} {'form err':>12}")
    for t in range(trials):
        u = rng.normal(size=n)
        x = rng.normal(size=n)
        y = rng.normal(size=n)
        mp = MetricPoint(u)
        g = metric_matrix(mp)

        inv_err = np.max(np.abs(inverse_apply(mp, x) - np.linalg.solve(g, x)))
        det_err = abs(metric_det(mp) - np.linalg.det(g)) / np.linalg.det(g)
        form_err = abs(bilinear_form(mp, x, y) - x @ g @ y)
        print(f"{t:>5} {inv_err:>12.3e} {det_err:>12.3e} {form_err:>12.3e}")
    print()


def zero_factor_is_identity():
    # u = 0 must reproduce plain gradient descent bit for bit, not just
    # to rounding -- the whole point of the parameterization.
    x = RngStream(7).normal(size=6)
    out = inverse_apply(MetricPoint(np.zeros(6)), x)
    print("u = 0 passthrough exact:", np.array_equal(out, x))
    print()


def band_limited_rotation(rng, n=16, m_tilde=3):
    fp = build_fourier_pair(n, m_tilde)
    sigma = rng.uniform(-np.pi, np.pi, size=m_tilde)
    x = rng.normal(size=n)

    fast = rotate(fp, sigma, x)
    dense = dense_rotation(fp, sigma) @ x
    print(f"band-limited rotation  (n={n}, {m_tilde} retained frequencies)")
    print(f"  matrix-free vs dense:      {np.max(np.abs(fast - dense)):.3e}")

    # the retained cosine coefficients pick up the phase factor cos(sigma)
    coeffs = fp.omega.T @ x
    shifted = fp.omega.T @ fast
    print(f"  |coeff| before rotation:   {np.abs(coeffs)}")
    print(f"  |coeff| after rotation:    {np.abs(shifted)}")
    print(f"  |cos sigma| * |coeff|:     {np.abs(np.cos(sigma) * coeffs)}")

    # a vector with no energy in the retained band passes through untouched
    perp = x - fp.omega @ coeffs
    print(f"  out-of-band passthrough:   "
          f"{np.max(np.abs(rotate(fp, sigma, perp) - perp)):.3e}")
    print(f"  basis gram error:          {fp.gram_error:.3e}")


def main():
    rng = RngStream(2024)
    closed_forms_vs_dense(rng)
    zero_factor_is_identity()
    band_limited_rotation(rng)


if __name__ == "__main__":
    main()
