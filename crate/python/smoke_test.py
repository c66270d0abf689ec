#!/usr/bin/env python3
"""Smoke test for the `_bscaling` extension module.

Builds are produced by `cargo build -p bscaling-py` (optionally --release);
this script locates the compiled cdylib, exposes it as an importable module,
and exercises the main entry points end to end.
"""

import math
import os
import shutil
import sys
import tempfile

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def locate_extension():
    candidates = [
        os.path.join(REPO, "target", profile, name)
        for profile in ("release", "debug")
        for name in ("lib_bscaling.so", "_bscaling.so", "lib_bscaling.dylib")
    ]
    for path in candidates:
        if os.path.exists(path):
            return path
    sys.exit(
        "extension not found; build it first:\n"
        "  cargo build -p bscaling-py --release"
    )


def main():
    src = locate_extension()
    staging = tempfile.mkdtemp(prefix="bscaling_py_")
    shutil.copy(src, os.path.join(staging, "_bscaling.so"))
    sys.path.insert(0, staging)

    import numpy as np
    import _bscaling as bs

    # Synthetic data from the built-in generator.
    y, data = bs.simulate(800, 5, latent="uniform", family="logit", seed=11)
    assert y.shape == (800,)
    assert data.shape == (800, 5)

    model = bs.fit(data, k0=6, order=4)
    print("fitted:", repr(model))
    assert model.d_min >= 0.0
    assert abs(model.d_min - 5 * model.b_variance) < 1e-8, "objective identity"

    fused = model.predict(data)
    assert fused.shape == (800,)
    var = float(np.var(fused))  # numpy uses the n divisor by default
    assert abs(var - 1.0) < 1e-6, f"in-sample variance {var}"

    corr = abs(float(np.corrcoef(fused, y)[0, 1]))
    print(f"|corr(fused, latent)| = {corr:.4f}")
    assert corr > 0.85, "fusion should track the latent closely"

    transforms = model.transforms(data)
    assert transforms.shape == (800, 5)
    assert np.allclose(transforms.mean(axis=1), fused)

    per_row, aggregate = model.b_variance_rows(data)
    assert per_row.shape == (800,)
    assert abs(aggregate - model.b_variance) < 1e-12

    # Baselines: the fused representation should beat PC_max and MDS here.
    scores, loadings, variances = bs.pca_scores(data)
    pc = bs.pc_max_corr(scores, y)
    mds = bs.mds_embed_1d(data)
    mds_corr = abs(float(np.corrcoef(mds, y)[0, 1]))
    rho_max, rho_bar0 = bs.corr_summary(data, y)
    print(f"pc_max = {pc:.4f}, mds = {mds_corr:.4f}, rho_max = {rho_max:.4f}")
    assert corr > pc and corr > mds_corr

    # Knot selection over a grid.
    best, table = bs.select_knots(data, [4, 6, 8])
    assert best in (4, 6, 8)
    assert len(table) == 3

    # JSON round trip preserves predictions bit for bit.
    clone = bs.Model.from_json(model.to_json())
    assert np.array_equal(clone.predict(data), fused)

    # Prediction interval at a training row.
    mu, sigma, lower, upper = model.prediction_interval(data, list(data[3]), level=0.95)
    assert lower <= mu <= upper
    assert sigma >= 0.0
    width = upper - lower
    assert math.isfinite(width) and width > 0.0
    print(f"CI at row 3: {mu:.4f} [{lower:.4f}, {upper:.4f}]")

    # Regression diagnostic: log-response linear in the latent.
    g = np.exp(1.5 + 2.0 * y)
    a0, a1, r2, adj = bs.adjusted_r2(y, g, log_response=True)
    assert abs(a0 - 1.5) < 1e-8 and abs(a1 - 2.0) < 1e-8 and adj > 0.999

    print("smoke test passed")


if __name__ == "__main__":
    main()
