"""Smoke test for the `lumen` extension module.

Run after building the extension (see the README):

    python crates/python/python/smoke_test.py
"""

import json
import math

import lumen


def close(a, b, tol):
    assert abs(a - b) <= tol, (a, b)


def main():
    # Phase functions.
    close(lumen.hg_pdf_mu(0.0, 0.3), 0.5, 1e-15)
    close(lumen.hg_pdf_mu(0.5, 1.0), 3.0, 1e-12)
    close(lumen.hg_pdf_theta(0.0, math.pi / 2), 0.5, 1e-15)
    close(lumen.sample_hg(0.5, 0.5), 0.6875, 1e-15)
    close(lumen.anisotropy_of(g=0.8), 0.8, 1e-4)
    try:
        lumen.hg_pdf_mu(1.0, 0.0)
    except ValueError:
        pass
    else:
        raise AssertionError("|g| >= 1 accepted")

    # Estimator interface: decode, score, serialize.
    grid = lumen.theta_grid()
    assert len(grid) == lumen.GRID_POINTS
    target = lumen.hg_target(0.8)
    close(sum(target) * math.pi / len(target), 1.0, 1e-9)
    params = lumen.decode_output([0.7, 0.3, 0.1, 0.5, 0.05, 0.4], 2)
    assert params.k == 2
    close(sum(params.weights), 1.0, 1e-12)
    mse = lumen.grid_mse(params.pdf(), target)
    assert mse > 0.0
    wire = json.loads(params.to_json())
    assert set(wire) == {"K", "pi", "m", "sigma"}
    assert lumen.GmmParams.from_json(params.to_json()) == params
    close(params.g_hat(), lumen.mean_cosine(params.pdf()), 1e-12)

    # Direct fit.
    fit = lumen.fit_gmm(g=0.6, k=4, restarts=2)
    assert fit["mse"] < 1e-2, fit
    assert isinstance(fit["params"], lumen.GmmParams)

    # Simulation.
    img = lumen.simulate(1.0, 20.0, 0.8, n_r=20, n_photons=20_000, seed=3)
    assert img.side == 39
    t = img.tallies
    total = t["specular_reflectance"] + t["total_diffuse"] + t["absorbed"] + t["transmitted"]
    close(total, 1.0, 1e-3)
    profile = img.center_profile()
    assert len(profile) == 39 and max(profile) == profile[19]
    assert lumen.center_profile(img.pixels, img.side) == profile
    again = lumen.simulate(1.0, 20.0, 0.8, n_r=20, n_photons=20_000, seed=3, gmm=fit["params"])
    assert again.side == 39

    # Dataset tables.
    tissues = lumen.tissue_table()
    assert len(tissues) == 11 and tissues[0]["name"] == "Adipose"
    close(lumen.mus_from(9.639, 0.8), 48.195, 1e-9)
    plan = lumen.plan_dataset("DS2")
    assert len(plan) == 8800 + 1760
    assert lumen.dataset_spec("DS4")["image_side"] == 399

    # Analysis.
    rdm = lumen.compute_rdm([[0.0, 0.0], [3.0, 4.0]])
    assert rdm == [[0.0, 5.0], [5.0, 0.0]]
    close(lumen.rank_sum_test([1, 2, 3], [4, 5, 6]), 0.1, 1e-12)
    raster = lumen.render_gamma([0.0, 0.25, 1.0])
    assert raster == bytes([0, 128, 255])

    print("lumen smoke test passed")


if __name__ == "__main__":
    main()
