"""Independent verification oracles: finite differences and Monte-Carlo
mutual information.  Used by the `verify` CLI suites and by the test suite;
none of these reuse the code paths they are checking."""

import numpy as np

from . import gmm, mdn
from .rng import RngStream


def finite_difference_grads(params: mdn.MdnParams, batch_x, batch_y,
                            h: float = 1e-5) -> dict:
    """Central-difference gradient of nll_loss for every parameter entry."""
    grads = {}
    for name, w in params.blocks():
        g = np.zeros_like(w)
        flat = w.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = mdn.nll_loss(params, batch_x, batch_y)
            flat[i] = orig - h
            down = mdn.nll_loss(params, batch_x, batch_y)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads[name] = g
    return grads


def gradient_relative_error(params: mdn.MdnParams, batch_x, batch_y,
                            h: float = 1e-5) -> float:
    """Max relative error of the analytic gradient against central differences."""
    analytic = mdn.grad_nll(params, batch_x, batch_y)
    numeric = finite_difference_grads(params, batch_x, batch_y, h)
    worst = 0.0
    for name in numeric:
        a = analytic[name].reshape(-1)
        f = numeric[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-6)
        worst = max(worst, float(np.max(np.abs(a - f) / denom)))
    return worst


def max_gradient_relative_error(stream: RngStream, n_draws: int = 10) -> float:
    """Worst-case gradient error over random small (architecture, batch) draws."""
    worst = 0.0
    for draw in range(n_draws):
        s = stream.split(draw)
        cfg = mdn.ModelConfig(
            in_dim=int(s.integers(1, 5)),
            out_dim=int(s.integers(1, 4)),
            hidden=int(s.integers(3, 9)),
            depth=int(s.integers(1, 3)),
            n_comp=int(s.integers(1, 4)),
        )
        params = mdn.init_params(cfg, s.split("init"))
        b = int(s.integers(1, 4))
        x = s.std_normal((b, cfg.in_dim))
        y = s.std_normal((b, cfg.out_dim))
        worst = max(worst, gradient_relative_error(params, x, y))
    return worst


def random_mixture(stream: RngStream, max_comp: int = 8, max_dim: int = 20,
                   mean_scale: float = 3.0) -> gmm.DiagGaussianMixture:
    """Random mixture: Dirichlet weights, Gaussian means, LogNormal variances."""
    k = int(stream.integers(1, max_comp + 1))
    n = int(stream.integers(1, max_dim + 1))
    return gmm.DiagGaussianMixture(
        stream.dirichlet(np.ones(k)),
        mean_scale * stream.std_normal((k, n)),
        np.exp(stream.std_normal((k, n))),
    )


def random_ensemble_prediction(stream: RngStream, max_members: int = 4,
                               max_comp: int = 3, max_dim: int = 4) -> gmm.EnsemblePrediction:
    z = int(stream.integers(1, max_members + 1))
    k = int(stream.integers(1, max_comp + 1))
    n = int(stream.integers(1, max_dim + 1))
    members = tuple(
        gmm.DiagGaussianMixture(
            stream.dirichlet(np.ones(k)),
            2.0 * stream.std_normal((k, n)),
            np.exp(stream.std_normal((k, n))),
        )
        for _ in range(z)
    )
    return gmm.EnsemblePrediction(members, stream.dirichlet(np.ones(z)))


def mc_mutual_information(pred: gmm.EnsemblePrediction, n_samples: int,
                          stream: RngStream):
    """MC estimate of I(Y; Z): marginal entropy minus weighted member entropies.

    Each entropy term uses an independent sample set; the combined standard
    error propagates the per-term errors.
    """
    marg_est, marg_se = gmm.entropy_mc(gmm.marginal_mixture(pred), n_samples,
                                       stream.split("marginal"))
    mi = marg_est
    var = marg_se**2
    for z, (wz, mix) in enumerate(zip(pred.member_weights, pred.member_mixtures)):
        est, se = gmm.entropy_mc(mix, n_samples, stream.split("member", z))
        mi -= wz * est
        var += (wz * se) ** 2
    return mi, float(np.sqrt(var))
