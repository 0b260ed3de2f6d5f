"""Benchmark data-generating processes with oracle densities and pools.

Three systems, each with controllable multimodality:

* multimodal conditional: a 3-component Gaussian mixture over R^16 whose
  means and log-variances are random-Fourier-feature functions of an input
  on a 4-D tanh manifold in R^10, with a radial gate that switches between
  a unimodal interior and a multimodal exterior;
* coupled double-well: 5 particles under overdamped Langevin dynamics in a
  quartic double-well with nearest-neighbour coupling; the output stacks 4
  trajectory snapshots, and Kramers escape makes the conditional bimodal
  once the noise crosses sigma ~ sqrt(a/2);
* ternary phases: a softmin-over-quadratic-free-energies phase model on the
  3-simplex with a scalar per-phase Gaussian response.

System parameters are drawn once from dedicated seeds and held fixed, so
pools and labels vary with the run seed while the system does not.  Labels
are generated lazily: each pool index owns a child stream, making a label a
pure function of (run seed, index) regardless of acquisition order.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from . import gmm
from .rng import RngStream

# System parameters are drawn once from these seeds and held fixed.  The
# seed values are chosen so the realized statistics (multimodal oracle NLL,
# ternary oracle NLL, phase boundary fraction) match the reference settings;
# the raw seed integers themselves are PRNG-specific and carry no meaning.
MM_DIST_SEED = 12
MM_MANIFOLD_SEED = 1
TERNARY_SYSTEM_SEED = 3084

_LABEL_CHUNK = 2000


# ---------------------------------------------------------------------------
# Multimodal conditional system
# ---------------------------------------------------------------------------


@dataclass
class MultimodalSystem:
    manifold_a: np.ndarray  # (D, L)
    manifold_b: np.ndarray  # (D,)
    omega: np.ndarray  # (P, D)
    phases: np.ndarray  # (P,)
    mean_maps: np.ndarray  # (K, M, P)
    mean_offsets: np.ndarray  # (K, M)
    logvar_maps: np.ndarray  # (K, M, P)
    gate_dirs: np.ndarray  # (K-1, L) unit rows
    beta: float = 8.0
    r0: float = 1.3
    gamma: float = 2.0
    scale: float = 3.0

    @property
    def in_dim(self):
        return self.manifold_a.shape[0]

    @property
    def out_dim(self):
        return self.mean_maps.shape[1]

    @property
    def latent_dim(self):
        return self.manifold_a.shape[1]

    @property
    def n_true_components(self):
        return self.mean_maps.shape[0]


def make_multimodal_system(dist_seed: int = MM_DIST_SEED,
                           manifold_seed: int = MM_MANIFOLD_SEED,
                           in_dim: int = 10, out_dim: int = 16, latent_dim: int = 4,
                           n_components: int = 3, n_features: int = 128,
                           offset_scale: float = 10.0) -> MultimodalSystem:
    ms = RngStream(manifold_seed).split("mm_manifold")
    a = ms.std_normal((in_dim, latent_dim)) / np.sqrt(latent_dim)
    b = ms.std_normal(in_dim)

    ds = RngStream(dist_seed).split("mm_distribution")
    omega = ds.std_normal((n_features, in_dim)) / np.sqrt(in_dim)
    phases = ds.uniform(0.0, 2.0 * np.pi, n_features)
    mean_maps = ds.std_normal((n_components, out_dim, n_features)) / np.sqrt(n_features)
    mean_offsets = offset_scale * ds.std_normal((n_components, out_dim))
    logvar_maps = ds.std_normal((n_components, out_dim, n_features)) / np.sqrt(n_features)
    dirs = ds.std_normal((n_components - 1, latent_dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return MultimodalSystem(a, b, omega, phases, mean_maps, mean_offsets,
                            logvar_maps, dirs)


def mm_embed(sys: MultimodalSystem, latents) -> np.ndarray:
    """Map latent codes onto the tanh manifold in input space."""
    latents = np.atleast_2d(np.asarray(latents, dtype=float))
    return np.tanh(latents @ sys.manifold_a.T + sys.manifold_b)


def mm_sample_input(sys: MultimodalSystem, stream: RngStream, size: int | None = None):
    n = 1 if size is None else size
    x = mm_embed(sys, stream.std_normal((n, sys.latent_dim)))
    return x[0] if size is None else x


def mm_oracle_params(sys: MultimodalSystem, xs):
    """Oracle mixture parameters for a batch: (pi, means, variances)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    h = np.cos(xs @ sys.omega.T + sys.phases)  # (n, P)
    raw_means = np.einsum("kmp,np->nkm", sys.mean_maps, h) + sys.mean_offsets
    logvar = np.einsum("kmp,np->nkm", sys.logvar_maps, h)

    xl = xs[:, : sys.latent_dim]
    r = np.linalg.norm(xl, axis=1)
    gate = 0.5 * (1.0 + np.tanh(sys.beta * (r - sys.r0)))
    angular = softmax(sys.gamma * (xl @ sys.gate_dirs.T), axis=1)  # (n, K-1)
    logits = np.concatenate(
        [sys.scale * (1.0 - gate)[:, None], sys.scale * gate[:, None] * angular], axis=1
    )
    pi = softmax(logits, axis=1)

    # center so the mixture mean is exactly zero at every input
    mixture_mean = np.sum(pi[:, :, None] * raw_means, axis=1, keepdims=True)
    means = raw_means - mixture_mean
    variances = np.maximum(np.exp(logvar), gmm.VAR_FLOOR)
    return pi, means, variances


def mm_oracle_mixture(sys: MultimodalSystem, x) -> gmm.DiagGaussianMixture:
    pi, means, variances = mm_oracle_params(sys, np.asarray(x, dtype=float)[None, :])
    return gmm.DiagGaussianMixture(pi[0], means[0], variances[0])


def mm_oracle_nll(sys: MultimodalSystem, test_x, test_y) -> float:
    """Mean -log p*(y|x) over a test set."""
    pi, means, variances = mm_oracle_params(sys, test_x)
    lp = gmm.stacked_log_pdf(pi, means, variances, np.atleast_2d(test_y))
    return -float(np.mean(lp))


def _sample_stacked_rows(pi, means, variances, parent: RngStream, indices):
    """One draw per row from row-wise mixtures, each row on its own stream."""
    n, _, dim = means.shape
    out = np.empty((n, dim))
    for i in range(n):
        s = parent.split(int(indices[i]))
        k = int(s.categorical(pi[i]))
        out[i] = means[i, k] + np.sqrt(variances[i, k]) * s.std_normal(dim)
    return out


def mm_label(sys: MultimodalSystem, xs, parent: RngStream, indices) -> np.ndarray:
    pi, means, variances = mm_oracle_params(sys, xs)
    return _sample_stacked_rows(pi, means, variances, parent, indices)


# ---------------------------------------------------------------------------
# Coupled double-well system
# ---------------------------------------------------------------------------


@dataclass
class DoubleWellSystem:
    n_particles: int = 5
    barrier_a: float = 1.0
    dt: float = 0.005
    t_end: float = 5.0
    n_snapshots: int = 4
    q0_range: tuple = (-1.5, 1.5)
    sigma_range: tuple = (0.3, 2.0)
    kappa_range: tuple = (0.0, 3.0)

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))

    @property
    def in_dim(self):
        return self.n_particles + 2

    @property
    def out_dim(self):
        return self.n_snapshots * self.n_particles

    @property
    def snapshot_steps(self):
        steps = self.n_steps
        return [round(steps * (s + 1) / self.n_snapshots) for s in range(self.n_snapshots)]


def make_double_well_system(**kwargs) -> DoubleWellSystem:
    return DoubleWellSystem(**kwargs)


def dw_sample_input(sys: DoubleWellSystem, stream: RngStream, size: int | None = None):
    n = 1 if size is None else size
    q0 = stream.uniform(*sys.q0_range, (n, sys.n_particles))
    sigma = stream.uniform(*sys.sigma_range, (n, 1))
    kappa = stream.uniform(*sys.kappa_range, (n, 1))
    x = np.hstack([q0, sigma, kappa])
    return x[0] if size is None else x


def _neighbor_coupling(q):
    """Open-boundary nearest-neighbour term sum_nn (q_j - q_i), batched."""
    lap = np.zeros_like(q)
    lap[:, :-1] += q[:, 1:] - q[:, :-1]
    lap[:, 1:] += q[:, :-1] - q[:, 1:]
    return lap


def _integrate(sys: DoubleWellSystem, q0, sigma, kappa, noise):
    """Euler-Maruyama for a batch; noise has shape (B, n_steps, P)."""
    a, dt = sys.barrier_a, sys.dt
    sqdt = np.sqrt(dt)
    snap_at = set(sys.snapshot_steps)
    q = q0.copy()
    snaps = []
    for t in range(1, sys.n_steps + 1):
        drift = a * (q - q**3) + kappa * _neighbor_coupling(q)
        q = q + drift * dt + sigma * sqdt * noise[:, t - 1, :]
        if t in snap_at:
            snaps.append(q.copy())
    return np.concatenate(snaps, axis=1)  # (B, n_snap * P)


def dw_simulate(sys: DoubleWellSystem, x, stream: RngStream) -> np.ndarray:
    """Simulate one trajectory from x = (q(0), sigma, kappa)."""
    x = np.asarray(x, dtype=float)
    p = sys.n_particles
    if x[p] <= 0:
        raise ValueError("sigma must be positive")
    noise = stream.std_normal((1, sys.n_steps, p))
    out = _integrate(sys, x[None, :p], x[p], x[p + 1], noise)
    return out[0]


def dw_label(sys: DoubleWellSystem, xs, parent: RngStream, indices) -> np.ndarray:
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    p = sys.n_particles
    out = np.empty((xs.shape[0], sys.out_dim))
    for start in range(0, xs.shape[0], _LABEL_CHUNK):
        stop = min(start + _LABEL_CHUNK, xs.shape[0])
        chunk = xs[start:stop]
        noise = np.stack([
            parent.split(int(indices[i])).std_normal((sys.n_steps, p))
            for i in range(start, stop)
        ])
        out[start:stop] = _integrate(
            sys, chunk[:, :p], chunk[:, p : p + 1], chunk[:, p + 1 : p + 2], noise
        )
    return out


def double_well_potential(q, a: float = 1.0):
    return a * (q**4 / 4.0 - q**2 / 2.0)


def kramers_escape_fractions(sigmas, n_trajectories: int, stream: RngStream,
                             q0: float = -0.5, settle_radius: float = 0.9) -> dict:
    """Single uncoupled particle: well occupancy and escape rate per noise level.

    A trajectory's home well is the sign of q when |q| first reaches
    settle_radius; an escape (opposite-well transition) means ending in the
    other well.  Trajectories that slide directly into the far well during
    the initial transient therefore do not count as escapes; the raw
    terminal-sign fraction is reported alongside for reference.
    """
    sys = DoubleWellSystem(n_particles=1)
    a, dt = sys.barrier_a, sys.dt
    sqdt = np.sqrt(dt)
    out = {"sigmas": list(map(float, sigmas)), "opposite_well_fraction": [],
           "terminal_positive_fraction": [], "smaller_well_fraction": []}
    for j, sigma in enumerate(sigmas):
        s = stream.split("sigma", j)
        q = np.full(n_trajectories, float(q0))
        home = np.zeros(n_trajectories)
        for _ in range(sys.n_steps):
            q = q + a * (q - q**3) * dt + float(sigma) * sqdt * s.std_normal(n_trajectories)
            fresh = (home == 0) & (np.abs(q) >= settle_radius)
            home[fresh] = np.sign(q[fresh])
        frac_pos = float(np.mean(q > 0))
        escaped = (home != 0) & (np.sign(q) != home)
        out["opposite_well_fraction"].append(float(np.mean(escaped)))
        out["terminal_positive_fraction"].append(frac_pos)
        out["smaller_well_fraction"].append(min(frac_pos, 1.0 - frac_pos))
    return out


# ---------------------------------------------------------------------------
# Ternary phase-competition system
# ---------------------------------------------------------------------------


@dataclass
class TernarySystem:
    hessians: np.ndarray  # (F, 3, 3) positive definite
    energy_bias: np.ndarray  # (F, 3)
    mean_comp: np.ndarray  # (F, 3)
    mean_offset: np.ndarray  # (F,)
    mean_freq: np.ndarray  # (F, 3)
    proc_coupling: np.ndarray  # (F, n_proc)
    logvar_comp: np.ndarray  # (F, 3)
    logvar_offset: np.ndarray  # (F,)
    tau: float = 0.08

    @property
    def n_phases(self):
        return self.hessians.shape[0]

    @property
    def n_proc(self):
        return self.proc_coupling.shape[1]

    @property
    def in_dim(self):
        return 2 + self.n_proc

    @property
    def out_dim(self):
        return 1


def make_ternary_system(system_seed: int = TERNARY_SYSTEM_SEED, n_phases: int = 4,
                        n_proc: int = 6, tau: float = 0.08) -> TernarySystem:
    s = RngStream(system_seed).split("ternary_system")
    raw = 0.5 * s.std_normal((n_phases, 3, 3))
    hessians = raw @ raw.transpose(0, 2, 1) + 0.3 * np.eye(3)
    energy_bias = 2.0 * s.std_normal((n_phases, 3))
    mean_comp = 6.0 * s.std_normal((n_phases, 3))
    mean_offset = 2.0 * s.std_normal(n_phases)
    mean_freq = 2.0 * s.std_normal((n_phases, 3))
    proc_coupling = s.std_normal((n_phases, n_proc))
    logvar_comp = 0.5 * s.std_normal((n_phases, 3))
    logvar_offset = -1.0 + 0.3 * s.std_normal(n_phases)
    return TernarySystem(hessians, energy_bias, mean_comp, mean_offset, mean_freq,
                         proc_coupling, logvar_comp, logvar_offset, tau)


def ternary_sample_input(sys: TernarySystem, stream: RngStream, size: int | None = None):
    n = 1 if size is None else size
    g = stream.gen.standard_gamma(1.0, (n, 3))
    comp = g / g.sum(axis=1, keepdims=True)
    proc = stream.uniform(-1.0, 1.0, (n, sys.n_proc))
    x = np.hstack([comp[:, :2], proc])
    return x[0] if size is None else x


def _full_composition(xs):
    comp = xs[:, :2]
    return np.concatenate([comp, 1.0 - comp.sum(axis=1, keepdims=True)], axis=1)


def ternary_phase_weights(sys: TernarySystem, x3) -> np.ndarray:
    """Softmin phase posterior over the quadratic free energies, (n, F)."""
    x3 = np.atleast_2d(np.asarray(x3, dtype=float))
    quad = 0.5 * np.einsum("ni,fij,nj->nf", x3, sys.hessians, x3)
    energies = quad + x3 @ sys.energy_bias.T
    return softmax(-energies / sys.tau, axis=1)


def ternary_oracle_params(sys: TernarySystem, xs):
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    x3 = _full_composition(xs)
    proc = xs[:, 2:]
    pi = ternary_phase_weights(sys, x3)
    means = (
        x3 @ sys.mean_comp.T
        + sys.mean_offset
        + 0.5 * np.sin(x3 @ sys.mean_freq.T)
        + proc @ sys.proc_coupling.T
    )  # (n, F)
    variances = np.maximum(np.exp(x3 @ sys.logvar_comp.T + sys.logvar_offset),
                           gmm.VAR_FLOOR)
    return pi, means[:, :, None], variances[:, :, None]


def ternary_oracle_mixture(sys: TernarySystem, x) -> gmm.DiagGaussianMixture:
    pi, means, variances = ternary_oracle_params(sys, np.asarray(x, dtype=float)[None, :])
    return gmm.DiagGaussianMixture(pi[0], means[0], variances[0])


def ternary_oracle_nll(sys: TernarySystem, test_x, test_y) -> float:
    pi, means, variances = ternary_oracle_params(sys, test_x)
    lp = gmm.stacked_log_pdf(pi, means, variances, np.atleast_2d(test_y))
    return -float(np.mean(lp))


def ternary_label(sys: TernarySystem, xs, parent: RngStream, indices) -> np.ndarray:
    pi, means, variances = ternary_oracle_params(sys, xs)
    return _sample_stacked_rows(pi, means, variances, parent, indices)


def simplex_grid(divisions: int = 200) -> np.ndarray:
    """Uniform barycentric grid on the 3-simplex, (n, 3) with n=(d+1)(d+2)/2."""
    pts = []
    for i in range(divisions + 1):
        for j in range(divisions + 1 - i):
            pts.append((i, j, divisions - i - j))
    return np.asarray(pts, dtype=float) / divisions


def ternary_boundary_fraction(sys: TernarySystem, divisions: int = 200,
                              threshold: float = 0.7) -> float:
    """Fraction of the simplex grid where no phase dominates."""
    grid = simplex_grid(divisions)
    pi = ternary_phase_weights(sys, grid)
    return float(np.mean(pi.max(axis=1) < threshold))


def ternary_phase_masses(sys: TernarySystem, divisions: int = 200) -> np.ndarray:
    grid = simplex_grid(divisions)
    pi = ternary_phase_weights(sys, grid)
    return np.sort(pi.mean(axis=0))[::-1]


# ---------------------------------------------------------------------------
# Pools
# ---------------------------------------------------------------------------


_SYSTEM_OPS = {
    MultimodalSystem: (mm_sample_input, mm_label),
    DoubleWellSystem: (dw_sample_input, dw_label),
    TernarySystem: (ternary_sample_input, ternary_label),
}


def sample_input(system, stream: RngStream, size: int | None = None):
    return _SYSTEM_OPS[type(system)][0](system, stream, size)


def label(system, xs, parent: RngStream, indices) -> np.ndarray:
    return _SYSTEM_OPS[type(system)][1](system, xs, parent, indices)


@dataclass
class LabeledPool:
    """Candidate inputs with a growing labeled subset and a held-out test set."""

    system: object
    inputs: np.ndarray
    labeled: np.ndarray
    labels: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    label_parent: RngStream

    @property
    def n_labeled(self):
        return self.labeled.shape[0]

    def unlabeled_mask(self) -> np.ndarray:
        mask = np.ones(self.inputs.shape[0], dtype=bool)
        mask[self.labeled] = False
        return mask

    def acquire(self, indices) -> np.ndarray:
        """Label the requested pool indices via the simulator and append them."""
        indices = np.asarray(indices, dtype=int)
        if np.intersect1d(indices, self.labeled).size:
            raise ValueError("attempted to label an already-labeled index")
        new_y = label(self.system, self.inputs[indices], self.label_parent, indices)
        self.labeled = np.concatenate([self.labeled, indices])
        self.labels = np.concatenate([self.labels, new_y], axis=0)
        return new_y

    def training_data(self):
        return self.inputs[self.labeled], self.labels


def make_pool(system, pool_size: int, test_size: int, init_size: int,
              stream: RngStream) -> LabeledPool:
    """Sample a pool and test set; label the initial subset and the test set."""
    if min(pool_size, test_size, init_size) <= 0 or init_size > pool_size:
        raise ValueError("sizes must be positive with init_size <= pool_size")
    inputs = sample_input(system, stream.split("pool_inputs"), pool_size)
    test_x = sample_input(system, stream.split("test_inputs"), test_size)
    label_parent = stream.split("pool_labels")
    init_idx = np.arange(init_size)
    init_y = label(system, inputs[init_idx], label_parent, init_idx)
    test_y = label(system, test_x, stream.split("test_labels"), np.arange(test_size))
    return LabeledPool(system, inputs, init_idx, init_y, test_x, test_y, label_parent)
