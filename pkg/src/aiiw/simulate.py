"""Synthetic-trial generation, projection ground truth, and the study harness.

Data generation never involves the sensitivity parameter: assessment times
come from the observed-history intensity via Ogata thinning and outcomes at
assessments from the NB regression.  alpha enters only through the estimand,
as the tilted conditional mean inside the truth projection.

Outcome draws are truncated at ``DgmSpec.outcome_cap``.  With unbounded NB
outcomes feeding back into the conditional mean, mu crosses the tilt
divergence boundary mu (e^alpha - 1) >= r with positive probability, so the
exact tilted estimand would be infinite for every alpha > 0.  A generous cap
(default 50, far out in the NB tail) bounds the support, makes every tilted
estimand exist, and perturbs the data law only on events of order 1e-10.
The truth path therefore tilts the capped law exactly; the analysis model
stays plain NB.

Two simulation paths share the same DGM: a scalar per-subject path keyed by
(seed, subject index) that matches the operation contracts literally, and an
iteration-major batch path keyed by (seed, rep, purpose) used by the truth
and study drivers.  The two paths draw different streams by design; each is
individually deterministic and the batch path is what the study reports.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from scipy.special import gammaln

from .errors import (ConfigError, DataError, EnvelopeViolationError,
                     InferenceError, MonotoneLikelihoodError, NumericError)
from .estimator import run_sensitivity
from .records import SubjectRecord
from .splines import SplineSpec, basis_matrix, grid_cells, gram_matrix

_SUBJECT_TAG = 7       # scalar path: (tag, seed, subject index)
_BATCH_TAG = 11        # batch path: (tag, seed, rep, purpose)
_STUDY_TAG = 13        # per-rep analysis seeds
_TRUTH_TAG = 17
_ENVELOPE_INFLATION = 1.05

_PURPOSE_BASELINE = 0
_PURPOSE_TIMES = 1
_PURPOSE_OUTCOMES = 2


# ---------------------------------------------------------------------------
# DGM specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PiecewiseConstant:
    """Rate function: values[i] on [edges[i], edges[i+1]), zero outside."""

    edges: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.edges) != len(self.values) + 1:
            raise ConfigError("need len(edges) == len(values) + 1")
        e = np.asarray(self.edges, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if np.any(np.diff(e) <= 0):
            raise ConfigError("rate edges must be strictly increasing")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ConfigError("rate values must be finite and nonnegative")

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        e = np.asarray(self.edges)
        v = np.concatenate([[0.0], np.asarray(self.values), [0.0]])
        out = v[np.searchsorted(e, t_arr, side="right")]
        return float(out) if t_arr.ndim == 0 else out

    def grid_max(self, tau: float, step: float = 0.1) -> float:
        """Supremum over [0, tau] by grid evaluation (plus the edges)."""
        grid = np.concatenate([np.arange(0.0, tau, step), [tau],
                               np.asarray(self.edges, dtype=float)])
        grid = grid[(grid >= 0) & (grid <= tau)]
        return float(self(grid).max())


@dataclass(frozen=True)
class DgmSpec:
    """Generating mechanism: baseline draw, stratified intensity, NB outcome."""

    baseline_values: tuple[float, ...]
    rates: tuple[PiecewiseConstant, ...]       # one per stratum 1..n_strata
    gamma: float
    theta: tuple[float, float, float, float]   # (1, t, t_prev, y_prev)
    dispersion: float
    tau: float
    n_strata: int
    outcome_cap: int = 50
    alpha_true: float = 0.0
    baseline_probs: tuple[float, ...] | None = None
    _sup_rates: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(self.rates) != self.n_strata:
            raise ConfigError(f"need {self.n_strata} per-stratum rates, "
                              f"got {len(self.rates)}")
        if not self.baseline_values:
            raise ConfigError("baseline outcome support is empty")
        if self.baseline_probs is not None:
            p = np.asarray(self.baseline_probs, dtype=float)
            if p.size != len(self.baseline_values) or np.any(p < 0) \
                    or abs(p.sum() - 1.0) > 1e-12:
                raise ConfigError("baseline probabilities must match the "
                                  "support and sum to one")
        if not (self.dispersion > 0 and self.tau > 0 and self.n_strata >= 1):
            raise ConfigError("dispersion, tau, n_strata must be positive")
        if self.outcome_cap < max(self.baseline_values):
            raise ConfigError("outcome_cap below the baseline support")

    def sup_rate(self, stratum_k: int) -> float:
        """Cached grid supremum of the stratum's baseline rate on [0, tau]."""
        if stratum_k not in self._sup_rates:
            self._sup_rates[stratum_k] = \
                self.rates[stratum_k - 1].grid_max(self.tau)
        return self._sup_rates[stratum_k]

    def envelope(self, stratum_k: int, y_prev: float) -> float:
        return (self.sup_rate(stratum_k) * math.exp(self.gamma * y_prev)
                * _ENVELOPE_INFLATION)

    def nb_mean(self, t, t_prev, y_prev):
        th = self.theta
        return np.exp(th[0] + th[1] * np.asarray(t, dtype=float)
                      + th[2] * np.asarray(t_prev, dtype=float)
                      + th[3] * np.asarray(y_prev, dtype=float))


def subject_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for one subject of the scalar path."""
    ss = np.random.SeedSequence([_SUBJECT_TAG, int(seed), int(index)])
    return np.random.Generator(np.random.Philox(ss))


def _batch_rng(seed: int, rep: int, purpose: int) -> np.random.Generator:
    ss = np.random.SeedSequence([_BATCH_TAG, int(seed), int(rep), int(purpose)])
    return np.random.Generator(np.random.Philox(ss))


def _derived_seed(tag: int, seed: int, index: int) -> int:
    state = np.random.SeedSequence([tag, int(seed), int(index)]).generate_state(
        1, dtype=np.uint64)
    return int(state[0])


def default_truth_seed(seed: int) -> int:
    """Stream id truth runs derive from a config seed (shared by the CLI
    and run_study so both compute the same truth)."""
    return _derived_seed(_TRUTH_TAG, seed, 0)


# ---------------------------------------------------------------------------
# scalar path
# ---------------------------------------------------------------------------

def ogata_next_time(dgm: DgmSpec, stratum_k: int, y_prev: float,
                    t_start: float, tau: float,
                    rng: np.random.Generator) -> float | None:
    """First accepted assessment time after t_start, or None past tau."""
    lam_star = dgm.envelope(stratum_k, y_prev)
    if lam_star <= 0.0:
        return None
    rate = dgm.rates[stratum_k - 1]
    scale = math.exp(dgm.gamma * y_prev)
    t = float(t_start)
    while True:
        t += rng.exponential(1.0 / lam_star)
        if t > tau:
            return None
        ratio = rate(t) * scale / lam_star
        if ratio > 1.0:
            raise EnvelopeViolationError(
                f"thinning acceptance ratio {ratio:.6g} > 1 at t={t:.3f}, "
                f"stratum {stratum_k}: envelope too small")
        if rng.uniform() < ratio:
            return t


def simulate_subject(dgm: DgmSpec, rng: np.random.Generator,
                     subject_id: str = "sim", arm: str = "control",
                     ) -> SubjectRecord:
    """Baseline draw, then alternate thinning and NB outcome draws."""
    probs = dgm.baseline_probs
    baseline = float(rng.choice(np.asarray(dgm.baseline_values, dtype=float),
                                p=probs))
    t_prev, y_prev = 0.0, baseline
    times: list[float] = []
    outcomes: list[float] = []
    for k in range(1, dgm.n_strata + 1):
        t = ogata_next_time(dgm, k, y_prev, t_prev, dgm.tau, rng)
        if t is None:
            break
        mu = float(dgm.nb_mean(t, t_prev, y_prev))
        r = dgm.dispersion
        y = float(min(rng.negative_binomial(r, r / (r + mu)), dgm.outcome_cap))
        times.append(t)
        outcomes.append(y)
        t_prev, y_prev = t, y
    return SubjectRecord(subject_id, arm, baseline, tuple(times),
                         tuple(outcomes))


def simulate_trial(dgm: DgmSpec, n: int, seed: int, arm: str = "control",
                   start_index: int = 0) -> list[SubjectRecord]:
    """n subjects with order-independent per-subject streams."""
    return [simulate_subject(dgm, subject_rng(seed, start_index + i),
                             subject_id=f"{arm}-{start_index + i:06d}",
                             arm=arm)
            for i in range(n)]


# ---------------------------------------------------------------------------
# batch path
# ---------------------------------------------------------------------------

def simulate_batch(dgm: DgmSpec, m: int, seed: int, rep: int):
    """Vectorized simulation of m subjects; iteration-major column draws.

    Returns (baseline, times, outcomes, counts) with times/outcomes padded
    to (m, n_strata); padding times are +inf.
    """
    rng_base = _batch_rng(seed, rep, _PURPOSE_BASELINE)
    rng_time = _batch_rng(seed, rep, _PURPOSE_TIMES)
    rng_out = _batch_rng(seed, rep, _PURPOSE_OUTCOMES)

    support = np.asarray(dgm.baseline_values, dtype=float)
    baseline = rng_base.choice(support, size=m, p=dgm.baseline_probs)

    times = np.full((m, dgm.n_strata), np.inf)
    outcomes = np.zeros((m, dgm.n_strata))
    t_prev = np.zeros(m)
    y_prev = baseline.copy()
    alive = np.ones(m, dtype=bool)

    for k in range(1, dgm.n_strata + 1):
        rate = dgm.rates[k - 1]
        sup_k = dgm.sup_rate(k)
        lam_star = sup_k * np.exp(dgm.gamma * y_prev) * _ENVELOPE_INFLATION
        t_cand = t_prev.copy()
        pending = alive & (lam_star > 0)
        accepted = np.zeros(m, dtype=bool)
        while pending.any():
            # full-column draws keep the stream layout data-independent
            gaps = rng_time.exponential(1.0, size=m)
            unif = rng_time.uniform(size=m)
            with np.errstate(divide="ignore"):
                t_cand = np.where(pending, t_cand + gaps / lam_star, t_cand)
            past = pending & (t_cand > dgm.tau)
            pending &= ~past
            ratio = np.where(pending,
                             rate(t_cand) * np.exp(dgm.gamma * y_prev)
                             / np.where(lam_star > 0, lam_star, 1.0), 0.0)
            if np.any(ratio > 1.0):
                bad = int(np.argmax(ratio))
                raise EnvelopeViolationError(
                    f"thinning acceptance ratio {ratio[bad]:.6g} > 1 at "
                    f"t={t_cand[bad]:.3f}, stratum {k}: envelope too small")
            take = pending & (unif < ratio)
            accepted |= take
            pending &= ~take

        r = dgm.dispersion
        mu = dgm.nb_mean(np.where(accepted, t_cand, 0.0), t_prev, y_prev)
        y_draw = rng_out.negative_binomial(r, r / (r + np.where(accepted, mu,
                                                                1.0)))
        y_draw = np.minimum(y_draw, dgm.outcome_cap)
        times[accepted, k - 1] = t_cand[accepted]
        outcomes[accepted, k - 1] = y_draw[accepted]
        t_prev = np.where(accepted, t_cand, t_prev)
        y_prev = np.where(accepted, y_draw, y_prev)
        alive = accepted

    counts = np.isfinite(times).sum(axis=1)
    return baseline, times, outcomes, counts


def batch_to_records(baseline, times, outcomes, counts, arm: str = "control",
                     start_index: int = 0) -> list[SubjectRecord]:
    subs = []
    for i in range(baseline.size):
        k = int(counts[i])
        subs.append(SubjectRecord(f"{arm}-{start_index + i:06d}", arm,
                                  float(baseline[i]),
                                  tuple(times[i, :k]),
                                  tuple(outcomes[i, :k])))
    return subs


# ---------------------------------------------------------------------------
# projection truth
# ---------------------------------------------------------------------------

def capped_tilt_mean(mu, r: float, alpha: float, cap: int) -> np.ndarray:
    """Tilted mean of NB(mu, r) truncated to {0..cap}; exact finite sum.

    The truncation normalizer cancels between numerator and denominator, so
    this is the conditional mean of the capped outcome law under tilting by
    e^{alpha y}.  Finite for every alpha.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    y = np.arange(cap + 1, dtype=float)
    logw = (gammaln(y + r) - gammaln(y + 1) + alpha * y)[None, :] \
        + y[None, :] * np.log(mu / (r + mu))[:, None] \
        + r * np.log(r / (r + mu))[:, None]
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    return (w @ y) / w.sum(axis=1)


def _capped_tilt_table(r: float, alpha: float, mu_lo: float, mu_hi: float,
                       cap: int, n_nodes: int = 2048):
    """Cubic interpolant of the capped tilted mean over log mu."""
    from scipy.interpolate import CubicSpline
    lo = math.log(mu_lo) - 1e-9
    hi = math.log(mu_hi) + 1e-9
    if hi - lo < 1e-6:
        lo, hi = lo - 5e-7, hi + 5e-7
    nodes = np.linspace(lo, hi, n_nodes)
    return CubicSpline(nodes, capped_tilt_mean(np.exp(nodes), r, alpha, cap))


@dataclass(frozen=True)
class TruthResult:
    alpha: float
    gamma_proj: np.ndarray
    true_mu: np.ndarray            # at target times
    targets: np.ndarray
    grid_times: np.ndarray
    grid_means: np.ndarray         # Monte Carlo E[Y(t)] on the lattice
    n_subjects: int
    residual: float                # ||V gamma - rhs||_inf after the solve


def _grid_history_features(baseline, times, outcomes, mids):
    """(prev_t, prev_y) for each subject at each lattice midpoint."""
    count = (times[:, :, None] < mids[None, None, :]).sum(axis=1)
    last = np.maximum(count - 1, 0)
    prev_y = np.take_along_axis(outcomes, last, axis=1)
    prev_t = np.take_along_axis(np.where(np.isinf(times), 0.0, times),
                                last, axis=1)
    prev_y = np.where(count > 0, prev_y, baseline[:, None])
    prev_t = np.where(count > 0, prev_t, 0.0)
    return prev_t, prev_y


def compute_truth_multi(dgm: DgmSpec, alphas: Sequence, n_subjects: int,
                        spec: SplineSpec, seed: int,
                        batch_size: int = 20_000) -> list[TruthResult]:
    """Projection truth for several alphas from one simulation pass.

    E[Y(t)] is the Monte Carlo average over subjects of the tilted capped
    conditional mean given each subject's simulated history; gamma solves
    the least-squares normal equations against the basis on the lattice.
    """
    alphas = [float(a) for a in alphas]
    mids, widths = grid_cells(spec)
    basis = basis_matrix(spec, mids)
    gram = gram_matrix(spec)
    sums = {a: np.zeros(mids.size) for a in alphas}
    theta, r = dgm.theta, dgm.dispersion

    done = 0
    rep = 0
    while done < n_subjects:
        m = min(batch_size, n_subjects - done)
        baseline, times, outcomes, _ = simulate_batch(dgm, m, seed, rep)
        prev_t, prev_y = _grid_history_features(baseline, times, outcomes,
                                                mids)
        mu = np.exp(theta[0] + theta[1] * mids[None, :] + theta[2] * prev_t
                    + theta[3] * prev_y)
        log_mu = np.log(mu)
        for a in alphas:
            table = _capped_tilt_table(r, a, float(mu.min()),
                                       float(mu.max()), dgm.outcome_cap)
            sums[a] += table(log_mu).sum(axis=0)
        done += m
        rep += 1

    out = []
    empty = np.array([], dtype=float)
    for a in alphas:
        grid_means = sums[a] / n_subjects
        rhs = basis.T @ (grid_means * widths)
        gamma = np.linalg.solve(gram, rhs)
        residual = float(np.max(np.abs(gram @ gamma - rhs)))
        out.append(TruthResult(a, gamma, empty, empty, mids, grid_means,
                               n_subjects, residual))
    return out


def compute_truth(dgm: DgmSpec, alpha: float, n_subjects: int,
                  spec: SplineSpec, seed: int, targets=(),
                  batch_size: int = 20_000) -> TruthResult:
    """Single-alpha wrapper; evaluates the projected curve at targets."""
    res = compute_truth_multi(dgm, [alpha], n_subjects, spec, seed,
                              batch_size)[0]
    return with_targets(res, targets, spec)


def with_targets(res: TruthResult, targets, spec: SplineSpec) -> TruthResult:
    targets = np.asarray(targets, dtype=float)
    mu = (basis_matrix(spec, targets) @ res.gamma_proj if targets.size
          else np.array([]))
    return TruthResult(res.alpha, res.gamma_proj, mu, targets,
                       res.grid_times, res.grid_means, res.n_subjects,
                       res.residual)


# ---------------------------------------------------------------------------
# study harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StudyResult:
    rows: list[dict]               # one per (alpha, target)
    truths: dict[float, TruthResult]
    n_reps: int
    failures: dict[str, int]       # per-alpha rep failure counts
    fail_budget: float


def run_study(dgm: DgmSpec, spec: SplineSpec, *, alphas, targets,
              n_per_rep: int, reps: int, n_boot: int, seed: int,
              bandwidth: float, kernel: str = "epanechnikov",
              floor: float = 1e-4, workers: int = 1,
              corruption: str | None = None, truth_n: int = 1_000_000,
              truths: dict | None = None, fail_budget: float = 0.02,
              arm: str = "control", boot_tilt_table: bool = True,
              ) -> StudyResult:
    """Bias / coverage study: simulate, analyze at each alpha, compare to truth.

    ``corruption`` of "intensity" fixes the fitted log-slope at the DGM's
    gamma + 0.5; "outcome" fixes the regression at the DGM's coefficients
    with the intercept shifted by +0.5.  Per-rep failures (nuisance
    divergence, tilt overflow, bootstrap budget) are recorded per alpha and
    tolerated up to ``fail_budget``.
    """
    if corruption not in (None, "intensity", "outcome"):
        raise ConfigError(f"unknown corruption mode {corruption!r}")
    alphas = [float(a) for a in alphas]
    targets = [float(t) for t in targets]

    if truths is None:
        truths = {res.alpha: with_targets(res, targets, spec)
                  for res in compute_truth_multi(dgm, alphas, truth_n, spec,
                                                 default_truth_seed(seed))}
    else:
        truths = {float(a): with_targets(r, targets, spec)
                  for a, r in truths.items()}

    gamma_override = (np.array([dgm.gamma + 0.5])
                      if corruption == "intensity" else None)
    outcome_override = None
    if corruption == "outcome":
        theta = np.asarray(dgm.theta, dtype=float).copy()
        theta[0] += 0.5
        outcome_override = (theta, dgm.dispersion)

    mu_hat = {a: {t: [] for t in targets} for a in alphas}
    covers = {a: {t: {"boot_t": [], "percentile": [], "wald": []}
                  for t in targets} for a in alphas}
    failures = {f"{a:g}": 0 for a in alphas}

    for rep in range(reps):
        batch = simulate_batch(dgm, n_per_rep, seed, rep)
        subjects = batch_to_records(*batch, arm=arm)
        rep_seed = _derived_seed(_STUDY_TAG, seed, rep)
        try:
            results, _ = run_sensitivity(
                subjects, spec, n_strata=dgm.n_strata, tau=dgm.tau,
                bandwidth=bandwidth, kernel=kernel, alphas=alphas,
                targets=targets, n_boot=n_boot, seed=rep_seed, arm_code=0,
                floor=floor, workers=workers, gamma_override=gamma_override,
                outcome_override=outcome_override,
                boot_tilt_table=boot_tilt_table)
        except (InferenceError, NumericError, MonotoneLikelihoodError,
                DataError):
            for a in alphas:
                failures[f"{a:g}"] += 1
            continue
        seen = {res.alpha for res in results}
        for a in alphas:
            if a not in seen:
                failures[f"{a:g}"] += 1    # tilted moments diverged
        for res in results:
            truth = truths[res.alpha].true_mu
            for k, tgt in enumerate(res.targets):
                mu_hat[res.alpha][tgt.t].append(tgt.mu_hat)
                tv = truth[k]
                if n_boot > 0:
                    covers[res.alpha][tgt.t]["boot_t"].append(
                        tgt.boot_t_ci[0] <= tv <= tgt.boot_t_ci[1])
                    covers[res.alpha][tgt.t]["percentile"].append(
                        tgt.percentile_ci[0] <= tv <= tgt.percentile_ci[1])
                covers[res.alpha][tgt.t]["wald"].append(
                    tgt.wald_ci[0] <= tv <= tgt.wald_ci[1])

    for a in alphas:
        if failures[f"{a:g}"] > fail_budget * reps:
            raise InferenceError(
                f"study failure budget exceeded at alpha={a:g}",
                n_failed=failures[f"{a:g}"], n_total=reps)

    rows = []
    for a in alphas:
        truth = truths[a]
        for k, t in enumerate(targets):
            est = np.asarray(mu_hat[a][t])
            cov = covers[a][t]
            rows.append({
                "alpha": a,
                "t": t,
                "true_value": float(truth.true_mu[k]),
                "emp_mean": float(est.mean()) if est.size else math.nan,
                "abs_bias": (float(abs(est.mean() - truth.true_mu[k]))
                             if est.size else math.nan),
                "cover_boot_t": (float(np.mean(cov["boot_t"]))
                                 if cov["boot_t"] else math.nan),
                "cover_percentile": (float(np.mean(cov["percentile"]))
                                     if cov["percentile"] else math.nan),
                "cover_wald": (float(np.mean(cov["wald"]))
                               if cov["wald"] else math.nan),
                "n_reps_used": int(est.size),
            })
    return StudyResult(rows, truths, reps, failures, fail_budget)
