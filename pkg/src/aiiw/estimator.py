"""Sensitivity estimator for outcome-informative assessment times.

The estimand is the mean outcome curve mu_t = beta' B(t) over a spline basis.
For a sensitivity parameter alpha, each subject contributes

    m_i = sum_{t_k in S_i} V^{-1} B(t_k) (Y_k - Ehat[Y|hist]) / rho_hat
        + integral over [a,b] of V^{-1} B(t) Ehat[Y(t)|hist] dt

where rho_hat = lambda_hat * exp(-alpha Y) * m0 is the assessment rate under
the tilted outcome law and Ehat is the tilted conditional mean.  beta_hat is
the subject average of m_i; at alpha = 0 the whole pipeline reduces to plain
inverse-intensity weighting.

Bootstrap intervals resample subjects with replacement, refit both nuisance
models per resample (warm-started, via multiplicity weights rather than data
copies), and share those refits across the alpha grid.  Resample streams are
keyed by (seed, arm, resample index) so any worker split reproduces the same
bytes.
"""

from __future__ import annotations

import math
import multiprocessing
from dataclasses import dataclass, field

import numpy as np

from .errors import (DataError, InferenceError, MonotoneLikelihoodError,
                     NumericError, TiltOverflowError)
from .intensity import (IntensityFit, _StratumWork, breslow_cumulative,
                        build_risk_sets, fit_partial_likelihood,
                        smooth_baseline)
from .outcome import (OutcomeFit, TiltTable, fit_outcome_model,
                      tilted_moments_vec)
from .records import SubjectRecord
from .splines import SplineSpec, basis_matrix, grid_cells, gram_matrix

_Z975 = 1.959963984540054      # Phi^{-1}(0.975)
_BOOT_TAG = 101                # leading SeedSequence word for resample streams
_MAX_FAIL_FRACTION = 0.05


# ---------------------------------------------------------------------------
# shared geometry
# ---------------------------------------------------------------------------

class EstimatorWorkspace:
    """Everything about a dataset that no fitted model depends on.

    Holds the integration lattice with basis values, per-subject observed-past
    features on that lattice, flattened assessment arrays (one filtered to the
    basis domain for the estimating function, one complete for the outcome
    regression), and prebuilt risk-set workspaces.  A bootstrap loop builds
    this once and reuses it for every resample.
    """

    def __init__(self, subjects: list[SubjectRecord], spec: SplineSpec,
                 n_strata: int, tau: float):
        if not subjects:
            raise DataError("no subjects")
        self.subjects = list(subjects)
        self.spec = spec
        self.n_strata = int(n_strata)
        self.tau = float(tau)
        n = len(self.subjects)

        self.mids, self.widths = grid_cells(spec)
        self.basis_grid = basis_matrix(spec, self.mids)          # (G, p)
        self.gram = gram_matrix(spec)                            # (p, p)

        a, b = spec.domain
        j_max = max(max((r.n_assessments for r in self.subjects), default=0), 1)
        times = np.full((n, j_max), np.inf)
        outs = np.zeros((n, j_max))
        for i, rec in enumerate(self.subjects):
            k = rec.n_assessments
            times[i, :k] = rec.times
            outs[i, :k] = rec.outcomes
        baseline = np.array([r.baseline_outcome for r in self.subjects])

        # observed-past features at lattice midpoints, history strictly
        # before t; index of the last assessment before each midpoint
        count = (times[:, :, None] < self.mids[None, None, :]).sum(axis=1)
        last = np.maximum(count - 1, 0)
        prev_y = np.take_along_axis(outs, last, axis=1)
        prev_t = np.take_along_axis(np.where(np.isinf(times), 0.0, times),
                                    last, axis=1)
        self.grid_prev_y = np.where(count > 0, prev_y, baseline[:, None])
        self.grid_prev_t = np.where(count > 0, prev_t, 0.0)

        def _flat(filter_domain: bool):
            subj, t_k, y_k, pt, py, strat = [], [], [], [], [], []
            for i, rec in enumerate(self.subjects):
                for j in range(rec.n_assessments):
                    t = rec.times[j]
                    if filter_domain and not (a <= t <= b):
                        continue
                    subj.append(i)
                    t_k.append(t)
                    y_k.append(rec.outcomes[j])
                    pt.append(rec.times[j - 1] if j else 0.0)
                    py.append(rec.outcomes[j - 1] if j else rec.baseline_outcome)
                    strat.append(j + 1)
            return (np.array(subj, dtype=int), np.array(t_k), np.array(y_k),
                    np.array(pt), np.array(py), np.array(strat, dtype=int))

        (self.a_subj, self.a_time, self.a_y, self.a_prev_t, self.a_prev_y,
         self.a_stratum) = _flat(filter_domain=True)
        (self.f_subj, self.f_time, self.f_y, self.f_prev_t, self.f_prev_y,
         self.f_stratum) = _flat(filter_domain=False)
        self.basis_at_assessments = (basis_matrix(spec, self.a_time)
                                     if self.a_subj.size
                                     else np.zeros((0, spec.n_basis)))

        self.risk_sets = build_risk_sets(self.subjects, self.n_strata, self.tau)
        self.stratum_works = [_StratumWork(rs) for rs in self.risk_sets]

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)


def fit_nuisances(ws: EstimatorWorkspace, bandwidth: float,
                  kernel: str = "epanechnikov",
                  weights: np.ndarray | None = None,
                  init_gamma: np.ndarray | None = None,
                  init_outcome: tuple[np.ndarray, float] | None = None,
                  gamma_override: np.ndarray | None = None,
                  outcome_override: tuple[np.ndarray, float] | None = None,
                  ) -> tuple[IntensityFit, OutcomeFit]:
    """Fit (or corrupt at a fixed slope) both nuisance models.

    ``weights`` are subject multiplicities.  ``gamma_override`` replaces
    the fitted log-slope after the fit while the baselines stay at the
    data-driven Breslow solution (see ``fit_intensity``); the outcome
    override substitutes the whole coefficient vector.
    """
    pl = fit_partial_likelihood(ws.risk_sets, weights=weights,
                                init=init_gamma,
                                workspaces=ws.stratum_works)
    gamma, se = pl.gamma, pl.se
    loglik, gnorm, n_iter, fixed = pl.loglik, pl.grad_norm, pl.n_iter, False
    cums = breslow_cumulative(ws.risk_sets, gamma, weights=weights,
                              workspaces=ws.stratum_works)
    if gamma_override is not None:
        gamma = np.atleast_1d(np.asarray(gamma_override, dtype=float))
        se = np.full(gamma.shape, np.nan)
        loglik = gnorm = math.nan
        n_iter, fixed = 0, True
    smoothed = {k: smooth_baseline(sf, bandwidth, kernel)
                for k, sf in cums.items()}
    events = {rs.stratum: rs.n_events for rs in ws.risk_sets}
    ifit = IntensityFit(gamma, se, ws.n_strata, ws.tau, bandwidth, kernel,
                        cums, smoothed, events, loglik, gnorm, n_iter, fixed)

    if outcome_override is not None:
        theta, r = outcome_override
        ofit = OutcomeFit(np.asarray(theta, dtype=float), float(r),
                          int(ws.f_y.max()) if ws.f_y.size else 0)
    else:
        row_w = None if weights is None else np.asarray(weights)[ws.f_subj]
        ofit = fit_outcome_model(ws.f_time, ws.f_prev_t, ws.f_prev_y, ws.f_y,
                                 weights=row_w, init=init_outcome)
    return ifit, ofit


# ---------------------------------------------------------------------------
# estimating function
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InfluenceContribution:
    """Per-subject estimating-function value and its two pieces."""

    m_value: np.ndarray
    weighted_term: np.ndarray
    augmentation_term: np.ndarray
    positivity_clips: int = 0


def _lambda_at_assessments(ws: EstimatorWorkspace, ifit: IntensityFit) -> np.ndarray:
    lam = np.zeros(ws.a_time.shape)
    for k in range(1, ws.n_strata + 1):
        sel = ws.a_stratum == k
        if sel.any():
            lam[sel] = ifit.smoothed_baselines[k](ws.a_time[sel])
    return lam * np.exp(float(ifit.gamma_hat[0]) * ws.a_prev_y)


def _tilt_mean_m0(mu: np.ndarray, ofit: OutcomeFit, alpha: float,
                  table: TiltTable | None):
    if table is not None:
        return table.mean(mu), table.m0(mu)
    m0, m1 = tilted_moments_vec(mu, ofit.dispersion, alpha,
                                int(ofit.support_max))
    return m1 / m0, m0


def _alpha_components(ws: EstimatorWorkspace, ifit: IntensityFit,
                      ofit: OutcomeFit, alpha: float, floor: float,
                      use_table: bool = False,
                      lam: np.ndarray | None = None):
    """Weighted and augmentation terms before applying V^{-1}.

    Returns (W, A, clips) with W, A of shape (n, p) and per-subject clip
    counts.  ``use_table`` switches the tilted-moment evaluation to a dense
    interpolation table (bootstrap / truth bulk paths); point estimates keep
    the exact summation.
    """
    n, p = ws.n_subjects, ws.spec.n_basis
    theta = ofit.coefficients
    eta_grid = (theta[0] + theta[1] * ws.mids[None, :]
                + theta[2] * ws.grid_prev_t + theta[3] * ws.grid_prev_y)
    mu_grid = np.exp(eta_grid)
    if ws.a_subj.size:
        mu_k = np.exp(theta[0] + theta[1] * ws.a_time + theta[2] * ws.a_prev_t
                      + theta[3] * ws.a_prev_y)
    else:
        mu_k = np.zeros(0)

    table = None
    if use_table and alpha != 0.0:
        lo = min(mu_grid.min(), mu_k.min()) if mu_k.size else mu_grid.min()
        hi = max(mu_grid.max(), mu_k.max()) if mu_k.size else mu_grid.max()
        table = TiltTable(ofit.dispersion, alpha, lo, hi,
                          int(ofit.support_max))

    W = np.zeros((n, p))
    clips = np.zeros(n, dtype=int)
    if ws.a_subj.size:
        if lam is None:
            lam = _lambda_at_assessments(ws, ifit)
        mean_k, m0_k = _tilt_mean_m0(mu_k, ofit, alpha, table)
        rho = lam * np.exp(-alpha * ws.a_y) * m0_k
        low = rho < floor
        if low.any():
            np.add.at(clips, ws.a_subj[low], 1)
            rho = np.where(low, floor, rho)
        resid = (ws.a_y - mean_k) / rho
        np.add.at(W, ws.a_subj, ws.basis_at_assessments * resid[:, None])

    mean_grid, _ = _tilt_mean_m0(mu_grid.ravel(), ofit, alpha, table)
    A = (mean_grid.reshape(mu_grid.shape) * ws.widths[None, :]) @ ws.basis_grid
    return W, A, clips


def _apply_v_inverse(ws: EstimatorWorkspace, rows: np.ndarray) -> np.ndarray:
    return np.linalg.solve(ws.gram, rows.T).T


def influence_contribution(subject: SubjectRecord, ifit: IntensityFit,
                           ofit: OutcomeFit, spec: SplineSpec, alpha: float,
                           floor: float = 1e-4) -> InfluenceContribution:
    """Estimating-function contribution of one subject (reference path)."""
    ws = EstimatorWorkspace([subject], spec, ifit.n_strata, ifit.tau)
    W, A, clips = _alpha_components(ws, ifit, ofit, alpha, floor)
    weighted = _apply_v_inverse(ws, W)[0]
    augmentation = _apply_v_inverse(ws, A)[0]
    return InfluenceContribution(weighted + augmentation, weighted,
                                 augmentation, int(clips[0]))


def m_matrix(ws: EstimatorWorkspace, ifit: IntensityFit, ofit: OutcomeFit,
             alpha: float, floor: float = 1e-4, use_table: bool = False,
             lam: np.ndarray | None = None):
    """All subjects' m vectors as rows of an (n, p) matrix."""
    W, A, clips = _alpha_components(ws, ifit, ofit, alpha, floor, use_table, lam)
    return _apply_v_inverse(ws, W + A), clips


def estimate_beta(m_rows: np.ndarray,
                  weights: np.ndarray | None = None) -> np.ndarray:
    """beta_hat = (weighted) subject mean of the m vectors."""
    if weights is None:
        return m_rows.mean(axis=0)
    w = np.asarray(weights, dtype=float)
    return (w @ m_rows) / w.sum()


def variance_beta(m_rows: np.ndarray, beta_hat: np.ndarray,
                  weights: np.ndarray | None = None) -> np.ndarray:
    """Influence-function covariance (1/n^2) sum (m_i - beta)(m_i - beta)'."""
    dev = m_rows - beta_hat[None, :]
    if weights is None:
        n = m_rows.shape[0]
        cov = dev.T @ dev / (n * n)
    else:
        w = np.asarray(weights, dtype=float)
        n = w.sum()
        cov = (dev.T * w) @ dev / (n * n)
    return (cov + cov.T) / 2.0


def mu_at(beta_hat: np.ndarray, covariance: np.ndarray, spec: SplineSpec,
          t) -> tuple[float, float]:
    """Curve value and SE at a single time: (B' beta, sqrt(B' Cov B))."""
    row = basis_matrix(spec, np.atleast_1d(np.asarray(t, dtype=float)))[0]
    mu = float(row @ beta_hat)
    se = float(math.sqrt(max(row @ covariance @ row, 0.0)))
    return mu, se


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass
class TargetSummary:
    t: float
    mu_hat: float
    se: float
    wald_ci: tuple[float, float]
    percentile_ci: tuple[float, float] | None = None
    boot_t_ci: tuple[float, float] | None = None


@dataclass
class SensitivityResult:
    alpha: float
    beta_hat: np.ndarray
    covariance: np.ndarray
    targets: list[TargetSummary]
    curve_times: np.ndarray
    curve_values: np.ndarray
    plausible: bool | None = None
    positivity_violations: int = 0
    n_boot: int = 0
    boot_failures: int = 0
    # retained for arm pairing; rows are resamples in index order
    boot_mu: np.ndarray | None = field(default=None, repr=False)
    boot_se: np.ndarray | None = field(default=None, repr=False)
    boot_valid: np.ndarray | None = field(default=None, repr=False)


def _assemble_intervals(mu_hat: float, se_hat: float, boot_mu: np.ndarray,
                        boot_se: np.ndarray):
    """Wald, percentile, and bootstrap-t intervals from one resample set.

    A degenerate resample (zero SE) contributes |T| = 0 when its estimate
    hits mu_hat exactly and +inf otherwise, so a degenerate world yields the
    point interval rather than NaN.
    """
    diff = np.abs(boot_mu - mu_hat)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_abs = np.where(boot_se > 0, diff / boot_se,
                         np.where(diff == 0, 0.0, np.inf))
    c_star = float(np.quantile(t_abs, 0.95))
    wald = (mu_hat - _Z975 * se_hat, mu_hat + _Z975 * se_hat)
    lo, hi = np.quantile(boot_mu, [0.025, 0.975])
    boot_t = (mu_hat - c_star * se_hat, mu_hat + c_star * se_hat)
    return wald, (float(lo), float(hi)), boot_t, c_star


# ---------------------------------------------------------------------------
# bootstrap engine
# ---------------------------------------------------------------------------

def _resample_weights(seed: int, arm_code: int, b: int, n: int) -> np.ndarray:
    ss = np.random.SeedSequence([_BOOT_TAG, int(seed), int(arm_code), int(b)])
    rng = np.random.Generator(np.random.Philox(ss))
    idx = rng.integers(0, n, size=n)
    return np.bincount(idx, minlength=n).astype(float)


@dataclass(frozen=True)
class _BootPayload:
    ws: EstimatorWorkspace
    ifit: IntensityFit
    ofit: OutcomeFit
    alphas: tuple[float, ...]
    basis_targets: np.ndarray
    seed: int
    arm_code: int
    floor: float
    outcome_fixed: bool
    use_table: bool = True


def _bootstrap_single(payload: _BootPayload, b: int):
    """One resample: refit nuisances, evaluate every alpha, summarize targets.

    Returns (b, valid mask over alphas, mu matrix, se matrix); a nuisance
    failure invalidates the whole resample, a tilt overflow only its alpha.
    """
    ws, ifit, ofit = payload.ws, payload.ifit, payload.ofit
    n_alpha = len(payload.alphas)
    n_t = payload.basis_targets.shape[0]
    mu_out = np.full((n_alpha, n_t), np.nan)
    se_out = np.full((n_alpha, n_t), np.nan)
    valid = np.zeros(n_alpha, dtype=bool)

    counts = _resample_weights(payload.seed, payload.arm_code, b,
                               ws.n_subjects)
    try:
        ifit_b, ofit_b = fit_nuisances(
            ws, ifit.bandwidth, ifit.kernel, weights=counts,
            init_gamma=None if ifit.gamma_fixed else ifit.gamma_hat,
            init_outcome=None if payload.outcome_fixed
            else (ofit.coefficients, ofit.dispersion),
            gamma_override=ifit.gamma_hat if ifit.gamma_fixed else None,
            outcome_override=(ofit.coefficients, ofit.dispersion)
            if payload.outcome_fixed else None)
    except (MonotoneLikelihoodError, NumericError, DataError):
        return b, valid, mu_out, se_out

    lam = _lambda_at_assessments(ws, ifit_b) if ws.a_subj.size else None
    for j, alpha in enumerate(payload.alphas):
        try:
            rows, _ = m_matrix(ws, ifit_b, ofit_b, alpha, payload.floor,
                               use_table=payload.use_table, lam=lam)
        except (TiltOverflowError, NumericError):
            continue
        beta = estimate_beta(rows, counts)
        cov = variance_beta(rows, beta, counts)
        mu_out[j] = payload.basis_targets @ beta
        se_row = np.einsum("tp,pq,tq->t", payload.basis_targets, cov,
                           payload.basis_targets)
        se_out[j] = np.sqrt(np.maximum(se_row, 0.0))
        valid[j] = True
    return b, valid, mu_out, se_out


_POOL_PAYLOAD: dict = {}


def _pool_init(payload: _BootPayload) -> None:
    _POOL_PAYLOAD["payload"] = payload


def _pool_task(b: int):
    return _bootstrap_single(_POOL_PAYLOAD["payload"], b)


def _run_bootstrap(payload: _BootPayload, n_boot: int, workers: int):
    """Ordered (by resample index) bootstrap evaluation, optionally forked.

    Per-resample RNG streams make the result independent of the worker
    split; the reduction below is index-ordered either way.
    """
    results = [None] * n_boot
    if workers > 1 and n_boot > 1:
        ctx = multiprocessing.get_context("fork")
        chunk = max(1, n_boot // (workers * 8))
        with ctx.Pool(processes=workers, initializer=_pool_init,
                      initargs=(payload,)) as pool:
            for out in pool.imap(_pool_task, range(n_boot), chunksize=chunk):
                results[out[0]] = out
    else:
        for b in range(n_boot):
            results[b] = _bootstrap_single(payload, b)
    n_alpha = len(payload.alphas)
    n_t = payload.basis_targets.shape[0]
    valid = np.zeros((n_boot, n_alpha), dtype=bool)
    mu = np.full((n_boot, n_alpha, n_t), np.nan)
    se = np.full((n_boot, n_alpha, n_t), np.nan)
    for b, v, m, s in results:
        valid[b], mu[b], se[b] = v, m, s
    return valid, mu, se


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

def run_sensitivity(subjects: list[SubjectRecord], spec: SplineSpec, *,
                    n_strata: int, tau: float, bandwidth: float,
                    kernel: str = "epanechnikov",
                    alphas: list[float], targets: list[float],
                    n_boot: int = 0, seed: int = 0, arm_code: int = 0,
                    floor: float = 1e-4, workers: int = 1,
                    gamma_override: np.ndarray | None = None,
                    outcome_override: tuple[np.ndarray, float] | None = None,
                    ws: EstimatorWorkspace | None = None,
                    boot_tilt_table: bool = True,
                    ) -> tuple[list[SensitivityResult], dict]:
    """Full single-arm analysis over an alpha grid.

    Returns the per-alpha results (excluding alphas whose tilted moments
    diverge, which are reported in the diagnostics) plus a JSON-ready
    diagnostics dict.  Raises ``InferenceError`` when more than 5% of
    bootstrap resamples fail for any retained alpha.
    """
    if ws is None:
        ws = EstimatorWorkspace(subjects, spec, n_strata, tau)
    ifit, ofit = fit_nuisances(ws, bandwidth, kernel,
                               gamma_override=gamma_override,
                               outcome_override=outcome_override)
    a, b_end = spec.domain
    curve_times = np.arange(a, b_end + 0.5, 1.0)
    basis_curve = basis_matrix(spec, curve_times)
    basis_targets = basis_matrix(spec, np.asarray(targets, dtype=float))

    lam_point = _lambda_at_assessments(ws, ifit) if ws.a_subj.size else None
    results: list[SensitivityResult] = []
    excluded: list[dict] = []
    kept_alphas: list[float] = []
    for alpha in alphas:
        try:
            rows, clips = m_matrix(ws, ifit, ofit, alpha, floor,
                                   lam=lam_point)
        except TiltOverflowError as exc:
            excluded.append({"alpha": float(alpha),
                             "reason": f"tilt_overflow: {exc}"})
            continue
        beta = estimate_beta(rows)
        cov = variance_beta(rows, beta)
        tgt = []
        for t in targets:
            mu_t, se_t = mu_at(beta, cov, spec, t)
            tgt.append(TargetSummary(float(t), mu_t, se_t,
                                     (mu_t - _Z975 * se_t,
                                      mu_t + _Z975 * se_t)))
        results.append(SensitivityResult(
            alpha=float(alpha), beta_hat=beta, covariance=cov, targets=tgt,
            curve_times=curve_times, curve_values=basis_curve @ beta,
            positivity_violations=int(clips.sum())))
        kept_alphas.append(float(alpha))

    if n_boot > 0 and results:
        payload = _BootPayload(ws, ifit, ofit, tuple(kept_alphas),
                               basis_targets, int(seed), int(arm_code),
                               float(floor), outcome_override is not None,
                               boot_tilt_table)
        valid, mu_star, se_star = _run_bootstrap(payload, n_boot, workers)
        for j, res in enumerate(results):
            ok = valid[:, j]
            n_fail = int(n_boot - ok.sum())
            if n_fail > _MAX_FAIL_FRACTION * n_boot:
                raise InferenceError(
                    f"bootstrap failed for alpha={res.alpha:g}",
                    n_failed=n_fail, n_total=n_boot)
            res.n_boot = n_boot
            res.boot_failures = n_fail
            res.boot_mu = mu_star[:, j, :]
            res.boot_se = se_star[:, j, :]
            res.boot_valid = ok
            for k, tgt in enumerate(res.targets):
                wald, pct, boot_t, _ = _assemble_intervals(
                    tgt.mu_hat, tgt.se, res.boot_mu[ok, k],
                    res.boot_se[ok, k])
                tgt.wald_ci, tgt.percentile_ci, tgt.boot_t_ci = wald, pct, boot_t

    diagnostics = {
        "n_subjects": ws.n_subjects,
        "intensity": {
            "gamma_hat": [float(g) for g in ifit.gamma_hat],
            "gamma_se": [float(s) for s in ifit.gamma_se],
            "loglik": float(ifit.loglik),
            "grad_norm": float(ifit.grad_norm),
            "n_iter": ifit.n_iter,
            "gamma_fixed": ifit.gamma_fixed,
            "events_per_stratum": {str(k): v for k, v
                                   in ifit.events_per_stratum.items()},
        },
        "outcome": {
            "theta": [float(c) for c in ofit.coefficients],
            "dispersion": float(ofit.dispersion),
            "boundary": dict(ofit.boundary),
            "loglik": float(ofit.loglik),
            "grad_norm": float(ofit.grad_norm),
            "n_iter": ofit.n_iter,
            "fixed": outcome_override is not None,
        },
        "alphas": {f"{r.alpha:g}": {
            "positivity_violations": r.positivity_violations,
            "boot_failures": r.boot_failures,
            "boot_total": r.n_boot,
        } for r in results},
        "excluded": excluded,
    }
    return results, diagnostics


def bootstrap_t_ci(subjects: list[SubjectRecord], spec: SplineSpec, *,
                   n_strata: int, tau: float, bandwidth: float, alpha: float,
                   t: float, n_boot: int, seed: int,
                   **kwargs) -> tuple[float, float]:
    """Bootstrap-t interval for mu_t at one (alpha, t); convenience wrapper."""
    if n_boot < 100:
        raise ValueError(f"need at least 100 resamples, got {n_boot}")
    results, _ = run_sensitivity(subjects, spec, n_strata=n_strata, tau=tau,
                                 bandwidth=bandwidth, alphas=[alpha],
                                 targets=[t], n_boot=n_boot, seed=seed,
                                 **kwargs)
    if not results:
        raise TiltOverflowError(alpha, math.nan)
    return results[0].targets[0].boot_t_ci


# ---------------------------------------------------------------------------
# arm contrasts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TreatmentEffect:
    t: float
    estimate: float
    se: float
    wald_ci: tuple[float, float]
    percentile_ci: tuple[float, float] | None
    boot_t_ci: tuple[float, float] | None
    sign_class: str


def _classify_sign(ci: tuple[float, float]) -> str:
    if ci[0] > 0:
        return "positive"
    if ci[1] < 0:
        return "negative"
    return "spans-zero"


def treatment_effect(result_a: SensitivityResult, result_b: SensitivityResult,
                     t: float) -> TreatmentEffect:
    """Arm contrast at one target time from two independent arm results.

    SEs add in quadrature; the bootstrap-t statistic pairs the arms'
    independent resample streams index by index.
    """
    ts_a = [x.t for x in result_a.targets]
    ts_b = [x.t for x in result_b.targets]
    if t not in ts_a or t not in ts_b:
        raise ValueError(f"target t={t} missing from one arm "
                         f"({ts_a} vs {ts_b})")
    ka, kb = ts_a.index(t), ts_b.index(t)
    ta, tb = result_a.targets[ka], result_b.targets[kb]
    delta = ta.mu_hat - tb.mu_hat
    se = math.sqrt(ta.se ** 2 + tb.se ** 2)
    wald = (delta - _Z975 * se, delta + _Z975 * se)
    pct = boot_t = None
    if result_a.boot_mu is not None and result_b.boot_mu is not None:
        if result_a.boot_mu.shape[0] != result_b.boot_mu.shape[0]:
            raise ValueError("arms were run with different resample counts")
        ok = result_a.boot_valid & result_b.boot_valid
        d_star = result_a.boot_mu[ok, ka] - result_b.boot_mu[ok, kb]
        se_star = np.sqrt(result_a.boot_se[ok, ka] ** 2
                          + result_b.boot_se[ok, kb] ** 2)
        wald, pct, boot_t, _ = _assemble_intervals(delta, se, d_star, se_star)
    ci = boot_t if boot_t is not None else wald
    return TreatmentEffect(float(t), delta, se, wald, pct, boot_t,
                           _classify_sign(ci))


def contrast_grid(results_a: list[SensitivityResult],
                  results_b: list[SensitivityResult],
                  targets: list[float]) -> list[dict]:
    """Rows (alpha_a, alpha_b, t, effect, ci, sign) over the retained grids."""
    rows = []
    for ra in results_a:
        for rb in results_b:
            for t in targets:
                eff = treatment_effect(ra, rb, t)
                ci = eff.boot_t_ci if eff.boot_t_ci is not None else eff.wald_ci
                rows.append({"alpha_a": ra.alpha, "alpha_b": rb.alpha,
                             "t": eff.t, "effect": eff.estimate,
                             "ci_low": ci[0], "ci_high": ci[1],
                             "sign_class": eff.sign_class})
    return rows


# ---------------------------------------------------------------------------
# plausibility screen
# ---------------------------------------------------------------------------

def plausible_alpha_range(results: list[SensitivityResult], mu_min: float,
                          mu_max: float) -> list[SensitivityResult]:
    """Flag each alpha implausible iff its curve exits (mu_min, mu_max).

    Open-interval convention: a curve touching a bound at any day of the
    grid is excluded.  Returns the plausible subset; flags are set on every
    result either way.
    """
    if not mu_min < mu_max:
        raise ValueError(f"need mu_min < mu_max, got ({mu_min}, {mu_max})")
    kept = []
    for res in results:
        inside = bool(np.all((res.curve_values > mu_min)
                             & (res.curve_values < mu_max)))
        res.plausible = inside
        if inside:
            kept.append(res)
    return kept
