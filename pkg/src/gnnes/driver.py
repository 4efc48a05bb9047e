"""GNN-ES: alternate a latent ES step with a KL-penalised flow update.

Per generation:

1. draw ``Z`` from the latent Gaussian and push it through the flow;
2. evaluate the objective on ``X`` (exactly ``N`` calls);
3. update the latent with the ES optimizer on ``(Z, F)``;
4. draw ``M`` points from the new latent and the current flow;
5. take a few Adam steps on the flow parameters to minimise the
   importance-weighted fitness plus ``lam`` times the KL estimate;
6. grow or shrink ``lam`` depending on the KL reached.

The population stream, the KL-sample stream and the flow initialisation use
separate child generators, so a run with zero flow steps draws the same
populations as the plain Gaussian baseline.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .flow import (FlowParams, LatentParams, backprop_latent_grad, init_flow, inverse_trace,
                   log_density, sample)
from .latent import XNES, DivergenceError, LatentOptimizer, make_utilities
from .objectives import ObjectiveSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DriverConfig:
    population_size: int | None = None   # None -> 10 * d
    kl_radius: float = 0.01
    kl_sample_size: int | None = None    # None -> 10 * N
    initial_lambda: float = 1.0
    inner_steps: int = 20
    inner_lr: float = 1e-3
    fitness_mode: str = "shaped"         # "shaped" or "raw"
    max_generations: int | None = None
    max_evaluations: int | None = None
    stall_generations: int = 50
    stall_tolerance: float = 1e-12
    target_f: float | None = None
    n_layers: int = 3
    hidden: tuple[int, ...] = (16,)
    init_out_scale: float = 0.0
    kl_guard: float | None = 10.0        # backtrack the flow step while KL > kl_guard * eps
    kl_control_variate: bool = False     # remove the zero-mean score term from the KL gradient
    max_backtracks: int = 40

    def __post_init__(self):
        if self.population_size is not None and self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.kl_sample_size is not None and self.kl_sample_size < 2:
            raise ValueError("kl_sample_size must be >= 2")
        if self.kl_radius <= 0 or self.initial_lambda <= 0:
            raise ValueError("kl_radius and initial_lambda must be positive")
        if self.inner_steps < 0:
            raise ValueError("inner_steps must be >= 0")
        if self.fitness_mode not in ("shaped", "raw"):
            raise ValueError("fitness_mode must be 'shaped' or 'raw'")

    def pop_size(self, d: int) -> int:
        return self.population_size or 10 * d

    def kl_size(self, d: int) -> int:
        return self.kl_sample_size or 10 * self.pop_size(d)


@dataclass
class GenerationState:
    latent: LatentParams
    flow: FlowParams
    lam: float
    generation: int = 0
    best_x: np.ndarray | None = None
    best_f: float = math.inf


@dataclass
class RunRecord:
    """Per-generation trajectory plus run metadata."""

    meta: dict = field(default_factory=dict)
    rows: list[dict] = field(default_factory=list)
    best_x: np.ndarray | None = None
    status: str = "running"
    final: GenerationState | None = None

    @property
    def best_f(self) -> float:
        return self.rows[-1]["best_f"] if self.rows else math.inf

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] if r[name] is not None else np.nan for r in self.rows], dtype=float)

    def to_jsonl(self) -> str:
        meta = dict(self.meta, type="meta", status=self.status,
                    best_x=None if self.best_x is None else [float(v) for v in self.best_x])
        lines = [json.dumps(_clean(meta), sort_keys=True)]
        lines += [json.dumps(_clean(dict(r, type="generation")), sort_keys=True) for r in self.rows]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "RunRecord":
        rec = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            kind = obj.pop("type")
            if kind == "meta":
                rec.status = obj.pop("status", "done")
                bx = obj.pop("best_x", None)
                rec.best_x = None if bx is None else np.array(bx)
                rec.meta = obj
            else:
                rec.rows.append(obj)
        return rec


def _clean(obj):
    """JSON-safe copy: non-finite floats become null."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# -- operations -------------------------------------------------------------

def importance_weight(x, new: tuple[LatentParams, FlowParams],
                      old: tuple[LatentParams, FlowParams]):
    """``pi_new(x) / pi_old(x)`` computed in log space."""
    return np.exp(log_density(*new, x) - log_density(*old, x))


def mc_kl(p_params: tuple[LatentParams, FlowParams], q_flow: FlowParams, samples) -> float:
    """Sample average of ``log p(x) - log q(x)``; ``q`` shares the latent of ``p``.

    ``samples`` must come from ``p``.  The estimate is not clamped at zero.
    """
    latent, p_flow = p_params
    return float(np.mean(log_density(latent, p_flow, samples) - log_density(latent, q_flow, samples)))


def adapt_lambda(lam: float, kl_measured: float, eps: float) -> float:
    if kl_measured > 2.0 * eps:
        return lam * 1.5
    if kl_measured < 0.5 * eps:
        return lam / 1.5
    return lam


def fitness_weights(F, mode: str = "shaped") -> np.ndarray:
    """Per-sample fitness entering the importance-weighted loss (lower is better)."""
    F = np.asarray(F, dtype=float)
    if mode == "shaped":
        return -make_utilities(F)
    finite = np.isfinite(F)
    worst = F[finite].max() if finite.any() else 0.0
    return np.where(finite, F, worst)


def penalized_loss(vec, X, fit, log_p_old_x, kl_samples, log_p_old_kl, latent, flow_old, lam,
                   kl_baseline=None):
    """Value and flat gradient of the penalised off-line objective at flow ``vec``.

    ``log_p_old_*`` are log-densities under ``(latent, flow_old)``; they are
    constants with respect to the flow parameters being optimised.

    ``kl_baseline = (start, c)`` subtracts the linear term ``c . (vec - start)``
    from the KL estimate.  With ``c`` the sample gradient of the estimate at
    ``start`` (a zero-mean score average) the estimate stays unbiased, is still
    0 at ``start`` and has zero gradient there.
    Returns ``(loss, grad, kl)`` where ``kl`` is the uncorrected estimate.
    """
    flow = flow_old.unflatten(vec)
    n, m = X.shape[0], kl_samples.shape[0]
    # one inverse/backward pass over population and KL samples together
    inputs, z = inverse_trace(flow, np.concatenate([X, kl_samples]))
    log_q = latent.log_pdf(z)
    ratio = np.exp(log_q[:n] - log_p_old_x)
    kl = float(np.mean(log_p_old_kl - log_q[n:]))
    w = np.concatenate([fit * ratio / n, np.full(m, -lam / m)])
    grad = backprop_latent_grad(flow, inputs, latent.grad_log_pdf(z) * w[:, None]).flatten()
    penalty = kl
    if kl_baseline is not None:
        start, c = kl_baseline
        penalty -= float(c @ (vec - start))
        grad = grad - lam * c
    return float(np.mean(fit * ratio)) + lam * penalty, grad, kl


def kl_gradient(flow: FlowParams, latent: LatentParams, kl_samples) -> np.ndarray:
    """Flat gradient of the sample KL estimate at ``flow`` (the reference point)."""
    inputs, z = inverse_trace(flow, kl_samples)
    g = latent.grad_log_pdf(z) * (-1.0 / kl_samples.shape[0])
    return backprop_latent_grad(flow, inputs, g).flatten()


def _kl_at(vec, flow_old, latent, kl_samples, log_p_old_kl) -> float:
    log_q = log_density(latent, flow_old.unflatten(vec), kl_samples)
    return float(np.mean(log_p_old_kl - log_q))


class Adam:
    """Adam on a flat parameter vector."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def eta_step(X, F, latent_new: LatentParams, flow_old: FlowParams, lam: float,
             cfg: DriverConfig, rng: np.random.Generator | None = None,
             kl_samples: np.ndarray | None = None) -> FlowParams:
    """Update the flow parameters with the latent frozen at ``latent_new``.

    ``X, F`` is the evaluated population; the objective is never called.
    KL samples are drawn from ``(latent_new, flow_old)`` with ``rng`` unless
    given.  If the loss turns non-finite the last finite iterate is returned.
    """
    if cfg.inner_steps == 0 or not flow_old.layers:
        return flow_old
    X = np.asarray(X, dtype=float)
    if kl_samples is None:
        if rng is None:
            raise ValueError("need rng or kl_samples")
        _, kl_samples = sample(latent_new, flow_old, cfg.kl_size(flow_old.dimension), rng)
    fit = fitness_weights(F, cfg.fitness_mode)
    log_p_old_x = log_density(latent_new, flow_old, X)
    log_p_old_kl = log_density(latent_new, flow_old, kl_samples)

    start = flow_old.flatten()
    baseline = None
    if cfg.kl_control_variate:
        baseline = (start, kl_gradient(flow_old, latent_new, kl_samples))
    vec = best = start
    opt = Adam(cfg.inner_lr)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(cfg.inner_steps + 1):
            loss, grad, _ = penalized_loss(vec, X, fit, log_p_old_x, kl_samples, log_p_old_kl,
                                           latent_new, flow_old, lam, baseline)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                log.debug("non-finite inner loss, keeping last finite flow")
                break
            best = vec
            if i < cfg.inner_steps:
                vec = opt.step(vec, grad)

        if cfg.kl_guard is not None:
            step = best - start
            limit = cfg.kl_guard * cfg.kl_radius
            for _ in range(cfg.max_backtracks):
                kl = _kl_at(start + step, flow_old, latent_new, kl_samples, log_p_old_kl)
                if math.isfinite(kl) and kl <= limit:
                    break
                step = 0.5 * step
            else:
                step = np.zeros_like(step)
            best = start + step
    return flow_old.unflatten(best)


def initial_state(d: int, cfg: DriverConfig, init_rng: np.random.Generator,
                  mean=None, use_flow: bool = True) -> GenerationState:
    latent = LatentParams.standard(d, mean=mean)
    if use_flow:
        flow = init_flow(d, init_rng, n_layers=cfg.n_layers, hidden=cfg.hidden,
                         out_scale=cfg.init_out_scale)
    else:
        flow = FlowParams((), d)
    return GenerationState(latent, flow, cfg.initial_lambda)


def _streams(rng) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    pop, kl, init = rng.spawn(3)
    return pop, kl, init


def run(objective: ObjectiveSpec, cfg: DriverConfig, optimizer: LatentOptimizer = XNES(),
        rng=None, init_mean=None, use_flow: bool = True, meta: dict | None = None) -> RunRecord:
    """Run GNN-ES (or the plain latent ES when ``use_flow`` is False)."""
    d = objective.dim
    if d < 2:
        raise ValueError("GNN-ES needs dimension >= 2")
    pop_rng, kl_rng, init_rng = _streams(rng)
    n = cfg.pop_size(d)
    m = cfg.kl_size(d)
    state = initial_state(d, cfg, init_rng, mean=init_mean, use_flow=use_flow)
    record = RunRecord(meta=dict(meta or {}, dim=d, population_size=n, kl_sample_size=m,
                                 objective=objective.name))
    evals_start = objective.evaluations
    max_gen = cfg.max_generations
    max_evals = cfg.max_evaluations
    if max_gen is None and max_evals is None:
        raise ValueError("set max_generations or max_evaluations")
    history = []

    while True:
        used = objective.evaluations - evals_start
        if max_gen is not None and state.generation >= max_gen:
            record.status = "budget"
            break
        if max_evals is not None and used + n > max_evals:
            record.status = "budget"
            break

        if latent_collapsed(state.latent):
            record.status = "collapsed"
            break
        Z, X = sample(state.latent, state.flow, n, pop_rng)
        F = objective.evaluate_batch(X)
        F = np.where(np.isfinite(F), F, np.inf)
        i_best = int(np.argmin(F))
        if F[i_best] < state.best_f:
            state.best_f = float(F[i_best])
            state.best_x = X[i_best].copy()

        try:
            latent_new = optimizer(state.latent, Z, F)
        except DivergenceError as exc:
            log.warning("latent update diverged at generation %d: %s", state.generation, exc)
            record.status = "diverged"
            _log_row(record, state, objective.evaluations - evals_start, F, None)
            break

        kl = 0.0
        flow_new = state.flow
        if state.flow.layers:
            _, kl_samples = sample(latent_new, state.flow, m, kl_rng)
            flow_new = eta_step(X, F, latent_new, state.flow, state.lam, cfg, kl_samples=kl_samples)
            kl = mc_kl((latent_new, state.flow), flow_new, kl_samples)
            state.lam = adapt_lambda(state.lam, kl, cfg.kl_radius)

        state.latent, state.flow = latent_new, flow_new
        state.generation += 1
        _log_row(record, state, objective.evaluations - evals_start, F, kl)

        history.append(state.best_f)
        if cfg.target_f is not None and state.best_f <= cfg.target_f:
            record.status = "target"
            break
        k = cfg.stall_generations
        if k and len(history) > k and history[-k - 1] - history[-1] < cfg.stall_tolerance:
            record.status = "converged"
            break

    record.best_x = state.best_x
    record.final = state
    return record


def latent_collapsed(latent: LatentParams, rel: float = 1e-13) -> bool:
    """True once the latent spread is within a few hundred ulps of its mean.

    Below that, standardised samples are dominated by rounding and the ES
    update is meaningless.
    """
    scale = max(1.0, float(np.max(np.abs(latent.mean))))
    return float(np.min(np.diag(latent.cov_factor))) < rel * scale


def _log_row(record: RunRecord, state: GenerationState, evaluations: int, F, kl):
    finite = F[np.isfinite(F)]
    record.rows.append({
        "generation": state.generation,
        "evaluations": int(evaluations),
        "best_f": state.best_f,
        "mean_f": float(finite.mean()) if finite.size else math.inf,
        "lambda": state.lam,
        "kl": kl,
        "entropy": state.latent.entropy(),
    })


def config_dict(cfg: DriverConfig) -> dict:
    out = asdict(cfg)
    out["hidden"] = list(cfg.hidden)
    return out


def with_overrides(cfg: DriverConfig, **kw) -> DriverConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
