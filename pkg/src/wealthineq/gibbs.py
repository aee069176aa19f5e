"""Gibbs sampler over coefficients, pattern covariances, latent wealth and the model error.

Each sweep updates, in order, the stacked coefficients, the covariance
of every holdings pattern, every latent held component of every
household (ascending component index, vectorized across households),
and the standard normal error ``e``. After the sweep the sample totals
are summarized: for every requested summary the plug-in value ``g_hat``
and its design variance ``v_hat`` give the draw ``g = g_hat + sqrt(v_hat) e``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .censoring import (
    DEFAULT_CAP,
    BoundsEngine,
    TAX_THRESHOLD,
    InfeasibleDomainError,
    build_domain,
    contains_packed,
    interior_points,
    pack_domains,
)
from .data_model import SurveyDataset
from .design_variance import PreparedSample, SampleDesign, VarianceOperator, jackknife_variance
from .hierarchy import (
    ModelParams,
    PatternModel,
    conditional_moments,
    draw_coefficients,
    draw_sigma,
)
from .indices import DEFAULT_SUMMARIES, SummarySpec, WeightedSample
from .variates import CounterSource, RngStream, derive_key, string_key, truncated_normal

VARIANCE_MODES = ("Linearization", "Jackknife", "FastApprox")
# Minimum log-scale variance of the initial covariance diagonal.
_INIT_VAR_FLOOR = 1e-2
# Domain membership is asserted at this sweep interval in "sampled" mode.
_CHECK_EVERY = 100


class ChainError(RuntimeError):
    """Fatal failure of a chain, with the sweep and household concerned."""


@dataclass(frozen=True)
class ChainConfig:
    """Run settings.

    Parameters
    ----------
    total_sweeps : int
        Number of sweeps ``T``.
    burn_in : int
        Sweeps discarded when averaging, ``0 <= burn_in < total_sweeps``.
        All sweeps are recorded; the burn-in is applied at aggregation.
    variance_mode : str
        ``Linearization`` (every sweep), ``Jackknife`` (every sweep, slow)
        or ``FastApprox`` (linearization refreshed every ``refresh_every``
        sweeps).
    check_domains : str
        ``every``, ``sampled`` or ``off``.
    """

    total_sweeps: int = 2000
    burn_in: int = 500
    seed: int = 0
    chains: int = 1
    summaries: tuple = DEFAULT_SUMMARIES
    variance_mode: str = "Linearization"
    cap: float = DEFAULT_CAP
    tax_threshold: float = TAX_THRESHOLD
    refresh_every: int = 10
    check_domains: str = "sampled"
    record_params: bool = True

    def __post_init__(self):
        if not 0 <= self.burn_in < self.total_sweeps:
            raise ValueError(f"need 0 <= burn_in < total_sweeps, got {self.burn_in}, {self.total_sweeps}")
        if self.variance_mode not in VARIANCE_MODES:
            raise ValueError(f"variance_mode must be one of {VARIANCE_MODES}")
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.check_domains not in ("every", "sampled", "off"):
            raise ValueError("check_domains must be every, sampled or off")
        specs = tuple(s if isinstance(s, SummarySpec) else SummarySpec.parse(s) for s in self.summaries)
        object.__setattr__(self, "summaries", specs)


@dataclass
class CompiledData:
    """Array form of a dataset in canonical (sorted id) household order."""

    ids: list
    weights: np.ndarray
    shares: np.ndarray
    held: np.ndarray
    patterns: np.ndarray
    domains: list
    packed: object
    model: PatternModel
    design: SampleDesign
    keys: np.ndarray
    engine: BoundsEngine = None
    holders: list = None  # per component, indices of households holding it
    conditioning: list = None  # per component, (block, position, index) triples

    def __post_init__(self):
        self.engine = BoundsEngine(self.packed)
        self.holders = [np.flatnonzero(self.held[:, l]) for l in range(self.held.shape[1])]
        self.conditioning = [
            [(blk, blk.components.index(l), np.ix_(blk.rows, blk.components))
             for blk in self.model.blocks if l in blk.components]
            for l in range(self.held.shape[1])
        ]

    @property
    def m(self):
        return len(self.ids)

    @property
    def L(self):
        return self.held.shape[1]


def compile_dataset(dataset: SurveyDataset, cap: float = DEFAULT_CAP,
                    tax_threshold: float = TAX_THRESHOLD, standardize: bool = True) -> CompiledData:
    """Build domains, design matrices and design information.

    Households are put in sorted id order so that results do not depend on
    the input order.
    """
    records = sorted(dataset.records, key=lambda r: r.id)
    L = dataset.n_components
    held = np.array([r.holdings.flags for r in records], dtype=bool)
    covs = []
    for l in range(L):
        dim = next(len(r.covariates[l]) for r in records if r.covariates[l] is not None) if held[:, l].any() else 1
        X = np.zeros((len(records), dim))
        X[:, 0] = 1.0
        for k, r in enumerate(records):
            if r.covariates[l] is not None:
                X[k] = r.covariates[l]
        covs.append(X)
    patterns = np.array([r.pattern for r in records])
    model = PatternModel(covs, held, patterns, standardize=standardize)
    model.check_pattern_sizes()
    domains = [build_domain(r, tax_threshold, cap) for r in records]
    sd = dataset.design
    kind = "StratifiedSRS" if sd.kind == "SRSWOR" and sd.strata and len(sd.strata) > 1 else sd.kind
    psu = None
    if kind == "TwoStageCluster":
        psu = np.array([r.psu if r.psu is not None else r.id for r in records])
    aux = None
    if sd.calibration_totals is not None:
        aux = np.array([r.aux for r in records], dtype=float)
    design = SampleDesign(kind, np.array([r.stratum for r in records]), psu, sd.strata, aux)
    return CompiledData(
        ids=[r.id for r in records],
        weights=np.array([r.weight for r in records]),
        shares=np.array([r.shares for r in records]) * held,
        held=held,
        patterns=patterns,
        domains=domains,
        packed=pack_domains(domains),
        model=model,
        design=design,
        keys=np.array([string_key(r.id) for r in records], dtype=np.uint64),
    )


@dataclass
class ChainState:
    params: ModelParams
    W: np.ndarray  # (m, L) wealth, zero where not held
    e: float = 0.0
    sweep: int = 0

    @property
    def latent(self):
        """Log wealth of held components (NaN where not held)."""
        with np.errstate(divide="ignore"):
            return np.where(self.W > 0, np.log(np.where(self.W > 0, self.W, 1.0)), np.nan)


def init_state(data: CompiledData) -> tuple:
    """Initial state and the number of households that needed the LP fallback.

    Wealth starts at an interior point of each domain (see
    :func:`interior_points`); each pattern covariance starts diagonal with
    the per-component variances of the initial log amounts; coefficients
    start at zero (they are drawn first, so their start value is unused).
    """
    try:
        W, fallback = interior_points(data.packed, data.domains, data.ids)
    except InfeasibleDomainError as exc:
        raise ChainError(str(exc)) from exc
    Y = _log_held(W, data.held)
    sigma = {}
    for blk in data.model.blocks:
        v = Y[np.ix_(blk.rows, blk.components)].var(axis=0) if blk.m > 1 else np.ones(blk.p)
        sigma[blk.pattern] = np.diag(np.maximum(v, _INIT_VAR_FLOOR))
    params = ModelParams(np.zeros(data.model.d), sigma)
    return ChainState(params, W), len(fallback)


def _log_held(W, held):
    return np.where(held, np.log(np.where(held, W, 1.0)), 0.0)


def _update_latent(state: ChainState, data: CompiledData, stream_key: int):
    model = data.model
    eng = data.engine
    W = state.W
    Y = _log_held(W, data.held)
    mu = model.means(state.params.b)
    precs = {blk.pattern: np.linalg.inv(state.params.sigma[blk.pattern]) for blk in model.blocks}
    G = eng.totals(W)
    cmean = np.empty(data.m)
    csd = np.empty(data.m)
    for l in range(data.L):
        for blk, a, ix in data.conditioning[l]:
            cm, cs = conditional_moments(mu[ix], Y[ix], precs[blk.pattern], a)
            cmean[blk.rows] = cm
            csd[blk.rows] = cs
        lo, hi, empty = eng.bounds(l, W, G)
        rows = data.held[:, l]
        broken = rows & empty
        if broken.any():
            k = int(np.argmax(broken))
            raise ChainError(
                f"sweep {state.sweep}: household {data.ids[k]} has no admissible value for component {l + 1}"
            )
        idx = data.holders[l]
        old = W[:, l].copy()
        loglo = np.log(lo[idx])
        loghi = np.log(hi[idx])
        movable = loglo < loghi
        free = idx[movable]
        pinned = idx[~movable]
        W[pinned, l] = lo[pinned]
        if free.size:
            src = CounterSource(data.keys[free], derive_key(stream_key, state.sweep, l))
            x = truncated_normal(cmean[free], csd[free], loglo[movable], loghi[movable], src)
            W[free, l] = np.clip(np.exp(x), lo[free], hi[free])
        eng.update(G, l, old, W[:, l])
        Y[idx, l] = np.log(W[idx, l])
    return Y


def sweep(state: ChainState, data: CompiledData, rng: np.random.Generator, stream_key: int) -> ChainState:
    """One full sweep in the fixed block order; updates ``state`` in place and returns it."""
    model = data.model
    Y = _log_held(state.W, data.held)
    state.sweep += 1
    try:
        b = draw_coefficients(model, Y, state.params.sigma, rng)
        state.params.b = b
        for blk in model.blocks:
            S = model.residual_matrix(blk, Y, b)
            state.params.sigma[blk.pattern] = draw_sigma(S, blk.m, rng)
    except np.linalg.LinAlgError as exc:
        raise ChainError(f"sweep {state.sweep}: parameter update failed: {exc}") from exc
    _update_latent(state, data, stream_key)
    state.e = float(rng.standard_normal())
    return state


@dataclass
class ChainOutput:
    """All recorded sweeps of one chain.

    ``ghat, vhat, g`` have shape ``(T, S)`` with one column per summary.
    """

    labels: tuple
    summaries: tuple
    ghat: np.ndarray
    vhat: np.ndarray
    e: np.ndarray
    g: np.ndarray
    config: ChainConfig
    chain: int = 0
    coefficients: Optional[np.ndarray] = None  # (T, d), original covariate scale
    sigmas: dict = field(default_factory=dict)  # pattern -> (T, p, p)
    columns: tuple = ()
    n_lp_init: int = 0
    elapsed: float = 0.0
    final_state: Optional[ChainState] = None

    @property
    def T(self):
        return len(self.e)


class SummaryEvaluator:
    """Plug-in values and design variances of the requested summaries for given totals."""

    def __init__(self, data: CompiledData, specs, mode: str = "Linearization", refresh_every: int = 10):
        self.specs = tuple(specs)
        self.mode = mode
        self.refresh_every = refresh_every
        self.weights = data.weights
        self.design = data.design
        self.op = VarianceOperator(data.weights, data.design) if specs else None
        self._last_v = None
        self._calls = 0

    def __call__(self, t):
        if not self.specs:
            return np.zeros(0), np.zeros(0)
        prep = PreparedSample(t, self.weights)
        ghat = np.array([prep.value(s) for s in self.specs])
        refresh = self.mode != "FastApprox" or self._last_v is None or self._calls % self.refresh_every == 0
        self._calls += 1
        if refresh:
            if self.mode == "Jackknife":
                sample = WeightedSample(t, self.weights)
                v = np.array([jackknife_variance(s, sample, self.design).value for s in self.specs])
            else:
                Z = np.column_stack([prep.influence(s) for s in self.specs])
                v = np.asarray(self.op.variance(Z))
            self._last_v = v
        return ghat, self._last_v


def run_chain(data: CompiledData, config: ChainConfig, chain: int = 0, progress=None) -> ChainOutput:
    """Run one chain for ``config.total_sweeps`` sweeps and record every sweep."""
    stream = RngStream(config.seed, chain)
    rng = stream.generator()
    state, n_lp = init_state(data)
    specs = config.summaries
    T, S = config.total_sweeps, len(specs)
    ghat = np.empty((T, S))
    vhat = np.empty((T, S))
    e = np.empty(T)
    coefs = np.empty((T, data.model.d)) if config.record_params else None
    sig = {blk.pattern: np.empty((T, blk.p, blk.p)) for blk in data.model.blocks} if config.record_params else {}
    evaluate = SummaryEvaluator(data, specs, config.variance_mode, config.refresh_every)
    start = time.perf_counter()
    for n in range(T):
        sweep(state, data, rng, stream.key)
        if config.check_domains == "every" or (
            config.check_domains == "sampled" and (n % _CHECK_EVERY == 0 or n == T - 1)
        ):
            inside = contains_packed(data.packed, state.W, rel_tol=1e-7)
            if not inside.all():
                k = int(np.argmin(inside))
                raise ChainError(f"sweep {state.sweep}: household {data.ids[k]} left its domain")
        t = (data.shares * state.W).sum(axis=1)
        ghat[n], vhat[n] = evaluate(t)
        e[n] = state.e
        if config.record_params:
            coefs[n] = data.model.original_coefficients(state.params.b)
            for i, M in state.params.sigma.items():
                sig[i][n] = M
        if progress is not None:
            progress(chain, n + 1, T)
    g = ghat + np.sqrt(vhat) * e[:, None]
    if not np.all(np.isfinite(g)):
        raise ChainError("non-finite summary draw")
    return ChainOutput(
        labels=tuple(s.label for s in specs),
        summaries=specs,
        ghat=ghat,
        vhat=vhat,
        e=e,
        g=g,
        config=config,
        chain=chain,
        coefficients=coefs,
        sigmas=sig,
        columns=tuple(data.model.columns),
        n_lp_init=n_lp,
        elapsed=time.perf_counter() - start,
        final_state=state,
    )


def run(dataset, config: ChainConfig, progress=None) -> list:
    """Run ``config.chains`` independent chains (stream ids ``0..chains-1``)."""
    data = dataset if isinstance(dataset, CompiledData) else compile_dataset(
        dataset, config.cap, config.tax_threshold
    )
    return [run_chain(data, config, c, progress) for c in range(config.chains)]
