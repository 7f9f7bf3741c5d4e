"""Knowledge injection, exploration and actor-critic optimization over gene agents."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .agents import PRIORITY_FLOOR, GeneAgent, act, optimize_agent, seed_stream
from .errors import DegenerateInput
from .expr import ExpressionMatrix, GeneMask, descriptive_stats, subset_genes
from .graph import ClusterAssignment, ClusterParams, pseudo_labels
from .neural import LATENT_DIM, AdamState, _ParamView, adam_step, encode_state, train_autoencoder
from .prefilter import METHODS, PrefilterConfig, PrefilterResult, prefilter_pipeline, score_genes, top_k
from .replay import SELECT
from .reward import RewardBreakdown, reward_compact, reward_spatial, reward_total

log = logging.getLogger(__name__)

VARIANTS = ("full", "-r", "-k", "-f", "-a")


@dataclass(frozen=True)
class SelectConfig:
    alpha: float = 0.5
    lam: float = 0.7
    gamma: float = 0.9
    epochs: int = 400
    minibatch: int = 32
    lr: float = 0.005
    warmup_experiences: int = 64
    memory: int = 400
    hidden: int = 8
    ae_epochs: int = 10
    master_seed: int = 0
    inject: bool = True
    inject_methods: tuple = METHODS
    cluster: ClusterParams = ClusterParams()
    warm_start_ae: bool = False
    per_step_reference: bool = False
    threads: int = 1
    budget_seconds: float | None = None

    def validate(self) -> None:
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0 < self.lam <= 1:
            raise ValueError("lambda must lie in (0, 1]")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.minibatch > self.memory:
            raise ValueError("minibatch cannot exceed the replay memory size")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    n_selected: int
    r_s: float
    r_c: float
    r_total: float
    nmi: float


@dataclass(eq=False)
class SelectionResult:
    best_mask: GeneMask
    best: RewardBreakdown
    best_iteration: int
    trace: list
    greedy_mask: GeneMask
    pre_mask: GeneMask
    variant: str = "full"
    injected: list = field(default_factory=list)
    aborted: bool = False
    runtime_seconds: float = 0.0


class StateEncoder:
    """Maps a selected-gene matrix to the shared 64-d state.

    By default a fresh autoencoder is trained for every call with a seed
    derived from ``(master_seed, tag, step)``; ``warm_start`` keeps training one
    network across calls instead.
    """

    def __init__(self, master_seed: int, epochs: int = 10, lr: float = 0.005, warm_start: bool = False):
        self.master_seed = master_seed
        self.epochs = epochs
        self.lr = lr
        self.warm_start = warm_start
        self._ae = None

    def __call__(self, m_selected: ExpressionMatrix, tag: int, step: int) -> np.ndarray:
        seed = np.random.SeedSequence([self.master_seed, 4, tag, step])
        if not self.warm_start:
            return encode_state(m_selected, seed=seed, epochs=self.epochs, lr=self.lr)
        if m_selected.n_genes == 0:
            return np.zeros(LATENT_DIM)
        stats = descriptive_stats(m_selected)
        self._ae = _continue_training(self._ae, stats.table, self.epochs, seed, self.lr)
        return self._ae.encode(stats.table).mean(axis=0)


def _continue_training(ae, x, epochs, seed, lr):
    if ae is None:
        return train_autoencoder(x, epochs=epochs, seed=seed, lr=lr)
    ae.shift = x.mean(axis=0)
    sd = x.std(axis=0)
    ae.scale = np.where(sd > 0, sd, 1.0)
    xs = ae.standardize(x)
    if not hasattr(ae, "_opt"):
        ae._opt = AdamState.for_params(ae.params, lr=lr)
    view = _ParamView(ae)
    for _ in range(epochs):
        out, cache = ae.forward(xs)
        diff = out - xs
        grads, _ = ae.backward(cache, 2.0 * diff / diff.size)
        adam_step(view, ae._opt, grads)
    return ae


class SelectionEnv:
    """Everything the agents interact with: the pre-filtered matrix, the fixed
    pseudo-labels and the reward/state machinery."""

    def __init__(self, m_pre: ExpressionMatrix, cfg: SelectConfig, reference: ClusterAssignment | None = None):
        self.m_pre = m_pre
        self.cfg = cfg
        self.n_pre = m_pre.n_genes
        self.pseudo = reference if reference is not None else pseudo_labels(m_pre, cfg.cluster)
        self.encoder = StateEncoder(cfg.master_seed, cfg.ae_epochs, cfg.lr, cfg.warm_start_ae)
        self.n_evaluations = 0
        self._reference = self.pseudo

    def select(self, bits) -> ExpressionMatrix:
        return subset_genes(self.m_pre, GeneMask(bits))

    def reward(self, bits) -> RewardBreakdown:
        bits = np.asarray(bits, dtype=bool)
        m_sel = self.select(bits)
        self.n_evaluations += 1
        r_s = reward_spatial(m_sel, self._reference, self.cfg.cluster)
        r_c = reward_compact(self.n_pre, int(bits.sum()), self.cfg.lam)
        if self.cfg.per_step_reference and m_sel.n_genes > 0:
            self._reference = pseudo_labels(m_sel, self.cfg.cluster)
        return reward_total(r_s, r_c, self.cfg.alpha)

    def state(self, bits, tag: int, step: int) -> np.ndarray:
        return self.encoder(self.select(bits), tag, step)


def _make_agents(n: int, cfg: SelectConfig):
    return [GeneAgent(i, cfg.master_seed, cfg.hidden, cfg.lr, cfg.memory) for i in range(n)]


def inject_knowledge(agents, env: SelectionEnv, methods=METHODS, q: int | None = None):
    """Seed every agent's memory with one experience per baseline panel.

    Each method scores the pre-filtered genes against the pseudo-labels and
    proposes its top-q genes (q = half the pre-filtered set by default). The
    experience is (state of the full pre-filtered set, the method's action for
    this gene, the panel's reward, state of the panel) at priority 1.
    """
    methods = tuple(methods)
    if not methods:
        log.warning("knowledge injection requested with no methods; skipping")
        return []
    n = env.n_pre
    q = q if q is not None else max(1, int(np.floor(n / 2 + 0.5)))
    s0 = env.state(np.ones(n, dtype=bool), tag=1, step=0)
    injected = []
    for j, method in enumerate(methods):
        scores = score_genes(env.m_pre, env.pseudo, method, rng_seed=env.cfg.master_seed)
        panel = top_k(scores, min(q, n)).bits
        rb = env.reward(panel)
        s1 = env.state(panel, tag=2, step=j)
        for agent in agents:
            action = SELECT if panel[agent.gene_index] else 1 - SELECT
            agent.buffer.push(s0, action, rb.r_total, s1, 1.0)
        injected.append((method, GeneMask(panel), rb))
    return injected


def explore_step(agents, env: SelectionEnv, state, iteration: int):
    """All agents act on the shared state; returns ``(bits, breakdown, next_state)``.

    The same total reward is stored for every agent, with priority equal to
    that agent's absolute TD error plus a small floor.
    """
    seed = env.cfg.master_seed
    actions = np.array([act(a, state, "sample", seed_stream(seed, 2, a.gene_index, iteration)) for a in agents])
    bits = actions == SELECT
    rb = env.reward(bits)
    s_next = env.state(bits, tag=3, step=iteration)
    for agent, action in zip(agents, actions):
        td = agent.td_error(state, rb.r_total, s_next, env.cfg.gamma)
        agent.buffer.push(state, action, rb.r_total, s_next, abs(td) + PRIORITY_FLOOR)
    return bits, rb, s_next


def _optimize_all(agents, cfg: SelectConfig, iteration: int, pool=None):
    def one(agent):
        return optimize_agent(agent, cfg.gamma, cfg.minibatch, seed_stream(cfg.master_seed, 3, agent.gene_index, iteration))

    if pool is None:
        return [one(a) for a in agents]
    return list(pool.map(one, agents))


def _embed(bits_pre, pre_mask: GeneMask) -> GeneMask:
    full = np.zeros(len(pre_mask), dtype=bool)
    full[pre_mask.indices[np.asarray(bits_pre, dtype=bool)]] = True
    return GeneMask(full)


def run_selection(m: ExpressionMatrix, prefilter, cfg: SelectConfig = SelectConfig(),
                  variant: str = "full") -> SelectionResult:
    """Knowledge injection, then ``cfg.epochs`` explore(+optimize) iterations.

    ``m`` is the (normalized) full matrix and ``prefilter`` a PrefilterResult
    or GeneMask over its genes. The best mask is the highest total reward over
    all explored iterations, earliest on ties.
    """
    cfg.validate()
    t0 = time.perf_counter()
    pre_mask = prefilter.mask if isinstance(prefilter, PrefilterResult) else prefilter
    if pre_mask.n_selected == 0:
        raise DegenerateInput("pre-filtered gene set is empty")
    env = SelectionEnv(subset_genes(m, pre_mask), cfg)
    agents = _make_agents(env.n_pre, cfg)
    injected = inject_knowledge(agents, env, cfg.inject_methods) if cfg.inject else []
    state = env.state(np.ones(env.n_pre, dtype=bool), tag=1, step=0)

    trace, masks = [], []
    aborted = False
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for it in range(cfg.epochs):
            bits, rb, state = explore_step(agents, env, state, it)
            trace.append(TraceRow(it, int(bits.sum()), rb.r_s, rb.r_c, rb.r_total, rb.r_s))
            masks.append(bits)
            if len(agents[0].buffer) >= cfg.warmup_experiences:
                _optimize_all(agents, cfg, it, pool)
            if cfg.budget_seconds is not None and time.perf_counter() - t0 > cfg.budget_seconds:
                log.warning("budget of %.1fs exhausted after %d iterations", cfg.budget_seconds, it + 1)
                aborted = it + 1 < cfg.epochs
                break
    finally:
        if pool is not None:
            pool.shutdown()

    greedy_bits = np.array([act(a, state, "greedy") == SELECT for a in agents])
    if trace:
        best_it = int(np.argmax([row.r_total for row in trace]))
        row = trace[best_it]
        best = RewardBreakdown(row.r_s, row.r_c, row.r_total)
        best_bits = masks[best_it]
    else:
        best_it, best_bits = -1, np.ones(env.n_pre, dtype=bool)
        best = env.reward(best_bits)
    return SelectionResult(
        best_mask=_embed(best_bits, pre_mask),
        best=best,
        best_iteration=best_it,
        trace=trace,
        greedy_mask=_embed(greedy_bits, pre_mask),
        pre_mask=pre_mask,
        variant=variant,
        injected=injected,
        aborted=aborted,
        runtime_seconds=time.perf_counter() - t0,
    )


def ablation_run(m: ExpressionMatrix, variant: str, cfg: SelectConfig = SelectConfig(),
                 prefilter: PrefilterResult | GeneMask | None = None,
                 prefilter_cfg: PrefilterConfig | None = None, max_genes_f: int = 2000) -> SelectionResult:
    """Run one ablation: "full", "-r" (pre-filter only), "-k" (no injection),
    "-f" (agents over every gene) or "-a" (all genes, nothing learned)."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    t0 = time.perf_counter()
    if variant in ("-f", "-a"):
        everything = GeneMask.full(m.n_genes)
        if variant == "-f":
            if m.n_genes > max_genes_f:
                raise ValueError(f"variant -f refused: {m.n_genes} genes exceeds the cap of {max_genes_f}")
            return run_selection(m, everything, cfg, variant="-f")
        env = SelectionEnv(m, cfg)
        rb = env.reward(np.ones(m.n_genes, dtype=bool))
        return SelectionResult(everything, rb, -1, [], everything, everything, variant="-a",
                               runtime_seconds=time.perf_counter() - t0)
    if prefilter is None:
        pcfg = prefilter_cfg or PrefilterConfig(cluster=cfg.cluster, seed=cfg.master_seed, threads=cfg.threads)
        prefilter = prefilter_pipeline(m, pcfg)
    if variant == "-r":
        pre_mask = prefilter.mask if isinstance(prefilter, PrefilterResult) else prefilter
        env = SelectionEnv(subset_genes(m, pre_mask), cfg)
        rb = env.reward(np.ones(env.n_pre, dtype=bool))
        return SelectionResult(pre_mask, rb, -1, [], pre_mask, pre_mask, variant="-r",
                               runtime_seconds=time.perf_counter() - t0)
    if variant == "-k":
        return run_selection(m, prefilter, replace(cfg, inject=False), variant="-k")
    return run_selection(m, prefilter, cfg, variant="full")
