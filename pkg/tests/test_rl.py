import logging
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from genepanel.agents import PRIORITY_FLOOR, GeneAgent, act, optimize_agent, seed_stream
from genepanel.errors import DegenerateInput
from genepanel.expr import GeneMask, normalize, subset_genes
from genepanel.graph import pseudo_labels
from genepanel.prefilter import METHODS, PrefilterConfig, prefilter_pipeline
from genepanel.replay import DISCARD, SELECT, PrioritizedBuffer
from genepanel.reward import reward_compact, reward_spatial, reward_total
from genepanel.selection import (
    SelectConfig,
    SelectionEnv,
    ablation_run,
    explore_step,
    inject_knowledge,
    run_selection,
)
from genepanel.synth import SynthConfig, generate_planted

SMALL = SynthConfig(n_cells=80, n_genes=40, n_informative=8, n_clusters=3, seed=3)
FAST = SelectConfig(epochs=12, warmup_experiences=8, minibatch=4, ae_epochs=3, master_seed=5)


@pytest.fixture(scope="module")
def small():
    ds = generate_planted(SMALL)
    m = normalize(ds.matrix)
    pre = prefilter_pipeline(m, PrefilterConfig(min_genes=10))
    return ds, m, pre


def _agents(env, cfg):
    return [GeneAgent(i, cfg.master_seed, cfg.hidden, cfg.lr, cfg.memory) for i in range(env.n_pre)]


def _force(agents, p_select_logit):
    for a in agents:
        a.actor.params[-2][:] = 0.0
        a.actor.params[-1][:] = [p_select_logit, -p_select_logit]


# ----------------------------------------------------------------- replay

def test_buffer_never_exceeds_capacity():
    buf = PrioritizedBuffer(400, state_dim=2)
    for i in range(1000):
        buf.push(np.zeros(2), i % 2, float(i), np.zeros(2), 1.0 + i)
        assert len(buf) <= 400
    assert len(buf) == 400
    # oldest entries were overwritten in ring order
    assert sorted(buf.rewards.tolist())[0] == 600.0


def test_buffer_sampling_follows_priority_power():
    buf = PrioritizedBuffer(4, state_dim=1)
    for p in (1.0, 2.0, 4.0, 8.0):
        buf.push(np.zeros(1), SELECT, 0.0, np.zeros(1), p)
    draws = buf.sample(100_000, np.random.default_rng(0))
    expected = np.array([1.0, 2.0, 4.0, 8.0]) ** 0.6
    expected = expected / expected.sum() * draws.size
    assert chisquare(np.bincount(draws, minlength=4), expected).pvalue > 0.01


def test_buffer_rejects_bad_priorities():
    buf = PrioritizedBuffer(4, state_dim=1)
    with pytest.raises(ValueError):
        buf.push(np.zeros(1), SELECT, 0.0, np.zeros(1), 0.0)
    buf.push(np.zeros(1), SELECT, 0.0, np.zeros(1), 1.0)
    with pytest.raises(ValueError):
        buf.update_priorities([0], [np.inf])
    with pytest.raises(IndexError):
        buf[3]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=20))
def test_buffer_probabilities_normalized(priorities):
    buf = PrioritizedBuffer(32, state_dim=1)
    for p in priorities:
        buf.push(np.zeros(1), SELECT, 0.0, np.zeros(1), p)
    probs = buf.probabilities()
    assert probs.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(probs, np.array(priorities) ** 0.6 / np.sum(np.array(priorities) ** 0.6))


# ----------------------------------------------------------------- reward

def test_compact_reward_examples():
    assert reward_compact(37, 37) == 0.0
    assert reward_compact(37, 0) == 1.0
    assert reward_compact(100, 50, 0.7) == pytest.approx(50 / 135, abs=1e-12)
    with pytest.raises(ValueError):
        reward_compact(10, 11)
    with pytest.raises(ValueError):
        reward_compact(0, 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 300), st.floats(0.01, 1.0))
def test_compact_reward_strictly_decreasing(p, lam):
    values = [reward_compact(p, n, lam) for n in range(p + 1)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert all(-1 / lam < v <= 1 for v in values)


def test_total_reward_mix():
    assert reward_total(0.8, 0.4, 0.5).r_total == pytest.approx(0.6, abs=1e-15)
    assert reward_total(0.8, 0.4, 1.0).r_total == 0.8
    assert reward_total(0.8, 0.4, 0.0).r_total == 0.4
    with pytest.raises(ValueError):
        reward_total(0.1, 0.1, 1.5)


def test_spatial_reward_full_set_and_empty(small):
    _, m, pre = small
    m_pre = subset_genes(m, pre.mask)
    pseudo = pseudo_labels(m_pre)
    assert reward_spatial(m_pre, pseudo) == 1.0
    assert reward_spatial(subset_genes(m_pre, GeneMask.empty(m_pre.n_genes)), pseudo) == 0.0


def test_spatial_reward_prefers_informative_genes():
    for seed in range(1, 6):
        ds = generate_planted(SynthConfig(seed=seed))
        m = normalize(ds.matrix)
        pseudo = pseudo_labels(m)
        noise = np.flatnonzero(~ds.informative.bits)
        rng = np.random.default_rng([seed, 99])
        random_panel = GeneMask.from_indices(rng.choice(noise, ds.informative.n_selected, replace=False), 200)
        assert reward_spatial(subset_genes(m, ds.informative), pseudo) > \
            reward_spatial(subset_genes(m, random_panel), pseudo)


# ----------------------------------------------------------------- agents

def test_agent_architecture():
    agent = GeneAgent(0)
    assert agent.actor.layer_dims == (64, 8, 2) and agent.actor.output == "softmax"
    assert agent.critic.layer_dims == (64, 8, 1)
    assert agent.buffer.capacity == 400


def test_greedy_tie_selects():
    agent = GeneAgent(0)
    _force([agent], 0.0)
    assert act(agent, np.ones(64), "greedy") == SELECT


def test_sampling_frequency_with_strong_logits():
    agent = GeneAgent(0)
    _force([agent], 10.0)
    rng = np.random.default_rng(0)
    picks = [act(agent, np.zeros(64), "sample", rng) for _ in range(10_000)]
    assert np.mean(np.array(picks) == SELECT) > 0.99


def test_sampling_reproducible():
    agent = GeneAgent(2, master_seed=1)
    s = np.random.default_rng(0).normal(size=64)
    a = [act(agent, s, "sample", seed_stream(1, 2, 2, t)) for t in range(50)]
    b = [act(agent, s, "sample", seed_stream(1, 2, 2, t)) for t in range(50)]
    assert a == b and len(set(a)) == 2
    with pytest.raises(ValueError):
        act(agent, s, "epsilon")


def _constant_critic(agent, value):
    agent.critic.params[-2][:] = 0.0
    agent.critic.params[-1][:] = value


def test_td_target_with_zero_discount():
    agent = GeneAgent(0)
    s, s2 = np.ones(64), np.full(64, 2.0)
    agent.buffer.push(s, SELECT, 0.7, s2, 1.0)
    v = agent.value(s)[0]
    optimize_agent(agent, gamma=0.0, minibatch=1, rng=np.random.default_rng(0))
    assert agent.buffer.priorities[0] == pytest.approx(abs(0.7 - v) + PRIORITY_FLOOR, abs=1e-12)


def test_td_target_hand_value():
    agent = GeneAgent(0)
    _constant_critic(agent, 0.5)
    agent.buffer.push(np.ones(64), SELECT, 1.0, np.ones(64), 1.0)
    optimize_agent(agent, gamma=0.9, minibatch=1, rng=np.random.default_rng(0))
    # target 1 + 0.9 * 0.5 = 1.45, advantage 1.45 - 0.5
    assert agent.buffer.priorities[0] == pytest.approx(0.95 + PRIORITY_FLOOR, abs=1e-12)


def test_terminal_zero_state_bootstraps_nothing():
    agent = GeneAgent(0)
    _constant_critic(agent, 0.5)
    agent.buffer.push(np.ones(64), SELECT, 1.0, np.zeros(64), 1.0)
    optimize_agent(agent, gamma=0.9, minibatch=1, rng=np.random.default_rng(0))
    assert agent.buffer.priorities[0] == pytest.approx(0.5 + PRIORITY_FLOOR, abs=1e-12)


def test_critic_converges_on_frozen_experience():
    agent = GeneAgent(0, master_seed=3)
    agent.buffer.push(np.random.default_rng(1).normal(size=64), DISCARD, 0.8, np.zeros(64), 1.0)
    rng = np.random.default_rng(0)
    losses = [optimize_agent(agent, 0.9, 1, rng)[0] for _ in range(500)]
    assert losses[-1] < 1e-4


def test_optimize_signals_small_buffer():
    agent = GeneAgent(0)
    agent.buffer.push(np.ones(64), SELECT, 1.0, np.ones(64), 1.0)
    assert optimize_agent(agent, minibatch=32, rng=np.random.default_rng(0)) is None


def test_actor_step_raises_probability_of_advantaged_action():
    agent = GeneAgent(0, master_seed=2)
    s = np.random.default_rng(2).normal(size=64)
    _constant_critic(agent, 0.0)
    agent.buffer.push(s, DISCARD, 1.0, np.zeros(64), 1.0)
    before = agent.actor(s)[DISCARD]
    optimize_agent(agent, 0.9, 1, np.random.default_rng(0))
    assert agent.actor(s)[DISCARD] > before


# ------------------------------------------------------ injection, explore

def test_injection_fills_every_buffer(small):
    _, m, pre = small
    env = SelectionEnv(subset_genes(m, pre.mask), FAST)
    agents = _agents(env, FAST)
    injected = inject_knowledge(agents, env, METHODS)
    assert all(len(a.buffer) == 5 for a in agents)
    for j, (_, panel, rb) in enumerate(injected):
        assert panel.n_selected == round(env.n_pre / 2)
        for a in agents:
            exp = a.buffer[j]
            assert exp.action == (SELECT if panel.bits[a.gene_index] else DISCARD)
            assert exp.reward == rb.r_total and exp.priority == 1.0


def test_injection_without_methods_warns(small, caplog):
    _, m, pre = small
    env = SelectionEnv(subset_genes(m, pre.mask), FAST)
    agents = _agents(env, FAST)
    with caplog.at_level(logging.WARNING):
        assert inject_knowledge(agents, env, ()) == []
    assert "no methods" in caplog.text
    assert all(len(a.buffer) == 0 for a in agents)


def test_informative_panel_reward_beats_random_panel():
    for seed in range(1, 6):
        ds = generate_planted(SynthConfig(seed=seed))
        m = normalize(ds.matrix)
        env = SelectionEnv(m, replace(FAST, master_seed=seed))
        rng = np.random.default_rng([seed, 99])
        random_bits = np.zeros(200, dtype=bool)
        random_bits[rng.choice(200, ds.informative.n_selected, replace=False)] = True
        assert env.reward(ds.informative.bits).r_total > env.reward(random_bits).r_total


def test_explore_extremes_and_equal_assignment(small):
    _, m, pre = small
    env = SelectionEnv(subset_genes(m, pre.mask), FAST)
    agents = _agents(env, FAST)
    state = env.state(np.ones(env.n_pre, dtype=bool), 1, 0)

    _force(agents, -1e3)
    bits, rb, _ = explore_step(agents, env, state, 0)
    assert not bits.any() and (rb.r_s, rb.r_c) == (0.0, 1.0)

    _force(agents, 1e3)
    bits, rb, _ = explore_step(agents, env, state, 1)
    assert bits.all() and rb.r_c == 0.0
    assert all(len(a.buffer) == 2 for a in agents)
    rewards = {a.buffer[1].reward for a in agents}
    assert rewards == {rb.r_total}


# ------------------------------------------------------------- run loop

def test_run_selection_contract(small):
    _, m, pre = small
    res = run_selection(m, pre, FAST)
    assert len(res.trace) == FAST.epochs
    totals = [row.r_total for row in res.trace]
    assert res.best_iteration == int(np.argmax(totals))
    assert res.best.r_total == max(totals)
    for row in res.trace:
        assert row.r_total == pytest.approx(0.5 * row.r_s + 0.5 * row.r_c, abs=1e-15)
        assert 0.0 <= row.r_s <= 1.0 and row.nmi == row.r_s
    assert res.best_mask.n_selected == res.trace[res.best_iteration].n_selected
    assert not (res.best_mask.bits & ~pre.mask.bits).any()
    assert not (res.greedy_mask.bits & ~pre.mask.bits).any()


def test_run_selection_deterministic_and_thread_independent(small):
    _, m, pre = small
    a = run_selection(m, pre, FAST)
    b = run_selection(m, pre, replace(FAST, threads=3))
    assert a.trace == b.trace
    assert a.best_mask == b.best_mask and a.greedy_mask == b.greedy_mask


def test_run_selection_budget_abort(small):
    _, m, pre = small
    res = run_selection(m, pre, replace(FAST, epochs=400, budget_seconds=0.0))
    assert res.aborted and len(res.trace) == 1


def test_run_selection_rejects_empty_prefilter(small):
    _, m, _ = small
    with pytest.raises(DegenerateInput):
        run_selection(m, GeneMask.empty(m.n_genes), FAST)


def test_select_config_validation():
    for bad in (dict(alpha=0.0), dict(lam=1.5), dict(gamma=1.0), dict(minibatch=500)):
        with pytest.raises(ValueError):
            replace(FAST, **bad).validate()


# ------------------------------------------------------------- ablations

def test_ablation_all_genes(small):
    _, m, _ = small
    res = ablation_run(m, "-a", FAST)
    assert res.best_mask == GeneMask.full(m.n_genes) and res.trace == []


def test_ablation_prefilter_only(small):
    _, m, pre = small
    res = ablation_run(m, "-r", FAST, prefilter=pre)
    assert res.best_mask == pre.mask
    assert res.best.r_s == 1.0


def test_ablation_no_injection(small):
    _, m, pre = small
    res = ablation_run(m, "-k", FAST, prefilter=pre)
    assert res.injected == [] and len(res.trace) == FAST.epochs


def test_ablation_without_prefilter_and_cap(small):
    _, m, _ = small
    res = ablation_run(m, "-f", replace(FAST, epochs=3))
    assert len(res.best_mask) == m.n_genes and len(res.trace) == 3
    with pytest.raises(ValueError, match="cap"):
        ablation_run(m, "-f", FAST, max_genes_f=10)
    with pytest.raises(ValueError):
        ablation_run(m, "-z", FAST)
