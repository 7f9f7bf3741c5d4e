"""Per-gene actor-critic agents."""

from __future__ import annotations

import numpy as np

from .neural import LATENT_DIM, AdamState, DenseNet, adam_step
from .replay import DISCARD, SELECT, PrioritizedBuffer

PRIORITY_FLOOR = 1e-3


def seed_stream(*parts) -> np.random.Generator:
    """Independent generator keyed by integer parts, e.g. (master_seed, tag, gene, iteration)."""
    return np.random.default_rng(np.random.SeedSequence([int(p) for p in parts]))


class GeneAgent:
    """Decides select/discard for one gene from the shared state.

    Actor ``state -> hidden -> softmax(2)`` with index 0 = select; critic
    ``state -> hidden -> 1``.
    """

    def __init__(self, gene_index: int, master_seed: int = 0, hidden: int = 8, lr: float = 0.005,
                 capacity: int = 400, state_dim: int = LATENT_DIM, priority_exponent: float = 0.6):
        self.gene_index = gene_index
        rng = seed_stream(master_seed, 1, gene_index)
        self.actor = DenseNet((state_dim, hidden, 2), output="softmax", rng=rng)
        self.critic = DenseNet((state_dim, hidden, 1), rng=rng)
        self.actor_opt = AdamState.for_params(self.actor.params, lr=lr)
        self.critic_opt = AdamState.for_params(self.critic.params, lr=lr)
        self.buffer = PrioritizedBuffer(capacity, state_dim, priority_exponent)

    def value(self, states) -> np.ndarray:
        return self.critic(np.atleast_2d(states))[:, 0]

    def td_error(self, s, reward, s_next, gamma) -> float:
        v = self.value(s)[0]
        v_next = self.value(s_next)[0] if np.any(s_next) else 0.0
        return reward + gamma * v_next - v


def act(agent: GeneAgent, s, mode: str = "sample", rng=None) -> int:
    """SELECT or DISCARD. Greedy ties go to SELECT."""
    probs = agent.actor(s)
    if mode == "greedy":
        return SELECT if probs[SELECT] >= probs[DISCARD] else DISCARD
    if mode != "sample":
        raise ValueError(f"unknown mode {mode!r}")
    return SELECT if rng.random() < probs[SELECT] else DISCARD


def optimize_agent(agent: GeneAgent, gamma: float = 0.9, minibatch: int = 32, rng=None):
    """One critic step and one actor step on a prioritized minibatch.

    Returns ``(critic_loss, actor_loss)``, or ``None`` when the buffer holds
    fewer than ``minibatch`` experiences.
    """
    buf = agent.buffer
    if len(buf) < minibatch:
        return None
    idx = buf.sample(minibatch, rng)
    s, a, r, s2 = buf.states[idx], buf.actions[idx], buf.rewards[idx], buf.next_states[idx]

    v, c_cache = agent.critic.forward(s)
    v = v[:, 0]
    v_next = agent.critic(s2)[:, 0]
    v_next = np.where(np.any(s2 != 0, axis=1), v_next, 0.0)
    target = r + gamma * v_next
    td = target - v
    critic_loss = float(np.mean(td ** 2))
    c_grads, _ = agent.critic.backward(c_cache, (2.0 * (v - target) / minibatch)[:, None])

    probs, a_cache = agent.actor.forward(s)
    rows = np.arange(minibatch)
    p_taken = probs[rows, a]
    actor_loss = float(np.mean(-np.log(p_taken) * td))
    out_grad = np.zeros_like(probs)
    out_grad[rows, a] = -td / (p_taken * minibatch)
    a_grads, _ = agent.actor.backward(a_cache, out_grad)

    adam_step(agent.critic, agent.critic_opt, c_grads)
    adam_step(agent.actor, agent.actor_opt, a_grads)
    buf.update_priorities(idx, np.abs(td) + PRIORITY_FLOOR)
    return critic_loss, actor_loss
