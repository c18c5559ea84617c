"""Critic-free policy-gradient trainer.

A feed-forward policy emits one categorical head per decision factor.
Advantages are discounted returns standardized with global batch statistics
(no baseline network), the surrogate is PPO-style clipped, and a quadratic
KL proxy to the frozen initial policy penalizes drift. Joint log-probability
is the sum of per-head log-probabilities across a slot's active users, so
the importance ratio lives at slot granularity.

Everything is plain numpy with manual backprop; the per-parameter adaptive
moment optimizer and the update loop are below.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig

EPS_NUM = 1e-8


class TrainError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Policy network
# ---------------------------------------------------------------------------


class PolicyNet:
    """Two tanh hidden layers; the output concatenates every head's logits."""

    def __init__(self, params, state_dim, head_sizes, hidden):
        self.params = params  # [W1, b1, W2, b2, W3, b3]
        self.state_dim = state_dim
        self.head_sizes = list(head_sizes)
        self.hidden = hidden
        self.head_offsets = np.concatenate([[0], np.cumsum(self.head_sizes)])

    @classmethod
    def init(cls, state_dim, head_sizes, hidden, rng):
        out_dim = int(np.sum(head_sizes))
        shapes = [(state_dim, hidden), (hidden,), (hidden, hidden), (hidden,), (hidden, out_dim), (out_dim,)]
        params = []
        for shape in shapes:
            if len(shape) == 1:
                params.append(np.zeros(shape))
            else:
                fan_in = shape[0]
                params.append(rng.standard_normal(shape) / math.sqrt(fan_in))
        return cls(params, state_dim, head_sizes, hidden)

    @property
    def out_dim(self):
        return int(self.head_offsets[-1])

    def copy(self):
        return PolicyNet([p.copy() for p in self.params], self.state_dim, self.head_sizes, self.hidden)

    def forward(self, states):
        """Batched logits; also returns the activation cache for backprop."""
        w1, b1, w2, b2, w3, b3 = self.params
        h1 = np.tanh(states @ w1 + b1)
        h2 = np.tanh(h1 @ w2 + b2)
        logits = h2 @ w3 + b3
        return logits, (states, h1, h2)

    def logits(self, state):
        out, _ = self.forward(np.asarray(state)[None, :])
        return out[0]

    def backward(self, cache, dlogits):
        states, h1, h2 = cache
        w1, b1, w2, b2, w3, b3 = self.params
        dw3 = h2.T @ dlogits
        db3 = dlogits.sum(axis=0)
        dh2 = (dlogits @ w3.T) * (1.0 - h2 * h2)
        dw2 = h1.T @ dh2
        db2 = dh2.sum(axis=0)
        dh1 = (dh2 @ w2.T) * (1.0 - h1 * h1)
        dw1 = states.T @ dh1
        db1 = dh1.sum(axis=0)
        return [dw1, db1, dw2, db2, dw3, db3]

    def get_flat(self):
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat):
        i = 0
        for p in self.params:
            p[...] = flat[i : i + p.size].reshape(p.shape)
            i += p.size


def forward_policy(net: PolicyNet, state, masks):
    """Masked categorical distribution per head.

    `masks` is a sequence aligned with the net's heads; None skips a head
    (no decision emitted there). Masked entries get probability exactly 0
    and the rest renormalize. An all-masked head is an error.
    """
    from .env import masked_probs

    logits = net.logits(state)
    out = {}
    for hid, mask in enumerate(masks):
        if mask is None:
            continue
        if not np.any(mask):
            raise ValueError(f"head {hid}: every entry is masked")
        seg = logits[net.head_offsets[hid] : net.head_offsets[hid + 1]]
        out[hid] = masked_probs(seg, np.asarray(mask, dtype=bool))
    return out


# ---------------------------------------------------------------------------
# Returns and advantages
# ---------------------------------------------------------------------------


def discounted_returns(rewards, gamma):
    """Suffix sums G_t within one episode."""
    out = np.zeros(len(rewards))
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def normalize_advantages(returns):
    """Standardize with global (population) batch statistics.

    Constant batches come out as all zeros thanks to the numeric floor.
    """
    g = np.asarray(returns, dtype=float)
    if g.size < 2:
        raise ValueError("need at least two samples to normalize")
    return (g - g.mean()) / (g.std() + EPS_NUM)


# ---------------------------------------------------------------------------
# Flattened decision batch
# ---------------------------------------------------------------------------


@dataclass
class DecisionBatch:
    states: np.ndarray  # (B, D)
    advantages: np.ndarray  # (B,)
    logp_old: np.ndarray  # (B,)
    logp_ref: np.ndarray  # (B,) filled after construction
    rec_slot: np.ndarray  # (R,) slot row of each head record
    rec_col: np.ndarray  # (R, max_head) logit columns per record (clipped)
    rec_action_col: np.ndarray  # (R,) absolute logit column of the action
    rec_mask: np.ndarray  # (R, max_head) bool, False on padding
    rewards: np.ndarray = None
    masked_out: int = 0
    extra: dict = field(default_factory=dict)


def build_batch(trajs, gamma, head_offsets, max_head, out_dim):
    states = np.concatenate([t.states for t in trajs], axis=0) if trajs else np.zeros((0, 0))
    rewards = np.concatenate([t.rewards for t in trajs])
    logp_old = np.concatenate([t.logp_old for t in trajs])
    returns = np.concatenate([discounted_returns(t.rewards, gamma) for t in trajs])

    rec_slot, rec_col, rec_action, rec_mask = [], [], [], []
    base = 0
    for traj in trajs:
        for t, recs in enumerate(traj.records):
            for rec in recs:
                s = int(head_offsets[rec.head_id])
                cols = np.minimum(s + np.arange(max_head), out_dim - 1)
                mask = np.zeros(max_head, dtype=bool)
                mask[: rec.mask.size] = rec.mask
                rec_slot.append(base + t)
                rec_col.append(cols)
                rec_action.append(s + rec.action)
                rec_mask.append(mask)
        base += len(traj.rewards)

    n_rec = len(rec_slot)
    batch = DecisionBatch(
        states=states,
        advantages=normalize_advantages(returns) if returns.size >= 2 else np.zeros_like(returns),
        logp_old=logp_old,
        logp_ref=np.zeros_like(logp_old),
        rec_slot=np.asarray(rec_slot, dtype=np.int64).reshape(n_rec),
        rec_col=np.asarray(rec_col, dtype=np.int64).reshape(n_rec, max_head),
        rec_action_col=np.asarray(rec_action, dtype=np.int64).reshape(n_rec),
        rec_mask=np.asarray(rec_mask, dtype=bool).reshape(n_rec, max_head),
        rewards=rewards,
        masked_out=sum(t.masked_out for t in trajs),
    )
    batch.extra["returns"] = returns
    return batch


def batch_log_probs(net: PolicyNet, batch: DecisionBatch, with_cache=False):
    """Per-slot joint log-probabilities under the given parameters."""
    n_slots = batch.states.shape[0]
    logits, cache = net.forward(batch.states)
    if batch.rec_slot.size == 0:
        zero = np.zeros(n_slots)
        return (zero, (logits, cache, None, None)) if with_cache else zero
    gathered = logits[batch.rec_slot[:, None], batch.rec_col]
    z = np.where(batch.rec_mask, gathered, -np.inf)
    zmax = z.max(axis=1)
    ez = np.exp(z - zmax[:, None])
    lse = zmax + np.log(ez.sum(axis=1))
    logp_rec = logits[batch.rec_slot, batch.rec_action_col] - lse
    logp = np.bincount(batch.rec_slot, weights=logp_rec, minlength=n_slots)
    if with_cache:
        probs = ez / ez.sum(axis=1, keepdims=True)
        probs[~batch.rec_mask] = 0.0
        return logp, (logits, cache, probs, None)
    return logp


def objective_and_grad(net: PolicyNet, batch: DecisionBatch, clip_eps, kl_coeff):
    """Value and parameter gradient of the clipped surrogate minus the
    quadratic KL proxy, plus logging stats."""
    n_slots = batch.states.shape[0]
    logp, (logits, cache, probs, _) = batch_log_probs(net, batch, with_cache=True)

    ratio = np.exp(logp - batch.logp_old)
    unclipped = ratio * batch.advantages
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * batch.advantages
    surrogate = float(np.mean(np.minimum(unclipped, clipped)))

    delta = logp - batch.logp_ref
    kl = float(np.mean(0.5 * delta * delta))
    value = surrogate - kl_coeff * kl

    # d(objective)/d(logp) per slot
    active = unclipped <= clipped
    w = (active * batch.advantages * ratio - kl_coeff * delta) / n_slots

    grads = [np.zeros_like(p) for p in net.params]
    stats = {
        "objective": value,
        "surrogate": surrogate,
        "kl": kl,
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > clip_eps)),
    }
    if batch.rec_slot.size:
        w_rec = w[batch.rec_slot]
        dlocal = -probs * w_rec[:, None]
        flat = np.bincount(
            (batch.rec_slot[:, None] * net.out_dim + batch.rec_col).ravel(),
            weights=dlocal.ravel(),
            minlength=n_slots * net.out_dim,
        )
        flat += np.bincount(
            batch.rec_slot * net.out_dim + batch.rec_action_col,
            weights=w_rec,
            minlength=n_slots * net.out_dim,
        )
        dlogits = flat.reshape(n_slots, net.out_dim)
        grads = net.backward(cache, dlogits)
    return value, grads, stats


def clipped_objective(net, batch, clip_eps):
    value, _, stats = objective_and_grad(net, batch, clip_eps, 0.0)
    return stats["surrogate"]


def kl_k2_penalty(net, batch):
    logp = batch_log_probs(net, batch)
    delta = logp - batch.logp_ref
    return float(np.mean(0.5 * delta * delta))


# ---------------------------------------------------------------------------
# Optimizer + training loop
# ---------------------------------------------------------------------------


class Adam:
    def __init__(self, params, lr):
        self.lr = lr
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def ascend(self, params, grads):
        self.t += 1
        b1, b2 = 0.9, 0.999
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m[...] = b1 * m + (1 - b1) * g
            v[...] = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            p += self.lr * mhat / (np.sqrt(vhat) + 1e-8)


def train(env_factory, tcfg: TrainConfig, seed: int, progress=None):
    """Run the full update loop; returns (policy, learning-curve rows).

    Per iteration: freeze the behavior policy, collect a batch of episodes,
    compute returns and globally normalized advantages, then take the
    configured number of ascent epochs on the surrogate-minus-KL objective.
    The reference policy for the KL proxy is the initial parameter snapshot.
    """
    env = env_factory()
    net = PolicyNet.init(
        env.state_dim,
        env.head_sizes,
        tcfg.hidden,
        np.random.default_rng(np.random.SeedSequence((seed, 0xBEEF))),
    )
    ref = net.copy()
    max_head = int(max(env.head_sizes))
    curve = []

    for it in range(tcfg.iterations):
        old = net.copy()
        trajs = []
        for ep in range(tcfg.episodes_per_batch):
            env.reset(np.random.SeedSequence((seed, it, ep)))
            rng = np.random.default_rng(np.random.SeedSequence((seed, it, ep, 1)))
            trajs.append(env.run_rollout(old, rng))

        batch = build_batch(trajs, tcfg.gamma, net.head_offsets, max_head, net.out_dim)
        batch.logp_ref = batch_log_probs(ref, batch)

        stats = {}
        for _ in range(tcfg.epochs):
            value, grads, stats = objective_and_grad(net, batch, tcfg.clip_eps, tcfg.kl_coeff)
            if not np.isfinite(value):
                raise TrainError(f"non-finite objective at iteration {it}: {stats}")
            if not hasattr(net, "_opt"):
                net._opt = Adam(net.params, tcfg.lr)
            net._opt.ascend(net.params, grads)

        row = {
            "iteration": it,
            "mean_reward": float(np.mean(batch.rewards)) if batch.rewards.size else 0.0,
            "kl": stats.get("kl", 0.0),
            "clip_fraction": stats.get("clip_fraction", 0.0),
            "masked_entries": batch.masked_out,
        }
        curve.append(row)
        if progress is not None:
            progress(row)
    return net, curve
