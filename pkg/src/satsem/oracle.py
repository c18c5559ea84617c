"""Per-slot exact maximization of the slot reward.

The slot reward is a mean of per-task contributions, and tasks couple only
through satellite exclusivity. Maximizing over all feasible joint actions
therefore factors exactly: for every (task, satellite) pair find the best
(mode, steps, weights) tuple, then solve the satellite assignment with a
bitmask DP. Tests verify the factorization against literal enumeration of
the joint action space.

The environment has no coupling across slots (no queues, channel and
arrivals exogenous), so the per-slot maximum is also a per-episode upper
bound for any policy on the same frozen randomness.
"""

import numpy as np

from . import kernels, semantics
from .env import SatSemEnv, SlotView, UserAction

ORACLE_MAX_SATS = 4
ORACLE_MAX_USERS = 2


def best_candidate_tables(env: SatSemEnv, view: SlotView):
    """Per (task, satellite): best contribution and its action tuple.

    Returns (vals, modes, steps, weights) each (num_tasks, M); vals is -inf
    where the satellite is not visible to the task's user.
    """
    tasks = view.tasks
    m = env.num_sats
    k = len(tasks)
    vals = np.empty((k, m))
    modes = np.empty((k, m), dtype=np.int64)
    steps = np.empty((k, m), dtype=np.int64)
    weights = np.empty((k, m), dtype=np.int64)
    cfg = env.cfg
    for i, task in enumerate(tasks):
        payload = env.payload_tab.copy()
        payload[semantics.MODE_BIT] = float(task.size_bits)
        kernels.eval_task_candidates(
            np.ascontiguousarray(view.visible[:, task.user]),
            np.ascontiguousarray(view.dl_rate[:, task.user]),
            np.ascontiguousarray(view.isl_rate[task.source_satellite, :]),
            np.ascontiguousarray(view.dist_m[:, task.user]),
            np.ascontiguousarray(view.isl_dist_m[task.source_satellite, :]),
            task.source_satellite,
            payload,
            env.qual_tab,
            env.cost_tab,
            task.latency_max_s,
            task.quality_min_db,
            task.compute_budget_gflops,
            cfg.semantics.bit_quality_db,
            env.wgrid,
            cfg.env.fail_reward,
            cfg.channel.light_speed_m_s,
            cfg.scenario.include_decode_time,
            vals[i],
            modes[i],
            steps[i],
            weights[i],
        )
    return vals, modes, steps, weights


def solve_slot(env: SatSemEnv, view: SlotView):
    """Exact best joint action for one slot.

    Returns (slot_reward, actions) where actions maps user -> UserAction
    (None for tasks left unserved). slot_reward is the mean contribution
    over this slot's tasks, 0.0 when none arrived.
    """
    tasks = view.tasks
    if not tasks:
        return 0.0, {}
    vals, modes, steps, weights = best_candidate_tables(env, view)
    feas = np.isfinite(vals)
    total, assign = kernels.solve_assignment(vals, feas, env.cfg.env.fail_reward)
    actions = {}
    for i, task in enumerate(tasks):
        m2 = int(assign[i])
        if m2 < 0:
            actions[task.user] = None
            continue
        forwarding = m2 != task.source_satellite
        actions[task.user] = UserAction(
            m2=m2,
            isl_active=forwarding,
            m1=task.source_satellite if forwarding else m2,
            mode=int(modes[i, m2]),
            steps=int(steps[i, m2]),
            weight_idx=int(weights[i, m2]),
        )
    return total / len(tasks), actions


def oracle_episode(env: SatSemEnv):
    """Drive a freshly reset env with the per-slot maximizer.

    Returns (rewards, task_rows, violations, planned_rewards); the planned
    values must match what the env then scores (asserted in tests).
    """
    from collections import defaultdict

    rewards = np.zeros(env.horizon)
    planned = np.zeros(env.horizon)
    rows = []
    violations = defaultdict(int)
    for t in range(env.horizon):
        view = env.slot_view()
        slot_reward, actions = solve_slot(env, view)
        out = env.step(actions)
        rewards[t] = out.reward
        planned[t] = slot_reward
        rows.extend(out.tasks)
        for k, v in out.violations.items():
            violations[k] += v
    return rewards, rows, dict(violations), planned


def exhaustive_slot_trace(env: SatSemEnv):
    """The size-guarded oracle command: per-slot optimum over a full episode.

    Enforces a small instance (M <= 4, N <= 2) because it certifies the
    enumeration of the whole joint action space; the same maximizer runs
    unguarded as the greedy-oracle evaluation baseline.
    """
    if env.num_sats > ORACLE_MAX_SATS or env.num_users > ORACLE_MAX_USERS:
        raise ValueError(
            f"instance too large for the exhaustive oracle: need M <= {ORACLE_MAX_SATS} "
            f"and N <= {ORACLE_MAX_USERS}, got M={env.num_sats}, N={env.num_users}"
        )
    rewards, rows, violations, planned = oracle_episode(env)
    return rewards, rows, violations, planned


def enumerate_joint_actions(env: SatSemEnv, view: SlotView):
    """Literal generator over every feasible joint action of one slot,
    built through the same sequential masks the policy samples under.
    Exponentially large; only sane on tiny instances (tests, certification).
    """
    tasks = view.tasks

    def user_options(task, assigned):
        mask = env.masks_for(task.user, assigned)
        if not mask.servable:
            yield None
            return
        for m2 in np.flatnonzero(mask.m2):
            m2 = int(m2)
            isl = bool(mask.isl_mask(m2)[1])
            for mode in np.flatnonzero(mask.mode):
                mode = int(mode)
                for li in np.flatnonzero(mask.steps_mask(mode)):
                    for w in np.flatnonzero(mask.weights):
                        yield UserAction(
                            m2=m2,
                            isl_active=isl,
                            m1=task.source_satellite if isl else m2,
                            mode=mode,
                            steps=int(li) + 1,
                            weight_idx=int(w),
                        )

    def recurse(i, assigned, chosen):
        if i == len(tasks):
            yield dict(chosen)
            return
        task = tasks[i]
        for opt in user_options(task, assigned):
            chosen[task.user] = opt
            if opt is not None:
                assigned.add(opt.m2)
                yield from recurse(i + 1, assigned, chosen)
                assigned.discard(opt.m2)
            else:
                yield from recurse(i + 1, assigned, chosen)
            del chosen[task.user]

    yield from recurse(0, set(), {})
