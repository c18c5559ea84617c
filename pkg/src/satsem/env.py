"""The per-slot decision process: state encoding, feasibility masks, joint
actions, constraint scoring, and rollout.

Decision heads per user with an arrived task, sampled in order:
    serving satellite -> forwarding flag -> mode -> denoising steps -> weights
Users are processed in ascending index order; satellite-exclusivity masks
carry the intra-slot dependence, so sampled joint actions are feasible by
construction. Latency and quality checks cannot be expressed as per-head
masks (they couple the whole tuple with the realized channel), so violations
there score the failure reward instead.

State layout (version 1), one block per user, all features in [0, 1]:
    [ link power dB scaled (M) | visibility (M) |
      latency threshold, quality threshold, compute budget (3) |
      task-present flag (1) | source-satellite one-hot (M) ]
Threshold features are zero when the user has no task this slot.
"""

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import channel, orbits, scenario, semantics
from .config import ExperimentConfig

STATE_LAYOUT_VERSION = 1

HEAD_SAT, HEAD_ISL, HEAD_MODE, HEAD_STEPS, HEAD_WEIGHTS = range(5)
HEADS_PER_USER = 5


class MaskViolation(RuntimeError):
    """A supplied action contradicts its feasibility mask (a trainer bug)."""


@dataclass
class UserAction:
    m2: int  # serving satellite
    isl_active: bool
    m1: int  # content-source satellite when forwarding, else m2
    mode: int
    steps: int  # 1-based denoising steps (ignored by bit mode)
    weight_idx: int


@dataclass
class ActionMask:
    user: int
    source_sat: int
    m2: np.ndarray  # (M,) bool
    mode: np.ndarray  # (5,) bool
    steps_semantic: np.ndarray  # (max_steps,) bool
    weights: np.ndarray  # (36,) bool
    free_isl: bool = False  # no-mask variant leaves the flag unconstrained

    def isl_mask(self, m2: int) -> np.ndarray:
        if self.free_isl:
            return np.ones(2, dtype=bool)
        active = m2 != self.source_sat
        return np.array([not active, active])

    def steps_mask(self, mode: int) -> np.ndarray:
        if mode == semantics.MODE_BIT:
            return np.ones_like(self.steps_semantic)
        return self.steps_semantic

    @property
    def servable(self) -> bool:
        return bool(self.m2.any())


@dataclass
class TaskOutcome:
    slot: int
    user: int
    served: bool
    action: UserAction | None
    latency_s: float
    quality_db: float
    compute_gflops: float
    contribution: float
    ok: bool
    fail_reason: str  # "" when the task met every requirement


@dataclass
class StepOutcome:
    reward: float
    tasks: list
    violations: dict
    state: np.ndarray | None
    done: bool


@dataclass
class SlotView:
    """Frozen per-slot arrays for planners (same data step() scores against)."""

    slot: int
    visible: np.ndarray  # (M, N)
    dl_rate: np.ndarray  # (M, N)
    isl_rate: np.ndarray  # (M, M)
    dist_m: np.ndarray  # (M, N)
    isl_dist_m: np.ndarray  # (M, M)
    tasks: list


@dataclass
class HeadRecord:
    head_id: int
    action: int
    mask: np.ndarray


@dataclass
class Trajectory:
    states: np.ndarray  # (T, state_dim)
    rewards: np.ndarray  # (T,)
    logp_old: np.ndarray  # (T,) joint log-probability of each slot's decisions
    records: list  # per slot: list[HeadRecord]
    masked_out: int  # total masked-out entries seen by sampled heads
    task_rows: list = field(default_factory=list)
    violations: dict = field(default_factory=dict)


def encode_state(aged_power, visible, tasks_by_user, budgets, cfg: ExperimentConfig) -> np.ndarray:
    """Feature vector for one slot; see the module docstring for the layout."""
    num_sat, num_users = aged_power.shape
    lo, hi = cfg.env.h2_db_floor, cfg.env.h2_db_ceil
    with np.errstate(divide="ignore"):
        power_db = 10.0 * np.log10(aged_power)
    power_feat = (np.clip(power_db, lo, hi) - lo) / (hi - lo)

    d_lo, d_hi = cfg.scenario.latency_range_s
    q_lo, q_hi = cfg.scenario.quality_range_db
    f_lo, f_hi = cfg.users.compute_min_gflops, cfg.users.compute_max_gflops

    block = 3 * num_sat + 4
    out = np.zeros(num_users * block)
    for n in range(num_users):
        base = n * block
        out[base : base + num_sat] = power_feat[:, n]
        out[base + num_sat : base + 2 * num_sat] = visible[:, n].astype(float)
        task = tasks_by_user.get(n)
        if task is not None:
            out[base + 2 * num_sat + 0] = np.clip((task.latency_max_s - d_lo) / max(d_hi - d_lo, 1e-12), 0, 1)
            out[base + 2 * num_sat + 1] = np.clip((task.quality_min_db - q_lo) / max(q_hi - q_lo, 1e-12), 0, 1)
            out[base + 2 * num_sat + 3] = 1.0
            out[base + 2 * num_sat + 4 + task.source_satellite] = 1.0
        out[base + 2 * num_sat + 2] = np.clip((budgets[n] - f_lo) / max(f_hi - f_lo, 1e-12), 0, 1)
    return out


class SatSemEnv:
    """One episode at a time; strictly sequential within an episode."""

    def __init__(self, cfg: ExperimentConfig):
        cfg.validate()
        self.cfg = cfg
        self.num_sats = cfg.constellation.num_satellites
        self.num_users = cfg.users.num_users
        self.horizon = cfg.constellation.num_slots
        self.payload_tab = semantics.payload_table(cfg.semantics, cfg.scenario.task_bits)
        self.qual_tab = semantics.quality_table(cfg.semantics)
        self.cost_tab = semantics.cost_table(cfg.semantics)
        self.wgrid = scenario.weight_grid()
        self.fixed_weight_idx = scenario.weight_index(cfg.env.fixed_weights)
        self._t = None

    # -- policy-facing layout ------------------------------------------------

    @property
    def state_dim(self) -> int:
        return self.num_users * (3 * self.num_sats + 4)

    @property
    def head_sizes(self) -> list:
        per_user = [self.num_sats, 2, semantics.NUM_MODES, self.cfg.semantics.max_steps, len(self.wgrid)]
        return per_user * self.num_users

    def run_rollout(self, policy, rng, greedy: bool = False):
        return rollout(self, policy, rng, greedy)

    # -- episode construction --------------------------------------------------

    def reset(self, seed) -> np.ndarray | None:
        """Build one episode's randomness and return the initial state."""
        cfg = self.cfg
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        s_users, s_epoch, s_phase, s_fade, s_task = ss.spawn(5)

        self.users = orbits.sample_users(cfg.users, np.random.default_rng(s_users))
        self.budgets = np.array([u.compute_gflops for u in self.users])
        if cfg.constellation.randomize_epoch:
            self.epoch_offset_s = float(np.random.default_rng(s_epoch).uniform(0.0, cfg.constellation.period_s))
        else:
            self.epoch_offset_s = 0.0

        ch = cfg.channel
        t_slots = self.horizon
        m, n = self.num_sats, self.num_users
        self._dist_m = np.empty((t_slots, m, n))
        self._isl_dist_m = np.empty((t_slots, m, m))
        self._vis = np.empty((t_slots, m, n), dtype=bool)
        doppler = np.empty((t_slots, m, n))
        for t in range(t_slots):
            snap = orbits.geometry(cfg.constellation, self.users, t, self.epoch_offset_s)
            self._dist_m[t] = snap.distances_km * 1e3
            self._isl_dist_m[t] = snap.isl_distances_km * 1e3
            self._vis[t] = snap.visible
            doppler[t] = orbits.doppler_matrix_hz(snap, ch.carrier_hz, ch.light_speed_m_s)

        phases = np.random.default_rng(s_phase).uniform(0.0, 2.0 * np.pi, size=(m, n))
        self._rho = channel.csi_correlation(doppler, ch.csi_delay_s)
        # age the unit-magnitude phasor, then restore the deterministic
        # free-space magnitude: the innovation carries the channel's own power
        unit = np.broadcast_to(np.exp(1j * phases), (t_slots, m, n))
        aged_unit = channel.age_channel(unit, self._rho, np.random.default_rng(s_fade))
        mag = np.sqrt(ch.tx_gain) * ch.wavelength_m / (4.0 * np.pi * np.maximum(self._dist_m, 1e-9))
        self._ideal = mag * np.broadcast_to(np.exp(1j * phases), (t_slots, m, n))
        self._aged = mag * aged_unit
        self._aged_power = np.abs(self._aged) ** 2

        noise = channel.thermal_noise_w(ch.noise_temp_k, ch.bandwidth_hz)
        rate = channel.downlink_rate(ch.tx_power_w, self._aged, noise, ch.bandwidth_hz)
        self._dl_rate = np.where(self._vis, rate, 0.0)

        isl_params = channel.IslParams(
            bandwidth_hz=cfg.isl.bandwidth_hz,
            tx_power_w=cfg.isl.tx_power_w,
            peak_gain=cfg.isl.peak_gain,
            noise_temp_k=cfg.isl.noise_temp_k,
            carrier_hz=cfg.isl.carrier_hz,
            light_speed_m_s=ch.light_speed_m_s,
        )
        self._isl_rate = np.empty((t_slots, m, m))
        for t in range(t_slots):
            self._isl_rate[t] = channel.isl_rate_matrix(isl_params, self._isl_dist_m[t])

        rng_task = np.random.default_rng(s_task)
        self._tasks = []
        self.dropped_arrivals = 0
        for t in range(t_slots):
            tasks, dropped = scenario.generate_tasks(t, cfg.scenario, m, self.budgets, rng_task)
            self._tasks.append(tasks)
            self.dropped_arrivals += dropped

        self._t = 0
        if t_slots == 0:
            return None
        return self._encode(0)

    # -- views ----------------------------------------------------------------

    def _encode(self, t: int) -> np.ndarray:
        tasks_by_user = {task.user: task for task in self._tasks[t]}
        return encode_state(self._aged_power[t], self._vis[t], tasks_by_user, self.budgets, self.cfg)

    @property
    def slot(self) -> int:
        return self._t

    def current_tasks(self) -> list:
        return self._tasks[self._t]

    def slot_view(self, t: int | None = None) -> SlotView:
        t = self._t if t is None else t
        return SlotView(
            slot=t,
            visible=self._vis[t],
            dl_rate=self._dl_rate[t],
            isl_rate=self._isl_rate[t],
            dist_m=self._dist_m[t],
            isl_dist_m=self._isl_dist_m[t],
            tasks=self._tasks[t],
        )

    def masks_for(self, user: int, assigned: set) -> ActionMask | None:
        """Feasibility masks for one user at the current slot, given the
        satellites already claimed by earlier users. None when no task."""
        t = self._t
        task = next((x for x in self._tasks[t] if x.user == user), None)
        if task is None:
            return None
        max_steps = self.cfg.semantics.max_steps
        if self.cfg.env.variant == "no-mask":
            return ActionMask(
                user=user,
                source_sat=task.source_satellite,
                m2=np.ones(self.num_sats, dtype=bool),
                mode=np.ones(semantics.NUM_MODES, dtype=bool),
                steps_semantic=np.ones(max_steps, dtype=bool),
                weights=np.ones(len(self.wgrid), dtype=bool),
                free_isl=True,
            )
        m2 = self._vis[t, :, user].copy()
        for s in assigned:
            m2[s] = False
        steps_ok = self.cost_tab[semantics.MODE_TEXT] <= task.compute_budget_gflops
        weights = np.ones(len(self.wgrid), dtype=bool)
        if self.cfg.env.variant == "fixed-weight":
            weights[:] = False
            weights[self.fixed_weight_idx] = True
        return ActionMask(
            user=user,
            source_sat=task.source_satellite,
            m2=m2,
            mode=np.ones(semantics.NUM_MODES, dtype=bool),
            steps_semantic=steps_ok,
            weights=weights,
        )

    # -- transition -------------------------------------------------------------

    def _check_masked_action(self, action: UserAction, mask: ActionMask):
        if not mask.m2[action.m2]:
            raise MaskViolation(f"user {mask.user}: satellite {action.m2} is masked")
        if not mask.isl_mask(action.m2)[int(action.isl_active)]:
            raise MaskViolation(f"user {mask.user}: forwarding flag contradicts the source satellite")
        if action.isl_active and action.m1 == action.m2:
            raise MaskViolation(f"user {mask.user}: forwarding from the serving satellite to itself")
        if not mask.mode[action.mode]:
            raise MaskViolation(f"user {mask.user}: mode {action.mode} is masked")
        if not mask.steps_mask(action.mode)[action.steps - 1]:
            raise MaskViolation(f"user {mask.user}: {action.steps} steps exceed the compute budget")
        if not mask.weights[action.weight_idx]:
            raise MaskViolation(f"user {mask.user}: weight triple {action.weight_idx} is masked")

    def _score_task(self, task, action: UserAction, violations) -> TaskOutcome:
        t = self._t
        cfg = self.cfg
        pay = float(task.size_bits) if action.mode == semantics.MODE_BIT else float(self.payload_tab[action.mode])
        lat = scenario.realized_latency_s(
            pay,
            action.m2,
            task.source_satellite,
            float(self._dl_rate[t, action.m2, task.user]),
            float(self._isl_rate[t, task.source_satellite, action.m2]),
            float(self._dist_m[t, action.m2, task.user]),
            float(self._isl_dist_m[t, task.source_satellite, action.m2]),
            cfg.channel.light_speed_m_s,
        )
        qual = float(self.qual_tab[action.mode, action.steps - 1])
        cost = float(self.cost_tab[action.mode, action.steps - 1])
        if cfg.scenario.include_decode_time:
            lat += cost / task.compute_budget_gflops
        ok_d = lat <= task.latency_max_s
        ok_q = qual >= task.quality_min_db
        ok_f = cost <= task.compute_budget_gflops
        if ok_d and ok_q and ok_f:
            mu = scenario.semantic_efficiency(
                scenario.MetricInputs(lat, qual, cost, task.latency_max_s, task.quality_min_db, task.compute_budget_gflops),
                self.wgrid[action.weight_idx],
                cfg.semantics.bit_quality_db,
            )
            return TaskOutcome(t, task.user, True, action, lat, qual, cost, mu, True, "")
        reason = "10d" if not ok_d else ("10e" if not ok_q else "10f")
        violations[reason] += 1
        return TaskOutcome(t, task.user, True, action, lat, qual, cost, cfg.env.fail_reward, False, reason)

    def step(self, actions: dict) -> StepOutcome:
        """Score this slot's decisions and advance.

        `actions` maps user index -> UserAction (or None for a user whose
        task is unservable). With masking active, every action is re-checked
        against freshly built masks; a contradiction raises MaskViolation.
        """
        if self._t is None or self._t >= self.horizon:
            raise RuntimeError("episode finished or not reset")
        t = self._t
        cfg = self.cfg
        masked = cfg.env.variant != "no-mask"
        violations = defaultdict(int)
        rows = []
        contribs = []
        assigned = set()

        for task in self._tasks[t]:
            n = task.user
            action = actions.get(n)
            mask = self.masks_for(n, assigned)
            if masked:
                if not mask.servable:
                    if action is not None:
                        raise MaskViolation(f"user {n}: action supplied but no satellite is selectable")
                    violations["unservable"] += 1
                    rows.append(TaskOutcome(t, n, False, None, np.inf, 0.0, 0.0, cfg.env.fail_reward, False, "unservable"))
                    contribs.append(cfg.env.fail_reward)
                    continue
                if action is None:
                    raise MaskViolation(f"user {n}: servable task but no action supplied")
                self._check_masked_action(action, mask)
                assigned.add(action.m2)
                row = self._score_task(task, action, violations)
            else:
                if action is None:
                    violations["unservable"] += 1
                    rows.append(TaskOutcome(t, n, False, None, np.inf, 0.0, 0.0, cfg.env.fail_reward, False, "unservable"))
                    contribs.append(cfg.env.fail_reward)
                    continue
                if action.m2 in assigned:
                    violations["10a"] += 1
                    row = TaskOutcome(t, n, False, action, np.inf, 0.0, 0.0, cfg.env.fail_reward, False, "10a")
                elif not self._vis[t, action.m2, n]:
                    violations["coverage"] += 1
                    row = TaskOutcome(t, n, False, action, np.inf, 0.0, 0.0, cfg.env.fail_reward, False, "coverage")
                elif action.isl_active != (task.source_satellite != action.m2) or (
                    action.isl_active and action.m1 == action.m2
                ):
                    violations["10c"] += 1
                    assigned.add(action.m2)
                    row = TaskOutcome(t, n, False, action, np.inf, 0.0, 0.0, cfg.env.fail_reward, False, "10c")
                else:
                    assigned.add(action.m2)
                    row = self._score_task(task, action, violations)
            rows.append(row)
            contribs.append(row.contribution)

        reward = float(np.mean(contribs)) if contribs else 0.0
        self._t += 1
        done = self._t >= self.horizon
        next_state = None if done else self._encode(self._t)
        return StepOutcome(reward=reward, tasks=rows, violations=dict(violations), state=next_state, done=done)


# ---------------------------------------------------------------------------
# Sampling and rollout
# ---------------------------------------------------------------------------


def masked_log_probs(logits, mask):
    """Log-softmax over feasible entries; masked entries get probability 0."""
    z = np.where(mask, logits, -np.inf)
    zmax = z.max()
    ez = np.exp(z - zmax)
    total = ez.sum()
    return z - zmax - np.log(total)


def masked_probs(logits, mask):
    lp = masked_log_probs(logits, mask)
    p = np.zeros_like(lp)
    feas = mask.astype(bool)
    p[feas] = np.exp(lp[feas])
    return p


def sample_masked(logits, mask, rng):
    """Draw a feasible index; infeasible entries carry exactly zero mass."""
    feas = np.flatnonzero(mask)
    if feas.size == 0:
        raise MaskViolation("all entries masked")
    lp = masked_log_probs(logits, mask)
    pf = np.exp(lp[feas])
    pf = pf / pf.sum()
    idx = int(feas[rng.choice(feas.size, p=pf)])
    return idx, float(lp[idx])


def argmax_masked(logits, mask):
    feas = np.flatnonzero(mask)
    if feas.size == 0:
        raise MaskViolation("all entries masked")
    idx = int(feas[np.argmax(logits[feas])])
    return idx, float(masked_log_probs(logits, mask)[idx])


class ZeroPolicy:
    """Uniform-over-feasible behavior: all logits zero."""

    def __init__(self, out_dim):
        self.out_dim = out_dim

    def logits(self, state):
        return np.zeros(self.out_dim)


def rollout(env: SatSemEnv, policy, rng, greedy: bool = False) -> Trajectory:
    """Run one full episode, sampling each head under its mask.

    The env must be freshly reset. `policy` exposes logits(state) covering
    every head of every user; sampling randomness comes solely from `rng`,
    so episode randomness (already baked into the env) is untouched.
    """
    t_slots = env.horizon
    states = np.zeros((t_slots, env.state_dim))
    rewards = np.zeros(t_slots)
    logp_old = np.zeros(t_slots)
    records = [[] for _ in range(t_slots)]
    masked_out = 0
    task_rows = []
    violations = defaultdict(int)

    if t_slots and env._t != 0:
        raise RuntimeError("rollout needs a freshly reset environment")
    sizes = env.head_sizes
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    state = env._encode(0) if t_slots else None

    for t in range(t_slots):
        states[t] = state
        logits = policy.logits(state)
        assigned = set()
        actions = {}
        slot_logp = 0.0
        pick = argmax_masked if greedy else (lambda lo, ma: sample_masked(lo, ma, rng))

        for task in env.current_tasks():
            n = task.user
            mask = env.masks_for(n, assigned)
            if not mask.servable:
                actions[n] = None
                continue
            base = n * HEADS_PER_USER

            def head(h, m):
                nonlocal slot_logp, masked_out
                hid = base + h
                a, lp = pick(logits[offsets[hid] : offsets[hid + 1]], m)
                slot_logp += lp
                masked_out += int(m.size - np.count_nonzero(m))
                records[t].append(HeadRecord(head_id=hid, action=a, mask=m.copy()))
                return a

            m2 = head(HEAD_SAT, mask.m2)
            if env.cfg.env.variant != "no-mask":
                assigned.add(m2)
            isl = bool(head(HEAD_ISL, mask.isl_mask(m2)))
            mode = head(HEAD_MODE, mask.mode)
            steps = head(HEAD_STEPS, mask.steps_mask(mode)) + 1
            widx = head(HEAD_WEIGHTS, mask.weights)
            actions[n] = UserAction(
                m2=m2,
                isl_active=isl,
                m1=task.source_satellite if isl else m2,
                mode=mode,
                steps=steps,
                weight_idx=widx,
            )

        out = env.step(actions)
        rewards[t] = out.reward
        logp_old[t] = slot_logp
        task_rows.extend(out.tasks)
        for k, v in out.violations.items():
            violations[k] += v
        state = out.state

    return Trajectory(
        states=states,
        rewards=rewards,
        logp_old=logp_old,
        records=records,
        masked_out=masked_out,
        task_rows=task_rows,
        violations=dict(violations),
    )
