"""Experiment driver: train / eval / sweep / oracle / validate-config.

Results land in long-format CSV with a stable, versioned schema; every row
embeds the config fingerprint and seed it came from, so any row is
reproducible on its own. Checkpoints are self-describing deterministic
binaries stored under <out>/ckpt/<fingerprint>.bin.
"""

import argparse
import csv
import json
import struct
import sys
import time
from pathlib import Path

import numpy as np

from . import oracle as oracle_mod
from . import reinforcepp, semantics
from .config import ConfigError, ExperimentConfig, config_from_dict, load_config
from .env import SatSemEnv, ZeroPolicy, rollout

SCHEMA_VERSION = 1
CKPT_MAGIC = b"SSCKPT01"

RESULT_COLUMNS = [
    "schema_version",
    "fingerprint",
    "sweep_param",
    "sweep_value",
    "seed",
    "policy",
    "episodes",
    "tasks",
    "reward_mean",
    "contrib_mean",
    "mu_success_mean",
    "objective_tn",
    "success_rate",
    "share_bit",
    "share_text",
    "share_hybrid_s",
    "share_hybrid_m",
    "share_hybrid_l",
    "viol_10a",
    "viol_10c",
    "viol_10d",
    "viol_10e",
    "viol_10f",
    "viol_coverage",
    "viol_unservable",
    "wall_clock_s",
    "status",
    "message",
]

CURVE_COLUMNS = ["iteration", "mean_reward", "kl", "clip_fraction", "masked_entries"]

SWEEPABLE = {
    "channel.tx_power_w": float,
    "constellation.num_satellites": int,
    "scenario.arrival_rate": float,
    "scenario.latency_range_s": list,
    "scenario.quality_range_db": list,
}


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_ARRAY_NAMES = ["w1", "b1", "w2", "b2", "w3", "b3"]


def save_checkpoint(path, net: reinforcepp.PolicyNet, cfg: ExperimentConfig):
    header = {
        "format": "satsem-checkpoint",
        "version": 1,
        "state_dim": net.state_dim,
        "head_sizes": list(net.head_sizes),
        "hidden": net.hidden,
        "config": cfg.to_dict(),
        "fingerprint": cfg.fingerprint(),
        "arrays": [
            {"name": name, "shape": list(p.shape), "dtype": "<f8"}
            for name, p in zip(_ARRAY_NAMES, net.params)
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in net.params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return path


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen))
        params = []
        for spec in header["arrays"]:
            n = int(np.prod(spec["shape"])) if spec["shape"] else 1
            buf = fh.read(n * 8)
            params.append(np.frombuffer(buf, dtype="<f8").reshape(spec["shape"]).copy())
    net = reinforcepp.PolicyNet(params, header["state_dim"], header["head_sizes"], header["hidden"])
    cfg = config_from_dict(header["config"])
    return net, cfg


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _blank_stats():
    return {
        "episodes": 0,
        "tasks": 0,
        "reward_sum": 0.0,
        "contrib_sum": 0.0,
        "mu_success_sum": 0.0,
        "successes": 0,
        "objective_tn_sum": 0.0,
        "mode_counts": np.zeros(semantics.NUM_MODES, dtype=int),
        "violations": {},
    }


def _accumulate(stats, rewards, rows, violations, horizon, num_users):
    stats["episodes"] += 1
    stats["reward_sum"] += float(np.mean(rewards)) if len(rewards) else 0.0
    contrib = sum(r.contribution for r in rows)
    stats["tasks"] += len(rows)
    stats["contrib_sum"] += contrib
    if horizon * num_users:
        stats["objective_tn_sum"] += contrib / (horizon * num_users)
    for r in rows:
        if r.ok:
            stats["successes"] += 1
            stats["mu_success_sum"] += r.contribution
        if r.action is not None:
            stats["mode_counts"][r.action.mode] += 1
    for k, v in violations.items():
        stats["violations"][k] = stats["violations"].get(k, 0) + v


def _finish(stats):
    eps = max(stats["episodes"], 1)
    tasks = max(stats["tasks"], 1)
    served = max(int(stats["mode_counts"].sum()), 1)
    shares = stats["mode_counts"] / served
    return {
        "episodes": stats["episodes"],
        "tasks": stats["tasks"],
        "reward_mean": stats["reward_sum"] / eps,
        "contrib_mean": stats["contrib_sum"] / tasks,
        "mu_success_mean": stats["mu_success_sum"] / max(stats["successes"], 1),
        "objective_tn": stats["objective_tn_sum"] / eps,
        "success_rate": stats["successes"] / tasks,
        "share_bit": shares[0],
        "share_text": shares[1],
        "share_hybrid_s": shares[2],
        "share_hybrid_m": shares[3],
        "share_hybrid_l": shares[4],
        "violations": stats["violations"],
    }


def run_eval(cfg: ExperimentConfig, policy_kind: str, episodes: int, base_seed: int, net=None, stochastic=False):
    """Evaluate one actor over seeded episodes.

    Episode randomness is keyed only by (base_seed, episode), so different
    actors evaluated with the same arguments see identical channels, tasks,
    and users (frozen randomness).
    """
    stats = _blank_stats()
    for ep in range(episodes):
        env = SatSemEnv(cfg)
        env.reset(np.random.SeedSequence((base_seed, ep)))
        if policy_kind == "oracle":
            rewards, rows, violations, _ = oracle_mod.oracle_episode(env)
        else:
            if policy_kind == "random":
                actor = ZeroPolicy(int(np.sum(env.head_sizes)))
                greedy = False
            elif policy_kind == "policy":
                if net is None:
                    raise ValueError("policy evaluation needs a checkpoint")
                if net.state_dim != env.state_dim:
                    raise ValueError(
                        f"checkpoint expects state dim {net.state_dim}, env has {env.state_dim} "
                        "(was it trained at a different constellation size?)"
                    )
                actor = net
                greedy = not stochastic
            else:
                raise ValueError(f"unknown policy kind: {policy_kind}")
            rng = np.random.default_rng(np.random.SeedSequence((base_seed, ep, 0xAC7)))
            traj = rollout(env, actor, rng, greedy=greedy)
            rewards, rows, violations = traj.rewards, traj.task_rows, traj.violations
        _accumulate(stats, rewards, rows, violations, env.horizon, env.num_users)
    return _finish(stats)


def result_row(cfg, summary, *, policy, seed, sweep_param="", sweep_value="", wall_clock=0.0, status="ok", message=""):
    row = {
        "schema_version": SCHEMA_VERSION,
        "fingerprint": cfg.fingerprint(),
        "sweep_param": sweep_param,
        "sweep_value": sweep_value,
        "seed": seed,
        "policy": policy,
        "wall_clock_s": round(wall_clock, 3),
        "status": status,
        "message": message,
    }
    if summary is not None:
        viol = summary.pop("violations", {})
        row.update({k: summary[k] for k in summary})
        for key in ("10a", "10c", "10d", "10e", "10f", "coverage", "unservable"):
            row[f"viol_{key}"] = viol.get(key, 0)
    return {col: row.get(col, "") for col in RESULT_COLUMNS}


def write_rows(path, rows, columns):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not path.exists()
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        if new:
            writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train(cfg: ExperimentConfig, out_dir=None, progress=True):
    out = Path(out_dir or cfg.out_dir)
    fp = cfg.fingerprint()

    def factory():
        return SatSemEnv(cfg)

    t0 = time.perf_counter()
    last = {"t": t0}

    def report(row):
        if progress and (row["iteration"] % 10 == 0 or time.perf_counter() - last["t"] > 30):
            last["t"] = time.perf_counter()
            print(
                f"  iter {row['iteration']:4d}  reward {row['mean_reward']:+.4f}  "
                f"kl {row['kl']:.4f}  clip {row['clip_fraction']:.3f}",
                flush=True,
            )

    net, curve = reinforcepp.train(factory, cfg.train, cfg.seed, progress=report)
    ckpt_path = save_checkpoint(out / "ckpt" / f"{fp}.bin", net, cfg)
    curve_path = write_rows(out / f"curve_{fp}.csv", curve, CURVE_COLUMNS)
    wall = time.perf_counter() - t0
    return {"checkpoint": str(ckpt_path), "curve": str(curve_path), "wall_clock_s": wall, "fingerprint": fp, "net": net, "curve_rows": curve}


def cmd_eval(cfg, policy_kind, episodes, base_seed, net=None, stochastic=False, out_dir=None, label=None):
    t0 = time.perf_counter()
    summary = run_eval(cfg, policy_kind, episodes, base_seed, net=net, stochastic=stochastic)
    wall = time.perf_counter() - t0
    row = result_row(cfg, dict(summary), policy=label or policy_kind, seed=base_seed, wall_clock=wall)
    out = Path(out_dir or cfg.out_dir)
    path = write_rows(out / "eval.csv", [row], RESULT_COLUMNS)
    return summary, row, path


def _set_by_path(data: dict, dotted: str, value):
    parts = dotted.split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def cmd_sweep(cfg, param, values, seeds, policy_kind, episodes, net=None, out_dir=None):
    if param not in SWEEPABLE:
        raise ConfigError(f"sweep parameter {param!r} not supported; choose from {sorted(SWEEPABLE)}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    if seeds < 1:
        raise ConfigError("sweep needs at least one seed")
    rows = []
    for value in values:
        for seed in range(seeds):
            data = cfg.to_dict()
            _set_by_path(data, param, value)
            data["seed"] = seed
            t0 = time.perf_counter()
            try:
                point_cfg = config_from_dict(data)
                summary = run_eval(point_cfg, policy_kind, episodes, seed, net=net)
                rows.append(
                    result_row(
                        point_cfg,
                        dict(summary),
                        policy=policy_kind,
                        seed=seed,
                        sweep_param=param,
                        sweep_value=json.dumps(value) if isinstance(value, list) else value,
                        wall_clock=time.perf_counter() - t0,
                    )
                )
            except Exception as exc:  # noqa: BLE001 - per-row failures recorded, sweep continues
                rows.append(
                    result_row(
                        cfg,
                        None,
                        policy=policy_kind,
                        seed=seed,
                        sweep_param=param,
                        sweep_value=json.dumps(value) if isinstance(value, list) else value,
                        wall_clock=time.perf_counter() - t0,
                        status="error",
                        message=str(exc),
                    )
                )
    out = Path(out_dir or cfg.out_dir)
    path = write_rows(out / "sweep.csv", rows, RESULT_COLUMNS)
    return rows, path


def cmd_oracle(cfg, out_dir=None, episodes=1):
    env = SatSemEnv(cfg)
    if env.num_sats > oracle_mod.ORACLE_MAX_SATS or env.num_users > oracle_mod.ORACLE_MAX_USERS:
        raise ConfigError(
            f"instance too large for the exhaustive oracle: need M <= {oracle_mod.ORACLE_MAX_SATS}, "
            f"N <= {oracle_mod.ORACLE_MAX_USERS}"
        )
    out = Path(out_dir or cfg.out_dir)
    trace_rows = []
    totals = []
    for ep in range(episodes):
        env = SatSemEnv(cfg)
        env.reset(np.random.SeedSequence((cfg.seed, ep)))
        rewards, rows, violations, planned = oracle_mod.exhaustive_slot_trace(env)
        totals.append(float(np.mean(rewards)) if len(rewards) else 0.0)
        for t in range(env.horizon):
            trace_rows.append(
                {
                    "episode": ep,
                    "slot": t,
                    "tasks": sum(1 for r in rows if r.slot == t),
                    "reward": rewards[t],
                    "planned": planned[t],
                }
            )
    path = write_rows(out / "oracle_trace.csv", trace_rows, ["episode", "slot", "tasks", "reward", "planned"])
    return totals, path


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _parse_values(args):
    if args.values_json:
        return json.loads(args.values_json)
    kind = SWEEPABLE.get(args.param, float)
    caster = int if kind is int else float
    return [caster(v) for v in args.values.split(",")]


def build_parser():
    parser = argparse.ArgumentParser(prog="satsem", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="YAML experiment config (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")

    p_train = sub.add_parser("train", help="train a policy, store checkpoint + learning curve")
    add_common(p_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint or baseline")
    add_common(p_eval)
    p_eval.add_argument("--checkpoint", help="path to a trained checkpoint")
    p_eval.add_argument("--baseline", choices=["random-feasible", "greedy-oracle"])
    p_eval.add_argument("--episodes", type=int)
    p_eval.add_argument("--stochastic", action="store_true", help="sample the policy instead of argmax")

    p_sweep = sub.add_parser("sweep", help="evaluate across a parameter sweep")
    add_common(p_sweep)
    p_sweep.add_argument("--param", required=True, help=f"one of {sorted(SWEEPABLE)}")
    p_sweep.add_argument("--values", default="", help="comma-separated values")
    p_sweep.add_argument("--values-json", default="", help="JSON list for range-valued parameters")
    p_sweep.add_argument("--seeds", type=int, default=1)
    p_sweep.add_argument("--checkpoint")
    p_sweep.add_argument("--baseline", choices=["random-feasible", "greedy-oracle"], default="greedy-oracle")
    p_sweep.add_argument("--episodes", type=int)

    p_oracle = sub.add_parser("oracle", help="per-slot exhaustive optimum on a small instance")
    add_common(p_oracle)
    p_oracle.add_argument("--episodes", type=int, default=1)

    p_val = sub.add_parser("validate-config", help="validate and fingerprint a config file")
    p_val.add_argument("--config", required=True)
    return parser


def _load_cfg(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig().validate()
    if args.seed is not None:
        data = cfg.to_dict()
        data["seed"] = args.seed
        cfg = config_from_dict(data)
    if getattr(args, "out", None):
        data = cfg.to_dict()
        data["out_dir"] = args.out
        cfg = config_from_dict(data)
    return cfg


_BASELINE_KIND = {"random-feasible": "random", "greedy-oracle": "oracle"}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate-config":
            cfg = load_config(args.config)
            print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
            print(f"fingerprint: {cfg.fingerprint()}")
            return 0

        cfg = _load_cfg(args)

        if args.command == "train":
            info = cmd_train(cfg)
            print(f"checkpoint: {info['checkpoint']}")
            print(f"curve: {info['curve']}")
            print(f"final mean reward: {info['curve_rows'][-1]['mean_reward']:+.4f}")
            return 0

        if args.command == "eval":
            net = None
            if args.checkpoint:
                net, ck_cfg = load_checkpoint(args.checkpoint)
                # the checkpoint's own env variant governs masking at eval
                data = cfg.to_dict()
                data["env"] = ck_cfg.to_dict()["env"]
                cfg = config_from_dict(data)
                kind, label = "policy", Path(args.checkpoint).stem
            elif args.baseline:
                kind = _BASELINE_KIND[args.baseline]
                label = args.baseline
            else:
                raise ConfigError("eval needs --checkpoint or --baseline")
            episodes = args.episodes or cfg.eval.episodes
            summary, _, path = cmd_eval(cfg, kind, episodes, cfg.seed, net=net, stochastic=args.stochastic, label=label)
            print(f"policy: {label}  episodes: {episodes}")
            print(
                f"reward_mean {summary['reward_mean']:+.4f}  contrib_mean {summary['contrib_mean']:+.4f}  "
                f"objective_tn {summary['objective_tn']:+.4f}  success_rate {summary['success_rate']:.3f}"
            )
            print(f"rows appended to {path}")
            return 0

        if args.command == "sweep":
            net = None
            kind = _BASELINE_KIND[args.baseline]
            if args.checkpoint:
                net, _ = load_checkpoint(args.checkpoint)
                kind = "policy"
            values = _parse_values(args)
            episodes = args.episodes or cfg.eval.episodes
            rows, path = cmd_sweep(cfg, args.param, values, args.seeds, kind, episodes, net=net)
            ok = sum(1 for r in rows if r["status"] == "ok")
            print(f"{len(rows)} rows ({ok} ok) -> {path}")
            return 0

        if args.command == "oracle":
            totals, path = cmd_oracle(cfg, episodes=args.episodes)
            print(f"oracle mean reward per episode: {[round(t, 4) for t in totals]}")
            print(f"trace -> {path}")
            return 0
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
