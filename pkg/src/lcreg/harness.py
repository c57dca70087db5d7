"""Run manifests and the train / eval / compare / sweep / validate / export workflows."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats

from . import __version__, svg
from .checks import Check, all_checks
from .env import RegulationEnv, RewardWeights, Scenario, load_scenario
from .evalmetrics import (ACTION_RATE_NAMES, METRIC_NAMES, EpisodeLog, EpisodeMetrics, action_distribution,
                          episode_metrics, read_rows_csv, summarize, uplift, write_rows_csv)
from .qlearner import LOG_COLUMNS, MLP, TrainConfig, config_hash, load_checkpoint, train
from .qlearner.dqn import greedy
from .roadsim import LaneChangeParams

log = logging.getLogger(__name__)

OUT_ENV = "LCREG_OUT"
EVAL_SEED_BASE = 10_000


class UnpairedSeeds(ValueError):
    pass


def out_root(explicit: Optional[str] = None) -> Path:
    return Path(explicit or os.environ.get(OUT_ENV) or "runs")


@dataclass
class RunManifest:
    """Inputs of one command; ``config_hash`` binds outputs to the training configuration."""

    scenario: str = "stable_flow"
    demand: str = "low"
    cv_rate: float = 1.0
    seeds: Optional[list] = None
    checkpoint: Optional[str] = None
    steps: int = 50_000
    episodes: int = 30
    out: Optional[str] = None
    baseline: bool = False
    scenario_file: Optional[str] = None
    train_seed: int = 0
    workers: int = 1
    force: bool = False

    def scenario_obj(self) -> Scenario:
        if self.scenario_file:
            sc = load_scenario(self.scenario_file)
            return dataclasses.replace(sc, cv_rate=self.cv_rate) if self.cv_rate != sc.cv_rate else sc
        return Scenario(name=self.scenario, demand=self.demand, cv_rate=self.cv_rate)

    def train_config(self) -> TrainConfig:
        return TrainConfig(total_steps=self.steps, seed=self.train_seed)

    def config(self) -> dict:
        return {"version": __version__, "scenario": self.scenario_obj().to_dict(),
                "train": dataclasses.asdict(self.train_config()),
                "lane_change": dataclasses.asdict(LaneChangeParams()),
                "reward": dataclasses.asdict(RewardWeights())}

    def config_hash(self) -> str:
        return config_hash(self.config())

    def eval_seeds(self) -> list:
        if self.seeds is not None:
            return [int(s) for s in self.seeds]
        return list(range(EVAL_SEED_BASE, EVAL_SEED_BASE + self.episodes))

    def tag(self) -> str:
        sc = self.scenario_obj()
        return f"{sc.name}_{sc.demand}_cv{sc.cv_rate:g}_{self.config_hash()}"

    def out_dir(self, verb: str) -> Path:
        d = out_root(self.out) / f"{verb}_{self.tag()}"
        d.mkdir(parents=True, exist_ok=True)
        return d

    def train_dir(self) -> Path:
        return self.out_dir("train")

    def default_checkpoint(self) -> Path:
        return self.train_dir() / "checkpoints" / "final.npz"


def parse_seeds(text: Optional[str]) -> Optional[list]:
    """``"1,2,5-8"`` -> [1, 2, 5, 6, 7, 8]."""
    if not text:
        return None
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            a, b = part.split("-", 1) if not part.startswith("-") else part[1:].split("-", 1)
            seeds.extend(range(int(a), int(b) + 1))
        elif part:
            seeds.append(int(part))
    return seeds


# ---------------------------------------------------------------------- train
def cmd_train(m: RunManifest, progress=None) -> dict:
    """Train (or reuse a finished run with the same config hash).

    Returns:
        Paths of the log, the final checkpoint and the reward chart, plus the log rows.
    """
    d = m.train_dir()
    ck_dir = d / "checkpoints"
    ck_dir.mkdir(exist_ok=True)
    log_path = d / "train_log.csv"
    final = ck_dir / "final.npz"
    h = m.config_hash()
    if final.exists() and log_path.exists() and not m.force:
        log.info("reusing finished training run %s", d)
        rows = read_rows_csv(log_path)
        return {"log": log_path, "checkpoint": final, "rows": [_floats(r) for r in rows], "dir": d}
    sc = m.scenario_obj()
    result = train(lambda: RegulationEnv(sc), m.train_config(), out_dir=ck_dir, cfg_hash=h, progress=progress)
    rows = [dict(r, config_hash=h) for r in result.log]
    write_rows_csv(log_path, rows, list(LOG_COLUMNS) + ["config_hash"])
    last_step, last_path, _ = result.checkpoints[-1]
    shutil.copyfile(last_path, final)
    (d / "manifest.json").write_text(json.dumps({"config_hash": h, **m.config()}, indent=2, default=str))
    if rows:
        ep = [r["episode"] for r in rows]
        svg.save(d / "train_reward.svg", svg.line_chart(
            ep, {k: [r[k] for r in rows] for k in ("mean_reward", "mean_r1", "mean_r2")},
            title="Mean agent reward per episode", xlabel="episode", ylabel="reward", desc=f"config_hash={h}"))
    return {"log": log_path, "checkpoint": final, "rows": rows, "dir": d, "faults": result.faults}


def _floats(row: dict) -> dict:
    out = {}
    for k, v in row.items():
        try:
            out[k] = float(v)
        except (TypeError, ValueError):
            out[k] = v
    return out


# ---------------------------------------------------------------------- evaluation
def run_episode(scenario: Scenario, seed: int, params=None, layers=None) -> EpisodeMetrics:
    """One greedy-policy episode (``params`` None: every lane change allowed)."""
    env = RegulationEnv(scenario)
    obs = env.reset(seed)
    net = None
    if params is not None:
        net = MLP(layers)
        net.load(params)
    allow = np.full((env.n_lanes, env.n_grids), 3)
    while not env.done:
        actions = allow if net is None else greedy(net(obs.reshape(-1, obs.shape[-1]))).reshape(allow.shape)
        obs, _, _, _ = env.step(actions)
    return episode_metrics(EpisodeLog.from_env(env))


def _run_episode_args(args):
    return run_episode(*args)


def evaluate(scenario: Scenario, seeds, params=None, layers=None, workers: int = 1) -> list:
    """Metrics per seed, in seed order."""
    jobs = [(scenario, s, params, layers) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_run_episode_args, jobs))
    return [run_episode(*j) for j in jobs]


def _policy(m: RunManifest):
    if m.baseline:
        return None, None
    path = Path(m.checkpoint) if m.checkpoint else m.default_checkpoint()
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found; train first or pass --baseline")
    net, meta = load_checkpoint(path, expect_hash=m.config_hash())
    return net.params, net.layers


def metric_header(n_lanes: int, with_actions: bool) -> list:
    cols = ["seed"] + list(METRIC_NAMES) + ["vehicles", "lane_changes"]
    if with_actions:
        cols += [f"lane{l + 1}_{k}" for l in range(n_lanes) for k in ACTION_RATE_NAMES]
    return cols + ["config_hash"]


def cmd_eval(m: RunManifest) -> dict:
    """Greedy evaluation (or the all-allow baseline) over the manifest's seeds."""
    params, layers = _policy(m)
    sc = m.scenario_obj()
    h = m.config_hash()
    metrics = evaluate(sc, m.eval_seeds(), params, layers, m.workers)
    rows = [dict(x.row(), config_hash=h) for x in metrics]
    d = m.out_dir("eval_baseline" if m.baseline else "eval")
    header = metric_header(sc.road.lanes, True)
    write_rows_csv(d / "eval_episodes.csv", rows, header)
    summ = summarize([{k: r[k] for k in header if k not in ("seed", "config_hash")} for r in rows])
    write_rows_csv(d / "eval_summary.csv",
                   [{"metric": k, "mean": v[0], "std": v[1], "config_hash": h} for k, v in summ.items()],
                   ["metric", "mean", "std", "config_hash"])
    if rows and not m.baseline:
        lanes = [f"lane {l + 1}" for l in range(sc.road.lanes)]
        svg.save(d / "action_rates.svg", svg.bar_chart(
            lanes, {k: [np.nanmean([r[f"lane{l + 1}_{k}"] for r in rows]) for l in range(sc.road.lanes)]
                    for k in ACTION_RATE_NAMES},
            title="Action rates per lane", ylabel="fraction of samples", desc=f"config_hash={h}"))
    return {"rows": rows, "metrics": metrics, "dir": d, "summary": summ}


def compare_rows(policy: list, baseline: list) -> list:
    """Per-seed uplift rows; refuses arms evaluated on different seeds."""
    pseeds = [int(r.seed) for r in policy]
    bseeds = [int(r.seed) for r in baseline]
    if pseeds != bseeds or len(set(pseeds)) != len(pseeds):
        raise UnpairedSeeds(f"policy and baseline seeds differ or repeat: {pseeds} vs {bseeds}")
    return [dict(seed=p.seed, **uplift(p, b)) for p, b in zip(policy, baseline)]


def paired_stats(policy_vals, baseline_vals) -> dict:
    """Paired t-test of policy vs baseline per-episode values."""
    p = np.asarray(policy_vals, dtype=float)
    b = np.asarray(baseline_vals, dtype=float)
    ok = np.isfinite(p) & np.isfinite(b)
    p, b = p[ok], b[ok]
    diff = p - b
    if diff.size < 2 or np.all(diff == 0):
        return {"mean_diff": float(diff.mean()) if diff.size else math.nan, "p_value": 1.0}
    return {"mean_diff": float(diff.mean()), "p_value": float(stats.ttest_rel(p, b).pvalue)}


def cmd_compare(m: RunManifest) -> dict:
    """Paired policy-vs-baseline evaluation on identical seeds."""
    params, layers = _policy(dataclasses.replace(m, baseline=False))
    sc = m.scenario_obj()
    seeds = m.eval_seeds()
    h = m.config_hash()
    pol = evaluate(sc, seeds, params, layers, m.workers)
    base = evaluate(sc, seeds, None, None, m.workers)
    rows = compare_rows(pol, base)
    d = m.out_dir("compare")
    write_rows_csv(d / "compare_uplift.csv", [dict(r, config_hash=h) for r in rows],
                   ["seed"] + list(METRIC_NAMES) + ["config_hash"])
    summary = []
    for name in METRIC_NAMES:
        vals = [r[name] for r in rows]
        st = paired_stats([getattr(x, name) for x in pol], [getattr(x, name) for x in base])
        summary.append({"metric": name, "uplift_mean_pct": float(np.nanmean(vals)) if vals else math.nan,
                        "uplift_std_pct": float(np.nanstd(vals, ddof=1)) if len(vals) > 1 else 0.0,
                        "policy_mean": float(np.nanmean([getattr(x, name) for x in pol])) if pol else math.nan,
                        "baseline_mean": float(np.nanmean([getattr(x, name) for x in base])) if base else math.nan,
                        "p_value": st["p_value"], "config_hash": h})
    write_rows_csv(d / "compare_summary.csv", summary, list(summary[0]) if summary else ["metric"])
    pol_rows = [dict(x.row(), config_hash=h) for x in pol]
    write_rows_csv(d / "policy_episodes.csv", pol_rows, metric_header(sc.road.lanes, True))
    write_rows_csv(d / "baseline_episodes.csv", [dict(x.row(), config_hash=h) for x in base],
                   metric_header(sc.road.lanes, False))
    if rows:
        svg.save(d / "uplift_boxplot.svg", svg.boxplot(
            {n: [r[n] for r in rows] for n in METRIC_NAMES}, title="Per-episode uplift (%)",
            ylabel="uplift (%), positive is better", desc=f"config_hash={h}"))
    return {"rows": rows, "summary": summary, "policy": pol, "baseline": base, "dir": d}


def theil_sen_slope(y) -> float:
    y = np.asarray(y, dtype=float)
    if y.size < 2:
        return math.nan
    return float(stats.theilslopes(y, np.arange(y.size))[0])


def cmd_sweep_cvrate(m: RunManifest, rates, progress=None) -> dict:
    """Train and compare at each penetration rate."""
    rows = []
    for rate in rates:
        if not 0.0 <= rate <= 1.0:
            raise ValueError(f"cv rate {rate} outside [0, 1]")
        mr = dataclasses.replace(m, cv_rate=float(rate), checkpoint=None, baseline=False)
        tr = cmd_train(mr, progress)
        cmp_ = cmd_compare(mr)
        tail = [r["mean_reward"] for r in tr["rows"]]
        tail = tail[int(0.8 * len(tail)):] if tail else []
        row = {"cv_rate": rate, "train_reward_tail": float(np.mean(tail)) if tail else math.nan}
        for s in cmp_["summary"]:
            row[f"{s['metric']}_uplift"] = s["uplift_mean_pct"]
            row[f"{s['metric']}_p"] = s["p_value"]
        row["config_hash"] = mr.config_hash()
        rows.append(row)
    d = m.out_dir("sweep")
    if rows:
        write_rows_csv(d / "sweep_cvrate.csv", rows, list(rows[0]))
        svg.save(d / "sweep_cvrate.svg", svg.line_chart(
            [r["cv_rate"] for r in rows], {f"{k} uplift (%)": [r[f"{k}_uplift"] for r in rows]
                                           for k in ("avg_speed", "co2_per_vehicle", "lane_changes_per_vehicle")},
            title="Uplift vs CV penetration", xlabel="cv rate", ylabel="uplift (%)",
            desc=";".join(f"{r['cv_rate']}:{r['config_hash']}" for r in rows)))
    return {"rows": rows, "dir": d}


# ---------------------------------------------------------------------- validate
def cmd_validate(m: RunManifest) -> tuple:
    checks = all_checks()
    d = m.out_dir("validate")
    write_rows_csv(d / "validate.csv", [dict(dataclasses.asdict(c), config_hash=m.config_hash()) for c in checks],
                   ["name", "passed", "measured", "tolerance", "config_hash"])
    return checks, (0 if all(c.passed for c in checks) else 1), d


# ---------------------------------------------------------------------- export
def cmd_export(m: RunManifest, seed: int, seconds: Optional[float] = 60.0) -> dict:
    """Trajectory, grid-field and episode-log CSVs of one episode, plus a PDE space-time run.

    Args:
        seconds: episode length after warm-up (None keeps the scenario's length).
    """
    from .gridstate import write_grid_csv
    from .macroflow import MacroField, PdeParams, calibrate_from_world, pde_advance, write_field_csv
    from .roadsim.export import write_trajectory_csv

    sc = m.scenario_obj()
    params, layers = _policy(m)
    if seconds is not None:
        sc = dataclasses.replace(sc, env=dataclasses.replace(
            sc.env, episode_length=int(math.ceil(seconds / sc.env.env_step))))
    env = RegulationEnv(sc, record_trajectory=True)
    obs = env.reset(seed)
    net = None
    if params is not None:
        net = MLP(layers)
        net.load(params)
    snapshots = [(env.world.t, env.last_field)]
    allow = np.full((env.n_lanes, env.n_grids), 3)
    while not env.done:
        act = allow if net is None else greedy(net(obs.reshape(-1, obs.shape[-1]))).reshape(allow.shape)
        obs, _, _, _ = env.step(act)
        snapshots.append((env.world.t, env.last_field))
    d = m.out_dir("export")
    h = m.config_hash()
    write_trajectory_csv(d / f"trajectory_{seed}.csv", env.world.trajectory)
    write_grid_csv(d / f"grid_{seed}.csv", snapshots)
    env.write_episode_csv(d / f"episode_{seed}.csv")
    # macroscopic replay of the final grid field under the calibrated rates
    pp = PdeParams(boundary="open")
    rates = calibrate_from_world(env.world)
    fld = MacroField(env.last_field.rho, env.last_field.v, sc.env.grid_length)
    fsnap = [(0.0, fld)]
    for k in range(1, 31):
        fld = pde_advance(fld, rates, None, sc.env.env_step, pp)
        fsnap.append((k * sc.env.env_step, fld))
    write_field_csv(d / f"pde_field_{seed}.csv", fsnap)
    (d / "config_hash.txt").write_text(h + "\n")
    return {"dir": d}
