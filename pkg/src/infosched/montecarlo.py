"""Monte Carlo evaluation of a schedule against the exact filter.

Arrival sampling uses the count-then-order-statistics construction: per
sensor and per control interval, a Poisson count at mean rate*delta, then
that many uniform times in the interval.  Superposing sensors and sorting by
(time, sensor index) yields the merged record the rollouts consume.

Seeding policy: run r of a study with master seed s draws from the Philox
generator keyed by SeedSequence(entropy=s, spawn_key=(r,)).  Within a run,
draws happen sensor-major then interval-major.  Because every run owns its
stream and per-run results are reduced in run order, estimates are
bit-identical for any parallelism degree.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cdkf import ArrivalRecord, rollout_covariance
from .model import Instance, Schedule, ValidationError
from .riccati import COV, INFO, Trajectory, pathwise_cost


def run_seed(master_seed: int, run_index: int) -> np.random.SeedSequence:
    """Child seed of one Monte Carlo run; documented so studies can be sharded."""
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(run_index,))


def _philox(seed) -> np.random.Generator:
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def sample_arrivals(schedule: Schedule, seed) -> ArrivalRecord:
    """One realization of the arrival process of every sensor.

    seed is an int or a SeedSequence.  Draw order is fixed (sensor-major,
    interval-major: one Poisson count then that many uniforms), so equal
    seeds give equal records.
    """
    rng = _philox(seed)
    delta = schedule.delta
    times = []
    sensors = []
    for j in range(schedule.M):
        for k in range(schedule.N):
            lam = schedule.rates[k, j]
            count = int(rng.poisson(lam * delta)) if lam > 0.0 else 0
            if count:
                t = k * delta + delta * rng.random(count)
                times.append(t)
                sensors.append(np.full(count, j, dtype=np.int64))
    if times:
        times = np.concatenate(times)
        sensors = np.concatenate(sensors)
    else:
        times = np.empty(0)
        sensors = np.empty(0, dtype=np.int64)
    return ArrivalRecord(times=times, sensors=sensors)


@dataclass(frozen=True)
class McEstimate:
    """Sample statistics of the pathwise objective over independent runs."""

    mean: float
    std: float
    stderr: float
    n_runs: int
    per_run_costs: np.ndarray

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "stderr": self.stderr,
            "n_runs": self.n_runs,
            "costs": [float(c) for c in self.per_run_costs],
        }


def save_mc_report(path, estimate: McEstimate) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(estimate.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _one_run_cost(instance, schedule, n_eval, substeps, scheme, seed, r):
    arrivals = sample_arrivals(schedule, run_seed(seed, r))
    traj = rollout_covariance(instance, arrivals, n_eval, substeps, scheme)
    return pathwise_cost(traj, instance.weights, instance.T)


def _worker(args):
    return _one_run_cost(*args)


def mc_objective(
    instance: Instance,
    schedule: Schedule,
    n_runs: int = 100,
    n_eval: int = 300,
    substeps: int = 4,
    seed: int = 0,
    scheme: str = "rk4",
    n_jobs: int = 1,
) -> McEstimate:
    """Estimate the expected pathwise objective of a schedule.

    Per run: sample arrivals, roll the exact covariance recursion on the
    evaluation grid, apply the trapezoid objective.  per_run_costs comes back
    in run order regardless of n_jobs, so the reduction is deterministic.
    """
    if n_runs < 1:
        raise ValidationError(f"need n_runs >= 1, got {n_runs}")
    if n_jobs > 1:
        jobs = [(instance, schedule, n_eval, substeps, scheme, seed, r)
                for r in range(n_runs)]
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            costs = np.fromiter(
                pool.map(_worker, jobs, chunksize=max(1, n_runs // (4 * n_jobs))),
                dtype=float, count=n_runs,
            )
    else:
        costs = np.fromiter(
            (_one_run_cost(instance, schedule, n_eval, substeps, scheme, seed, r)
             for r in range(n_runs)),
            dtype=float, count=n_runs,
        )
    mean = float(np.mean(costs))
    # identical costs (zero schedule) must report exactly zero spread; np.std
    # of equal values returns ulp noise because fl(n*a)/n != a
    if n_runs > 1 and not np.all(costs == costs[0]):
        std = float(np.std(costs, ddof=1))
    else:
        std = 0.0
    return McEstimate(
        mean=mean,
        std=std,
        stderr=std / np.sqrt(n_runs),
        n_runs=n_runs,
        per_run_costs=costs,
    )


@dataclass(frozen=True)
class McTrajectories:
    """Nodewise sample means of covariance and information paths.

    Both means come from the same arrival realizations (the information path
    of a run is the nodewise inverse of its covariance path).  The stderr
    arrays are the per-node standard errors of the matrix trace, a scalar
    proxy for the statistical uncertainty scale of each node.
    """

    p_mean: Trajectory
    y_mean: Trajectory
    p_trace_stderr: np.ndarray
    y_trace_stderr: np.ndarray
    n_runs: int


def mc_mean_trajectories(
    instance: Instance,
    schedule: Schedule,
    n_runs: int = 100,
    n_eval: int = 300,
    substeps: int = 4,
    seed: int = 0,
    scheme: str = "rk4",
) -> McTrajectories:
    """Sample means of P(t) and Y(t) = P(t)^{-1} over arrival realizations."""
    if n_runs < 1:
        raise ValidationError(f"need n_runs >= 1, got {n_runs}")
    n = instance.n
    p_paths = np.empty((n_runs, n_eval + 1, n, n))
    for r in range(n_runs):
        arrivals = sample_arrivals(schedule, run_seed(seed, r))
        traj = rollout_covariance(instance, arrivals, n_eval, substeps, scheme)
        p_paths[r] = traj.values
        times = traj.times
    y_paths = np.linalg.inv(p_paths)
    y_paths = 0.5 * (y_paths + y_paths.transpose(0, 1, 3, 2))

    if np.all(p_paths == p_paths[0]):
        # all realizations identical (e.g. zero schedule): averaging would
        # only add roundoff
        p_mean = p_paths[0].copy()
        y_mean = y_paths[0].copy()
    else:
        p_mean = p_paths.mean(axis=0)
        y_mean = y_paths.mean(axis=0)
    p_traces = np.trace(p_paths, axis1=2, axis2=3)
    y_traces = np.trace(y_paths, axis1=2, axis2=3)
    scale = np.sqrt(n_runs)
    if n_runs > 1 and not np.all(p_paths == p_paths[0]):
        p_se = p_traces.std(axis=0, ddof=1) / scale
        y_se = y_traces.std(axis=0, ddof=1) / scale
    else:
        p_se = np.zeros(n_eval + 1)
        y_se = np.zeros(n_eval + 1)
    return McTrajectories(
        p_mean=Trajectory(coordinates=COV, times=times, values=p_mean),
        y_mean=Trajectory(coordinates=INFO, times=times, values=y_mean),
        p_trace_stderr=p_se,
        y_trace_stderr=y_se,
        n_runs=n_runs,
    )


__all__ = [
    "McEstimate",
    "McTrajectories",
    "mc_mean_trajectories",
    "mc_objective",
    "run_seed",
    "sample_arrivals",
    "save_mc_report",
]
