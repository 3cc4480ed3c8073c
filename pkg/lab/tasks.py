import logging

import numpy as np
from celery import group, shared_task
from django.conf import settings

from .experiment import get_experiment
from .services.sums import sum_batch

logger = logging.getLogger(__name__)

# replicates per field draw inside one task
_DRAW_CHUNK = 64


# ==============================
# Helpers
# ==============================
def replicate_chunks(replicates: int, size: int | None = None) -> list[tuple[int, int]]:
    """(start, count) pairs covering 0..replicates-1 in order."""
    size = int(size or settings.LAB_CHUNK_SIZE)
    return [(start, min(size, replicates - start)) for start in range(0, replicates, size)]


def fan_out(task, calls: list[tuple]) -> list:
    """Run task over argument tuples as a Celery group; results come back in submission order."""
    if not calls:
        return []
    job = group(task.s(*args) for args in calls)
    result = job.apply() if settings.CELERY_TASK_ALWAYS_EAGER else job.apply_async()
    return result.get(disable_sync_subtasks=False)


# ======================================
# Celery Task: lattice sums
# ======================================
@shared_task(bind=True)
def simulate_sum_batch(self, config: dict, N: int, seed: int, start: int, count: int,
                       functionals: tuple = ("order_k",)) -> dict:
    """
    Draws replicates start..start+count-1 of the field on B_N and returns, per
    requested functional (`order_k` = H^(0), `full` = H^(0) + H^(1)), rows of
    [S_N, S_N(t_1), ...].
    """
    try:
        experiment = get_experiment(config)
        sampler = experiment.field_sampler(N, seed)
        series = {"order_k": experiment.spec.H, "full": experiment.spec.functional()}
        out = {name: [] for name in functionals}
        for offset in range(0, count, _DRAW_CHUNK):
            reps = range(start + offset, start + min(count, offset + _DRAW_CHUNK))
            block = sampler.draw(reps)
            for name in functionals:
                rows = sum_batch(series[name], block, N, experiment.spec, experiment.t_list)
                out[name].extend(rows.tolist())
        logger.info(f"✅ sums: N={N}, seed={seed}, replicates {start}..{start + count - 1}")
        return out
    except Exception as e:
        logger.exception(f"❌ sum batch failed (N={N}, seed={seed}, start={start}): {e}")
        raise


# ======================================
# Celery Task: limit-law draws
# ======================================
@shared_task(bind=True)
def sample_limit_batch(self, config: dict, seed: int, start: int, count: int, t_list: list | None = None) -> list:
    """Rows of S_0(t_1..t_K) (default t = 1) for replicates start..start+count-1."""
    try:
        experiment = get_experiment(config)
        sampler = experiment.limit_sampler(seed)
        t_list = [np.asarray(t, dtype=float) for t in t_list] if t_list else None
        values = sampler.sample(range(start, start + count), t_list)
        logger.info(f"✅ limit draws: seed={seed}, replicates {start}..{start + count - 1}")
        return values.tolist()
    except Exception as e:
        logger.exception(f"❌ limit batch failed (seed={seed}, start={start}): {e}")
        raise


# ==============================
# Gathering
# ==============================
def lattice_sums(config: dict, N: int, seed: int, replicates: int,
                 functionals: tuple = ("order_k",)) -> dict[str, np.ndarray]:
    """(replicates, 1 + K) arrays of lattice sums per functional, in replicate order."""
    calls = [(config, N, seed, start, count, list(functionals)) for start, count in replicate_chunks(replicates)]
    parts = fan_out(simulate_sum_batch, calls)
    return {name: np.asarray([row for part in parts for row in part[name]]) for name in functionals}


def limit_draws(config: dict, seed: int, replicates: int, t_list: list | None = None) -> np.ndarray:
    t_payload = [list(map(float, t)) for t in t_list] if t_list else None
    calls = [(config, seed, start, count, t_payload) for start, count in replicate_chunks(replicates)]
    parts = fan_out(sample_limit_batch, calls)
    return np.asarray([row for part in parts for row in part])
