import numpy as np
import pytest

from scalelaw.ingest import HyperParams, ModelArch, Schedule, ScheduleKind, ValRecord, make_run


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def constant_run(run_id="r0", n_records=50, loss=lambda s: 3.0 + 10.0 / (s + 10), arch=None, batch=8,
                 vals=(), interval=20):
    arch = arch or ModelArch(3, 96)
    hp = HyperParams(1e-3, batch)
    sched = Schedule(ScheduleKind.CONSTANT, 1000)
    steps = [interval * (i + 1) for i in range(n_records)]
    return make_run(run_id, arch, hp, sched, steps, [loss(s) for s in steps], vals, log_interval=interval)


@pytest.fixture
def small_run():
    bt = 8 * 2048
    vals = (ValRecord(100 * bt, 3.25), ValRecord(500 * bt, 3.0))
    return constant_run(vals=vals)
