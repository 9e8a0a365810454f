import json
import os
import time
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from crloc.files import config_hash
from crloc.neural import desk_preset, init_network, load_model, save_model
from crloc.train import TrainConfig, train_two_stage

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

CACHE = Path(os.environ.get("CRLOC_CACHE", Path(__file__).resolve().parent.parent / ".cache"))
DESK_SEED = 0


def desk_configs(seed=DESK_SEED):
    return TrainConfig.desk(1, seed), TrainConfig.desk(2, seed)


def _train_desk(seed):
    cfg1, cfg2 = desk_configs(seed)
    key = config_hash({"preset": desk_preset().to_dict(), "stage1": repr(cfg1),
                       "stage2": repr(cfg2), "seed": seed})
    folder = CACHE / f"desk-{key}"
    files = [folder / n for n in ("stage1.crcnn", "stage2.crcnn", "reports.json")]
    if os.environ.get("CRLOC_FRESH") != "1" and all(f.exists() for f in files):
        reports = json.loads(files[2].read_text())
        reports["cached"] = True
        return load_model(files[0]), load_model(files[1]), reports
    t0 = time.perf_counter()
    net = init_network(desk_preset(), seed)
    net1, net2, rep1, rep2 = train_two_stage(net, cfg1, cfg2)
    wall = time.perf_counter() - t0
    folder.mkdir(parents=True, exist_ok=True)
    save_model(net1, files[0])
    save_model(net2, files[1])
    reports = {
        "seed": seed, "wall_s": wall,
        "stage1": {"val_errors": rep1.val_errors, "best_epoch": rep1.best_epoch,
                   "best_error": rep1.best_error, "stop": rep1.stop_reason},
        "stage2": {"val_errors": rep2.val_errors, "best_epoch": rep2.best_epoch,
                   "best_error": rep2.best_error, "stop": rep2.stop_reason},
    }
    files[2].write_text(json.dumps(reports, indent=2))
    reports["cached"] = False
    return net1, net2, reports


@pytest.fixture(scope="session")
def desk_training():
    """Desk-preset two-stage run (cached on disk; CRLOC_FRESH=1 retrains)."""
    return _train_desk(DESK_SEED)


@pytest.fixture(scope="session")
def desk_model(desk_training):
    return desk_training[1]


ACCEPTANCE: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(name: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        print(line)
        ACCEPTANCE.append(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
