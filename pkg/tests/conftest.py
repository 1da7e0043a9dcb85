import io
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

ACCEPTANCE_SAVE = "ha,ia,fa,vectors,lambdas"
_criteria: dict[int, tuple] = {}


def acceptance_spec():
    """128^3 helical annulus used by the orientation and chunking criteria."""
    from fiberorient.phantom import AnnulusPhantomSpec

    return AnnulusPhantomSpec(r_inner=16.0, r_outer=58.0, texture_margin=4.0, mask_z_margin=16).with_density(0.5)


@pytest.fixture(scope="session")
def acceptance_phantom(tmp_path_factory):
    """Written phantom plus a monolithic single-worker run saving every output."""
    import time

    from fiberorient.chunk_engine import run_pipeline
    from fiberorient.config import load_config
    from fiberorient.phantom import write_phantom

    root = tmp_path_factory.mktemp("acceptance")
    spec = acceptance_spec()
    paths = write_phantom(spec, root)
    config = load_config(paths["config"], [f"output.save={ACCEPTANCE_SAVE}", "chunking.chunk=128,128,128",
                                           "chunking.workers=1", f"output.directory={root / 'monolithic'}"])
    t0 = time.perf_counter()
    result = run_pipeline(config, progress=io.StringIO())
    elapsed = time.perf_counter() - t0
    assert result.ok
    return {"spec": spec, "root": root, "paths": paths, "config": config, "seconds": elapsed}


def small_volume(shape=(24, 20, 16), seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(shape).astype(np.float32)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args[0]))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or report.failed:
        ok, details = _criteria.get(props["criterion"], (True, []))
        detail = props.get("detail")
        _criteria[props["criterion"]] = (ok and report.passed, details + ([detail] if detail else []))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        ok, details = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {'; '.join(details)}")
