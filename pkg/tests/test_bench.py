import importlib.util
from pathlib import Path

import pytest

from supercut import _jit

BENCH = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"


@pytest.mark.skipif(not _jit.HAVE_NUMBA, reason="numba not installed")
def test_benchmark_runs_and_paths_match(capsys):
    spec = importlib.util.spec_from_file_location("bench_kernels", BENCH)
    bench = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(bench)
    bench.main(["--size", "24", "--m", "6", "--repeat", "1"])
    rows = [line for line in capsys.readouterr().out.splitlines() if line.startswith(("slic", "comp", "cont"))]
    assert len(rows) == 4
    assert all(line.endswith("True") for line in rows)
