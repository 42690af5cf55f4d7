import importlib.util
from pathlib import Path


def test_benchmark_runs():
    path = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    spec = importlib.util.spec_from_file_location("bench_kernels", path)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    rows = mod.main(["--scale", "0.001", "--repeat", "1"])
    assert len(rows) == 4 and all(t["python"] > 0 for _, t in rows)
