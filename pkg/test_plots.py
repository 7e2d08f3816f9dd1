"""Test SVG figure output."""

from concurrent.futures import ThreadPoolExecutor

import matplotlib.pyplot as plt
import numpy as np

from metrics import CoverageGrid, reliability_table
from plots import calibration_svg, reliability_svg, selective_svg

LEVELS = CoverageGrid().levels
SELECTIVE = np.linspace(0.1, 1.0, 10)


def draw_all(out_dir, shift):
    calibration_svg(LEVELS, {"BE (all)": np.clip(LEVELS + shift, 0, 1)}, out_dir / "calibration.svg")
    table = reliability_table([[0.8, 0.2], [0.3, 0.7], [0.55, 0.45]], [0, 1, 1])
    reliability_svg(table, out_dir / "reliability.svg")
    selective_svg(SELECTIVE, {"BE (all)": SELECTIVE * (1 + shift)}, out_dir / "selective.svg", "RMSE", 0.1)
    return {p.name: p.read_bytes() for p in sorted(out_dir.iterdir())}


def test_figures_are_svg_and_reproducible(tmp_path):
    first = draw_all(tmp_path / "a", 0.05)
    second = draw_all(tmp_path / "b", 0.05)
    assert set(first) == {"calibration.svg", "reliability.svg", "selective.svg"}
    assert all(b"<svg" in content for content in first.values())
    assert first == second


def test_threaded_rendering_matches_serial(tmp_path):
    shifts = [0.01 * i for i in range(8)]
    serial = [draw_all(tmp_path / f"serial_{i}", s) for i, s in enumerate(shifts)]
    with ThreadPoolExecutor(max_workers=4) as executor:
        futures = [executor.submit(draw_all, tmp_path / f"thread_{i}", s) for i, s in enumerate(shifts)]
        threaded = [f.result() for f in futures]
    assert threaded == serial
    assert plt.get_fignums() == []
