import numpy as np
import pandas as pd

from multifamm.mfpca import MultiEigenBasis
from multifamm.reports import eigenfunction_figure, metric_boxplot, save_figure
from multifamm.simeval import MetricReport, fourier


def test_eigenfunction_panels(tmp_path):
    grid = np.linspace(0.0, 1.0, 51)
    functions = np.stack([np.stack([fourier(k, grid), fourier(k + 1, grid)]) for k in (1, 3, 5)])
    basis = MultiEigenBasis("E", ("a", "b"), grid, functions, np.array([3.0, 2.0, 1.0]),
                            np.ones(2), truncation=2)
    fig = eigenfunction_figure(basis)
    assert len(fig.data) == 4
    assert sum(trace.showlegend for trace in fig.data) == 2

    path = save_figure(fig, tmp_path / "plots" / "e.html")
    assert path.exists()
    assert "plotly" in path.read_text()


def test_metric_boxes():
    metrics = pd.DataFrame({
        "replicate": [0, 0, 1, 1, 0],
        "component": ["mean", "fitted", "mean", "fitted", "sigma2"],
        "dim": ["all", "all", "all", "all", "a"],
        "metric": ["mrrMSE", "mrrMSE", "mrrMSE", "mrrMSE", "rrMSE"],
        "value": [0.1, 0.2, 0.15, 0.25, 0.05],
    })
    report = MetricReport("tiny", "A", 1, metrics, pd.DataFrame(columns=["coverage"]), pd.DataFrame())
    fig = metric_boxplot(report)
    assert [trace.name for trace in fig.data] == ["fitted", "mean"]
    assert "2 replicates" in fig.layout.title.text
