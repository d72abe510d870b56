"""
Static HTML figures (written only with --plots)
"""

import logging
from pathlib import Path
from typing import Optional

import numpy as np
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from .mfamm import ModelFit, confidence_band
from .mfpca import MultiEigenBasis
from .simeval import MetricReport

logger = logging.getLogger(__name__)


def effect_figure(fit: ModelFit, term: str, d: str, grid=None, level: float = 0.95,
                  x: Optional[float] = None) -> go.Figure:
    """Estimated partial predictor with its pointwise band"""
    band = confidence_band(fit, term, d, grid, level, x)
    fig = go.Figure()
    fig.add_trace(go.Scatter(
        x=np.concatenate([band["t"], band["t"][::-1]]),
        y=np.concatenate([band["upper"], band["lower"][::-1]]),
        fill="toself", fillcolor="rgba(31, 119, 180, 0.2)",
        line=dict(width=0), hoverinfo="skip", name=f"{level:.0%} band",
    ))
    fig.add_trace(go.Scatter(x=band["t"], y=band["value"], mode="lines",
                             line=dict(width=2, color="rgb(31, 119, 180)"), name="estimate"))
    fig.add_shape(type="line", x0=0, y0=0, x1=1, y1=0, line=dict(color="gray", width=1, dash="dash"))
    fig.update_layout(
        title=f"{term} on {d}",
        xaxis_title="t",
        yaxis_title=f"f_{term}",
        template="plotly_white",
        hovermode="closest",
    )
    return fig


def eigenfunction_figure(basis: MultiEigenBasis) -> go.Figure:
    """Selected multivariate eigenfunctions, one panel per dimension"""
    fig = make_subplots(rows=1, cols=len(basis.dims), subplot_titles=list(basis.dims))
    for m in range(basis.truncation):
        for j, dim in enumerate(basis.dims):
            fig.add_trace(go.Scatter(
                x=basis.grid, y=basis.functions[m, j], mode="lines",
                name=f"psi {m + 1} ({basis.eigenvalues[m]:.3g})",
                legendgroup=str(m), showlegend=(j == 0),
            ), row=1, col=j + 1)
    fig.update_layout(title=f"Eigenfunctions of {basis.process}", template="plotly_white")
    return fig


def metric_boxplot(report: MetricReport, metric: str = "mrrMSE") -> go.Figure:
    """Replicate distribution of one metric per component"""
    rows = report.metrics[report.metrics["metric"] == metric]
    fig = go.Figure()
    for component, part in rows.groupby("component", sort=True):
        fig.add_trace(go.Box(y=part["value"], name=component, boxpoints="outliers"))
    fig.update_layout(
        title=f"{metric}: {report.setting}/{report.scenario} ({report.n_replicates} replicates)",
        yaxis_title=metric,
        template="plotly_white",
    )
    return fig


def save_figure(fig: go.Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(str(path), include_plotlyjs="cdn", full_html=True)
    logger.info(f"Figure written: {path}")
    return path
