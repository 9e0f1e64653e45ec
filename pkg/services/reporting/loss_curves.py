import logging
from pathlib import Path
from typing import Dict, List, Union

import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from models.completion_config import LOSS_TERMS

logger = logging.getLogger(__name__)


def loss_figure(rows: List[Dict[str, float]]) -> go.Figure:
    """Unweighted generator terms on the left panel, total and discriminator loss on the right."""
    df = pd.DataFrame(rows)
    figure = make_subplots(rows=1, cols=2, subplot_titles=("loss components", "total / discriminator"))
    if df.empty:
        return figure
    for term in LOSS_TERMS:
        figure.add_trace(go.Scatter(x=df["step"], y=df[term], mode="lines", name=term), row=1, col=1)
    for column in ("total", "discriminator"):
        figure.add_trace(go.Scatter(x=df["step"], y=df[column], mode="lines", name=column), row=1, col=2)
    figure.update_xaxes(title_text="step")
    figure.update_layout(height=420, legend_title_text="term")
    return figure


def write_loss_curves(path: Union[str, Path], rows: List[Dict[str, float]]) -> Path:
    path = Path(path)
    loss_figure(rows).write_html(str(path), include_plotlyjs="cdn")
    logger.info("loss curves written to %s", path)
    return path
