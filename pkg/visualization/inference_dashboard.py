import numpy as np
import pandas as pd
from bokeh.io import save
from bokeh.layouts import column, row
from bokeh.models import ColumnDataSource, HoverTool, Span
from bokeh.models.widgets import DataTable, Div, NumberFormatter, TableColumn
from bokeh.plotting import figure
from bokeh.resources import CDN

from utils.errors import ConfigError

TOOLS = "pan,wheel_zoom,box_zoom,reset,save"


class InferenceDashboard:
    """Bokeh dashboards for coverage studies and single-dataset posteriors"""

    def __init__(self, tables=None, summary=None, raw_draws=None, debiased_draws=None):
        self.tables = list(tables) if tables is not None else []
        self.summary = summary
        self.raw_draws = raw_draws
        self.debiased_draws = debiased_draws
        self.method_colors = {'bayes': '#1f77b4', 'debiased_bayes': '#ff7f0e', 'debiased_lasso': '#2ca02c'}
        self.method_labels = {'bayes': 'Standard Bayes', 'debiased_bayes': 'Debiased Bayes',
                              'debiased_lasso': 'Debiased LASSO'}

        self.metrics = None
        if self.tables:
            self.metrics = pd.concat([t.to_frame() for t in self.tables], ignore_index=True)
            self.metrics['group_label'] = self.metrics['group'].astype(str)

    def _method_source(self, method):
        return ColumnDataSource(self.metrics[self.metrics['method'] == method])

    def create_metric_plot(self, metric, title, width=600, height=350):
        """One line per method over coefficient groups 0..5"""
        p = figure(
            title=title,
            x_axis_label='Coefficient group (0 = zeros, 1-5 = ascending signal)',
            y_axis_label=metric.title() if metric != 'rmse' else 'RMSE',
            width=width,
            height=height,
            tools=TOOLS
        )
        for method in self.metrics['method'].unique():
            source = self._method_source(method)
            color = self.method_colors.get(method, '#7f7f7f')
            label = self.method_labels.get(method, method)
            p.line('group', metric, source=source, line_width=3, alpha=0.8, color=color, legend_label=label)
            p.scatter('group', metric, source=source, size=8, color=color, legend_label=label)

        p.add_tools(HoverTool(tooltips=[
            ('Method', '@method'),
            ('Group', '@group'),
            ('Coverage', '@coverage{0.000}'),
            ('Bias', '@bias{0.0000}'),
            ('RMSE', '@rmse{0.0000}'),
        ]))
        p.xaxis.ticker = sorted(self.metrics['group'].unique().tolist())
        p.legend.location = "bottom_right"
        p.legend.click_policy = "hide"
        return p

    def create_coverage_plot(self, width=600, height=350):
        p = self.create_metric_plot('coverage', "Coverage by Coefficient Group", width, height)
        level = float(self.metrics['level'].iloc[0])
        p.add_layout(Span(location=level, dimension='width', line_color='black',
                          line_dash='dashed', line_width=2))
        return p

    def create_metrics_table(self):
        source = ColumnDataSource(self.metrics)
        columns = [
            TableColumn(field="method", title="Method"),
            TableColumn(field="group", title="Group"),
            TableColumn(field="coverage", title="Coverage", formatter=NumberFormatter(format="0.0000")),
            TableColumn(field="bias", title="Bias", formatter=NumberFormatter(format="0.0000")),
            TableColumn(field="rmse", title="RMSE", formatter=NumberFormatter(format="0.0000")),
            TableColumn(field="replications", title="Replications"),
        ]
        return DataTable(source=source, columns=columns, width=800, height=250)

    def create_density_plot(self, j, name=None, bins=60, width=700, height=400):
        """Histogram densities of raw and debiased draws of coefficient j"""
        name = name or f"x{j + 1}"
        raw = self.raw_draws[:, j]
        debiased = self.debiased_draws[:, j]
        lo = min(raw.min(), debiased.min())
        hi = max(raw.max(), debiased.max())
        if hi <= lo:
            hi = lo + 1.0
        edges = np.linspace(lo, hi, bins + 1)

        p = figure(
            title=f"Posterior of {name}: raw vs debiased",
            x_axis_label='Coefficient value',
            y_axis_label='Density',
            width=width,
            height=height,
            tools=TOOLS
        )
        for draws, color, label in ((raw, self.method_colors['bayes'], 'Raw posterior'),
                                    (debiased, self.method_colors['debiased_bayes'], 'Debiased posterior')):
            hist, _ = np.histogram(draws, bins=edges, density=True)
            p.quad(top=hist, bottom=0, left=edges[:-1], right=edges[1:],
                   fill_color=color, line_color=None, alpha=0.5, legend_label=label)
        p.legend.location = "top_right"
        p.legend.click_policy = "hide"
        return p

    def create_interval_plot(self, width=1000, height=400):
        """Raw and debiased intervals per coefficient"""
        frame = self.summary
        p = figure(
            title="Credible Intervals by Coefficient",
            x_axis_label='Coefficient index',
            y_axis_label='Value',
            width=width,
            height=height,
            tools=TOOLS
        )
        offset = 0.15
        raw = ColumnDataSource(dict(x=frame['index'] - offset, lower=frame['raw_lower'],
                                    upper=frame['raw_upper'], mean=frame['raw_mean'], name=frame['name']))
        deb = ColumnDataSource(dict(x=frame['index'] + offset, lower=frame['lower'],
                                    upper=frame['upper'], mean=frame['mean'], name=frame['name']))
        for source, color, label in ((raw, self.method_colors['bayes'], 'Raw'),
                                     (deb, self.method_colors['debiased_bayes'], 'Debiased')):
            p.segment('x', 'lower', 'x', 'upper', source=source, color=color, line_width=3, legend_label=label)
            p.scatter('x', 'mean', source=source, color=color, size=6, legend_label=label)
        p.add_tools(HoverTool(tooltips=[('Coefficient', '@name'), ('Mean', '@mean{0.0000}'),
                                        ('Lower', '@lower{0.0000}'), ('Upper', '@upper{0.0000}')]))
        p.add_layout(Span(location=0.0, dimension='width', line_color='gray', line_dash='dotted'))
        p.legend.click_policy = "hide"
        return p

    def create_study_dashboard(self):
        if self.metrics is None:
            raise ConfigError("study dashboard needs at least one metrics table")
        title = Div(text="<h1>Coverage Study</h1>", width=1200)
        return column(
            title,
            row(self.create_coverage_plot(),
                self.create_metric_plot('bias', "Bias by Coefficient Group")),
            self.create_metric_plot('rmse', "RMSE by Coefficient Group"),
            self.create_metrics_table()
        )

    def create_posterior_dashboard(self, focus=None):
        if self.summary is None or self.raw_draws is None or self.debiased_draws is None:
            raise ConfigError("posterior dashboard needs a summary and both draw matrices")
        if focus is None:
            focus = int(np.argmax(np.abs(self.summary['mean'].to_numpy())))
        title = Div(text="<h1>Debiased Posterior</h1>", width=1200)
        return column(
            title,
            self.create_interval_plot(),
            self.create_density_plot(focus, str(self.summary['name'].iloc[focus]))
        )

    def save_dashboard(self, filename, layout):
        """Write a standalone HTML file"""
        save(layout, filename=str(filename), resources=CDN, title="Debiased Bayesian inference")
        print(f"Dashboard saved to {filename}")
        return filename
