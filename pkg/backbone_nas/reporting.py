"""
Report writers: CSV tables through `astropy.table` and plain-text SVG
line plots.
"""

import numpy as np

from astropy.table import Table

__all__ = ['loss_curve_table', 'flops_histogram_table', 'metrics_table',
           'write_table', 'curves_svg', 'write_svg', 'best_so_far_svg']

COLORS = ('#1f77b4', '#d62728', '#2ca02c', '#9467bd', '#ff7f0e')


def write_table(table, filename):
    table.write(filename, format='ascii.csv', overwrite=True)


def loss_curve_table(losses):
    table = Table()
    table['iteration'] = np.arange(1, len(losses) + 1)
    table['loss'] = np.asarray(losses, dtype=np.float64)
    table['loss'].info.format = '.6f'
    return table


def flops_histogram_table(flops, bins=20):
    """
    Histogram of sampled MACs with integer bin edges.
    """
    counts, edges = np.histogram(np.asarray(flops, dtype=np.float64), bins=bins)
    table = Table()
    table['flops_low'] = np.floor(edges[:-1]).astype(np.int64)
    table['flops_high'] = np.floor(edges[1:]).astype(np.int64)
    table['count'] = counts.astype(np.int64)
    return table


def metrics_table(metrics):
    """
    One-row table from a mapping; float values are written with 6
    decimals.
    """
    table = Table()
    for key, value in metrics.items():
        table[key] = [value]
        if isinstance(value, float):
            table[key].info.format = '.6f'
    return table


def _ticks(low, high, count=5):
    if high <= low:
        high = low + 1.
    return np.linspace(low, high, count)


def curves_svg(curves, title='', xlabel='', ylabel='', width=640, height=400):
    """
    Render line curves as an SVG document.

    Parameters
    ----------
    curves : dict
        Mapping of legend label to ``(x, y)`` sequences.
    """
    margin_left, margin_right, margin_top, margin_bottom = 70, 20, 40, 50
    plot_w = width - margin_left - margin_right
    plot_h = height - margin_top - margin_bottom

    xs = np.concatenate([np.asarray(x, dtype=float) for x, _ in curves.values()])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, y in curves.values()])
    xticks = _ticks(xs.min(), xs.max())
    yticks = _ticks(ys.min(), ys.max())

    def px(x):
        return margin_left + (x - xticks[0]) / (xticks[-1] - xticks[0]) * plot_w

    def py(y):
        return margin_top + plot_h - (y - yticks[0]) / (yticks[-1] - yticks[0]) * plot_h

    out = ['<svg xmlns="http://www.w3.org/2000/svg" width="{0}" height="{1}" '
           'viewBox="0 0 {0} {1}">'.format(width, height),
           '<rect width="100%" height="100%" fill="white"/>',
           '<text x="{0:.1f}" y="20" text-anchor="middle" font-size="14">{1}</text>'
           .format(width / 2, title),
           '<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="black"/>'
           .format(margin_left, margin_top + plot_h, margin_left + plot_w),
           '<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="black"/>'
           .format(margin_left, margin_top, margin_top + plot_h)]

    for tick in xticks:
        out.append('<text x="{0:.1f}" y="{1}" text-anchor="middle" font-size="10">'
                   '{2:g}</text>'.format(px(tick), margin_top + plot_h + 15, round(tick, 2)))
    for tick in yticks:
        out.append('<text x="{0}" y="{1:.1f}" text-anchor="end" font-size="10">'
                   '{2:.3f}</text>'.format(margin_left - 5, py(tick) + 3, tick))
    out.append('<text x="{0:.1f}" y="{1}" text-anchor="middle" font-size="12">{2}</text>'
               .format(margin_left + plot_w / 2, height - 10, xlabel))
    out.append('<text x="15" y="{0:.1f}" text-anchor="middle" font-size="12" '
               'transform="rotate(-90 15 {0:.1f})">{1}</text>'
               .format(margin_top + plot_h / 2, ylabel))

    for index, (label, (x, y)) in enumerate(curves.items()):
        color = COLORS[index % len(COLORS)]
        points = " ".join("{0:.2f},{1:.2f}".format(px(a), py(b))
                          for a, b in zip(np.asarray(x, dtype=float),
                                          np.asarray(y, dtype=float)))
        out.append('<polyline fill="none" stroke="{0}" stroke-width="1.5" '
                   'points="{1}"/>'.format(color, points))
        legend_y = margin_top + 15 + 15 * index
        out.append('<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="{3}" '
                   'stroke-width="2"/>'.format(margin_left + 10, legend_y,
                                               margin_left + 30, color))
        out.append('<text x="{0}" y="{1}" font-size="11">{2}</text>'
                   .format(margin_left + 35, legend_y + 4, label))

    out.append('</svg>')
    return "\n".join(out) + "\n"


def best_so_far_svg(results, title='Best fitness during search'):
    """
    SVG of the best-so-far fitness against the evaluation count, one curve
    per `~backbone_nas.evolution.SearchResult`.
    """
    curves = {result.controller: (np.arange(1, result.num_evaluations + 1),
                                  result.best_so_far())
              for result in results}
    return curves_svg(curves, title=title, xlabel='evaluations',
                      ylabel='best fitness')


def write_svg(svg, filename):
    with open(filename, 'w') as fh:
        fh.write(svg)
