"""SVG plots of scenario telemetry, one file per column group."""
import os

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from workbench import ConfigError, log  # noqa: E402

# byte-identical SVGs for identical telemetry
matplotlib.rcParams['svg.hashsalt'] = 'tiltdock'

COLUMN_GROUPS = {
    'position': (('x', 'y', 'z'), ('ref_x', 'ref_y', 'ref_z'), 'Position [m]'),
    'attitude': (('roll', 'pitch', 'yaw'), (), 'Lage [rad]'),
    'male': (('male_x', 'male_y', 'male_z', 'male_yaw'), (), 'Male-Einheit [m, rad]'),
    'thrust': (('thrust_total',), (), 'Gesamtschub [N]'),
    'transition': (('W', 'S_unit', 'S_assem', 'scale'), (), 'Übergang [-]'),
    'load': (('load_torque',), (), 'Lastmoment [N*m]'),
}
LINE_STYLES = ('-', '--', ':', '-.')


def _has_data(df, columns):
    present = [c for c in columns if c in df.columns]
    return bool(present) and not df[present].isna().all().all()


def plot_group(df, group, path):
    """Draw one column group; returns False when the telemetry carries none of it."""
    if group not in COLUMN_GROUPS:
        raise ConfigError(f"unknown plot group '{group}', expected one of {sorted(COLUMN_GROUPS)}")
    columns, references, ylabel = COLUMN_GROUPS[group]
    if not _has_data(df, columns):
        return False

    variants = list(df['variant'].dropna().unique()) if 'variant' in df.columns else ['main']
    fig, ax = plt.subplots(figsize=(10, 4))
    for i, variant in enumerate(variants or ['main']):
        part = df[df['variant'] == variant] if 'variant' in df.columns else df
        style = LINE_STYLES[i % len(LINE_STYLES)]
        suffix = f" ({variant})" if len(variants) > 1 else ''
        for column in columns:
            if column in part.columns and not part[column].isna().all():
                ax.plot(part['time'], part[column], linestyle=style, linewidth=1.2, label=column + suffix)
        for column in references:
            if column in part.columns and not part[column].isna().all():
                ax.plot(part['time'], part[column], color='k', linestyle=':', alpha=0.5, linewidth=0.8)
    ax.set_xlabel('Zeit [s]')
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    ax.legend(loc='best', fontsize='small')
    fig.tight_layout()
    fig.savefig(path, format='svg', metadata={'Date': None})
    plt.close(fig)
    return True


def plot_telemetry(df, out_dir, name):
    """Write <name>_<group>.svg for every group present; returns the written paths."""
    if 'time' not in df.columns:
        raise ConfigError("telemetry has no 'time' column")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for group in COLUMN_GROUPS:
        path = os.path.join(out_dir, f"{name}_{group}.svg")
        if plot_group(df, group, path):
            written.append(path)
    log(f"plots: {len(written)} SVG(s) for '{name}' in {out_dir}")
    return written


def plot_csv(csv_path, out_dir, name=None):
    if not os.path.exists(csv_path):
        raise ConfigError(f"telemetry file not found: {csv_path}")
    df = pd.read_csv(csv_path)
    name = name or os.path.splitext(os.path.basename(csv_path))[0]
    return plot_telemetry(df, out_dir, name)
