#!/usr/bin/env python3
"""
Terminology for emitted tables and invariant checks
Centralizes file names, column layouts and check descriptions to avoid hardcoding
"""
from dataclasses import dataclass
from typing import Dict, List


@dataclass
class ColumnSpec:
    """One column of an emitted table."""
    name: str
    description: str
    unit: str = ""


@dataclass
class TableSpec:
    """An emitted csv file and its column layout."""
    file_name: str
    description: str
    columns: List[ColumnSpec]

    @property
    def header(self) -> List[str]:
        return [c.name for c in self.columns]


class LabTerminology:
    """Centralized table and summary definitions."""

    TABLES = {
        'profile': TableSpec(
            file_name='selftrap_profile.csv',
            description='Self-trapped profile on the solve grid',
            columns=[
                ColumnSpec('q', 'Position', 'length'),
                ColumnSpec('rho', 'Normalized density, exactly 0 outside the support', '1/length'),
                ColumnSpec('U', 'Quantum potential from the ODE, empty outside the support', 'energy'),
                ColumnSpec('U_cosh_approx', 'U0 cosh(Lambda q) near-origin approximation', 'energy'),
                ColumnSpec('R', 'Amplitude sqrt(rho)', '1/sqrt(length)'),
            ],
        ),
        'compare': TableSpec(
            file_name='compare.csv',
            description='Self-trapped density against the second-moment matched Gaussian',
            columns=[
                ColumnSpec('q', 'Position', 'length'),
                ColumnSpec('rho_selftrap', 'Self-trapped density', '1/length'),
                ColumnSpec('rho_gaussian', 'Matched Gaussian density', '1/length'),
            ],
        ),
        'timeseries': TableSpec(
            file_name='timeseries.csv',
            description='Sampled diagnostics of an evolution run',
            columns=[
                ColumnSpec('t', 'Time', 'time'),
                ColumnSpec('norm', 'Integral of |psi|^2'),
                ColumnSpec('variance', 'Position variance', 'length^2'),
                ColumnSpec('convexity_min', 'Minimum of d_q^2 U over the diagnostic region', 'energy/length^2'),
                ColumnSpec('theta_min', 'Minimum velocity divergence over the diagnostic region', '1/time'),
            ],
        ),
        'timeseries_focus': TableSpec(
            file_name='timeseries_focus.csv',
            description='Zero-phase run that measures the convexity time of an auto-phase experiment',
            columns=[
                ColumnSpec('t', 'Time', 'time'),
                ColumnSpec('norm', 'Integral of |psi|^2'),
                ColumnSpec('variance', 'Position variance', 'length^2'),
                ColumnSpec('convexity_min', 'Minimum of d_q^2 U over the diagnostic region', 'energy/length^2'),
                ColumnSpec('theta_min', 'Minimum velocity divergence over the diagnostic region', '1/time'),
            ],
        ),
        'snapshot': TableSpec(
            file_name='snapshot_{index:04d}.csv',
            description='Fluid fields at one sample',
            columns=[
                ColumnSpec('q', 'Position', 'length'),
                ColumnSpec('rho', 'Density', '1/length'),
                ColumnSpec('U', 'Quantum potential, empty where masked', 'energy'),
                ColumnSpec('v', 'Velocity J/rho, empty where masked', 'length/time'),
                ColumnSpec('theta', 'Velocity divergence, empty where masked', '1/time'),
            ],
        ),
    }

    SUMMARIES = {
        'solve': 'summary.json',
        'compare': 'compare.json',
        'evolve': 'evolution.json',
    }

    SNAPSHOT_DIR = 'fields'

    @classmethod
    def get_table(cls, name: str) -> TableSpec:
        """Get table spec by name."""
        return cls.TABLES[name]

    @classmethod
    def header(cls, name: str) -> List[str]:
        return cls.TABLES[name].header

    @classmethod
    def file_name(cls, name: str) -> str:
        return cls.TABLES[name].file_name


# Human-readable invariant descriptions printed by `diagnose`
CHECK_DESCRIPTIONS: Dict[str, str] = {
    'normalization': 'integral of rho equals 1 within 1e-8',
    'symmetry': 'rho(q) equals rho(-q) within 1e-8',
    'convexity': 'd_q^2 U > 0 on the support interior',
    'concavity': 'd_q^2 R < 0 on the support interior where rho > 1e-16',
    'log_linear': 'slope of ln(rho) against U equals -beta within 1%',
    'closure': 'U recomputed from rho matches U within 1e-4 U0 where rho > 1e-6',
    'second_moment': 'second moments of both densities agree within 1e-6 relative',
    'support': 'self-trapped density is exactly 0 for |q| >= q_m',
    'peak_ratio': 'Gaussian peak exceeds the self-trapped peak',
    'norm_series': 'norm stays within 1e-10 of 1',
    'time_order': 'sample times strictly increase',
}
