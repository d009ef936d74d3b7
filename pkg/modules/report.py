#!/usr/bin/env python3
"""
report.py - Consolidated PASS/INFO table over run manifests
"""

import json
import logging
import os
from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence

from modules.errors import ReportError
from modules.experiment_logger import load_index, load_manifest, latest_manifests

logger = logging.getLogger(__name__)

REQUIRED_KEYS = ('name', 'pipeline', 'config_hash', 'config', 'status', 'results')

# two-sided window for the constant-coefficient resolvent exponent
CONSTANT_EXPONENT_RANGE = (1.7, 2.3)
CONSTANT_DECAY_RANGE = (0.87, 1.18)
MIN_R_SQUARED = 0.95
CROSS_VALIDATION_TOL = 1e-8
STRONG_DECAY_RATIO = 0.1

PASS, FAIL, INFO = 'PASS', 'FAIL', 'INFO'


@dataclass(frozen=True)
class ReportRow:
    group: str
    run: str
    check: str
    measured: str
    expected: str
    verdict: str


def _group(manifest: Dict) -> str:
    config = manifest['config']
    coeffs = config.get('coefficients', {})
    if manifest['pipeline'] == 'spectrum':
        return 'eigenvalue asymptotics (constant coefficients)'
    key = coeffs.get('preset')
    if key is None:
        kinds = [r.get('kind') for f in ('b', 'c') for r in coeffs.get(f, {}).get('regions', [])]
        key = 'constant' if all(k == 'all' for k in kinds) else 'custom'
    return f"{key} / {coeffs.get('system', 'kelvin_voigt')}"


def _verdict(ok: bool) -> str:
    return PASS if ok else FAIL


def _spectrum_rows(run: str, group: str, r: Dict) -> List[ReportRow]:
    k_lo, k_hi = r['gap_window']
    rows = [
        ReportRow(group, run, f"branch tail gap k in [{k_lo}, {k_hi}]",
                  f"{100 * r['gap_window_max_rel_gap']:.2f}%", f"<{100 * r['gap_ceiling']:g}%",
                  _verdict(r['gap_pass'])),
        ReportRow(group, run, f"gap monotone from k={r['k_min']}", str(r['gap_non_increasing']), 'True',
                  _verdict(r['gap_non_increasing'])),
    ]
    for row in r.get('non_uniform', [])[1:]:
        rows.append(ReportRow(group, run, f"max |Re| ratio window k={row['k_lo']}",
                              f"{row['ratio']:.4f}", f"{row['predicted_ratio']:.4f} +/- 20%",
                              _verdict(row['decreasing'] and row['scaling_ok'])))
    cv = r.get('cross_validation')
    if cv:
        rows.append(ReportRow(group, run, f"dense vs per-mode spectrum (n={cv['n']})",
                              f"{cv['relative_distance']:.2e}", f"<{CROSS_VALIDATION_TOL:g} relative",
                              _verdict(cv['relative_distance'] < CROSS_VALIDATION_TOL)))
    return rows


def _resolvent_rows(run: str, group: str, r: Dict) -> List[ReportRow]:
    fit = r['fit']
    target = r.get('target') or {}
    exponent = fit['exponent']
    measured = f"{exponent:.3f} (r2 {fit['r_squared']:.3f})"
    key = target.get('key')
    if key == 'constant' and target.get('system') == 'kelvin_voigt':
        lo, hi = CONSTANT_EXPONENT_RANGE
        ok = lo <= exponent <= hi and fit['r_squared'] > MIN_R_SQUARED
        rows = [ReportRow(group, run, 'resolvent exponent l', measured, f"[{lo}, {hi}], r2>{MIN_R_SQUARED}",
                          _verdict(ok))]
        decay = fit.get('implied_decay')
        dlo, dhi = CONSTANT_DECAY_RANGE
        rows.append(ReportRow(group, run, 'implied decay 2/l', f"{decay:.3f}" if decay is not None else 'inf',
                              f"[{dlo}, {dhi}] around t^-1",
                              _verdict(decay is not None and dlo <= decay <= dhi)))
        return rows
    checks = r.get('checks', {})
    if 'below_ceiling' in checks:
        return [ReportRow(group, run, 'resolvent exponent l', measured, f"<= {checks['ceiling']:g} + 0.5",
                          _verdict(checks['below_ceiling']))]
    return [ReportRow(group, run, 'resolvent exponent l', measured, 'no prediction', INFO)]


def _decay_rows(run: str, group: str, r: Dict) -> List[ReportRow]:
    fit = r['fit']
    checks = r.get('checks', {})
    measured = f"{fit['exponent']:.3f} ({fit['model']}, r2 {fit['r_squared']:.3f})"
    if 'above_floor' in checks:
        rows = [ReportRow(group, run, 'decay exponent', measured, f">= {checks['floor']:.3f} - 0.05",
                          _verdict(checks['above_floor']))]
    elif 'exponential' in checks:
        rows = [ReportRow(group, run, 'decay rate', measured, 'exponential, rate > 0, r2>0.99',
                          _verdict(checks['exponential']))]
    else:
        target = r.get('target') or {}
        rows = [ReportRow(group, run, 'decay exponent', measured, target.get('statement', 'no prediction'), INFO)]
    if 'energy_ratio_at_t_star' in checks:
        ratio = checks['energy_ratio_at_t_star']
        rows.append(ReportRow(group, run, 'E(t*)/E(0)', f"{ratio:.3e}", f"<{STRONG_DECAY_RATIO}",
                              _verdict(ratio < STRONG_DECAY_RATIO)))
    return rows


def _simulate_rows(run: str, group: str, r: Dict) -> List[ReportRow]:
    trace = r['trace']
    return [
        ReportRow(group, run, 'energy non-increasing', f"{trace['max_relative_increase']:.2e}", '<= 1e-10',
                  _verdict(trace['non_increasing'])),
        ReportRow(group, run, 'E(T)/E(0)', f"{trace['energy_ratio']:.4e}", '', INFO),
    ]


ROW_BUILDERS = {
    'spectrum': _spectrum_rows,
    'resolvent': _resolvent_rows,
    'decay-fit': _decay_rows,
    'simulate': _simulate_rows,
}


@dataclass
class Report:
    rows: List[ReportRow]
    manifests: List[str]

    def groups(self) -> Dict[str, List[ReportRow]]:
        grouped: Dict[str, List[ReportRow]] = {}
        for row in self.rows:
            grouped.setdefault(row.group, []).append(row)
        return grouped

    def counts(self) -> Dict[str, int]:
        counts = {PASS: 0, FAIL: 0, INFO: 0}
        for row in self.rows:
            counts[row.verdict] = counts.get(row.verdict, 0) + 1
        return counts

    def to_dict(self) -> Dict:
        return {
            'manifests': self.manifests,
            'counts': self.counts(),
            'groups': {group: [asdict(r) for r in rows] for group, rows in self.groups().items()},
        }

    def to_text(self) -> str:
        lines = []
        for group, rows in self.groups().items():
            lines.append(f"== {group} ==")
            for r in rows:
                expected = f" ({r.verdict} {r.expected})" if r.expected else f" ({r.verdict})"
                lines.append(f"  [{r.run}] {r.check}: {r.measured}{expected}")
            lines.append('')
        counts = self.counts()
        lines.append(f"{counts[PASS]} PASS, {counts[FAIL]} FAIL, {counts[INFO]} INFO")
        return '\n'.join(lines) + '\n'


def _check_manifest(manifest: Dict, path: str):
    missing = [k for k in REQUIRED_KEYS if k not in manifest]
    if missing:
        raise ReportError(f"manifest {path} lacks {missing}", manifest=path)
    if manifest['pipeline'] not in ROW_BUILDERS:
        raise ReportError(f"manifest {path} names unknown pipeline {manifest['pipeline']!r}", manifest=path)


def build_report(manifest_paths: Sequence[str]) -> Report:
    """Rows for every manifest, grouped by the configuration they target"""
    if not manifest_paths:
        raise ReportError("no manifests given")
    rows = []
    seen = {}
    for path in manifest_paths:
        if not os.path.exists(path):
            raise ReportError(f"manifest not found: {path}", manifest=path)
        try:
            manifest = load_manifest(path)
        except json.JSONDecodeError as e:
            raise ReportError(f"manifest {path} is not valid JSON: {e.msg}", manifest=path)
        _check_manifest(manifest, path)
        digest = manifest['config_hash']
        if digest in seen and seen[digest] != manifest['pipeline']:
            raise ReportError(f"config hash {digest} appears with two pipelines", manifest=path)
        seen[digest] = manifest['pipeline']

        run = manifest['name']
        group = _group(manifest)
        if manifest['status'] != 'ok':
            error = manifest.get('error') or {}
            rows.append(ReportRow(group, run, manifest['pipeline'], error.get('message', 'failed'), '', FAIL))
            continue
        try:
            rows.extend(ROW_BUILDERS[manifest['pipeline']](run, group, manifest['results']))
        except (KeyError, TypeError) as e:
            raise ReportError(f"manifest {path} has incomplete results: {e}", manifest=path)
    logger.info(f"report over {len(manifest_paths)} manifests, {len(rows)} rows")
    return Report(rows, list(manifest_paths))


def manifests_from_index(index_path: str) -> List[str]:
    entries = load_index(index_path)
    if not entries:
        raise ReportError(f"run index {index_path} is missing or empty", index=index_path)
    return latest_manifests(entries)


def write_report(report: Report, out_dir: str, stem: str = 'report') -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, f"{stem}.json")
    text_path = os.path.join(out_dir, f"{stem}.txt")
    with open(json_path, 'w') as f:
        json.dump(report.to_dict(), f, indent=2)
    with open(text_path, 'w') as f:
        f.write(report.to_text())
    return [json_path, text_path]
