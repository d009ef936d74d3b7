#!/usr/bin/env python3
"""
experiment_logger.py - Run directories, manifests and the runs.json index
Index writes hold an exclusive file lock so parallel invocations can share one output root
"""

import fcntl
import hashlib
import json
import logging
import os
import platform
from datetime import datetime
from typing import Dict, List, Optional

import numpy as np
import scipy

from modules.experiment_config import ExperimentConfig, config_hash

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'
INDEX_NAME = 'runs.json'


def library_versions() -> Dict[str, str]:
    return {
        'python': platform.python_version(),
        'numpy': np.__version__,
        'scipy': scipy.__version__,
    }


def file_digest(path: str) -> str:
    """sha256 of a file, read in chunks"""
    sha = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            sha.update(chunk)
    return sha.hexdigest()


class ExperimentLogger:
    """
    Owns one output root: a directory per (config name, config hash) plus
    runs.json listing every manifest written under the root.
    """

    def __init__(self, out_root: str = "runs", index_path: Optional[str] = None):
        self.out_root = out_root
        os.makedirs(out_root, exist_ok=True)
        self.index_path = index_path or os.getenv('KVLAB_RUN_INDEX') or os.path.join(out_root, INDEX_NAME)

    def run_dir(self, config: ExperimentConfig) -> str:
        """Same config, same directory; reruns overwrite their own artifacts"""
        path = os.path.join(self.out_root, f"{config.name}-{config_hash(config)}")
        os.makedirs(path, exist_ok=True)
        return path

    def write_manifest(
        self,
        run_dir: str,
        config: ExperimentConfig,
        status: str,
        artifacts: List[str],
        results: Dict,
        wall_time: float,
        error: Optional[Dict] = None
    ) -> str:
        """
        Write manifest.json into run_dir and append it to the index

        Args:
            run_dir: directory holding the artifacts
            config: validated experiment config
            status: 'ok' or 'failed'
            artifacts: file names relative to run_dir
            results: pipeline summary (JSON-ready)
            wall_time: seconds spent in the pipeline
            error: error report when status is 'failed'

        Returns:
            path of the manifest
        """
        digest = config_hash(config)
        manifest = {
            'name': config.name,
            'pipeline': config.pipeline,
            'config_hash': digest,
            'config': config.to_dict(),
            'status': status,
            'created': datetime.now().isoformat(),
            'wall_time': round(wall_time, 6),
            'versions': library_versions(),
            'artifacts': {name: file_digest(os.path.join(run_dir, name)) for name in artifacts},
            'results': results,
            'error': error,
        }
        path = os.path.join(run_dir, MANIFEST_NAME)
        with open(path, 'w') as f:
            json.dump(manifest, f, indent=2)

        self._append_index({
            'name': config.name,
            'pipeline': config.pipeline,
            'config_hash': digest,
            'status': status,
            'created': manifest['created'],
            'manifest': os.path.abspath(path),
        })
        return path

    def _append_index(self, entry: Dict):
        """Append with an exclusive lock; a corrupted index is restarted"""
        mode = 'r+' if os.path.exists(self.index_path) else 'w+'
        try:
            with open(self.index_path, mode) as f:
                fcntl.flock(f.fileno(), fcntl.LOCK_EX)
                try:
                    f.seek(0)
                    text = f.read()
                    try:
                        entries = json.loads(text) if text.strip() else []
                    except json.JSONDecodeError:
                        logger.warning(f"corrupted run index {self.index_path}, starting fresh")
                        entries = []
                    entries.append(entry)
                    f.seek(0)
                    f.truncate()
                    json.dump(entries, f, indent=2)
                finally:
                    fcntl.flock(f.fileno(), fcntl.LOCK_UN)
        except OSError as e:
            # the manifest itself is already on disk
            logger.warning(f"could not update run index {self.index_path}: {e}")


def load_manifest(path: str) -> Dict:
    with open(path, 'r') as f:
        return json.load(f)


def load_index(path: str) -> List[Dict]:
    """Entries of a runs.json index, [] when the file is missing or unreadable"""
    if not os.path.exists(path):
        return []
    try:
        with open(path, 'r') as f:
            return json.load(f)
    except json.JSONDecodeError:
        logger.warning(f"corrupted run index: {path}")
        return []


def latest_manifests(index: List[Dict]) -> List[str]:
    """Most recent successful manifest per config hash, in index order"""
    latest = {}
    for entry in index:
        if entry.get('status') == 'ok':
            latest[entry['config_hash']] = entry['manifest']
    return list(latest.values())
