#!/usr/bin/env python3
"""
Kelvin-Voigt Wave Lab - Setup Check
Run this first to confirm the numerical stack and each pipeline on tiny problems
"""

import os
import sys
import tempfile

from dotenv import load_dotenv

load_dotenv()

print("=" * 60)
print("🔧 KELVIN-VOIGT WAVE LAB - SETUP CHECK")
print("=" * 60)

if not os.path.exists('.env'):
    print("\nℹ️  No .env file, using defaults (cp .env.example .env to override)")
else:
    print("\n✅ .env found")
    for var in ('KVLAB_OUT_DIR', 'KVLAB_WORKERS', 'KVLAB_SEED', 'KVLAB_LOG_LEVEL', 'KVLAB_RUN_INDEX'):
        value = os.getenv(var, '')
        if value:
            print(f"   {var}={value}")

print("\n" + "=" * 40)
print("📦 Libraries...")
print("=" * 40)

try:
    from modules.experiment_logger import library_versions
    for name, version in library_versions().items():
        print(f"   {name} {version}")
except ImportError as e:
    print(f"❌ Missing dependency: {e}")
    print("   pip install -r requirements.txt")
    sys.exit(1)

from modules.experiment_config import from_dict
from modules.pipelines import run_pipeline

SMOKE = {
    'simulate': {'params': {'dt': 0.05, 't_final': 0.5}},
    'spectrum': {'params': {'modes': 30, 'k_min': 5, 'gap_window': [20, 30], 'gap_ceiling': 1.0,
                            'decay_windows': [5, 10], 'window_width': 5}},
    'resolvent': {'params': {'schedule': {'kind': 'at_modes', 'k_lo': 1, 'k_hi': 10}}},
    'decay-fit': {'params': {'dt': 0.05, 't_final': 2.0, 'window': [0.2, 2.0]}},
}

failed = 0
with tempfile.TemporaryDirectory() as tmp:
    for pipeline, extra in SMOKE.items():
        print("\n" + "=" * 40)
        print(f"🧪 {pipeline}...")
        print("=" * 40)
        document = {
            'name': f'smoke_{pipeline}',
            'pipeline': pipeline,
            'domain': {'kind': 'interval', 'L': 1.0},
            'grid': {'n': 30},
            'output': {'dir': tmp},
            'workers': 1,
        }
        document.update(extra)
        try:
            manifest, result = run_pipeline(from_dict(document))
            print(f"✅ {pipeline}: {', '.join(result.artifacts)}")
        except Exception as e:
            failed += 1
            print(f"❌ {pipeline} failed: {e}")

print("\n" + "=" * 60)
if failed:
    print(f"⚠️  {failed} pipeline(s) failed")
    sys.exit(1)
print("✅ Setup complete! Try: python kv_lab.py spectrum --config configs/spectrum_asymptotics.json")
print("=" * 60)
