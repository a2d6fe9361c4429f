#!/usr/bin/env python3
"""
Pre-test Environment Checker
Run this before testing to ensure everything is ready.
"""

import importlib
import json
import os
import sys

HERE = os.path.dirname(os.path.abspath(__file__))


def check_requirements():
    """Check if required packages are installed."""
    print("🔍 Checking Python packages...")

    required_packages = {
        'numpy': 'numpy',
        'scipy': 'scipy',
        'pandas': 'pandas',
        'simpy': 'simpy',
        'dotenv': 'python-dotenv',
        'pytest': 'pytest',
    }

    missing_packages = []

    for module, package_name in required_packages.items():
        try:
            importlib.import_module(module)
            print(f"   ✅ {package_name} installed")
        except ImportError:
            print(f"   ❌ {package_name} missing")
            missing_packages.append(package_name)

    if missing_packages:
        print(f"\n⚠️ Install missing packages with:")
        print(f"   pip3 install {' '.join(missing_packages)}")
        return False
    return True


def check_env():
    """Show which settings come from .env."""
    print("\n🔑 Checking .env...")

    if not os.path.exists(os.path.join(HERE, '.env')):
        print("   ⚠️ No .env file found, defaults will be used")
        print("   Create one with: cp .env.sample .env")
        return
    with open(os.path.join(HERE, '.env'), 'r') as f:
        keys = [line.split('=', 1)[0].strip() for line in f if '=' in line and not line.startswith('#')]
    print(f"   ✅ .env sets: {', '.join(keys) if keys else 'nothing'}")


def check_configuration():
    """Check the profile library and shipped scenarios parse as JSON with schema 1."""
    print("\n📋 Checking configuration files...")

    files = {'profiles.json': 'Device/battery profiles'}
    scenario_dir = os.path.join(HERE, 'scenarios')
    if os.path.isdir(scenario_dir):
        for name in sorted(os.listdir(scenario_dir)):
            if name.endswith('.json'):
                files[os.path.join('scenarios', name)] = f"Scenario {name[:-5]}"

    ok = True
    for filename, description in files.items():
        path = os.path.join(HERE, filename)
        if not os.path.exists(path):
            print(f"   ❌ {description}: File missing")
            ok = False
            continue
        try:
            with open(path, 'r') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            print(f"   ❌ {description}: invalid JSON at line {e.lineno}")
            ok = False
            continue
        if data.get('schema') != 1:
            print(f"   ⚠️ {description}: schema is {data.get('schema')!r}, expected 1")
            ok = False
        else:
            print(f"   ✅ {description}")
    return ok


def display_test_readiness(has_packages, has_config):
    """Display overall test readiness."""
    print("\n" + "=" * 60)
    print("TEST READINESS REPORT")
    print("=" * 60)

    if has_packages and has_config:
        print("\n✅ Simulator is ready!")
        print("\nNext steps:")
        print("1. Run the tests: pytest -q")
        print("2. Keep-awake run: python3 cli.py simulate scenarios/fig4b.json")
        print("3. Breathing: python3 cli.py synth scenarios/breath_18bpm.json")
        print("   then: python3 cli.py sense out/breath_18bpm.csv --truth-bpm 18")
        print("4. Drain: python3 cli.py drain --query bar --device table4-fit --battery AAA")
    else:
        print("\n❌ Not ready to test. Please fix the issues above.")

        if not has_packages:
            print("\n1. Install missing packages:")
            print("   pip3 install -r requirements.txt")

        if not has_config:
            print("\n2. Restore profiles.json / scenarios/ from the repository")


def main():
    """Main pre-test check."""
    print("\n" + "🚀 PRE-TEST ENVIRONMENT CHECK 🚀".center(60))
    print("=" * 60)

    has_packages = check_requirements()
    check_env()
    has_config = check_configuration()
    display_test_readiness(has_packages, has_config)

    print("\n" + "=" * 60)

    return has_packages and has_config


if __name__ == "__main__":
    ready = main()
    sys.exit(0 if ready else 1)
