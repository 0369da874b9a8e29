#!/usr/bin/env python3
"""
Development Environment Setup Script

Creates the AdaMVE virtual environment, installs requirements.txt and
checks that the numerical stack and the CLI import cleanly.
"""

import platform
import subprocess
import sys
import venv
from pathlib import Path

VENV_NAME = "adamve_env"
REQUIRED_MODULES = ["numpy", "scipy", "pydantic", "dotenv", "psutil", "pytest", "pytest_asyncio"]
PROJECT_MODULES = ["grid_env", "funcapprox", "dyn_models", "replay_buffer", "model_error",
                   "value_expansion", "agent", "dp_oracle", "harness", "adamve_cli"]


class Colors:
    """ANSI color codes for terminal output"""
    BLUE = '\033[94m'
    GREEN = '\033[92m'
    YELLOW = '\033[93m'
    RED = '\033[91m'
    ENDC = '\033[0m'
    BOLD = '\033[1m'


def print_status(message, color=Colors.BLUE):
    print(f"{color}{Colors.BOLD}[INFO]{Colors.ENDC} {message}")


def print_success(message):
    print(f"{Colors.GREEN}{Colors.BOLD}[SUCCESS]{Colors.ENDC} {message}")


def print_warning(message):
    print(f"{Colors.YELLOW}{Colors.BOLD}[WARNING]{Colors.ENDC} {message}")


def print_error(message):
    print(f"{Colors.RED}{Colors.BOLD}[ERROR]{Colors.ENDC} {message}")


def run_command(command, cwd=None, check=True):
    """Run command and return the CompletedProcess"""
    try:
        return subprocess.run(command, shell=True, cwd=cwd, capture_output=True, text=True, check=check)
    except subprocess.CalledProcessError as e:
        print_error(f"Command failed: {command}")
        print_error(f"Error: {e.stderr}")
        if check:
            raise
        return e


def check_python_version():
    print_status("Checking Python version...")
    version = sys.version_info
    if version < (3, 9):
        print_error(f"Python 3.9+ required, found {version.major}.{version.minor}")
        return False
    print_success(f"Python {version.major}.{version.minor}.{version.micro} is compatible")
    return True


def venv_executables(venv_path):
    if platform.system() == "Windows":
        return venv_path / "Scripts" / "python.exe", venv_path / "Scripts" / "pip.exe"
    return venv_path / "bin" / "python", venv_path / "bin" / "pip"


def create_virtual_environment(project_root):
    venv_path = project_root / VENV_NAME
    if venv_path.exists():
        print_warning(f"Virtual environment already exists at {venv_path}")
        return venv_path
    print_status("Creating Python virtual environment...")
    venv.create(venv_path, with_pip=True)
    print_success(f"Virtual environment created at {venv_path}")
    return venv_path


def install_dependencies(project_root, venv_path):
    requirements_file = project_root / "requirements.txt"
    if not requirements_file.exists():
        print_error(f"Requirements file not found: {requirements_file}")
        return False
    python_exe, pip_exe = venv_executables(venv_path)
    print_status("Upgrading pip...")
    run_command(f'"{python_exe}" -m pip install --upgrade pip')
    print_status("Installing project dependencies...")
    run_command(f'"{pip_exe}" install -r "{requirements_file}"')
    print_success("All dependencies installed successfully")
    return True


def create_development_config(project_root):
    """Write .gitignore and an example .env when missing"""
    gitignore_path = project_root / ".gitignore"
    if not gitignore_path.exists():
        gitignore_path.write_text(
            "__pycache__/\n*.py[cod]\n.pytest_cache/\n"
            f"{VENV_NAME}/\nvenv/\n.env\n"
            "results/\ntest_report.txt\n*.log\n"
        )
        print_success(".gitignore created")

    env_example = project_root / ".env.example"
    if not env_example.exists():
        env_example.write_text(
            "# Any config key can be set as ADAMVE_<KEY>; --set overrides win\n"
            "ADAMVE_LOG_LEVEL=INFO\n"
            "# ADAMVE_WORKERS=4\n"
            "# ADAMVE_OUTPUT_DIR=results\n"
        )
        print_success(".env.example created")


def verify_installation(project_root, venv_path):
    print_status("Verifying installation...")
    python_exe, _ = venv_executables(venv_path)
    for module in REQUIRED_MODULES + PROJECT_MODULES:
        try:
            run_command(f'"{python_exe}" -c "import {module}"', cwd=project_root)
            print_success(f"{module} import test passed")
        except subprocess.CalledProcessError:
            print_error(f"Failed to import {module}")
            return False
    print_success("Installation verification completed successfully")
    return True


def print_next_steps(venv_path):
    if platform.system() == "Windows":
        activation_cmd = str(venv_path / "Scripts" / "activate.bat")
    else:
        activation_cmd = f"source {venv_path / 'bin' / 'activate'}"

    print(f"\n{Colors.GREEN}{Colors.BOLD}Development environment setup complete{Colors.ENDC}\n")
    print(f"{Colors.BOLD}Next steps:{Colors.ENDC}")
    print("1. Activate the virtual environment:")
    print(f"   {Colors.BLUE}{activation_cmd}{Colors.ENDC}")
    print("2. Run the tests:")
    print(f"   {Colors.BLUE}python scripts/run_tests.py --unit-only{Colors.ENDC}")
    print("3. Train a configuration:")
    print(f"   {Colors.BLUE}python adamve_cli.py train --config configs/adamve_threeroom.conf{Colors.ENDC}")
    print("4. Check the value-error bound exactly:")
    print(f"   {Colors.BLUE}python adamve_cli.py dp-check --config configs/dp_check_nowall.conf{Colors.ENDC}")


def main():
    print(f"{Colors.BOLD}AdaMVE Development Environment Setup{Colors.ENDC}")
    print("=" * 60)
    project_root = Path(__file__).parent.parent
    print_status(f"Project root: {project_root}")

    try:
        if not check_python_version():
            sys.exit(1)
        venv_path = create_virtual_environment(project_root)
        if not install_dependencies(project_root, venv_path):
            sys.exit(1)
        create_development_config(project_root)
        if not verify_installation(project_root, venv_path):
            sys.exit(1)
        print_next_steps(venv_path)
    except KeyboardInterrupt:
        print_error("\nSetup interrupted by user")
        sys.exit(1)
    except Exception as e:
        print_error(f"Setup failed: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
