from pathlib import Path
from sys import argv

from PyInstaller.__main__ import run

from . import NAME, PACKAGE_NAME


def main() -> None:
    """
    Build a native executable of the toolkit. Extra arguments go to PyInstaller.
    """
    cwd = Path(__file__).parent
    run(
        (
            "--add-data",
            f"{(cwd / 'res').__fspath__()}:{PACKAGE_NAME}/res",
            # `scipy.special` loads compiled submodules lazily
            "--collect-submodules",
            "scipy.special",
            "--exclude-module",
            "tkinter",
            "--name",
            NAME,
            "--nowindowed",
            "--onefile",
            *argv[1:],
            (cwd / "_main.py").__fspath__(),
        )
    )


if __name__ == "__main__":
    main()
