"""CMake-backed build for the attncheck extension module.

The C++ core, CLI, and tests live in the top-level CMake project; this
shim drives the same build from pip and copies the resulting extension
into the wheel.
"""

import os
import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name: str):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext: CMakeExtension) -> None:
        source_dir = Path(__file__).parent.resolve()
        out_dir = Path(self.get_ext_fullpath(ext.name)).parent.resolve()
        build_dir = Path(self.build_temp).resolve()
        build_dir.mkdir(parents=True, exist_ok=True)

        cmake_args = [
            f"-DCMAKE_BUILD_TYPE={os.environ.get('ATTNCHECK_BUILD_TYPE', 'Release')}",
            f"-DCMAKE_LIBRARY_OUTPUT_DIRECTORY={out_dir}",
            f"-DPYTHON_EXECUTABLE={sys.executable}",
            "-DATTNCHECK_TESTS=OFF",
            "-DATTNCHECK_PYTHON=ON",
        ]
        subprocess.run(["cmake", "-S", str(source_dir), "-B", str(build_dir), *cmake_args],
                       check=True)
        subprocess.run(["cmake", "--build", str(build_dir), "--target", "_core", "-j"],
                       check=True)


setup(
    packages=["attncheck"],
    package_dir={"attncheck": "python/attncheck"},
    ext_modules=[CMakeExtension("attncheck._core")],
    cmdclass={"build_ext": CMakeBuild},
    zip_safe=False,
)
