#setup.py
from setuptools import setup, find_packages
import glob
import os

def read_file(filename):
    with open(os.path.join(os.path.dirname(__file__), filename), 'r', encoding='utf-8') as file:
        return file.read()
setup(
    name="hrma-lab",
    version="1.1.0",
    packages=find_packages(exclude=["tests.*", "tests"]),
    description="Numerical lab for toric HRMA geodesic rays and their Toeplitz quantization",
    long_description=read_file('README.md'),
    long_description_content_type="text/markdown",
    install_requires=[
        "numpy",
        "scipy",
        "pandas>=1.5",
        "joblib",
        "jsonschema",
        "matplotlib",
    ],
    extras_require={"test": ["pytest"]},
    python_requires='>=3.9',
    entry_points={
        "console_scripts": [
            "hrma-lab=src.hrma_lab:main",
        ]
    },
    license="Apache 2.0",
    data_files=[("", ["LICENSE.txt"]), ("init", glob.glob("init/*.json"))],
)
