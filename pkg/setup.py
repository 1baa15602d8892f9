from setuptools import setup, find_packages

setup(
    name="projflow",
    version="0.1.0",
    packages=find_packages("src"),
    package_dir={"": "src"},
    package_data={"projflow": ["configs/*.json"]},
    python_requires=">=3.10",
    install_requires=[
        "numpy",
        "pandas",
        "typer",
    ],
    extras_require={
        "test": ["pytest", "hypothesis"],
    },
    entry_points={
        "console_scripts": ["projflow=projflow.cli:app"],
    },
)
