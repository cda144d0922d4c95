from setuptools import setup, find_packages

setup(
    name="sensortrust",
    version="0.1.0",
    packages=find_packages(include=["sensortrust", "sensortrust.*"]),
    install_requires=[
        "numpy",
        "pandas",
        "scipy"
    ],
    extras_require={
        "dev": [
            "pytest",
            "pytest-cov",
            "pytest-html"
        ]
    },
    entry_points={
        "console_scripts": [
            "sensortrust=sensortrust.cli:main",
        ]
    },
    description="Belief-driven sensor trust, active probing and selective disabling for a state-estimated cart-pole control loop.",
)
