from setuptools import setup, find_packages

setup(
    name="sde-stability-checker",
    version="0.1.0",
    description="Numerical laboratory for the stability of one-dimensional SDEs with discontinuous drift",
    author="Your Name",
    author_email="your.email@example.com",
    packages=find_packages(exclude=["tests", "tests.*"]),
    install_requires=[
        "numpy>=1.24",
        "scipy>=1.10",
    ],
    extras_require={
        'test': [
            'pytest>=6.0',
            'pytest-cov>=2.0',
            'hypothesis>=6.0',
        ],
        'dev': [
            'pytest>=6.0',
            'pytest-cov>=2.0',
            'hypothesis>=6.0',
            'ruff>=0.1.0',
            'mypy>=1.0.0',
        ],
    },
    entry_points={
        'console_scripts': [
            'check-sde-stability=sde_stability_checker.check_stability:main',
        ],
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
    python_requires=">=3.10",
)
