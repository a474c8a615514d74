from setuptools import setup, find_packages

setup(
    name="umbra",
    version="0.3.0",
    description="Shadow-based adversarial perturbations: black-box PSO attacks, EOT robustness, scheduled sun shadows and shadow-augmented defense training.",
    packages=find_packages(exclude=["tests", "tests.*"]),
    python_requires=">=3.10",
    include_package_data=True,
    install_requires=[
        "numpy>=1.24",
        "opencv-python-headless>=4.8",
        "Pillow>=10.0",
        "torch>=2.1",
        "tqdm>=4.66",
    ],
    extras_require={
        "test": ["pytest>=7.4"],
        "docs": ["sphinx", "sphinx-rtd-theme"],
    },
    entry_points={
        "console_scripts": ["umbra=umbra.cli:main"],
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "Operating System :: OS Independent",
    ],
)
