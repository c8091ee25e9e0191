from setuptools import find_packages, setup


with open("README.md", "r") as f:
    long_description = f.read()


setup(
    name="beamx",
    version="0.1.0",
    description="Graph neural networks for multi-user downlink beamforming, with classical baselines and a benchmark harness",
    packages=find_packages(exclude=["tests", "examples"]),
    long_description=long_description,
    long_description_content_type="text/markdown",
    license="MIT",
    classifiers=[
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3.8",
        "Operating System :: OS Independent",
    ],
    install_requires=[
        "jax",
        "jaxopt >= 0.6",
        "optax",
        "flax >= 0.6.10",
        "numpy",
        "scipy",
        "pandas >= 1.5.3",
        "tqdm",
        "typing-extensions >= 4.5.0",
        "threadpoolctl >= 3.1",
    ],
    extras_require={"test": ["pytest"]},
    entry_points={"console_scripts": ["beamx=beamx.cli:main"]},
    python_requires=">=3.8",
)
