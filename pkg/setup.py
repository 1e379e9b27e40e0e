#!/usr/bin/env python

from setuptools import setup
from setuptools import find_packages
from xai_downscale import __version__

setup(
    name="xai_downscale",
    version=__version__,
    description="Deep-learning statistical downscaling with saliency diagnostics for locality and extrapolation checks.",
    long_description="Train convolutional downscaling models on gridded predictors, downscale, evaluate, "
                     "and explain them with integrated-gradients saliency, accumulated and distance-weighted maps.",
    license="MIT",
    packages=find_packages(exclude=['docs', 'tests']),
    keywords="xai_downscale downscaling saliency climate",
    python_requires='>=3.7',
    install_requires=[
        "numpy>=1.20",
        "scipy",
        "PyYAML>=3.12",
        "pep8",
    ],
    entry_points={
        'console_scripts': [
            'xai-downscale = xai_downscale.cli:main',
        ],
    },
    classifiers=[
        'Development Status :: 4 - Beta',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Programming Language :: Python :: 3.7',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Natural Language :: English',
        'Topic :: Scientific/Engineering :: Atmospheric Science',
        'Topic :: Software Development :: Libraries :: Python Modules',
    ]
)
