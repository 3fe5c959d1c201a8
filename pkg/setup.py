from setuptools import setup, find_packages

setup(
    name='polar_odom',
    version='0.1',
    description="Spinning 2D radar odometry: k-strongest filtering, oriented surface points, "
                "scan-to-multi-keyframe registration",
    packages=find_packages(),
    package_data={'polar_odom': ['scenarios/*.txt']},
    install_requires=[
        'numpy>=1.20',
        'pandas',
        'matplotlib>=3.4',
        'imageio>=2.16',
        'pyyaml',
    ],
    extras_require={'test': ['pytest']},
    entry_points={'console_scripts': ['polar-odom=polar_odom.cli:main']},
)
