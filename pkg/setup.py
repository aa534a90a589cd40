from setuptools import setup, find_packages

with open('README.md', 'r', encoding='utf-8') as f:
    long_description = f.read()

setup(
    name='LFIKit',
    version='0.1',
    description='Likelihood-free inference: rejection/SMC ABC, sequential neural posterior and likelihood estimation',
    long_description=long_description,
    license='MIT',
    packages=find_packages(exclude=['LFIKit.tests', 'LFIKit.tests.*']),
    # Entry point
    entry_points={
        "console_scripts": [
            "lfikit = LFIKit.cli:main"
        ]
    },
    install_requires=[
        "numpy",
        "scipy",
        "python-dotenv",
        "coverage"
    ],
    package_data={
        "LFIKit": [
            "_selftest_script.py",
            "simulators/standardization.json"
        ]
    },
    python_requires='>=3.9'
)
