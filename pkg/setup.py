from setuptools import find_packages, setup

setup(
    name='spactor',
    packages=find_packages(exclude=['tests']),
    version='0.1.0',
    description='Hybrid span corruption and replaced token detection pre-training with a two-stage curriculum',
    license='MIT',
    python_requires='>=3.9',
    install_requires=['torch>=2.5', 'numpy>=1.24', 'pandas>=1.5', 'scipy>=1.10', 'click>=8.0', 'mlflow'],
    entry_points={'console_scripts': ['spactor=src.cli:main']},
)
