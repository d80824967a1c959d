import multiprocessing, logging # Fix atexit bug
from setuptools import setup, find_packages


def readme():
    try:
        return open('README.rst').read()
    except:
        pass
    return ''


def version():
    try:
        import re
        return re.search("^__version__ = '(.*)'",
                open('dbmatch/__init__.py').read(), re.M).group(1)
    except:
        raise RuntimeError("Could not get version")


setup(
        name='dbmatch',
        version=version(),
        description="Matching simulations for correlated databases",
        long_description=readme(),
        packages=find_packages(exclude=['test']),
        test_suite='nose.collector',
        python_requires='>=3.9',
        install_requires=[
            'six',
            'pytool',
            'numpy>=1.20',
            'scipy>=1.4',
            ],
        tests_require=[
            'pynose',
            'coverage',
            'mock',
            ],
        entry_points={
            'console_scripts':[
                'dbmatch = dbmatch.scripts:main',
                ],
            },
        classifiers=[
            'Development Status :: 3 - Alpha',
            'Intended Audience :: Science/Research',
            'Programming Language :: Python :: 3',
            'Topic :: Scientific/Engineering :: Information Analysis',
            ],
        )
