import re

from setuptools import setup, find_packages


with open('tailrisk/__init__.py', 'r') as f:
    version = re.search(r"__version__ = '(.*?)'", f.read()).group(1)


setup(
    name='Tailrisk',
    version=version,
    license='BSD',
    author='Tailrisk contributors',
    description='Dynamic Value at Risk and Expected Shortfall models driven '
    'by realized higher moments.',
    packages=find_packages(exclude=['tests']),
    include_package_data=True,
    zip_safe=False,
    platforms='any',
    install_requires=[
        'click>=6.0',
        'inifile',
        'Werkzeug',
        'numpy',
        'scipy',
        'pandas',
    ],
    extras_require={
        'test': ['pytest'],
    },
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Environment :: Console',
        'Intended Audience :: Financial and Insurance Industry',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: BSD License',
        'Operating System :: OS Independent',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3',
        'Topic :: Office/Business :: Financial',
        'Topic :: Scientific/Engineering :: Mathematics',
    ],
    entry_points='''
        [console_scripts]
        tailrisk=tailrisk.cli:main
    '''
)
