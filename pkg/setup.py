#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
navmem: group-granular KV-cache memory for object-goal navigation planners
"""

import os
import subprocess

from setuptools import setup, find_packages
try:
    from setuptools.command.test import test as TestCommand
except ImportError:                     # removed from recent setuptools
    TestCommand = None

version = '0.1.0'
isreleased = True

install_requires = (
    'numpy>=1.17.0',
    'scipy>=1.4.0',
    'pytest>=5',
)


# set the version information
# https://github.com/numpy/numpy/commits/master/setup.py
# Return the git revision as a string


def git_version():
    def _minimal_ext_cmd(cmd):
        # construct minimal environment
        env = {}
        for k in ['SYSTEMROOT', 'PATH']:
            v = os.environ.get(k)
            if v is not None:
                env[k] = v
        # LANGUAGE is used on win32
        env['LANGUAGE'] = 'C'
        env['LANG'] = 'C'
        env['LC_ALL'] = 'C'
        out = subprocess.Popen(cmd, stdout=subprocess.PIPE,
                               env=env).communicate()[0]
        return out

    try:
        out = _minimal_ext_cmd(['git', 'rev-parse', 'HEAD'])
        GIT_REVISION = out.strip().decode('ascii') or 'Unknown'
    except OSError:
        GIT_REVISION = 'Unknown'

    return GIT_REVISION


def read_git_revision(filename):
    """git_revision of an existing version file, without importing the package."""
    with open(filename) as f:
        for line in f:
            if line.startswith('git_revision'):
                return line.split('=', 1)[1].strip().strip('\'"')
    return 'Unknown'


def set_version_info(VERSION, ISRELEASED):
    if os.path.exists('.git'):
        GIT_REVISION = git_version()
    elif os.path.exists('navmem/version.py'):
        GIT_REVISION = read_git_revision('navmem/version.py')
    else:
        GIT_REVISION = 'Unknown'

    FULLVERSION = VERSION
    if not ISRELEASED:
        FULLVERSION += '.dev0' + '+' + GIT_REVISION[:7]

    return FULLVERSION, GIT_REVISION


def write_version_py(VERSION,
                     FULLVERSION,
                     GIT_REVISION,
                     ISRELEASED,
                     filename='navmem/version.py'):
    cnt = """
# THIS FILE IS GENERATED FROM SETUP.PY
short_version = '%(version)s'
version = '%(version)s'
full_version = '%(full_version)s'
git_revision = '%(git_revision)s'
release = %(isrelease)s
if not release:
    version = full_version
"""

    with open(filename, 'w') as a:
        a.write(cnt % {'version': VERSION,
                       'full_version': FULLVERSION,
                       'git_revision': GIT_REVISION,
                       'isrelease': str(ISRELEASED)})


fullversion, git_revision = set_version_info(version, isreleased)
write_version_py(version, fullversion, git_revision, isreleased,
                 filename='navmem/version.py')


cmdclass = {}
if TestCommand is not None:
    class PyTest(TestCommand):
        def finalize_options(self):
            TestCommand.finalize_options(self)
            self.test_args = ['-m', 'not slow']
            self.test_suite = True

        def run_tests(self):
            # import here, cause outside the eggs aren't loaded
            import pytest
            pytest.main(self.test_args)

    cmdclass['test'] = PyTest


setup(
    name='navmem',
    version=fullversion,
    keywords=['object goal navigation kv cache llm planner memory knapsack retrieval attention clustering'],
    platforms=['Windows', 'Linux', 'Mac OS-X', 'Unix'],
    description=__doc__.strip().split('\n')[0],
    long_description=__doc__,
    #
    packages=find_packages(exclude=['doc', 'examples', 'examples.*']),
    package_data={'navmem.data': ['*.json']},
    include_package_data=False,
    install_requires=install_requires,
    zip_safe=False,
    python_requires='>=3.7',
    entry_points={'console_scripts': ['navmem=navmem.cli:main']},
    #
    cmdclass=cmdclass,
    #
    tests_require=['pytest'],
    #
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Environment :: Console',
        'Intended Audience :: Developers',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Natural Language :: English',
        'Operating System :: OS Independent',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.7',
        'Programming Language :: Python :: 3.8',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Topic :: Software Development :: Libraries :: Python Modules',
    ],
)
