#!/usr/bin/env python

####################
# Required Modules #
####################

# Generic/Built-in
import os
from setuptools import setup

###########
# Helpers #
###########

def read(fname):
    with open(
        os.path.join(os.path.dirname(__file__), fname), 
        encoding='utf-8'
    ) as f:
        return f.read()

setup(
    name="rbac_chain",
    version="0.1.0",
    author="AI Singapore",
    author_email='synergos-ext@aisingapore.org',
    description="Blockchain-backed role-based access control with signed, masked query results",
    long_description=read('README.md'),
    classifiers=[
        'Development Status :: 3 - Alpha',
        'License :: OSI Approved :: MIT License',
        'Programming Language :: Python :: 3.8',
        'Topic :: Security',
        'Topic :: System :: Distributed Computing',
        'Topic :: Software Development :: Libraries :: Python Modules'
    ],
    keywords="rbac access control blockchain smart contract gas ledger structlog graylog",
    url="https://github.com/aimakerspace/rbac_chain.git",
    license="MIT",

    packages=["rbacchain"],
    package_data={"rbacchain": ["gas_schedules.json"]},
    python_requires = ">=3.8",
    install_requires=[
        "psutil>=5.7.0",
        "structlog>=20.1.0",
        "graypy>=2.1.0",
        "PyNaCl>=1.4.0",
        "rlp>=2.0.1",
        "numpy>=1.19.0"
    ],
    entry_points={
        'console_scripts': ["rbacchain=rbacchain.cli:main"]
    },
    include_package_data=True,
    zip_safe=False
)
