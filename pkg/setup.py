# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""GraFormer 2D-to-3D pose lifting with graph convolutions and graph attention"""

# Setuptools setup for graformer.

import os

from setuptools import setup

# Get or massage our metadata.  We exec graformer/version.py so we can avoid
# importing the product code into setup.py.

classifiers = """\
Environment :: Console
Intended Audience :: Science/Research
License :: OSI Approved :: Apache Software License
Operating System :: OS Independent
Programming Language :: Python
Programming Language :: Python :: 3
Programming Language :: Python :: 3.8
Programming Language :: Python :: 3.9
Programming Language :: Python :: 3.10
Programming Language :: Python :: 3.11
Programming Language :: Python :: 3.12
Topic :: Scientific/Engineering :: Artificial Intelligence
Topic :: Scientific/Engineering :: Image Recognition
"""

grfk_ver_py = os.path.join(os.path.split(__file__)[0], "graformer/version.py")
with open(grfk_ver_py) as version_file:
    # __doc__ will be overwritten by version.py.
    doc = __doc__
    # Keep pylint happy.
    __version__ = __url__ = version_info = ""
    # Execute the code in version.py.
    exec(compile(version_file.read(), grfk_ver_py, 'exec'))

with open("README.rst") as readme:
    long_description = readme.read()

classifier_list = classifiers.splitlines()

if version_info[3] == 'alpha':
    devstat = "3 - Alpha"
elif version_info[3] in ['beta', 'candidate']:
    devstat = "4 - Beta"
else:
    assert version_info[3] == 'final'
    devstat = "5 - Production/Stable"
classifier_list.append("Development Status :: " + devstat)

setup(
    name='graformer',
    version=__version__,

    packages=[
        'graformer',
    ],

    entry_points={
        'console_scripts': [
            'graformer = graformer.cmdline:main',
        ],
    },

    install_requires=[
        'numpy>=1.20',
    ],

    extras_require={
        # Enable pyproject.toml support.
        'toml': ['tomli'],
    },

    description=doc,
    long_description=long_description,
    long_description_content_type='text/x-rst',
    keywords='pose estimation graph convolution transformer',
    license='Apache 2.0',
    classifiers=classifier_list,
    project_urls={
        'Documentation': __url__,
    },
    python_requires=">=3.8",
)
