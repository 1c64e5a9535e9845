from setuptools import setup, find_packages

setup(
    name='clonecc',
    version=open('VERSION').read().strip(),
    packages=find_packages(exclude=['tests']),
    include_package_data = True,
    scripts=['bin/clonecc'],
    description='Primary-backup log replay with row granularity ordering and monotonic prefix consistent reads',
    install_requires=['numpy', 'simpy'],
    zip_safe=False,
)
