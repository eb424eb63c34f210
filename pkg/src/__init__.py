#__init__.py
# hrma-lab: toric HRMA geodesic rays, their Toeplitz quantization and Monge-Ampere audits.
__version__ = "1.1.0"
