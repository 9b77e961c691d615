"""Committed reference objective values for the benchmark cases.

Generated by scripts/compute_reference_values.py (multi-start coordinate
pattern search, fixed seed). Do not edit by hand; rerun the script instead.
"""

REFERENCE_VALUES = {
    "sphere_d3_i1": 3.946963401507629e-23,
    "rosenbrock_d5_i2": 0.09456515709289426,
    "rastrigin_d10_i5": 25.868829325575405,
    "ellipsoid_d20_i1": 3.193216078093251e-14,
    "schaffers_d40_i5": 0.5548404460333545,
}
