"""
Field strength at a site from spherical harmonics
=================================================

The estimator needs the local field magnitude to turn the restored unit
direction back into Gauss. The bundled 2020 main-field table (degree 4)
gives it for any latitude, longitude and altitude. Published tables expect
Schmidt semi-normalized Legendre functions and the ``(re / a)^(n+2)``
radial falloff, so both switches are on here.
"""

from magrestore.geomag import GeoPosition, default_coefficients, igrf_field_norm

coeffs = default_coefficients()

# %%
# A few sites, ground level and at cruise altitude.
sites = {"Wuhan": (30.52, 114.31), "Reykjavik": (64.15, -21.94), "Quito": (-0.18, -78.47)}
for name, (lat, lon) in sites.items():
    norms = [igrf_field_norm(GeoPosition.from_geodetic(lat, lon, h), coeffs,
                             schmidt=True, standard_radial=True) for h in (0.0, 10.0)]
    print(f"{name:10s} {norms[0]:.4f} G at ground, {norms[1]:.4f} G at 10 km")
