"""Symbolic b-calculus: b^m-forms, b-symplectic and b-contact structures,
desingularization, Beltrami fields and their orbits."""

from .bgeom import (BBivector, BForm, BManifold, BMetric, BVectorField, CoordinateMap,
                    b_d, chart, compose, dual_bivector, flat, interior, laurent, pullback,
                    sharp, transversality, wedge)
from .desing import build_profile, convergence_report, desingularize
from .euler import (EulerData, beltrami_check, beltrami_to_contact, bernoulli_two_form,
                    contact_to_beltrami, curl, section_check, stationary_check)
from .expr import diff, equivalent, normalize, parse, to_text
from .flowlab import classify, integrate, poincare
from .manifest import load as load_manifest
from .structures import (check_b_contact, check_b_symplectic, fibration_map, periods, reeb,
                         reflect_double, regularize_tails)

__version__ = "0.1.0"

__all__ = [
    "BBivector", "BForm", "BManifold", "BMetric", "BVectorField", "CoordinateMap",
    "EulerData", "b_d", "beltrami_check", "beltrami_to_contact", "bernoulli_two_form",
    "build_profile", "chart", "check_b_contact", "check_b_symplectic", "classify", "compose",
    "contact_to_beltrami", "convergence_report", "curl", "desingularize", "diff",
    "dual_bivector", "equivalent", "fibration_map", "flat", "integrate", "interior",
    "laurent", "load_manifest", "normalize", "parse", "periods", "poincare", "pullback",
    "reeb", "reflect_double", "regularize_tails", "section_check", "sharp",
    "stationary_check", "to_text", "transversality", "wedge",
]
