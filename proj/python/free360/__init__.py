"""Python access to the free360 core library.

Images are ``(H, W, 3)`` uint8 arrays. Boxes are ``(x1, y1, x2, y2)`` in pixels.
"""

from ._free360 import (
    ConfigError,
    DegenerateBox,
    DegeneratePair,
    Error,
    InvalidBox,
    InvalidGeometry,
    OutsideFace,
    ParseError,
    SanitizationError,
    ScriptMismatch,
    ValidationError,
    cmp_to_erp,
    erp_to_cmp,
    pair_center,
    rotate_erp,
    rotation_matrix,
    run_mock,
    sanitize_text,
    transform_box_erp,
    view_of_pixel,
)

__all__ = [name for name in dir() if not name.startswith("_")]
