"""Selection between the compiled and pure-python path loops.

The compiled extension covers the builtin models (those carrying a
kernel_code) for endpoint-only integration; everything else runs the
generic pure loop in schemes.py.  The choice is made here, at import time
for availability and per call for applicability, so the rest of the
package never touches the extension module directly.
"""

from .errors import ValidationError

try:
    from . import _kernels
except ImportError:
    _kernels = None

HAVE_COMPILED = _kernels is not None

_CHOICES = ("auto", "pure", "compiled")
_default = "auto"


def default_backend():
    """Current default backend name ("auto", "pure" or "compiled")."""
    return _default


def set_default_backend(name):
    """Set the backend used when integrate_path gets backend=None."""
    global _default
    if name not in _CHOICES:
        raise ValidationError(f"backend must be one of {', '.join(_CHOICES)}")
    _default = name


def kernels():
    """The compiled extension module, or None when not built."""
    return _kernels


def resolve(requested, model, record_full):
    """Pick the implementation for one integrate_path call.

    "auto" prefers the compiled loop whenever it applies; requesting
    "compiled" explicitly fails loudly when it cannot be honoured instead
    of silently downgrading.
    """
    name = _default if requested is None else requested
    if name not in _CHOICES:
        raise ValidationError(f"backend must be one of {', '.join(_CHOICES)}")
    if name == "pure":
        return "pure"
    applicable = HAVE_COMPILED and model.kernel_code is not None and not record_full
    if name == "auto":
        return "compiled" if applicable else "pure"
    if not HAVE_COMPILED:
        raise ValidationError("compiled kernels are not built in this installation")
    if model.kernel_code is None:
        raise ValidationError(f"model {model.name!r} has no compiled kernel")
    if record_full:
        raise ValidationError("full trajectory recording runs on the pure backend only")
    return "compiled"
