"""Select the compiled core or the numpy fallback.

Setting ``RKKYTUNE_PURE_PYTHON=1`` forces the fallback even when the
extension is importable.
"""
import os

from . import _fallback

BACKEND = "python"
impl = _fallback

if os.environ.get("RKKYTUNE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as impl  # noqa: F811
        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        impl = _fallback

pair_sum = impl.pair_sum
enumerate_states = impl.enumerate_states
rank_states = impl.rank_states
diagonal_energies = impl.diagonal_energies
hopping_entries = impl.hopping_entries
