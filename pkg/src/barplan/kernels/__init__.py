"""Hot kernels, dispatched to numba or numpy by :data:`barplan._accel.USE_NUMBA`."""

from barplan._accel import USE_NUMBA
from barplan.kernels import ref

if USE_NUMBA:
    from barplan.kernels import jit as _impl
else:
    _impl = ref

BACKEND = "numba" if USE_NUMBA else "numpy"

first_collision = _impl.first_collision
state_collides = _impl.state_collides
chain_frames = _impl.chain_frames
assemble_frame = _impl.assemble_frame
dls_ik = _impl.dls_ik
dls_axis_ik = _impl.dls_axis_ik

__all__ = ["BACKEND", "first_collision", "state_collides", "chain_frames", "assemble_frame", "dls_ik", "dls_axis_ik", "ref"]
