"""Synthetic curves, digital phantom, MOLLI stacks and motion corruption."""

from molli_t1.synthdata.curves import (
    Acquisition,
    BatchSizeError,
    CurveBatch,
    ParamRanges,
    Perturbation,
    PerturbationClass,
    gen_batch,
    gen_batch_arrays,
    gen_curve,
    sample_param_array,
    sample_params,
)
from molli_t1.synthdata.motion import MotionSpec, apply_motion, rigid_transform
from molli_t1.synthdata.phantom import (
    BACKGROUND,
    BLOOD,
    MYOCARDIUM,
    REGION_NAMES,
    MolliStack,
    PhantomMaps,
    PhantomSpec,
    PhantomSpecError,
    RegionDist,
    add_noise,
    gen_phantom,
    render_molli_stack,
)
from molli_t1.synthdata.schedule import (
    MolliScheme,
    ScheduleError,
    TiSchedule,
    make_ti_schedule,
    sample_rr_sequence,
)
