"""Dense grids of per-vertex Taylor coefficients, fitted directly by gradient descent."""

from .field import (EvalResult, GridSpec, ResourceError, Stencil, TaylorGrid, backprop_gradients, backprop_values,
                    build_stencil, change_order, coeff_count, eval_with_spatial_gradient, evaluate, init_grid,
                    locate, sample_field, set_from_function, upsample)
from .formats import FormatError, load_sdfpts, load_tgrid, save_sdfpts, save_tgrid
from .optim import AdamState, LossTrace, Model, NumericalError, Schedule, Stage, adam_step, run_schedule
from .sdf import (FitReport, LossConfig, SampleSet, adaptive_weight, eikonal_loss, fit_sdf, near_surface_mse,
                  recon_loss, total_loss, tv_loss)

__version__ = "0.1.0"
