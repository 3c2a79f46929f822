from .render import (PSNR_CAP, Camera, DensityActivation, RayBatch, RenderConfig, RenderResult, all_pixels,
                     composite, composite_backward, density, generate_rays, load_png, photometric_loss, psnr,
                     ray_box, render_alpha, render_image, render_ray, render_rays, report_psnr, save_png,
                     stratified_t, to_uint8)
from .scene import PosedImages, ToySpheres, orbit_cameras, toy_scene
from .sh import SH_C0, SH_C1, SH_C2, SHColorGrid, sh_basis, sh_color, sigmoid
from .train import NerfConfig, NerfReport, evaluate_views, fit_nerf, scene_rays
