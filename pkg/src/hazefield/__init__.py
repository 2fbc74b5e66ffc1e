"""hazefield: haze-free radiance fields and scattering parameters from hazy
multi-view images, with a synthetic-data generator and evaluation harness."""

__version__ = "0.1.0"

from .field import (Camera, GradBuffer, Ray, RenderOutput, SubgridSpec,
                    VoxelGrid, render_image, render_ray, render_ray_backward,
                    render_subgrid, render_subgrid_backward, sample_field)
from .haze import (AtmosphereParams, QuantizedImage, apply_asm, asm_backward,
                   invert_asm, quantize, transmission)
from .losses import (LossWeights, cd_loss, cons_loss, local_contrast,
                     mse_loss, rec_loss, smrc_penalty, total_loss, tv_loss)
from .optim import AdamState, LrSchedule, adam_step, lr_at
from .scenes import (Primitive, SceneSpec, build_dataset,
                     build_fixture_dataset, fixture_scene, generate_cameras,
                     gt_render)
from .trainer import (Checkpoint, TrainConfig, load_checkpoint,
                      render_novel_view, sample_subgrid, save_checkpoint,
                      train, train_step)
from .evalkit import (EvalReport, dcp_dehaze, param_error, psnr, run_ablation,
                      run_beta_sweep, run_eval, ssim)
from .fileio import Dataset, load_dataset
