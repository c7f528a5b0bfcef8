"""Instance-guided video transformer for multi-person 3D pose from video.

Pure-numpy implementation: a reverse-mode autodiff tensor core, transformer
building blocks, instance-guided tokenization, spatial/temporal/cross-scale
video attention, a heatmap+offset pose codec, evaluation metrics, a
synthetic scene generator, and a toy training loop.
"""

from .tensor import (BoundsError, ConfigError, ContractError, MacCounter,
                     NumericError, ShapeError, Tensor, macs, set_debug_checks)
from .gradcheck import grad_check
from .blocks import (AttentionConfig, attention, block_params, ffn, layer_norm,
                     multi_head_attention, multi_head_self_attention,
                     transformer_block_cross, transformer_block_self,
                     zero_block_outputs)
from .igt import (BlockGrid, extract_blocks, fuse_config, gather_indices,
                  gather_instance, igt_frame, offset_head_params,
                  predict_offsets, retile, tokenize)
from .video import (GridGeometry, ScaleSet, VideoConfig, align_tokens,
                    alignment_maps, block_mean_flow, cisa, cisa_params, isa,
                    isa_params, ita, ivt_forward, ivt_layer, layer_params,
                    mita, split_to_finest, tokenize_clip, video_params)
from .codec import (ROOT_JOINT, Pose3D, center_mask, decode_poses,
                    encode_targets, keypoint_nms, poses_from_lines,
                    poses_to_lines)
from .losses import LossWeights, masked_l1, total_loss
from .metrics import (EvalReport, FrameEval, depth_error, greedy_match,
                      match_and_evaluate, mpjpe, pa_mpjpe, procrustes_align)
from .synth import (SceneSpec, SceneTruth, export_manifest, generate,
                    gt_feature_provider, import_manifest)
from .checkpoint import load_params, save_params
from .train import (Adam, IVTModel, ModelOutput, TrainConfig, TrainResult,
                    build_model, clip_loss, decode_output, evaluate, load_model,
                    lr_at, scaled_targets, train)

__version__ = "0.1.0"
