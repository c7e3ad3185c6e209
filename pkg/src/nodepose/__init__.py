"""Node-centric pose head on synthetic 3-frame clips: codec, embeddings, masked attention, graph attention, expert fusion."""
from .codec import GncConfig, Node, decode_heatmap, encode_node
from .config import RunConfig, format_config, load_config, parse_config
from .files import load_checkpoint, save_checkpoint
from .model import ModelDims, NodePoseHead, build_model, flatten_params, unflatten_params
from .objective import LossConfig, node_loss, pck_metric
from .pipeline import forward_pipeline
from .skeleton import SkeletonGraph, build_adjacency, canonical_skeleton
from .synth import ClipSample, MotionConfig, corrupt_clip, generate_clip, load_clips, save_clips

__version__ = "0.1.0"
