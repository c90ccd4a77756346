import pytest

from scjd.data import generate_dataset, quantize_clip
from scjd.posenet import ModelConfig
from scjd.skeleton import build_h36m17
from scjd.train import LoopConfig, OptimizerConfig

TINY_TEACHER = ModelConfig(frames=9, embed_dim=8, depth=1, role="teacher")
TINY_STUDENT = ModelConfig(frames=3, embed_dim=4, depth=1, role="student", upsample_stride=3, head_dim=8)
TINY_LOOP = LoopConfig(windows_per_clip=4, samples_per_epoch=12, eval_frame_stride=5)
TINY_OPT = OptimizerConfig(epochs=3, batch_size=4, seed=0)


@pytest.fixture(scope="session")
def topo():
    return build_h36m17()


@pytest.fixture(scope="session")
def tiny_clips(topo):
    return [quantize_clip(c) for c in generate_dataset(topo, 4, 2, 20, seed=0)]
