"""Synthetic motion clips, 2D projection, sparse frame sampling and dataset files."""

from __future__ import annotations

import csv
import io
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import _kernels
from .skeleton import SkeletonTopology

MAGIC = b"SCJDDATA"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Dataset file is malformed; the message names the byte offset."""


class ConfigError(ValueError):
    """A configuration invariant is violated; ``invariant`` names it."""

    def __init__(self, invariant: str, message: str):
        super().__init__(f"{invariant}: {message}")
        self.invariant = invariant


class DegenerateCameraError(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    focal: float = 2.5
    cx: float = 0.0
    cy: float = 0.0
    distance_mm: float = 5000.0


@dataclass(frozen=True)
class MotionParams:
    amplitude_scale: float = 1.0
    min_components: int = 2
    max_components: int = 4
    freq_range_hz: tuple[float, float] = (0.2, 2.0)
    root_travel_mm: tuple[float, float, float] = (400.0, 40.0, 600.0)
    yaw_range_rad: float = np.pi
    fps: float = 50.0
    camera: Camera = field(default_factory=Camera)
    noise_std: float = 0.005


# per-joint bound (radians) on the summed local rotation amplitude
_JOINT_AMPLITUDE = np.array(
    [0.0, 0.6, 0.9, 0.3, 0.6, 0.9, 0.3, 0.25, 0.2, 0.3, 0.3, 0.3, 0.9, 0.3, 0.3, 0.9, 0.3]
)


@dataclass
class PoseSequence3D:
    frames: np.ndarray  # (f, J, 3) root-relative millimetres
    fps: float = 50.0


@dataclass
class PoseSequence2D:
    frames: np.ndarray  # (f, J, 2) normalised image coordinates
    source: str = "projected_clean"


@dataclass
class MotionClip:
    id: str
    seq3d: PoseSequence3D
    seq2d: PoseSequence2D
    seed: int
    camera: Camera = field(default_factory=Camera)
    noise_std: float = 0.0

    @property
    def num_frames(self) -> int:
        return self.seq3d.frames.shape[0]

    @property
    def split(self) -> str:
        return "train" if self.seed % 2 == 0 else "eval"


def _amplitudes(num_joints: int) -> np.ndarray:
    if num_joints == len(_JOINT_AMPLITUDE):
        return _JOINT_AMPLITUDE
    return np.full(num_joints, 0.4) * (np.arange(num_joints) > 0)


def _sinusoids(rng, n_series, dims, t, bound, params: MotionParams, freq_range=None):
    """Sum of 2-4 random-phase sinusoids per series, bounded by ``bound`` per dim."""
    lo, hi = freq_range or params.freq_range_hz
    out = np.zeros((len(t), n_series, dims))
    bound = np.broadcast_to(np.asarray(bound, dtype=np.float64).reshape(n_series, -1), (n_series, dims))
    for s in range(n_series):
        n = int(rng.integers(params.min_components, params.max_components + 1))
        freq = rng.uniform(lo, hi, size=n)
        phase = rng.uniform(0.0, 2 * np.pi, size=n)
        amp = rng.uniform(-1.0, 1.0, size=(n, dims)) / n
        waves = np.sin(2 * np.pi * np.outer(t, freq) + phase)  # (f, n)
        out[:, s] = waves @ amp * bound[s]
    return out


def _motion(topo: SkeletonTopology, num_frames: int, seed: int, params: MotionParams):
    """Local joint rotations, root rotation and root translation for one clip."""
    rng = np.random.default_rng(seed)
    j = topo.num_joints
    t = np.arange(num_frames) / params.fps
    a = params.amplitude_scale
    rotvec = _sinusoids(rng, j, 3, t, _amplitudes(j) * a, params)
    local = Rotation.from_rotvec(rotvec.reshape(-1, 3)).as_matrix().reshape(num_frames, j, 3, 3)
    yaw0 = rng.uniform(-1.0, 1.0) * params.yaw_range_rad * a
    root_rv = _sinusoids(rng, 1, 3, t, [np.array([0.1, 0.5, 0.1]) * a], params, (0.1, 0.5))[:, 0]
    root_rv[:, 1] += yaw0  # y is the vertical axis
    root_rot = Rotation.from_rotvec(root_rv).as_matrix()
    travel = _sinusoids(rng, 1, 3, t, [np.asarray(params.root_travel_mm) * a], params, (0.1, 0.5))[:, 0]
    return local, root_rot, travel


def generate_clip(
    topo: SkeletonTopology,
    num_frames: int,
    seed: int,
    params: MotionParams | None = None,
    clip_id: str | None = None,
) -> MotionClip:
    """Procedural forward-kinematics motion, projected to 2D with seeded noise."""
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    params = params or MotionParams()
    local, root_rot, travel = _motion(topo, num_frames, seed, params)
    pos = _kernels.get("forward_kinematics")(
        np.ascontiguousarray(local),
        np.ascontiguousarray(root_rot),
        topo.rest_offsets(),
        np.asarray(topo.parent, dtype=np.int64),
    )
    seq3d = PoseSequence3D(pos, params.fps)
    seq2d = project_to_2d(seq3d, params.camera, params.noise_std, seed, root_mm=travel)
    return MotionClip(
        id=clip_id or f"clip{seed:06d}",
        seq3d=seq3d,
        seq2d=seq2d,
        seed=int(seed),
        camera=params.camera,
        noise_std=params.noise_std,
    )


def project_to_2d(
    seq3d: PoseSequence3D,
    camera: Camera,
    noise_std: float = 0.0,
    seed: int = 0,
    root_mm: np.ndarray | None = None,
) -> PoseSequence2D:
    """Pinhole projection ``focal * x / (z + distance)`` plus optional Gaussian noise."""
    pts = seq3d.frames if root_mm is None else seq3d.frames + np.asarray(root_mm)[:, None, :]
    depth = pts[..., 2] + camera.distance_mm
    if np.any(depth <= 0):
        raise DegenerateCameraError(f"non-positive depth {depth.min():.3f} mm; move the camera back")
    uv = camera.focal * pts[..., :2] / depth[..., None] + np.array([camera.cx, camera.cy])
    if noise_std > 0:
        rng = np.random.default_rng([int(seed), 1])
        uv = uv + rng.normal(0.0, noise_std, size=uv.shape)
        return PoseSequence2D(uv, "projected_noisy")
    return PoseSequence2D(uv, "projected_clean")


def back_project(uv: np.ndarray, depth_mm: np.ndarray, camera: Camera) -> np.ndarray:
    """Invert the noiseless projection given per-point depth ``z`` (camera-relative)."""
    z = depth_mm + camera.distance_mm
    xy = (uv - np.array([camera.cx, camera.cy])) * z[..., None] / camera.focal
    return np.concatenate([xy, depth_mm[..., None]], axis=-1)


# ---------------------------------------------------------------------------
# sparse correlation sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SamplerConfig:
    teacher_frames: int = 27
    stride: int = 3

    @property
    def student_frames(self) -> int:
        return self.teacher_frames // self.stride

    def check(self) -> None:
        ft, s = self.teacher_frames, self.stride
        if ft < 1 or ft % 2 == 0:
            raise ConfigError("teacher_frames_odd", f"teacher_frames={ft} must be a positive odd integer")
        if s < 1 or ft % s:
            raise ConfigError("stride_divides_teacher_frames", f"stride={s} does not divide teacher_frames={ft}")
        if (ft // s) % 2 == 0:
            raise ConfigError("student_frames_odd", f"teacher_frames/stride={ft // s} must be odd")


def sparse_sample_indices(cfg: SamplerConfig) -> np.ndarray:
    """Center-aligned frames ``c + k*stride`` for ``k`` in ``-(fS-1)/2 .. (fS-1)/2``."""
    cfg.check()
    c = (cfg.teacher_frames - 1) // 2
    half = (cfg.student_frames - 1) // 2
    return c + cfg.stride * np.arange(-half, half + 1)


def contiguous_indices(teacher_frames: int, student_frames: int) -> np.ndarray:
    """Dense center window (the no-sampling baseline)."""
    c = (teacher_frames - 1) // 2
    half = (student_frames - 1) // 2
    return np.arange(c - half, c + half + 1)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def flip_pose(arr: np.ndarray, topo: SkeletonTopology) -> np.ndarray:
    """Mirror horizontally: negate x, swap left/right joint rows (joint axis is -2)."""
    out = np.array(arr, dtype=np.float64, copy=True)
    out[..., 0] *= -1.0
    return out[..., topo.flip_permutation(), :]


def flip_augment(seq2d: np.ndarray, seq3d: np.ndarray, topo: SkeletonTopology):
    return flip_pose(seq2d, topo), flip_pose(seq3d, topo)


# ---------------------------------------------------------------------------
# training windows
# ---------------------------------------------------------------------------


def window_indices(num_frames: int, center: int, length: int) -> np.ndarray:
    """Frame indices of a ``length`` window around ``center``, edge-padded."""
    half = (length - 1) // 2
    return np.clip(np.arange(center - half, center + half + 1), 0, num_frames - 1)


@dataclass
class Windows:
    """Stacked (input, target) samples cut from clips."""

    inputs: np.ndarray  # (S, f, J, 2)
    targets: np.ndarray  # (S, J, 3) millimetres

    def __len__(self) -> int:
        return self.inputs.shape[0]


def make_windows(clips, length: int, centers_per_clip: int | None = None, frame_stride: int = 1) -> Windows:
    """Cut windows from every clip.

    With ``centers_per_clip`` the centers are evenly spaced over the clip;
    otherwise every ``frame_stride``-th frame is a center.
    """
    xs, ys = [], []
    for clip in clips:
        n = clip.num_frames
        if centers_per_clip:
            centers = np.linspace(0, n - 1, centers_per_clip + 2)[1:-1].round().astype(int)
        else:
            centers = np.arange(0, n, frame_stride)
        for c in centers:
            idx = window_indices(n, int(c), length)
            xs.append(clip.seq2d.frames[idx])
            ys.append(clip.seq3d.frames[c])
    if not xs:
        return Windows(np.zeros((0, length, 0, 2)), np.zeros((0, 0, 3)))
    return Windows(np.stack(xs), np.stack(ys))


def split_clips(clips):
    """Train clips have even seeds, eval clips odd seeds."""
    train = [c for c in clips if c.seed % 2 == 0]
    evals = [c for c in clips if c.seed % 2 == 1]
    return train, evals


def generate_dataset(
    topo: SkeletonTopology,
    train_clips: int,
    eval_clips: int,
    num_frames: int,
    seed: int,
    params: MotionParams | None = None,
) -> list[MotionClip]:
    base = 2 * (int(seed) * 100_003)
    clips = [generate_clip(topo, num_frames, base + 2 * i, params) for i in range(train_clips)]
    clips += [generate_clip(topo, num_frames, base + 2 * i + 1, params) for i in range(eval_clips)]
    return clips


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _clip_record(clip: MotionClip) -> bytes:
    f, j = clip.seq3d.frames.shape[:2]
    name = clip.id.encode("utf-8")
    cam = clip.camera
    buf = io.BytesIO()
    buf.write(struct.pack("<H", len(name)))
    buf.write(name)
    buf.write(struct.pack("<Qd", clip.seed, clip.seq3d.fps))
    buf.write(struct.pack("<II", f, j))
    buf.write(struct.pack("<5d", cam.focal, cam.cx, cam.cy, cam.distance_mm, clip.noise_std))
    buf.write(struct.pack("<B", 1 if clip.seq2d.source == "projected_noisy" else 0))
    buf.write(np.ascontiguousarray(clip.seq3d.frames, dtype="<f4").tobytes())
    buf.write(np.ascontiguousarray(clip.seq2d.frames, dtype="<f4").tobytes())
    return buf.getvalue()


def dataset_bytes(clips) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<II", FORMAT_VERSION, len(clips)))
    for clip in clips:
        rec = _clip_record(clip)
        out.write(rec)
        out.write(struct.pack("<I", zlib.crc32(rec)))
    return out.getvalue()


def save_dataset(clips, path) -> None:
    Path(path).write_bytes(dataset_bytes(clips))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated file at offset {self.pos}: need {n} bytes for {what}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_dataset(path) -> list[MotionClip]:
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError("bad magic at offset 0")
    (version, count) = r.unpack("<II", "header")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported dataset version {version} at offset {len(MAGIC)}")
    clips = []
    for _ in range(count):
        start = r.pos
        (nlen,) = r.unpack("<H", "clip id length")
        cid = r.take(nlen, "clip id").decode("utf-8")
        seed, fps = r.unpack("<Qd", "seed/fps")
        f, j = r.unpack("<II", "frame/joint counts")
        focal, cx, cy, dist, noise = r.unpack("<5d", "camera")
        (noisy,) = r.unpack("<B", "source")
        p3 = np.frombuffer(r.take(f * j * 3 * 4, "3D payload"), dtype="<f4").reshape(f, j, 3)
        p2 = np.frombuffer(r.take(f * j * 2 * 4, "2D payload"), dtype="<f4").reshape(f, j, 2)
        end = r.pos
        (crc,) = r.unpack("<I", "checksum")
        if zlib.crc32(r.data[start:end]) != crc:
            raise FormatError(f"checksum mismatch for clip record at offset {start}")
        clips.append(
            MotionClip(
                id=cid,
                seq3d=PoseSequence3D(p3.astype(np.float64), fps),
                seq2d=PoseSequence2D(p2.astype(np.float64), "projected_noisy" if noisy else "projected_clean"),
                seed=int(seed),
                camera=Camera(focal, cx, cy, dist),
                noise_std=noise,
            )
        )
    if r.pos != len(r.data):
        raise FormatError(f"trailing bytes after last clip at offset {r.pos}")
    return clips


def quantize_clip(clip: MotionClip) -> MotionClip:
    """The clip as it reads back from a dataset file (payload rounded to float32)."""
    return replace(
        clip,
        seq3d=PoseSequence3D(clip.seq3d.frames.astype(np.float32).astype(np.float64), clip.seq3d.fps),
        seq2d=PoseSequence2D(clip.seq2d.frames.astype(np.float32).astype(np.float64), clip.seq2d.source),
    )


def export_csv(clips, out_dir, topo: SkeletonTopology | None = None) -> list[Path]:
    """One CSV per clip: frame, joint, x3d, y3d, z3d, u, v."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for clip in clips:
        path = out_dir / f"{clip.id}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "joint", "x_mm", "y_mm", "z_mm", "u", "v"])
            for t in range(clip.num_frames):
                for jn in range(clip.seq3d.frames.shape[1]):
                    label = topo.names[jn] if topo else jn
                    w.writerow([t, label, *map(repr, clip.seq3d.frames[t, jn]), *map(repr, clip.seq2d.frames[t, jn])])
        paths.append(path)
    return paths
