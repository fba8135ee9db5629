"""Annotation I/O and a synthetic articulated-figure dataset generator.

Figures are stick people posed by forward kinematics over a joint-angle
chain, drawn with thick antialiased limbs over procedurally textured
backgrounds, and emitted with exact 16-keypoint annotations so the whole
pipeline can be trained and evaluated at desk scale.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .skeleton import NUM_KEYPOINTS, KeypointId, KeypointSet, Visibility

SPLITS = ("train", "val", "test")


@dataclass
class AnnotationRecord:
    """One annotated person crop: image path, crop rect, keypoints, head size."""

    image_path: str
    crop: tuple[int, int, int, int]  # (x, y, w, h) person bounding box
    keypoints: KeypointSet
    head_size: float | None = None
    split: str = "train"

    def __post_init__(self):
        x, y, w, h = self.crop
        if w <= 0 or h <= 0:
            raise ValueError(f"crop rect must have positive area, got {self.crop}")

    def __eq__(self, other):
        if not isinstance(other, AnnotationRecord):
            return NotImplemented
        return (self.image_path == other.image_path
                and tuple(self.crop) == tuple(other.crop)
                and np.array_equal(self.keypoints.xy, other.keypoints.xy)
                and np.array_equal(self.keypoints.visibility, other.keypoints.visibility)
                and self.head_size == other.head_size
                and self.split == other.split)


# Limb lengths as fractions of min(H, W); heads are generous so the
# PCKh@0.5 radius stays above heatmap quantization at toy resolutions.
DEFAULT_LIMB_FRACTIONS = {
    "torso": 0.200,        # pelvis -> thorax
    "neck": 0.065,         # thorax -> upper_neck
    "head": 0.170,         # upper_neck -> head_top
    "shoulder_width": 0.110,
    "hip_width": 0.070,
    "upper_arm": 0.140,
    "forearm": 0.130,
    "thigh": 0.165,
    "shin": 0.155,
}


@dataclass
class SyntheticPoseSpec:
    """Joint angles (degrees), limb lengths, scale, and appearance of one figure.

    Angle sign convention: positive rotates the limb outward, away from the
    torso axis, mirrored between sides; all zeros is the neutral standing
    pose, which is left/right symmetric about the torso axis.
    """

    torso_tilt: float = 0.0
    r_shoulder_angle: float = 0.0
    r_elbow_angle: float = 0.0
    l_shoulder_angle: float = 0.0
    l_elbow_angle: float = 0.0
    r_hip_angle: float = 0.0
    r_knee_angle: float = 0.0
    l_hip_angle: float = 0.0
    l_knee_angle: float = 0.0
    limb_fractions: dict = field(default_factory=lambda: dict(DEFAULT_LIMB_FRACTIONS))
    scale: float = 1.0
    center_offset: tuple[float, float] = (0.0, 0.0)  # fractions of min(H, W)
    background_seed: int = 0
    limb_colors: dict = field(default_factory=lambda: {
        "head": (205, 170, 140), "torso": (180, 60, 60),
        "arms": (180, 60, 60), "legs": (60, 60, 150),
    })
    distractor: dict | None = None  # {"kind": "arm"|"leg", "anchor": (fx, fy), "angles": (a, b)}

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if any(v <= 0 for v in self.limb_fractions.values()):
            raise ValueError("limb lengths must be positive")


@dataclass
class GeneratorConfig:
    """Sampling ranges and difficulty knobs for the synthetic dataset."""

    torso_tilt_range: tuple[float, float] = (-20.0, 20.0)
    shoulder_range: tuple[float, float] = (-25.0, 95.0)
    elbow_range: tuple[float, float] = (-10.0, 110.0)
    hip_range: tuple[float, float] = (-15.0, 40.0)
    knee_range: tuple[float, float] = (-75.0, 5.0)
    scale_range: tuple[float, float] = (0.80, 1.10)
    center_jitter: float = 0.05
    length_jitter: float = 0.10
    distractor_probability: float = 0.25
    noise_amplitude: int = 2

    def angle_ranges(self) -> dict[str, tuple[float, float]]:
        return {
            "torso_tilt": self.torso_tilt_range,
            "r_shoulder_angle": self.shoulder_range, "l_shoulder_angle": self.shoulder_range,
            "r_elbow_angle": self.elbow_range, "l_elbow_angle": self.elbow_range,
            "r_hip_angle": self.hip_range, "l_hip_angle": self.hip_range,
            "r_knee_angle": self.knee_range, "l_knee_angle": self.knee_range,
        }


def _rot(deg: float) -> np.ndarray:
    r = math.radians(deg)
    return np.array([[math.cos(r), -math.sin(r)], [math.sin(r), math.cos(r)]])


def forward_kinematics(spec: SyntheticPoseSpec, resolution: tuple[int, int]) -> np.ndarray:
    """Exact float keypoint positions of the figure, (16, 2) in crop pixels."""
    h, w = resolution
    unit = min(h, w) * spec.scale
    L = {k: v * unit for k, v in spec.limb_fractions.items()}
    pelvis = np.array([w / 2.0 + spec.center_offset[0] * min(h, w),
                       h / 2.0 + 0.08 * min(h, w) + spec.center_offset[1] * min(h, w)])

    up = _rot(spec.torso_tilt) @ np.array([0.0, -1.0])
    down = -up
    side = {"r": _rot(spec.torso_tilt) @ np.array([-1.0, 0.0]),
            "l": _rot(spec.torso_tilt) @ np.array([1.0, 0.0])}
    sign = {"r": -1.0, "l": 1.0}  # positive angles swing limbs outward

    xy = np.zeros((NUM_KEYPOINTS, 2))
    xy[KeypointId.pelvis] = pelvis
    xy[KeypointId.thorax] = pelvis + L["torso"] * up
    xy[KeypointId.upper_neck] = xy[KeypointId.thorax] + L["neck"] * up
    xy[KeypointId.head_top] = xy[KeypointId.upper_neck] + L["head"] * up

    for s in ("r", "l"):
        sh = KeypointId[f"{s}_shoulder"]
        el = KeypointId[f"{s}_elbow"]
        wr = KeypointId[f"{s}_wrist"]
        hp = KeypointId[f"{s}_hip"]
        kn = KeypointId[f"{s}_knee"]
        an = KeypointId[f"{s}_ankle"]
        sh_angle = getattr(spec, f"{s}_shoulder_angle")
        el_angle = getattr(spec, f"{s}_elbow_angle")
        hp_angle = getattr(spec, f"{s}_hip_angle")
        kn_angle = getattr(spec, f"{s}_knee_angle")

        xy[sh] = xy[KeypointId.thorax] + L["shoulder_width"] * side[s]
        upper_dir = _rot(spec.torso_tilt + sign[s] * sh_angle) @ np.array([0.0, 1.0])
        xy[el] = xy[sh] + L["upper_arm"] * upper_dir
        fore_dir = _rot(spec.torso_tilt + sign[s] * (sh_angle + el_angle)) @ np.array([0.0, 1.0])
        xy[wr] = xy[el] + L["forearm"] * fore_dir

        xy[hp] = pelvis + L["hip_width"] * side[s]
        thigh_dir = _rot(spec.torso_tilt + sign[s] * hp_angle) @ np.array([0.0, 1.0])
        xy[kn] = xy[hp] + L["thigh"] * thigh_dir
        shin_dir = _rot(spec.torso_tilt + sign[s] * (hp_angle + kn_angle)) @ np.array([0.0, 1.0])
        xy[an] = xy[kn] + L["shin"] * shin_dir
    return xy


def _texture_background(resolution, seed: int) -> np.ndarray:
    """Low-frequency color blotches: muted so the figure stands out."""
    h, w = resolution
    bg_rng = np.random.default_rng([int(seed), 0x9e3779])
    coarse = bg_rng.integers(70, 180, size=(6, 6, 3), dtype=np.uint8)
    return cv2.resize(coarse, (w, h), interpolation=cv2.INTER_LINEAR)


def _draw_figure(img: np.ndarray, xy: np.ndarray, spec: SyntheticPoseSpec,
                 thickness: int) -> None:
    K = KeypointId
    pts = {k: (int(xy[k, 0]), int(xy[k, 1])) for k in K}
    colors = spec.limb_colors

    def line(a, b, color, t=thickness):
        cv2.line(img, pts[a], pts[b], color, t, cv2.LINE_AA)

    line(K.pelvis, K.thorax, colors["torso"], thickness + 2)
    line(K.thorax, K.upper_neck, colors["torso"])
    line(K.r_shoulder, K.l_shoulder, colors["torso"])
    line(K.r_hip, K.l_hip, colors["torso"])
    for s in ("r", "l"):
        line(K[f"{s}_shoulder"], K[f"{s}_elbow"], colors["arms"])
        line(K[f"{s}_elbow"], K[f"{s}_wrist"], colors["arms"])
        line(K[f"{s}_hip"], K[f"{s}_knee"], colors["legs"])
        line(K[f"{s}_knee"], K[f"{s}_ankle"], colors["legs"])
    head_mid = (xy[K.upper_neck] + xy[K.head_top]) / 2.0
    radius = max(2, int(round(np.linalg.norm(xy[K.head_top] - xy[K.upper_neck]) * 0.45)))
    cv2.circle(img, (int(round(head_mid[0])), int(round(head_mid[1]))),
               radius, colors["head"], -1, cv2.LINE_AA)


def _draw_distractor(img: np.ndarray, spec: SyntheticPoseSpec, resolution,
                     thickness: int) -> None:
    """A partial second figure: one two-segment limb chain, no annotations."""
    h, w = resolution
    d = spec.distractor
    color = spec.limb_colors["arms"] if d["kind"] == "arm" else spec.limb_colors["legs"]
    frac = spec.limb_fractions["upper_arm" if d["kind"] == "arm" else "thigh"]
    seg = frac * min(h, w) * spec.scale
    a = np.array([d["anchor"][0] * w, d["anchor"][1] * h])
    b = a + seg * (_rot(d["angles"][0]) @ np.array([0.0, 1.0]))
    c = b + seg * (_rot(d["angles"][0] + d["angles"][1]) @ np.array([0.0, 1.0]))
    cv2.line(img, (int(a[0]), int(a[1])), (int(b[0]), int(b[1])), color, thickness, cv2.LINE_AA)
    cv2.line(img, (int(b[0]), int(b[1])), (int(c[0]), int(c[1])), color, thickness, cv2.LINE_AA)


def generate_synthetic_sample(spec: SyntheticPoseSpec, resolution: tuple[int, int],
                              rng: np.random.Generator,
                              noise_amplitude: int = 2) -> tuple[np.ndarray, AnnotationRecord]:
    """Render one figure and its exact annotations.

    Keypoints are the forward-kinematics output rounded to integer pixels
    (the same integers the limbs are drawn with); out-of-crop keypoints are
    flagged unannotated. Deterministic given spec and rng state.
    """
    h, w = resolution
    xy = np.rint(forward_kinematics(spec, resolution))
    img = _texture_background(resolution, spec.background_seed)
    thickness = max(2, int(round(0.045 * min(h, w) * spec.scale)))
    if spec.distractor is not None:
        _draw_distractor(img, spec, resolution, thickness)
    _draw_figure(img, xy, spec, thickness)
    if noise_amplitude > 0:
        noise = rng.integers(-noise_amplitude, noise_amplitude + 1, size=img.shape)
        img = np.clip(img.astype(np.int16) + noise, 0, 255).astype(np.uint8)

    vis = np.full(NUM_KEYPOINTS, Visibility.visible, dtype=np.int64)
    inside = ((xy[:, 0] >= 0) & (xy[:, 0] <= w - 1)
              & (xy[:, 1] >= 0) & (xy[:, 1] <= h - 1))
    vis[~inside] = Visibility.unannotated
    keypoints = KeypointSet(xy, vis)
    head_size = float(np.linalg.norm(xy[KeypointId.head_top] - xy[KeypointId.upper_neck]))
    record = AnnotationRecord(image_path="", crop=(0, 0, w, h),
                              keypoints=keypoints, head_size=head_size)
    return img, record


def sample_pose_spec(rng: np.random.Generator,
                     cfg: GeneratorConfig | None = None) -> SyntheticPoseSpec:
    """Draw a random plausible pose, appearance, and optional distractor."""
    cfg = cfg or GeneratorConfig()
    angles = {name: float(rng.uniform(lo, hi))
              for name, (lo, hi) in cfg.angle_ranges().items()}
    fractions = {k: v * float(rng.uniform(1 - cfg.length_jitter, 1 + cfg.length_jitter))
                 for k, v in DEFAULT_LIMB_FRACTIONS.items()}
    shirt = tuple(int(c) for c in rng.integers(40, 220, size=3))
    pants = tuple(int(c) for c in rng.integers(30, 200, size=3))
    skin = tuple(int(c) for c in (np.array([205, 170, 140]) + rng.integers(-25, 26, size=3)))
    distractor = None
    if rng.uniform() < cfg.distractor_probability:
        distractor = {
            "kind": "arm" if rng.uniform() < 0.5 else "leg",
            "anchor": (float(rng.uniform(0.08, 0.92)), float(rng.uniform(0.08, 0.6))),
            "angles": (float(rng.uniform(-90, 90)), float(rng.uniform(-60, 60))),
        }
    return SyntheticPoseSpec(
        **angles,
        limb_fractions=fractions,
        scale=float(rng.uniform(*cfg.scale_range)),
        center_offset=(float(rng.uniform(-cfg.center_jitter, cfg.center_jitter)),
                       float(rng.uniform(-cfg.center_jitter, cfg.center_jitter))),
        background_seed=int(rng.integers(0, 2**31 - 1)),
        limb_colors={"head": skin, "torso": shirt, "arms": shirt, "legs": pants},
        distractor=distractor,
    )


@dataclass
class DatasetManifest:
    """Everything needed to regenerate a dataset bit-for-bit."""

    seed: int = 0
    counts: dict = field(default_factory=lambda: {"train": 32, "val": 8, "test": 8})
    resolution: tuple[int, int] = (64, 64)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["resolution"] = list(self.resolution)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetManifest":
        gen = GeneratorConfig(**{k: tuple(v) if isinstance(v, list) else v
                                 for k, v in doc.get("generator", {}).items()})
        return cls(seed=doc["seed"], counts=dict(doc["counts"]),
                   resolution=tuple(doc["resolution"]), generator=gen)


def generate_records(manifest: DatasetManifest):
    """Generate the full dataset in memory: list of (image, AnnotationRecord).

    Per-sample rng streams derive from (manifest seed, global index), so
    any subset regenerates identically and parallel generation is safe.
    """
    out = []
    index = 0
    for split in SPLITS:
        for _ in range(manifest.counts.get(split, 0)):
            rng = np.random.default_rng([manifest.seed, index])
            spec = sample_pose_spec(rng, manifest.generator)
            img, record = generate_synthetic_sample(
                spec, manifest.resolution, rng,
                noise_amplitude=manifest.generator.noise_amplitude)
            record.split = split
            record.image_path = f"images/{split}_{index:05d}.png"
            out.append((img, record))
            index += 1
    return out


def write_dataset(manifest: DatasetManifest, root) -> list[AnnotationRecord]:
    """Materialize a dataset directory: images/, annotations.jsonl, manifest.json."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for img, record in generate_records(manifest):
        cv2.imwrite(str(root / record.image_path), img[:, :, ::-1])  # RGB -> BGR on disk
        records.append(record)
    save_annotations(records, root / "annotations.jsonl")
    (root / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2))
    return records


def load_image(root, record: AnnotationRecord) -> np.ndarray:
    img = cv2.imread(str(Path(root) / record.image_path), cv2.IMREAD_COLOR)
    if img is None:
        raise FileNotFoundError(f"missing image {record.image_path} under {root}")
    return img[:, :, ::-1].copy()


def dataset_root(path=None):
    """Resolve the dataset root: explicit path wins, else POSEFORGE_DATA, else cwd."""
    if path is not None:
        return Path(path)
    return Path(os.environ.get("POSEFORGE_DATA", "."))


def save_annotations(records: list[AnnotationRecord], path) -> None:
    with open(path, "w") as f:
        for record in records:
            doc = {
                "image": record.image_path,
                "crop": list(record.crop),
                "split": record.split,
                "head_size": record.head_size,
                "keypoints": {
                    KeypointId(i).name: {
                        "x": float(record.keypoints.xy[i, 0]),
                        "y": float(record.keypoints.xy[i, 1]),
                        "v": Visibility(int(record.keypoints.visibility[i])).name,
                    } for i in range(NUM_KEYPOINTS)
                },
            }
            f.write(json.dumps(doc) + "\n")


def load_annotations(path) -> list[AnnotationRecord]:
    """Parse a JSON-lines annotation file; errors name the record and field."""
    records = []
    with open(path) as f:
        for index, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as err:
                raise ValueError(f"record {index}: malformed JSON ({err})") from err
            for fname in ("image", "crop", "split", "keypoints"):
                if fname not in doc:
                    raise ValueError(f"record {index}: missing field '{fname}'")
            xy = np.zeros((NUM_KEYPOINTS, 2))
            vis = np.zeros(NUM_KEYPOINTS, dtype=np.int64)
            for k in KeypointId:
                if k.name not in doc["keypoints"]:
                    raise ValueError(f"record {index}: missing keypoint '{k.name}'")
                entry = doc["keypoints"][k.name]
                for fname in ("x", "y", "v"):
                    if fname not in entry:
                        raise ValueError(
                            f"record {index}: keypoint '{k.name}' missing field '{fname}'")
                xy[k] = (entry["x"], entry["y"])
                try:
                    vis[k] = Visibility[entry["v"]]
                except KeyError:
                    raise ValueError(
                        f"record {index}: keypoint '{k.name}' has unknown "
                        f"visibility '{entry['v']}'") from None
            records.append(AnnotationRecord(
                image_path=doc["image"], crop=tuple(doc["crop"]),
                keypoints=KeypointSet(xy, vis),
                head_size=doc.get("head_size"), split=doc["split"]))
    return records
