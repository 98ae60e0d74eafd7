import os
from dotenv import load_dotenv

# Only load .env file if it exists (for local development)
# On shared machines the environment variables are set directly
if os.path.exists('.env'):
    load_dotenv()

# Paths
DATA_DIR = os.getenv('DIGNET_DATA_DIR', 'data')
OUTPUT_DIR = os.getenv('DIGNET_OUTPUT_DIR', 'runs')
DEVICE = os.getenv('DIGNET_DEVICE', 'cpu')

# External adapters (optional, see external_services.py)
DEPTH_ESTIMATOR_URL = os.getenv('DEPTH_ESTIMATOR_URL')
PERSON_DETECTOR_URL = os.getenv('PERSON_DETECTOR_URL')
EXTERNAL_TIMEOUT_SECONDS = int(os.getenv('EXTERNAL_TIMEOUT_SECONDS', '30'))

# Stream status service
STREAM_SERVICE_PORT = int(os.getenv('STREAM_SERVICE_PORT', '8080'))

# Gesture vocabulary: index order is the class index
GESTURE_CLASSES = {
    "go-back": {"kind": "dynamic", "mirror": "go-back"},
    "go-up": {"kind": "dynamic", "mirror": "go-up"},
    "go-down": {"kind": "dynamic", "mirror": "go-down"},
    "move-right": {"kind": "dynamic", "mirror": "move-left"},
    "move-left": {"kind": "dynamic", "mirror": "move-right"},
    "turn-around": {"kind": "dynamic", "mirror": "turn-around"},
    "beckoning": {"kind": "dynamic", "mirror": "beckoning"},
    "follow-me": {"kind": "dynamic", "mirror": "follow-me"},
    "pointing": {"kind": "static", "mirror": "pointing"},
    "thumbs-up": {"kind": "static", "mirror": "thumbs-up"},
    "thumbs-down": {"kind": "static", "mirror": "thumbs-down"},
    "stop": {"kind": "static", "mirror": "stop"},
    "null": {"kind": "null", "mirror": "null"},
}
NUM_CLASSES = len(GESTURE_CLASSES)

SPLITS = ("train", "val", "test")
ENVIRONMENTS = ("indoor", "outdoor-sun", "outdoor-overcast", "synthetic")

# Distance range covered by the data (meters)
MIN_DISTANCE = 2.0
MAX_DISTANCE = 30.0

# Synthetic generator
SYNTH_FRAME_WIDTH = 160
SYNTH_FRAME_HEIGHT = 120
SYNTH_FPS = 21
SYNTH_FRAME_COUNT = 84
SYNTH_FOCAL_SCALE = 220.0        # pixels * meters, actor height = focal / distance
SYNTH_MIN_ACTOR_PIXELS = 4.0
SYNTH_SUPERSAMPLE = 4
REFERENCE_DISTANCE = 16.0        # defocus reference, shared with the margin's rho_0
FAR_PLANE_DEPTH = 50.0           # depth assigned to background pixels
ACTOR_BASE_CONTRAST = 95.0       # gray levels above background at gain 1
ILLUMINATION_JITTER = 0.1        # per-clip relative spread of the environment gain
BACKGROUND_LEVEL = 80.0

ENVIRONMENT_PRESETS = {
    "indoor": {"illumination_gain": 1.0, "background_level": 80.0, "noise_std": 0.01},
    "outdoor-sun": {"illumination_gain": 1.25, "background_level": 120.0, "noise_std": 0.02},
    "outdoor-overcast": {"illumination_gain": 0.7, "background_level": 95.0, "noise_std": 0.03},
    "synthetic": {"illumination_gain": 1.0, "background_level": 80.0, "noise_std": 0.0},
}

# Background clutter / dynamic interference presets
CLUTTER_PRESETS = {
    "none": {"texture": 0.0, "distractors": 0, "lighting_jumps": 0},
    "mild": {"texture": 6.0, "distractors": 1, "lighting_jumps": 0},
    "moderate": {"texture": 12.0, "distractors": 2, "lighting_jumps": 1},
    "severe": {"texture": 20.0, "distractors": 4, "lighting_jumps": 2},
}

# Optical degradation presets (blur / fog sweeps)
DEGRADATION_PRESETS = {
    "none": {
        "attenuation": 0.0, "defocus_sigma": 0.0, "fog_density": 0.0,
        "motion_blur": 0.0, "noise_std": 0.0, "clutter": "none", "resolution_factor": 0,
    },
    "mild": {
        "attenuation": 0.01, "defocus_sigma": 0.4, "fog_density": 0.1,
        "motion_blur": 2.0, "noise_std": 0.01, "clutter": "mild", "resolution_factor": 0,
    },
    "moderate": {
        "attenuation": 0.02, "defocus_sigma": 0.8, "fog_density": 0.25,
        "motion_blur": 4.0, "noise_std": 0.02, "clutter": "moderate", "resolution_factor": 2,
    },
    "severe": {
        "attenuation": 0.035, "defocus_sigma": 1.2, "fog_density": 0.4,
        "motion_blur": 6.0, "noise_std": 0.04, "clutter": "severe", "resolution_factor": 2,
    },
}
FOG_COLOR = 200.0

# Augmentation ranges (the "identity" config sets all of these to zero)
AUGMENTATION_CONFIG = {
    "flip_prob": 0.5,
    "rotation_degrees": 8.0,
    "scale_range": 0.1,
    "crop_fraction": 0.08,
    "brightness_delta": 20.0,
    "contrast_range": 0.15,
    "noise_std": 0.02,
}

# Preprocessing
IMAGE_SIZE = int(os.getenv('DIGNET_IMAGE_SIZE', '224'))
KEYFRAMES = 8                    # r
WINDOW_LENGTH = 84               # n for accuracy runs
STREAM_WINDOW_LENGTH = 8         # n for latency runs
CROP_RATIO = 4.0                 # a, extension is diagonal / a
MIN_DEPTH = 0.5
FLOW_EPSILON = 1e-6
KMEANS_MAX_ITER = 50
EMBED_GRID = 16
FARNEBACK_PARAMS = {
    "pyr_scale": 0.5, "levels": 3, "winsize": 15,
    "iterations": 3, "poly_n": 5, "poly_sigma": 1.2, "flags": 0,
}

# Model
MODEL_CONFIG = {
    "in_channels": 5,
    "stem_channels": 32,
    "stem_stride": 4,
    "dada_channels": [64, 128],
    "dada_strides": [2, 2],
    "ray_samples": 2,            # K
    "offset_hidden": 32,
    "offset_clamp": 8.0,
    "weight_hidden": 16,
    "eta_init": 0.05,
    "eta_learnable": True,
    "exponent_cap": 20.0,
    "stg_layers": 1,
    "transformer_layers": 2,
    "transformer_heads": 4,
    "dropout": 0.1,
    "head_mode": "cosine",
    "use_dada": True,
    "use_stg": True,
    "use_transformer": True,
}

# RSTDAL margin constants (tuned values)
MARGIN_CONFIG = {
    "mu": 0.1,
    "lam": 0.2,
    "rho0": 16.0,
    "gamma1": 0.4,
    "gamma2": 0.5,
    "gamma3": 0.2,
    "scale": 30.0,
    "learnable": False,
}

# Distance-weighted accuracy
DWA_BETA = 1.6

# Training
TRAIN_CONFIG = {
    "learning_rate": 0.0037,
    "epochs": 100,
    "batch_size": 16,
    "weight_decay": 1e-4,
    "patience": 10,
    "optimizer": "lion",
    "loss": "rstdal",
    "seed": 0,
    "num_workers": 0,
}
LION_BETAS = (0.9, 0.99)

ABLATION_VARIANTS = ["full", "no-dada", "no-stg", "no-graph-transformer", "no-rstdal", "short-sequence"]
SHORT_SEQUENCE_WINDOW = 16

# Evaluation
DISTANCE_BIN_EDGES = [2.0, 6.0, 10.0, 14.0, 18.0, 22.0, 26.0, 30.0]
STREAM_FPS_WINDOWS = [8, 16, 32, 84]
DATA_SWEEP_FRACTIONS = [0.1, 0.25, 0.5, 0.75, 1.0]
DATA_SWEEP_REPEATS = 10
FINETUNE_CLIP_COUNTS = [0, 5, 10, 15, 20, 30]

# Logging configuration
LOG_LEVEL = os.getenv('DIGNET_LOG_LEVEL', 'INFO')
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
