"""
config.py - central settings for the FLoc engine
=================================================
Every default lives here, one class per concern. The typed specs in the
other modules read their defaults from these classes; run_config.py lets a
JSON document override them per run.
"""

import math


class DatasetProfiles:
    """Camera / floorplan profiles of the two benchmark families"""
    GIBSON       = {"fov_deg": 108.0, "resolution_m": 0.1}
    STRUCTURED3D = {"fov_deg": 80.0,  "resolution_m": 0.02}
    DEFAULT      = "gibson"

    @classmethod
    def get(cls, name: str) -> dict:
        table = {"gibson": cls.GIBSON, "structured3d": cls.STRUCTURED3D}
        if name not in table:
            raise KeyError(name)
        return table[name]


class FanConfig:
    """Ray fan rendered / predicted per camera"""
    N_RAYS      = 40
    FOV         = math.radians(DatasetProfiles.GIBSON["fov_deg"])
    MAX_RANGE_M = 10.0
    SPACING     = "equiangular"   # equiangular | image-column
    SNAP_DIGITS = 9               # world->grid coordinates are rounded to 1e-9 cell


class BinConfig:
    """Power-law depth bins"""
    D_MIN_M = 0.1
    D_MAX_M = 10.0
    N_BINS  = 64
    GAMMA   = 1.0
    ROW_SUM_TOLERANCE = 1e-4


class LossConfig:
    EPSILON = 1e-8
    MODE    = "shape-penalty"     # shape-penalty | as-printed


class GridConfig:
    """Pose-space discretization"""
    N_ORIENTATIONS   = 36         # 10 degree bins
    MIN_STRIDE_M     = 0.1
    SIGMA_M          = 0.5        # likelihood scale of exp(-meanL1 / sigma)
    CHUNK_POSITIONS  = 512        # positions per ray-table work unit


class CropConfig:
    SIDE_M   = 5.0
    CHANNELS = "occupancy+texture"   # occupancy-only | occupancy+texture
    OCCUPANCY_PAD = 1                # outside the map behaves like wall
    TEXTURE_PAD   = 0
    CAMERA_SEARCH_PX = 2.0           # nearest free pixel to the crop center, radius in px


class PerturbConfig:
    POS_B_M   = 0.5
    ANG_B_RAD = 0.26


class MiningConfig:
    INNER_NEG_DIST_M = (1.5, 3.0)
    ORI_NEG_ROTATION = math.pi
    N_INNER          = 1
    N_CROSS          = 8
    N_ORI            = 1
    MAX_RETRIES      = 200
    SEED             = 0


class ContrastConfig:
    TEMPERATURE = 0.07
    DENOMINATOR = "as-printed"    # as-printed | with-positive
    NORM_TOLERANCE = 1e-6


class TrainConfig:
    FEATURES       = "rays"       # rays | pooled
    WARM_START     = "ridge"      # ridge | random
    RIDGE          = 1e-3         # relative to the mean feature energy
    EPOCHS         = 200
    LEARNING_RATE  = 1e-2
    VALIDATION_FRACTION = 0.2
    PATIENCE       = 40
    POOL_FACTOR    = 5            # crop block-pooling before the linear map
    SEED           = 0


class DisambigConfig:
    W           = 0.5
    TEMPERATURE = 1.0
    X           = 100


class WorldConfig:
    LAYOUT        = "twin-rooms"  # twin-rooms | corridor-of-k-rooms | random-partition
    EXTENT_M      = (12.0, 6.0)
    RESOLUTION_M  = 0.1
    N_ROOMS       = 2
    ROOM_SIZE_M   = 5.0
    CORRIDOR_M    = 0.7
    DOOR_M        = 0.8
    CLOSET_M      = (1.5, 1.0)    # asymmetric block in each room's top-left corner
    MIN_ROOM_M    = 2.5           # random-partition leaf size
    N_GT_POSES    = 1000
    SEED          = 0


class NoiseConfig:
    SIGMA_D_M = 0.0
    DROPOUT   = 0.0
    SEED      = 0


class OracleConfig:
    DIM               = 64
    SEED              = 7
    TEXTURE_IDS       = 32        # histogram covers ids 1 .. TEXTURE_IDS-1
    SAMPLES_PER_RAY   = 8
    TEXTURE_WEIGHT    = 3.0
    DEPTH_CENTER      = 0.5       # subtracted from the normalized depths


class BenchmarkConfig:
    N_QUERIES           = 200
    DUPLICATE_MARGIN_M  = 0.15
    SEPARATION_M        = 0.5
    SEPARATION_RAD      = math.pi / 6
    QUERY_SEED          = 1


class EvalConfig:
    POSITION_THRESHOLDS_M = (0.1, 0.5, 1.0)
    JOINT_THRESHOLD_M     = 1.0
    JOINT_THRESHOLD_RAD   = math.pi / 6


class LogConfig:
    """Logging settings"""
    FILE_NAME = "floc_run.log"
    LEVEL     = "INFO"
    FORMAT    = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
