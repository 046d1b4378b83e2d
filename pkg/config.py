import os

from dotenv import load_dotenv

# Load environment variables from .env file if it exists
load_dotenv()

BASE_DIR = os.path.dirname(os.path.abspath(__file__))


def _env_float(name, default):
    return float(os.environ.get(name, default))


def _env_int(name, default):
    return int(os.environ.get(name, default))


class Config:
    """Base configuration class"""

    # Simulator Configuration
    CELL_SIZE = 0.25  # meters, equals one move_forward
    FOV_DEGREES = _env_float('ROOMSCOUT_FOV_DEGREES', 90.0)
    MAX_RANGE = _env_float('ROOMSCOUT_MAX_RANGE', 5.0)
    MIN_ANGULAR_SIZE = _env_float('ROOMSCOUT_MIN_ANGULAR_SIZE', 0.02)
    POSITION_NOISE_SIGMA = _env_float('ROOMSCOUT_NOISE_SIGMA', 0.05)
    LOOK_AROUND_COST = 4
    DOOR_OPEN_PROBABILITY = 0.9
    EXTRA_DOOR_PROBABILITY = 0.35
    MIN_ROOM_SPAN = 10  # cells, wall to wall

    # Scene Graph Configuration
    ASSOCIATION_RADIUS = _env_float('ROOMSCOUT_ASSOCIATION_RADIUS', 0.5)
    NEAR_RADIUS = _env_float('ROOMSCOUT_NEAR_RADIUS', 1.5)
    LARGE_DIMENSION_THRESHOLD = 0.8
    BOUNDS_TOLERANCE = 0.3
    STUB_BIND_RADIUS = 2.0

    # High-Level Planner Configuration
    FEASIBILITY_THRESHOLD = _env_float('ROOMSCOUT_FEASIBILITY_THRESHOLD', 0.2)
    LANDMARK_CUTOFF = _env_float('ROOMSCOUT_LANDMARK_CUTOFF', 0.1)
    WANDER_BUDGET = _env_int('ROOMSCOUT_WANDER_BUDGET', 2)
    LLM_RETRIES = _env_int('ROOMSCOUT_LLM_RETRIES', 1)
    TRACKER_CONTEXT_BUDGET = 2048  # bytes of digest history

    # LLM Configuration
    LLM_ENDPOINT = os.environ.get('ROOMSCOUT_LLM_ENDPOINT', 'https://api.openai.com/v1/chat/completions')
    LLM_MODEL = os.environ.get('ROOMSCOUT_LLM_MODEL', 'gpt-4')
    LLM_TEMPERATURE = _env_float('ROOMSCOUT_LLM_TEMPERATURE', 0.0)
    LLM_MAX_TOKENS = _env_int('ROOMSCOUT_LLM_MAX_TOKENS', 512)
    LLM_TIMEOUT = _env_float('ROOMSCOUT_LLM_TIMEOUT', 30.0)
    LLM_API_KEY_ENV = 'ROOMSCOUT_LLM_API_KEY'

    # Low-Level Planner Configuration
    SUCCESS_RADIUS = 1.5
    MAX_NAV_STEPS = 300
    DOOR_OVERSHOOT = 0.75  # meters past a door when driving through it
    DOOR_SUCCESS_RADIUS = 0.5
    SR_SAME_ROOM = 0.985
    SPL_SAME_ROOM = 0.930
    SR_GLOBAL = 0.845
    SPL_GLOBAL = 0.782

    # Episode Configuration
    STEP_BUDGET = _env_int('ROOMSCOUT_STEP_BUDGET', 2000)
    NUM_TARGETS = 3

    # Harness Configuration
    MAX_WORKERS = _env_int('ROOMSCOUT_WORKERS', 4)
    LOG_LEVEL = os.environ.get('ROOMSCOUT_LOG_LEVEL', 'INFO')
    KB_PATH = os.environ.get('ROOMSCOUT_KB_PATH', os.path.join(BASE_DIR, 'data', 'knowledge_base.json'))
    PROMPTS_DIR = os.environ.get('ROOMSCOUT_PROMPTS_DIR', os.path.join(BASE_DIR, 'prompts'))


class DevelopmentConfig(Config):
    """Development configuration"""
    LOG_LEVEL = os.environ.get('ROOMSCOUT_LOG_LEVEL', 'DEBUG')


class BenchmarkConfig(Config):
    """Configuration for full matrix runs"""
    MAX_WORKERS = _env_int('ROOMSCOUT_WORKERS', os.cpu_count() or 4)
    # Nonzero temperatures are excluded from acceptance runs
    LLM_TEMPERATURE = 0.0


class TestingConfig(Config):
    """Testing configuration"""
    MAX_WORKERS = 1
    LOG_LEVEL = 'WARNING'


# Configuration dictionary
config = {
    'development': DevelopmentConfig,
    'benchmark': BenchmarkConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}


def get_config(name=None):
    """Return the configuration class for an environment name"""
    name = name or os.environ.get('ROOMSCOUT_ENV', 'default')
    if name not in config:
        raise KeyError(f"Unknown configuration '{name}'. Choose one of: {', '.join(sorted(config))}")
    return config[name]
